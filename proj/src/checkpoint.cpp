#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "hybridpf/checkpoint.hpp"

namespace hybridpf::gnn {

namespace {

constexpr std::array<char, 8> kMagic{'H', 'P', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename Fn>
void visit_all(ModelParams& p, Fn&& fn) {
    p.visit(fn);
    fn(std::string("bn1.running_mean"), p.bn1.running_mean);
    fn(std::string("bn1.running_var"), p.bn1.running_var);
    fn(std::string("bn2.running_mean"), p.bn2.running_mean);
    fn(std::string("bn2.running_var"), p.bn2.running_var);
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw CheckpointError("truncated checkpoint header");
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle) {
    ModelParams params = bundle.params;
    nlohmann::json shapes = nlohmann::json::array();
    visit_all(params, [&](const std::string& name, Eigen::MatrixXd& t) {
        shapes.push_back({name, t.rows(), t.cols()});
    });
    const nlohmann::json meta{
        {"format", "hybridpf-checkpoint"},
        {"case", bundle.case_name},
        {"case_checksum", checksum_hex(bundle.case_checksum)},
        {"epoch", bundle.epoch},
        {"shape",
         {{"in", params.shape.in_dim},
          {"edge", params.shape.edge_dim},
          {"hidden", params.shape.hidden},
          {"heads", params.shape.heads},
          {"out", params.shape.out_dim}}},
        {"config", to_json(bundle.config)},
        {"stats", to_json(bundle.stats)},
        {"tensors", shapes},
    };
    const std::string text = meta.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
    out.write(kMagic.data(), kMagic.size());
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    visit_all(params, [&](const std::string&, Eigen::MatrixXd& t) {
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!out) throw CheckpointError("failed writing " + path.string());
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw CheckpointError(path.string() + " is not a checkpoint file");
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto length = read_pod<std::uint64_t>(in);
    std::string text(length, '\0');
    in.read(text.data(), static_cast<std::streamsize>(length));
    if (!in) throw CheckpointError("truncated checkpoint metadata");

    ModelBundle b;
    try {
        const auto meta = nlohmann::json::parse(text);
        b.case_name = meta.at("case").get<std::string>();
        b.case_checksum = std::stoull(meta.at("case_checksum").get<std::string>(), nullptr, 16);
        b.epoch = meta.at("epoch").get<int>();
        b.config = train_config_from_json(meta.at("config"));
        b.stats = train_stats_from_json(meta.at("stats"));
        const auto& s = meta.at("shape");
        ModelShape shape;
        shape.in_dim = s.at("in").get<int>();
        shape.edge_dim = s.at("edge").get<int>();
        shape.hidden = s.at("hidden").get<int>();
        shape.heads = s.at("heads").get<int>();
        shape.out_dim = s.at("out").get<int>();
        b.params = init_params(shape, 0);
        const auto& tensors = meta.at("tensors");
        std::size_t k = 0;
        visit_all(b.params, [&](const std::string& name, Eigen::MatrixXd& t) {
            if (k >= tensors.size() || tensors[k][0].get<std::string>() != name ||
                tensors[k][1].get<Eigen::Index>() != t.rows() || tensors[k][2].get<Eigen::Index>() != t.cols()) {
                throw CheckpointError("checkpoint tensor layout mismatch at " + name);
            }
            ++k;
        });
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
    }
    visit_all(b.params, [&](const std::string&, Eigen::MatrixXd& t) {
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!in) throw CheckpointError("truncated checkpoint tensors");
    return b;
}

Predictor::Predictor(ModelBundle bundle, const NetworkCase& net, const AdmittanceSet& adm)
    : bundle_(std::move(bundle)), adm_(&adm), slack_(net.slack_voltage) {
    const FeatureSet fs = build_features(net, adm, net.base_injections(), bundle_.config.features);
    topo_ = make_topology(fs, net.size());
}

Eigen::MatrixXd Predictor::raw_features(const Eigen::VectorXcd& injections) const {
    return node_features(*adm_, injections, bundle_.config.features);
}

Prediction Predictor::predict(const Eigen::VectorXcd& injections) const {
    return predict_features(raw_features(injections));
}

Prediction Predictor::predict_features(const Eigen::MatrixXd& raw_features) const {
    ForwardOptions fwd;
    fwd.mode = Mode::eval;
    Prediction p;
    p.raw = forward(bundle_.params, topo_, normalized_features(raw_features, bundle_.stats), 1, fwd, nullptr);
    p.state = derive_state(p.raw, bundle_.stats, topo_.nodes, slack_, 0);
    return p;
}

}  // namespace hybridpf::gnn
