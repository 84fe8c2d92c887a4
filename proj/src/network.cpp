#include "hybridpf/network.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>

namespace hybridpf {

namespace {

using nlohmann::json;

double finite_number(const json& obj, const char* key, double fallback, bool required) {
    if (!obj.contains(key)) {
        if (required) {
            throw CaseError(std::string("missing field '") + key + "'");
        }
        return fallback;
    }
    const auto& v = obj.at(key);
    if (!v.is_number()) {
        throw CaseError(std::string("field '") + key + "' must be a number");
    }
    const double d = v.get<double>();
    if (!std::isfinite(d)) {
        throw CaseError(std::string("field '") + key + "' is not finite");
    }
    return d;
}

BusKind parse_kind(const json& bus) {
    if (!bus.contains("kind") || !bus.at("kind").is_string()) {
        throw CaseError("bus entry needs a string 'kind'");
    }
    const auto kind = bus.at("kind").get<std::string>();
    if (kind == "slack") return BusKind::slack;
    if (kind == "pq") return BusKind::pq;
    throw CaseError("unsupported bus kind '" + kind + "'");
}

void check_connected(const NetworkCase& net) {
    const int n = net.size();
    std::vector<std::vector<int>> adjacency(n);
    for (const auto& br : net.branches) {
        adjacency[br.from].push_back(br.to);
        adjacency[br.to].push_back(br.from);
    }
    std::vector<bool> seen(n, false);
    std::queue<int> frontier;
    frontier.push(0);
    seen[0] = true;
    int reached = 1;
    while (!frontier.empty()) {
        const int u = frontier.front();
        frontier.pop();
        for (int v : adjacency[u]) {
            if (!seen[v]) {
                seen[v] = true;
                ++reached;
                frontier.push(v);
            }
        }
    }
    if (reached != n) {
        throw CaseError("network graph is disconnected: " + std::to_string(n - reached) +
                        " bus(es) unreachable from the slack");
    }
}

}  // namespace

Eigen::VectorXcd NetworkCase::base_injections() const {
    Eigen::VectorXcd s(size());
    for (const auto& bus : buses) {
        s(bus.id) = Complex(-bus.p_load, -bus.q_load);
    }
    return s;
}

NetworkCase parse_case(const json& doc) {
    if (!doc.is_object()) throw CaseError("case document must be an object");
    NetworkCase net;
    net.name = doc.value("name", std::string("unnamed"));
    net.base_mva = finite_number(doc, "base_mva", 0.0, true);
    net.base_kv = finite_number(doc, "base_kv", 0.0, true);
    if (net.base_mva <= 0.0 || net.base_kv <= 0.0) {
        throw CaseError("base_mva and base_kv must be positive");
    }
    const std::string units = doc.value("branch_units", std::string("pu"));
    if (units != "pu" && units != "ohm") {
        throw CaseError("branch_units must be 'pu' or 'ohm'");
    }
    const double z_base = units == "ohm" ? net.base_kv * net.base_kv / net.base_mva : 1.0;

    if (!doc.contains("buses") || !doc.at("buses").is_array() || doc.at("buses").empty()) {
        throw CaseError("case needs a nonempty 'buses' array");
    }
    if (!doc.contains("branches") || !doc.at("branches").is_array()) {
        throw CaseError("case needs a 'branches' array");
    }

    const auto& bus_docs = doc.at("buses");
    int slack_pos = -1;
    for (std::size_t k = 0; k < bus_docs.size(); ++k) {
        if (parse_kind(bus_docs[k]) == BusKind::slack) {
            if (slack_pos >= 0) throw CaseError("case has more than one slack bus");
            slack_pos = static_cast<int>(k);
        }
    }
    if (slack_pos < 0) throw CaseError("case has no slack bus");

    // Slack first, then the remaining buses in document order.
    std::vector<std::size_t> order;
    order.push_back(static_cast<std::size_t>(slack_pos));
    for (std::size_t k = 0; k < bus_docs.size(); ++k) {
        if (static_cast<int>(k) != slack_pos) order.push_back(k);
    }

    std::map<int, int> index_of;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const auto& b = bus_docs[order[pos]];
        if (!b.contains("id") || !b.at("id").is_number_integer()) {
            throw CaseError("bus entry needs an integer 'id'");
        }
        Bus bus;
        bus.id = static_cast<int>(pos);
        bus.external_id = b.at("id").get<int>();
        bus.kind = parse_kind(b);
        bus.p_load = finite_number(b, "p_load", 0.0, false) / net.base_mva;
        bus.q_load = finite_number(b, "q_load", 0.0, false) / net.base_mva;
        bus.shunt_g = finite_number(b, "gs", 0.0, false) / net.base_mva;
        bus.shunt_b = finite_number(b, "bs", 0.0, false) / net.base_mva;
        if (!index_of.emplace(bus.external_id, bus.id).second) {
            throw CaseError("duplicate bus id " + std::to_string(bus.external_id));
        }
        if (bus.kind == BusKind::slack) {
            const double vm = finite_number(b, "vm", 1.0, false);
            const double va_deg = finite_number(b, "va", 0.0, false);
            if (vm <= 0.0) throw CaseError("slack vm must be positive");
            net.slack_voltage = std::polar(vm, va_deg * M_PI / 180.0);
        }
        net.buses.push_back(bus);
    }

    for (const auto& d : doc.at("branches")) {
        Branch br;
        if (!d.contains("from") || !d.contains("to") || !d.at("from").is_number_integer() ||
            !d.at("to").is_number_integer()) {
            throw CaseError("branch entry needs integer 'from' and 'to'");
        }
        const int from_ext = d.at("from").get<int>();
        const int to_ext = d.at("to").get<int>();
        const auto f = index_of.find(from_ext);
        const auto t = index_of.find(to_ext);
        if (f == index_of.end() || t == index_of.end()) {
            throw CaseError("branch " + std::to_string(from_ext) + "-" + std::to_string(to_ext) +
                            " references an unknown bus");
        }
        br.from = f->second;
        br.to = t->second;
        if (br.from == br.to) throw CaseError("branch endpoints must differ");
        br.r = finite_number(d, "r", 0.0, true) / z_base;
        br.x = finite_number(d, "x", 0.0, true) / z_base;
        br.b_total = finite_number(d, "b", 0.0, false) * z_base;
        br.tap = finite_number(d, "tap", 1.0, false);
        if (br.tap == 0.0) br.tap = 1.0;  // MATPOWER convention
        if (br.r < 0.0) throw CaseError("branch resistance must be non-negative");
        if (br.r == 0.0 && br.x == 0.0) throw CaseError("branch impedance must be nonzero");
        if (br.tap < 0.0) throw CaseError("branch tap must be positive");
        net.branches.push_back(br);
    }

    check_connected(net);
    if (!net.is_radial()) {
        std::fprintf(stderr, "warning: case '%s' is not radial (%zu branches, %zu buses)\n",
                     net.name.c_str(), net.branches.size(), net.buses.size());
    }
    return net;
}

NetworkCase parse_case_text(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw CaseError(std::string("case document is not valid JSON: ") + e.what());
    }
    return parse_case(doc);
}

NetworkCase load_case(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CaseError("cannot open case file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_case_text(buffer.str());
}

json case_to_json(const NetworkCase& net) {
    json buses = json::array();
    for (const auto& b : net.buses) {
        buses.push_back({{"id", b.id},
                         {"external_id", b.external_id},
                         {"kind", b.kind == BusKind::slack ? "slack" : "pq"},
                         {"p_load", b.p_load},
                         {"q_load", b.q_load},
                         {"gs", b.shunt_g},
                         {"bs", b.shunt_b}});
    }
    json branches = json::array();
    for (const auto& br : net.branches) {
        branches.push_back({{"from", br.from},
                            {"to", br.to},
                            {"r", br.r},
                            {"x", br.x},
                            {"b", br.b_total},
                            {"tap", br.tap}});
    }
    return {{"name", net.name},
            {"base_mva", net.base_mva},
            {"base_kv", net.base_kv},
            {"slack_voltage", {net.slack_voltage.real(), net.slack_voltage.imag()}},
            {"buses", buses},
            {"branches", branches}};
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t case_checksum(const NetworkCase& net) { return fnv1a(case_to_json(net).dump()); }

std::string checksum_hex(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

AdmittanceSet build_admittance(const NetworkCase& net) {
    const int n = net.size();
    AdmittanceSet adm;
    adm.y_full = Eigen::MatrixXcd::Zero(n, n);
    for (const auto& br : net.branches) {
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex half_charging(0.0, br.b_total / 2.0);
        const double tap = br.tap;
        adm.y_full(br.from, br.from) += (ys + half_charging) / (tap * tap);
        adm.y_full(br.to, br.to) += ys + half_charging;
        adm.y_full(br.from, br.to) -= ys / tap;
        adm.y_full(br.to, br.from) -= ys / tap;
    }
    for (const auto& bus : net.buses) {
        adm.y_full(bus.id, bus.id) += Complex(bus.shunt_g, bus.shunt_b);
    }

    const int m = n - 1;
    if (m < 1) throw CaseError("case needs at least one non-slack bus");
    adm.y_ns = adm.y_full.bottomRightCorner(m, m);
    adm.y_slack_col = adm.y_full.col(0).tail(m);
    adm.y_ns_lu.compute(adm.y_ns);
    if (!(adm.y_ns_lu.rcond() > 1e-14)) {
        throw CaseError("reduced admittance matrix is singular (isolated non-slack island)");
    }
    adm.z_bus = adm.y_ns_lu.solve(Eigen::MatrixXcd::Identity(m, m));
    return adm;
}

Eigen::MatrixXd node_features(const AdmittanceSet& adm, const Eigen::VectorXcd& injections,
                              const FeatureOptions& options) {
    const int n = adm.size();
    if (injections.size() != n) throw std::invalid_argument("injections length must equal bus count");
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, kNodeFeatureCount);
    for (int i = 1; i < n; ++i) {
        x(i, 0) = injections(i).real();
        x(i, 1) = injections(i).imag();
        x(i, 2) = options.zbus_features ? std::abs(adm.z_bus(i - 1, i - 1)) : 0.0;
    }
    return x;
}

FeatureSet edge_features(const NetworkCase& net, const AdmittanceSet& adm,
                         const FeatureOptions& options) {
    const auto e = static_cast<int>(net.branches.size());
    FeatureSet fs;
    fs.edge_features.resize(2 * e, kEdgeFeatureCount);
    fs.edge_index.reserve(2 * e);
    for (int k = 0; k < e; ++k) {
        const auto& br = net.branches[k];
        double mutual = 0.0;
        if (options.zbus_features) {
            if (options.mutual == MutualFeature::branch_magnitude) {
                mutual = std::abs(Complex(br.r, br.x));
            } else if (br.from > 0 && br.to > 0) {
                mutual = std::abs(adm.z_bus(br.from - 1, br.to - 1));
            }
        }
        const Eigen::RowVector4d row(br.r, br.x, br.b_total, mutual);
        fs.edge_features.row(2 * k) = row;
        fs.edge_features.row(2 * k + 1) = row;
        fs.edge_index.push_back({br.from, br.to});
        fs.edge_index.push_back({br.to, br.from});
    }
    return fs;
}

FeatureSet build_features(const NetworkCase& net, const AdmittanceSet& adm,
                          const Eigen::VectorXcd& injections, const FeatureOptions& options) {
    FeatureSet fs = edge_features(net, adm, options);
    fs.node_features = node_features(adm, injections, options);
    return fs;
}

}  // namespace hybridpf
