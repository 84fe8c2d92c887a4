#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "hybridpf/gnn_train.hpp"

namespace hybridpf::gnn {

namespace {

constexpr int kEvalChunk = 256;

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid training config: ") + what);
}

}  // namespace

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
    TrainConfig cfg;
    cfg.shape.hidden = 64;
    cfg.epochs = 60;
    cfg.pretrain_epochs = 12;
    cfg.ramp_epochs = 12;
    cfg.patience = 15;
    cfg.warmup_epochs = 2;
    cfg.batch_size = 32;
    cfg.lr = 1e-3;
    cfg.lr_floor = 1e-5;
    return cfg;
}

void TrainConfig::validate() const {
    require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
    require(batch_size > 0, "batch_size must be positive");
    require(epochs > 0, "epochs must be positive");
    require(patience > 0, "patience must be positive");
    require(warmup_epochs >= 0, "warmup_epochs must be non-negative");
    require(pretrain_epochs >= 0 && ramp_epochs > 0, "pretrain/ramp epochs");
    require(pretrain_epochs + ramp_epochs <= epochs, "pretrain + ramp must not exceed epochs");
    require(w_pq_final >= 0.0 && w_data > 0.0, "loss weights");
    require(huber_delta_data > 0.0 && huber_delta_phys > 0.0, "huber deltas must be positive");
    require(ema_decay >= 0.0 && ema_decay < 1.0, "ema_decay must lie in [0, 1)");
    require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
    require(lr_floor >= 0.0 && lr_floor <= lr, "lr_floor must lie in [0, lr]");
    require(shape.hidden > 0 && shape.heads > 0, "model widths must be positive");
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {
        {"hidden", cfg.shape.hidden},
        {"heads", cfg.shape.heads},
        {"lr", cfg.lr},
        {"batch_size", cfg.batch_size},
        {"epochs", cfg.epochs},
        {"patience", cfg.patience},
        {"warmup_epochs", cfg.warmup_epochs},
        {"pretrain_epochs", cfg.pretrain_epochs},
        {"ramp_epochs", cfg.ramp_epochs},
        {"w_pq_final", cfg.w_pq_final},
        {"w_data", cfg.w_data},
        {"huber_delta_data", cfg.huber_delta_data},
        {"huber_delta_phys", cfg.huber_delta_phys},
        {"ema_decay", cfg.ema_decay},
        {"dropout", cfg.dropout},
        {"seed", cfg.seed},
        {"beta1", cfg.beta1},
        {"beta2", cfg.beta2},
        {"adam_eps", cfg.adam_eps},
        {"weight_decay", cfg.weight_decay},
        {"lr_floor", cfg.lr_floor},
        {"physics", cfg.physics},
        {"zbus_features", cfg.features.zbus_features},
        {"mutual", cfg.features.mutual == MutualFeature::zbus_entry ? "zbus_entry" : "branch_magnitude"},
    };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.shape.hidden = j.at("hidden").get<int>();
    cfg.shape.heads = j.at("heads").get<int>();
    cfg.lr = j.at("lr").get<double>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.patience = j.at("patience").get<int>();
    cfg.warmup_epochs = j.at("warmup_epochs").get<int>();
    cfg.pretrain_epochs = j.at("pretrain_epochs").get<int>();
    cfg.ramp_epochs = j.at("ramp_epochs").get<int>();
    cfg.w_pq_final = j.at("w_pq_final").get<double>();
    cfg.w_data = j.at("w_data").get<double>();
    cfg.huber_delta_data = j.at("huber_delta_data").get<double>();
    cfg.huber_delta_phys = j.at("huber_delta_phys").get<double>();
    cfg.ema_decay = j.at("ema_decay").get<double>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.beta1 = j.at("beta1").get<double>();
    cfg.beta2 = j.at("beta2").get<double>();
    cfg.adam_eps = j.at("adam_eps").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.lr_floor = j.at("lr_floor").get<double>();
    cfg.physics = j.at("physics").get<bool>();
    cfg.features.zbus_features = j.at("zbus_features").get<bool>();
    cfg.features.mutual = j.at("mutual").get<std::string>() == "zbus_entry" ? MutualFeature::zbus_entry
                                                                            : MutualFeature::branch_magnitude;
    return cfg;
}

double annealing_weight(int epoch, const TrainConfig& cfg) {
    if (epoch < cfg.pretrain_epochs) return 0.0;
    if (epoch >= cfg.pretrain_epochs + cfg.ramp_epochs) return cfg.w_pq_final;
    return cfg.w_pq_final * static_cast<double>(epoch - cfg.pretrain_epochs) / cfg.ramp_epochs;
}

double learning_rate(int epoch, const TrainConfig& cfg) {
    if (epoch < cfg.warmup_epochs) return cfg.lr * (epoch + 1) / cfg.warmup_epochs;
    const int span = std::max(1, cfg.epochs - cfg.warmup_epochs - 1);
    const double t = std::min(1.0, static_cast<double>(epoch - cfg.warmup_epochs) / span);
    return cfg.lr_floor + 0.5 * (cfg.lr - cfg.lr_floor) * (1.0 + std::cos(M_PI * t));
}

void LossState::update(double raw_data, double raw_pq, double decay) {
    if (!initialized) {
        sigma2_data = raw_data;
        sigma2_pq = raw_pq;
        initialized = true;
    } else {
        sigma2_data = decay * sigma2_data + (1.0 - decay) * raw_data;
        sigma2_pq = decay * sigma2_pq + (1.0 - decay) * raw_pq;
    }
    sigma2_data = std::max(sigma2_data, kFloor);
    sigma2_pq = std::max(sigma2_pq, kFloor);
    ++epoch;
}

LossScale loss_scale(const LossState& state, int epoch, const TrainConfig& cfg) {
    LossScale s;
    s.data = cfg.w_data / state.sigma2_data;
    s.pq = cfg.physics ? annealing_weight(epoch, cfg) / state.sigma2_pq : 0.0;
    return s;
}

double total_loss(double data_loss, double phys_loss, const LossState& state, int epoch, const TrainConfig& cfg) {
    return loss_scale(state, epoch, cfg).total(data_loss, phys_loss);
}

AdamW::AdamW(const ModelParams& like, const TrainConfig& cfg)
    : m_(like.zeros_like()),
      v_(like.zeros_like()),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      weight_decay_(cfg.weight_decay) {}

void AdamW::step(ModelParams& params, const ModelParams& grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::vector<Eigen::MatrixXd*> p;
    std::vector<const Eigen::MatrixXd*> g;
    std::vector<Eigen::MatrixXd*> m;
    std::vector<Eigen::MatrixXd*> v;
    params.visit([&](const std::string&, Eigen::MatrixXd& t) { p.push_back(&t); });
    grad.visit([&](const std::string&, const Eigen::MatrixXd& t) { g.push_back(&t); });
    m_.visit([&](const std::string&, Eigen::MatrixXd& t) { m.push_back(&t); });
    v_.visit([&](const std::string&, Eigen::MatrixXd& t) { v.push_back(&t); });
    for (std::size_t k = 0; k < p.size(); ++k) {
        m[k]->array() = beta1_ * m[k]->array() + (1.0 - beta1_) * g[k]->array();
        v[k]->array() = beta2_ * v[k]->array() + (1.0 - beta2_) * g[k]->array().square();
        p[k]->array() *= 1.0 - lr * weight_decay_;
        p[k]->array() -= lr * (m[k]->array() / c1) / ((v[k]->array() / c2).sqrt() + eps_);
    }
}

bool dominates(const Checkpoint& a, const Checkpoint& b) {
    return a.raw_data <= b.raw_data && a.raw_pq <= b.raw_pq && (a.raw_data < b.raw_data || a.raw_pq < b.raw_pq);
}

bool CheckpointFront::offer_pareto(const Checkpoint& c) {
    if (!pareto.empty()) {
        const bool improves = std::any_of(pareto.begin(), pareto.end(), [&](const Checkpoint& m) { return dominates(c, m); });
        if (!improves) return false;
    }
    std::erase_if(pareto, [&](const Checkpoint& m) { return dominates(c, m); });
    pareto.push_back(c);
    return true;
}

bool CheckpointFront::offer_total(const Checkpoint& c, const LossScale& scale) {
    const double candidate = scale.total(c.raw_data, c.raw_pq);
    if (best_total && !(candidate < scale.total(best_total->raw_data, best_total->raw_pq))) return false;
    best_total = c;
    return true;
}

const Checkpoint& select_final(const CheckpointFront& front, const LossScale& scale) {
    if (front.empty()) throw std::invalid_argument("cannot select from an empty checkpoint front");
    const Checkpoint* best = nullptr;
    double best_value = std::numeric_limits<double>::infinity();
    auto consider = [&](const Checkpoint& c) {
        const double value = scale.total(c.raw_data, c.raw_pq);
        if (!best || value < best_value || (value == best_value && c.epoch < best->epoch)) {
            best = &c;
            best_value = value;
        }
    };
    for (const auto& c : front.pareto) consider(c);
    if (front.best_total) consider(*front.best_total);
    return *best;
}

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log) {
    out << "epoch,lr,w_pq,train_loss,val_data_raw,val_pq_raw,sigma2_data,sigma2_pq,val_data_scaled,"
           "val_pq_scaled,val_total,saved_best,saved_pareto\n";
    std::ostringstream row;
    row << std::setprecision(10);
    for (const auto& e : log) {
        row.str("");
        row << e.epoch << ',' << e.lr << ',' << e.w_pq << ',' << e.train_loss << ',' << e.val_data_raw << ','
            << e.val_pq_raw << ',' << e.sigma2_data << ',' << e.sigma2_pq << ',' << e.val_data_scaled << ','
            << e.val_pq_scaled << ',' << e.val_total << ',' << (e.saved_best ? 1 : 0) << ','
            << (e.saved_pareto ? 1 : 0) << '\n';
        out << row.str();
    }
}

PreparedSet prepare(std::span<const DatasetRecord* const> records, const AdmittanceSet& adm,
                    const TrainStats& stats, const FeatureOptions& features) {
    PreparedSet set;
    set.features.reserve(records.size());
    set.targets.reserve(records.size());
    set.injections.reserve(records.size());
    for (const DatasetRecord* rec : records) {
        Eigen::VectorXcd s = rec->injections();
        set.features.push_back(normalized_features(node_features(adm, s, features), stats));
        set.targets.push_back(normalized_targets(*rec, stats));
        set.injections.push_back(std::move(s));
    }
    return set;
}

void gather_batch(const PreparedSet& set, std::span<const int> ids, RowMatrix& x, RowMatrix& y,
                  Eigen::MatrixXcd& s) {
    if (ids.empty()) throw std::invalid_argument("empty batch");
    const auto n = set.features.front().rows();
    const auto b = static_cast<Eigen::Index>(ids.size());
    x.resize(b * n, set.features.front().cols());
    y.resize(b * n, set.targets.front().cols());
    s.resize(n, b);
    for (Eigen::Index g = 0; g < b; ++g) {
        const int id = ids[static_cast<std::size_t>(g)];
        x.middleRows(g * n, n) = set.features[id];
        y.middleRows(g * n, n) = set.targets[id];
        s.col(g) = set.injections[id];
    }
}

LossEval composite_loss(ModelParams& params, const GraphTopology& topo, const RowMatrix& x, const RowMatrix& y,
                        const Eigen::MatrixXcd& injections, const AdmittanceSet& adm, const Eigen::VectorXd& weights,
                        const TrainStats& stats, Complex slack_voltage, const LossScale& scale,
                        const TrainConfig& cfg, const ForwardOptions& fwd, bool with_grad) {
    const int batch = static_cast<int>(injections.cols());
    ForwardCache cache;
    const RowMatrix raw = forward(params, topo, x, batch, fwd, with_grad ? &cache : nullptr);
    LossEval out;
    RowMatrix g_data;
    RowMatrix g_phys;
    out.data = data_loss(raw, y, topo.nodes, cfg.huber_delta_data, with_grad ? &g_data : nullptr);
    out.physics = physics_loss(raw, stats, injections, adm, weights, slack_voltage, cfg.huber_delta_phys,
                               with_grad && scale.pq != 0.0 ? &g_phys : nullptr);
    out.total = scale.total(out.data, out.physics);
    if (with_grad) {
        RowMatrix d_raw = scale.data * g_data;
        if (scale.pq != 0.0) d_raw += scale.pq * g_phys;
        out.grad = backward(params, topo, cache, d_raw);
        if (fwd.mode == Mode::train) update_running_stats(params, cache);
    }
    return out;
}

namespace {

struct ValLosses {
    double data = 0.0;
    double physics = 0.0;
};

ValLosses validation_losses(ModelParams& params, const GraphTopology& topo, const PreparedSet& set,
                            const AdmittanceSet& adm, const Eigen::VectorXd& weights, const TrainStats& stats,
                            Complex slack, const TrainConfig& cfg) {
    ValLosses out;
    const int count = static_cast<int>(set.features.size());
    std::vector<int> ids;
    RowMatrix x;
    RowMatrix y;
    Eigen::MatrixXcd s;
    ForwardOptions fwd;
    fwd.mode = Mode::eval;
    for (int start = 0; start < count; start += kEvalChunk) {
        const int stop = std::min(count, start + kEvalChunk);
        ids.resize(stop - start);
        std::iota(ids.begin(), ids.end(), start);
        gather_batch(set, ids, x, y, s);
        const LossEval e =
            composite_loss(params, topo, x, y, s, adm, weights, stats, slack, LossScale{}, cfg, fwd, false);
        out.data += e.data * (stop - start);
        out.physics += e.physics * (stop - start);
    }
    out.data /= count;
    out.physics /= count;
    return out;
}

}  // namespace

TrainResult train(const Dataset& data, const NetworkCase& net, const AdmittanceSet& adm, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    if (!data.stats) throw std::invalid_argument("dataset has no training statistics");
    const auto train_records = data.split(Split::train);
    const auto val_records = data.split(Split::val);
    if (train_records.empty() || val_records.empty()) {
        throw std::invalid_argument("training needs nonempty train and val splits");
    }
    const TrainStats& stats = *data.stats;
    const PreparedSet train_set = prepare(train_records, adm, stats, cfg.features);
    const PreparedSet val_set = prepare(val_records, adm, stats, cfg.features);
    const FeatureSet fs = build_features(net, adm, train_set.injections.front(), cfg.features);
    const GraphTopology topo = make_topology(fs, net.size());
    const Eigen::VectorXd weights = sensitivity_weights(adm);
    const Complex slack = net.slack_voltage;

    ModelShape shape = cfg.shape;
    shape.out_dim = 3;
    TrainResult result;
    ModelParams params = init_params(shape, cfg.seed);
    AdamW opt(params, cfg);
    std::mt19937_64 shuffle_rng(cfg.seed + 11);
    std::mt19937_64 dropout_rng(cfg.seed + 12);
    LossState state;

    std::vector<int> order(train_set.features.size());
    std::iota(order.begin(), order.end(), 0);
    RowMatrix x;
    RowMatrix y;
    Eigen::MatrixXcd s;
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochLog row;
        row.epoch = epoch;
        row.lr = learning_rate(epoch, cfg);
        row.w_pq = cfg.physics ? annealing_weight(epoch, cfg) : 0.0;
        const LossScale train_scale = loss_scale(state, epoch, cfg);

        std::shuffle(order.begin(), order.end(), shuffle_rng);
        ForwardOptions fwd;
        fwd.mode = Mode::train;
        fwd.dropout = cfg.dropout;
        fwd.rng = &dropout_rng;
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const int> ids(order.data() + start, stop - start);
            gather_batch(train_set, ids, x, y, s);
            LossEval e = composite_loss(params, topo, x, y, s, adm, weights, stats, slack, train_scale, cfg, fwd,
                                        true);
            if (!std::isfinite(e.total)) {
                std::ostringstream msg;
                msg << "non-finite training loss at epoch " << epoch << " batch " << batches;
                throw TrainingError(msg.str());
            }
            opt.step(params, e.grad, row.lr);
            loss_sum += e.total;
            ++batches;
        }
        row.train_loss = loss_sum / batches;

        const ValLosses val = validation_losses(params, topo, val_set, adm, weights, stats, slack, cfg);
        if (!std::isfinite(val.data) || !std::isfinite(val.physics)) {
            std::ostringstream msg;
            msg << "non-finite validation loss at epoch " << epoch;
            throw TrainingError(msg.str());
        }
        state.update(val.data, val.physics, cfg.ema_decay);
        const LossScale scale = loss_scale(state, epoch, cfg);
        row.val_data_raw = val.data;
        row.val_pq_raw = val.physics;
        row.sigma2_data = state.sigma2_data;
        row.sigma2_pq = state.sigma2_pq;
        row.val_data_scaled = scale.data * val.data;
        row.val_pq_scaled = scale.pq * val.physics;
        row.val_total = scale.total(val.data, val.physics);

        const Checkpoint c{epoch, val.data, val.physics, row.val_total, params};
        row.saved_best = result.front.offer_total(c, scale);
        row.saved_pareto = result.front.offer_pareto(c);
        since_best = row.saved_best ? 0 : since_best + 1;
        result.final_scale = scale;
        result.log.push_back(row);
        if (on_epoch) on_epoch(row);
        if (since_best >= cfg.patience) {
            result.early_stopped = true;
            break;
        }
    }

    const Checkpoint& chosen = select_final(result.front, result.final_scale);
    result.final_params = chosen.params;
    result.final_epoch = chosen.epoch;
    return result;
}

}  // namespace hybridpf::gnn
