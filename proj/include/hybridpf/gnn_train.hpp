#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hybridpf/gnn_loss.hpp"

namespace hybridpf::gnn {

/// Training recipe. Defaults are the full-scale profile; see desk().
struct TrainConfig {
    ModelShape shape{};
    double lr = 1e-5;
    int batch_size = 512;
    int epochs = 200;
    int patience = 51;
    int warmup_epochs = 5;
    int pretrain_epochs = 40;
    int ramp_epochs = 40;
    double w_pq_final = 10000.0;
    double w_data = 1.0;
    double huber_delta_data = 1.0;
    double huber_delta_phys = 1.0;
    double ema_decay = 0.9;
    double dropout = 0.1;
    std::uint64_t seed = 42;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double lr_floor = 1e-7;
    bool physics = true;  // false forces w_PQ = 0 (ablation)
    FeatureOptions features{};

    [[nodiscard]] static TrainConfig paper();
    [[nodiscard]] static TrainConfig desk();
    void validate() const;
};

[[nodiscard]] nlohmann::json to_json(const TrainConfig& cfg);
[[nodiscard]] TrainConfig train_config_from_json(const nlohmann::json& j);

/// Physics weight: 0 during pre-training, linear ramp, then constant.
[[nodiscard]] double annealing_weight(int epoch, const TrainConfig& cfg);

/// Linear warmup to cfg.lr, then cosine decay to cfg.lr_floor (per epoch).
[[nodiscard]] double learning_rate(int epoch, const TrainConfig& cfg);

/// EMA scaling factors for the two loss terms.
struct LossState {
    double sigma2_data = 1.0;
    double sigma2_pq = 1.0;
    bool initialized = false;
    int epoch = 0;

    static constexpr double kFloor = 1e-8;
    /// First call seeds both accumulators with the raw values, later calls blend.
    void update(double raw_data, double raw_pq, double decay);
};

/// Multipliers applied to the raw losses: total = data * L_data + pq * L_PQ.
struct LossScale {
    double data = 1.0;
    double pq = 0.0;

    [[nodiscard]] double total(double raw_data, double raw_pq) const { return data * raw_data + pq * raw_pq; }
};

[[nodiscard]] LossScale loss_scale(const LossState& state, int epoch, const TrainConfig& cfg);

[[nodiscard]] double total_loss(double data_loss, double phys_loss, const LossState& state, int epoch,
                                const TrainConfig& cfg);

/// Decoupled-weight-decay Adam over every learnable tensor.
class AdamW {
  public:
    AdamW(const ModelParams& like, const TrainConfig& cfg);
    void step(ModelParams& params, const ModelParams& grad, double lr);
    [[nodiscard]] long steps() const { return t_; }

  private:
    ModelParams m_;
    ModelParams v_;
    double beta1_, beta2_, eps_, weight_decay_;
    long t_ = 0;
};

struct Checkpoint {
    int epoch = -1;
    double raw_data = 0.0;
    double raw_pq = 0.0;
    double total_at_save = 0.0;
    ModelParams params;
};

/// True when a is no worse than b in both raw losses and strictly better in one.
[[nodiscard]] bool dominates(const Checkpoint& a, const Checkpoint& b);

/// Best-total checkpoint plus a front of mutually non-dominated checkpoints.
struct CheckpointFront {
    std::optional<Checkpoint> best_total;
    std::vector<Checkpoint> pareto;

    /// Adds c when the front is empty or c dominates a member; dominated
    /// members are dropped. Returns whether c was added.
    bool offer_pareto(const Checkpoint& c);
    /// Replaces best_total when c has a lower total under `scale` than the
    /// stored best re-scored under the same scale.
    bool offer_total(const Checkpoint& c, const LossScale& scale);
    [[nodiscard]] bool empty() const { return !best_total && pareto.empty(); }
};

/// Picks the candidate (front members and best_total) with the lowest total
/// under `scale`; ties go to the earlier epoch.
[[nodiscard]] const Checkpoint& select_final(const CheckpointFront& front, const LossScale& scale);

/// Per-epoch training log row.
struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double w_pq = 0.0;
    double train_loss = 0.0;
    double val_data_raw = 0.0;
    double val_pq_raw = 0.0;
    double sigma2_data = 0.0;
    double sigma2_pq = 0.0;
    double val_data_scaled = 0.0;
    double val_pq_scaled = 0.0;
    double val_total = 0.0;
    bool saved_best = false;
    bool saved_pareto = false;
};

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log);

/// Samples prepared for batched training/inference on one topology.
struct PreparedSet {
    std::vector<RowMatrix> features;   // normalized, N x 3
    std::vector<RowMatrix> targets;    // normalized, N x 3
    std::vector<Eigen::VectorXcd> injections;
};

[[nodiscard]] PreparedSet prepare(std::span<const DatasetRecord* const> records, const AdmittanceSet& adm,
                                  const TrainStats& stats, const FeatureOptions& features);

/// Concatenates the selected samples into batch matrices.
void gather_batch(const PreparedSet& set, std::span<const int> ids, RowMatrix& x, RowMatrix& y,
                  Eigen::MatrixXcd& s);

struct TrainResult {
    CheckpointFront front;
    std::vector<EpochLog> log;
    LossScale final_scale;
    ModelParams final_params;
    int final_epoch = -1;
    bool early_stopped = false;
};

class TrainingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Optional per-epoch observer (progress reporting).
using EpochCallback = std::function<void(const EpochLog&)>;

[[nodiscard]] TrainResult train(const Dataset& data, const NetworkCase& net, const AdmittanceSet& adm,
                                const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Loss value and gradient of the composite objective on one batch.
struct LossEval {
    double data = 0.0;
    double physics = 0.0;
    double total = 0.0;
    ModelParams grad;
};

[[nodiscard]] LossEval composite_loss(ModelParams& params, const GraphTopology& topo, const RowMatrix& x,
                                      const RowMatrix& y, const Eigen::MatrixXcd& injections,
                                      const AdmittanceSet& adm, const Eigen::VectorXd& weights,
                                      const TrainStats& stats, Complex slack_voltage, const LossScale& scale,
                                      const TrainConfig& cfg, const ForwardOptions& fwd, bool with_grad);

}  // namespace hybridpf::gnn
