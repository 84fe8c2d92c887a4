#pragma once

#include <filesystem>
#include <string>

#include "hybridpf/gnn_train.hpp"

namespace hybridpf::gnn {

class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Everything needed to run a trained model against one network case.
struct ModelBundle {
    ModelParams params;
    TrainStats stats;
    TrainConfig config;
    std::string case_name;
    std::uint64_t case_checksum = 0;
    int epoch = -1;
};

/// Binary layout: magic "HPFCKPT\0", u32 version, u64 metadata length, JSON
/// metadata, then every tensor as little-endian doubles in visit order
/// followed by the BN running statistics.
void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle);
[[nodiscard]] ModelBundle load_checkpoint(const std::filesystem::path& path);

/// Raw network output plus the decoded polar state.
struct Prediction {
    RowMatrix raw;
    PolarState state;
};

/// Immutable inference wrapper; safe to share across threads.
class Predictor {
  public:
    Predictor(ModelBundle bundle, const NetworkCase& net, const AdmittanceSet& adm);

    /// Unnormalized node features (N x 3) for a scenario.
    [[nodiscard]] Eigen::MatrixXd raw_features(const Eigen::VectorXcd& injections) const;
    [[nodiscard]] Prediction predict(const Eigen::VectorXcd& injections) const;
    [[nodiscard]] Prediction predict_features(const Eigen::MatrixXd& raw_features) const;

    [[nodiscard]] const ModelBundle& bundle() const { return bundle_; }
    [[nodiscard]] const TrainStats& stats() const { return bundle_.stats; }

  private:
    ModelBundle bundle_;
    const AdmittanceSet* adm_;
    GraphTopology topo_;
    Complex slack_;
};

}  // namespace hybridpf::gnn
