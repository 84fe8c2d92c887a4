#pragma once

#include <cmath>

#include "hybridpf/gnn_model.hpp"
#include "hybridpf/newton.hpp"
#include "hybridpf/scenario.hpp"

namespace hybridpf::gnn {

/// Huber penalty between a and b.
template <typename Scalar>
[[nodiscard]] Scalar huber(Scalar a, Scalar b, Scalar delta = Scalar(1)) {
    const Scalar r = std::abs(a - b);
    return r <= delta ? Scalar(0.5) * r * r : delta * (r - Scalar(0.5) * delta);
}

/// d/da of huber(a, b).
template <typename Scalar>
[[nodiscard]] Scalar huber_grad(Scalar a, Scalar b, Scalar delta = Scalar(1)) {
    const Scalar r = a - b;
    return std::abs(r) <= delta ? r : (r > Scalar(0) ? delta : -delta);
}

/// Mean Huber loss over the non-slack rows (row % nodes != 0) and all channels.
/// pred and target are in normalized target space. Writes dL/dpred if asked.
double data_loss(const RowMatrix& pred, const RowMatrix& target, int nodes, double delta = 1.0,
                 RowMatrix* grad = nullptr);

/// ln(1 + |Z_ii|) over the non-slack buses, divided by its mean.
[[nodiscard]] Eigen::VectorXd sensitivity_weights(const AdmittanceSet& adm);

/// Normalized (vm, cos, sin) targets for one labeled scenario (N x 3).
[[nodiscard]] RowMatrix normalized_targets(const DatasetRecord& rec, const TrainStats& stats);

/// Node features after z-scoring with the train statistics.
[[nodiscard]] RowMatrix normalized_features(const Eigen::MatrixXd& raw, const TrainStats& stats);

/// Denormalized voltage phasors of every graph in a batch (N x batch).
/// (cos, sin) is projected to the unit circle; the slack row is overwritten.
[[nodiscard]] Eigen::MatrixXcd derive_voltages(const RowMatrix& raw, const TrainStats& stats, int nodes,
                                               Complex slack_voltage);

/// Polar state of graph g in a batch output.
[[nodiscard]] PolarState derive_state(const RowMatrix& raw, const TrainStats& stats, int nodes,
                                      Complex slack_voltage, int graph = 0);

/// Mean over graphs and non-slack buses of w_i (Huber(Re dS_i) + Huber(Im dS_i)),
/// with dS computed from the denormalized prediction. injections is N x batch.
/// Writes dL/draw (zero on slack rows) if asked.
double physics_loss(const RowMatrix& raw, const TrainStats& stats, const Eigen::MatrixXcd& injections,
                    const AdmittanceSet& adm, const Eigen::VectorXd& weights, Complex slack_voltage,
                    double delta = 1.0, RowMatrix* grad = nullptr);

}  // namespace hybridpf::gnn
