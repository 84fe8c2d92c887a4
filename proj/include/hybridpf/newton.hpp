#pragma once

#include <optional>

#include "hybridpf/network.hpp"

namespace hybridpf {

/// Polar voltage state over all buses; slack entries hold the setpoint.
struct PolarState {
    Eigen::VectorXd vm;
    Eigen::VectorXd va;  // radians

    [[nodiscard]] Eigen::VectorXcd phasors() const;
    [[nodiscard]] static PolarState from_phasors(const Eigen::VectorXcd& v);
    [[nodiscard]] static PolarState flat(const NetworkCase& net);
};

/// S_i = V_i * conj((Y V)_i) for every bus.
[[nodiscard]] Eigen::VectorXcd power_injections(const Eigen::VectorXcd& v, const AdmittanceSet& adm);
[[nodiscard]] Eigen::VectorXcd power_injections(const PolarState& state, const AdmittanceSet& adm);

/// Specified minus computed injection on the non-slack buses, stacked [dP; dQ].
[[nodiscard]] Eigen::VectorXd power_residual(const PolarState& state, const AdmittanceSet& adm,
                                             const Eigen::VectorXcd& injections);

/// Polar power-flow Jacobian over the non-slack buses,
/// [dP/dva dP/dvm; dQ/dva dQ/dvm], size 2(N-1).
[[nodiscard]] Eigen::MatrixXd jacobian(const PolarState& state, const AdmittanceSet& adm);

struct NrConfig {
    double tol = 1e-8;
    int max_iter = 10;
    bool flat_start = true;
};

struct NrResult {
    PolarState state;
    int iterations = 0;  // mismatch evaluations, the converging one included
    bool converged = false;
    double max_residual = 0.0;
    std::string diagnostic;
};

/// Full Newton-Raphson. A non-flat start uses `initial` when given.
[[nodiscard]] NrResult nr_solve(const NetworkCase& net, const AdmittanceSet& adm,
                                const Eigen::VectorXcd& injections, const NrConfig& cfg = {},
                                const std::optional<PolarState>& initial = std::nullopt);

struct RefineResult {
    PolarState state;
    bool singular = false;
};

/// One damped Newton correction from a predicted state (slack untouched).
[[nodiscard]] RefineResult dlse_refine(const PolarState& predicted, const AdmittanceSet& adm,
                                       const Eigen::VectorXcd& injections, double damping = 0.5);

}  // namespace hybridpf
