#pragma once

#include <stdexcept>
#include <vector>

#include "hybridpf/network.hpp"

namespace hybridpf {

/// Implicit Z-bus recursive (IZR) power flow.
///
/// Voltages of the non-slack buses are expanded as a Maclaurin series in an
/// embedding parameter that scales the constant-power injections:
///
///   V[0] = Zbus (I_L - y V_slack)
///   V[k] = Zbus diag(conj(S)) conj(W[k-1]),   k > 0
///
/// with W the series of 1/V. The solution is the series evaluated at 1. All
/// applications of Zbus go through the stored LU factorization.

struct IzrConfig {
    int k_max = 15;            // maximum number of series terms, V[0] included
    double coeff_tol = 1e-9;   // stop once ||V[k]||_inf drops below this
    double mismatch_tol = 1e-6;
};

class IzrError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct SeriesState {
    std::vector<Eigen::VectorXcd> v_coeffs;
    std::vector<Eigen::VectorXcd> w_coeffs;
};

struct IzrSolution {
    Eigen::VectorXcd voltages;  // all buses, slack first
    int terms_used = 0;         // coefficient vectors computed, V[0] counted
    double max_mismatch = 0.0;
    double last_coeff_norm = 0.0;
    bool converged = false;

    /// Highest series order evaluated (terms_used - 1).
    [[nodiscard]] int highest_order() const { return terms_used - 1; }
};

[[nodiscard]] Eigen::VectorXcd initial_voltage(const AdmittanceSet& adm,
                                               const Eigen::VectorXcd& i_load, Complex v_slack);

/// Returns V[k] for k = state.v_coeffs.size(); needs W[k-1].
[[nodiscard]] Eigen::VectorXcd next_coefficient(const SeriesState& state, const AdmittanceSet& adm,
                                                const Eigen::VectorXcd& s_conj);

/// Returns W[k] for k = state.w_coeffs.size(); needs V[0..k] and W[0..k-1].
[[nodiscard]] Eigen::VectorXcd update_reciprocal(const SeriesState& state);

/// injections: net complex power for all N buses (slack entry ignored).
/// i_load: optional constant-current injections for the N-1 non-slack buses.
[[nodiscard]] IzrSolution izr_solve(const NetworkCase& net, const AdmittanceSet& adm,
                                    const Eigen::VectorXcd& injections, const IzrConfig& cfg = {},
                                    const Eigen::VectorXcd& i_load = {});

/// Same as izr_solve but also returns the coefficient sequence.
[[nodiscard]] IzrSolution izr_solve_series(const NetworkCase& net, const AdmittanceSet& adm,
                                           const Eigen::VectorXcd& injections,
                                           const IzrConfig& cfg, const Eigen::VectorXcd& i_load,
                                           SeriesState& series);

}  // namespace hybridpf
