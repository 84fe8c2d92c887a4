#include "hybridpf/izr.hpp"

#include <cmath>

#include "hybridpf/newton.hpp"

namespace hybridpf {

Eigen::VectorXcd initial_voltage(const AdmittanceSet& adm, const Eigen::VectorXcd& i_load,
                                 Complex v_slack) {
    const auto m = adm.y_ns.rows();
    Eigen::VectorXcd rhs = -adm.y_slack_col * v_slack;
    if (i_load.size() == m) {
        rhs += i_load;
    } else if (i_load.size() != 0) {
        throw std::invalid_argument("constant-current vector must cover the non-slack buses");
    }
    return adm.solve_ns(rhs);
}

Eigen::VectorXcd next_coefficient(const SeriesState& state, const AdmittanceSet& adm,
                                  const Eigen::VectorXcd& s_conj) {
    const auto k = state.v_coeffs.size();
    if (k == 0 || state.w_coeffs.size() < k) {
        throw std::logic_error("next_coefficient needs W[k-1]");
    }
    const Eigen::VectorXcd rhs = s_conj.cwiseProduct(state.w_coeffs[k - 1].conjugate());
    return adm.solve_ns(rhs);
}

Eigen::VectorXcd update_reciprocal(const SeriesState& state) {
    const auto k = state.w_coeffs.size();
    if (state.v_coeffs.size() <= k) throw std::logic_error("update_reciprocal needs V[k]");
    const auto& v0 = state.v_coeffs[0];
    if (k == 0) {
        if ((v0.array().abs() == 0.0).any()) {
            throw IzrError("zero entry in V[0]: isolated zero-voltage bus");
        }
        return v0.cwiseInverse();
    }
    Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(v0.size());
    for (std::size_t m = 1; m <= k; ++m) {
        acc += state.v_coeffs[m].cwiseProduct(state.w_coeffs[k - m]);
    }
    return -state.w_coeffs[0].cwiseProduct(acc);
}

IzrSolution izr_solve_series(const NetworkCase& net, const AdmittanceSet& adm,
                             const Eigen::VectorXcd& injections, const IzrConfig& cfg,
                             const Eigen::VectorXcd& i_load, SeriesState& series) {
    if (cfg.k_max < 1 || !(cfg.coeff_tol > 0.0) || !(cfg.mismatch_tol > 0.0)) {
        throw std::invalid_argument("invalid IZR configuration");
    }
    const int n = net.size();
    if (injections.size() != n) throw std::invalid_argument("injections length must equal bus count");
    const Eigen::VectorXcd s_conj = injections.tail(n - 1).conjugate();

    series.v_coeffs.clear();
    series.w_coeffs.clear();
    series.v_coeffs.push_back(initial_voltage(adm, i_load, net.slack_voltage));
    series.w_coeffs.push_back(update_reciprocal(series));
    Eigen::VectorXcd sum = series.v_coeffs[0];

    IzrSolution sol;
    sol.last_coeff_norm = series.v_coeffs[0].cwiseAbs().maxCoeff();
    while (static_cast<int>(series.v_coeffs.size()) < cfg.k_max) {
        series.v_coeffs.push_back(next_coefficient(series, adm, s_conj));
        const auto& vk = series.v_coeffs.back();
        sum += vk;
        sol.last_coeff_norm = vk.cwiseAbs().maxCoeff();
        if (!std::isfinite(sol.last_coeff_norm)) break;
        if (sol.last_coeff_norm < cfg.coeff_tol) break;
        series.w_coeffs.push_back(update_reciprocal(series));
    }
    sol.terms_used = static_cast<int>(series.v_coeffs.size());

    sol.voltages.resize(n);
    sol.voltages(0) = net.slack_voltage;
    sol.voltages.tail(n - 1) = sum;
    const Eigen::VectorXcd mismatch = power_injections(sol.voltages, adm) - injections;
    sol.max_mismatch = n > 1 ? mismatch.tail(n - 1).cwiseAbs().maxCoeff() : 0.0;
    sol.converged = std::isfinite(sol.max_mismatch) && sol.max_mismatch <= cfg.mismatch_tol;
    return sol;
}

IzrSolution izr_solve(const NetworkCase& net, const AdmittanceSet& adm,
                      const Eigen::VectorXcd& injections, const IzrConfig& cfg,
                      const Eigen::VectorXcd& i_load) {
    SeriesState series;
    return izr_solve_series(net, adm, injections, cfg, i_load, series);
}

}  // namespace hybridpf
