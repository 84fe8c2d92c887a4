#include "hybridpf/newton.hpp"

#include <cmath>

namespace hybridpf {

namespace {

constexpr double kSingularRcond = 1e-14;

// Solves J dx = rhs; returns false when J is numerically singular.
bool solve_jacobian(const Eigen::MatrixXd& jac, const Eigen::VectorXd& rhs, Eigen::VectorXd& dx) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    if (!(lu.rcond() > kSingularRcond)) return false;
    dx = lu.solve(rhs);
    return dx.allFinite();
}

void apply_step(PolarState& state, const Eigen::VectorXd& dx, double scale) {
    const auto m = state.vm.size() - 1;
    state.va.tail(m) += scale * dx.head(m);
    state.vm.tail(m) += scale * dx.tail(m);
}

}  // namespace

Eigen::VectorXcd PolarState::phasors() const {
    Eigen::VectorXcd v(vm.size());
    for (Eigen::Index i = 0; i < vm.size(); ++i) v(i) = std::polar(vm(i), va(i));
    return v;
}

PolarState PolarState::from_phasors(const Eigen::VectorXcd& v) {
    PolarState s;
    s.vm = v.cwiseAbs();
    s.va = v.unaryExpr([](const Complex& c) { return std::arg(c); }).real();
    return s;
}

PolarState PolarState::flat(const NetworkCase& net) {
    PolarState s;
    s.vm = Eigen::VectorXd::Ones(net.size());
    s.va = Eigen::VectorXd::Zero(net.size());
    s.vm(0) = std::abs(net.slack_voltage);
    s.va(0) = std::arg(net.slack_voltage);
    return s;
}

Eigen::VectorXcd power_injections(const Eigen::VectorXcd& v, const AdmittanceSet& adm) {
    const Eigen::VectorXcd current = adm.y_full * v;
    return v.cwiseProduct(current.conjugate());
}

Eigen::VectorXcd power_injections(const PolarState& state, const AdmittanceSet& adm) {
    return power_injections(state.phasors(), adm);
}

Eigen::VectorXd power_residual(const PolarState& state, const AdmittanceSet& adm,
                               const Eigen::VectorXcd& injections) {
    const auto m = state.vm.size() - 1;
    const Eigen::VectorXcd ds = injections.tail(m) - power_injections(state, adm).tail(m);
    Eigen::VectorXd r(2 * m);
    r.head(m) = ds.real();
    r.tail(m) = ds.imag();
    return r;
}

Eigen::MatrixXd jacobian(const PolarState& state, const AdmittanceSet& adm) {
    const Eigen::VectorXcd v = state.phasors();
    const Eigen::VectorXcd current = adm.y_full * v;
    const Eigen::VectorXcd v_unit = v.array() / state.vm.array().cast<Complex>();
    const auto n = v.size();
    const auto m = n - 1;

    // dS/dva = j diag(V) conj(diag(I) - Y diag(V))
    // dS/dvm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
    Eigen::MatrixXcd ds_dva = -(adm.y_full * v.asDiagonal());
    ds_dva.diagonal() += current;
    ds_dva = Complex(0.0, 1.0) * (v.asDiagonal() * ds_dva.conjugate());
    Eigen::MatrixXcd ds_dvm = v.asDiagonal() * (adm.y_full * v_unit.asDiagonal()).conjugate();
    ds_dvm.diagonal() += current.conjugate().cwiseProduct(v_unit);

    Eigen::MatrixXd jac(2 * m, 2 * m);
    jac.topLeftCorner(m, m) = ds_dva.bottomRightCorner(m, m).real();
    jac.topRightCorner(m, m) = ds_dvm.bottomRightCorner(m, m).real();
    jac.bottomLeftCorner(m, m) = ds_dva.bottomRightCorner(m, m).imag();
    jac.bottomRightCorner(m, m) = ds_dvm.bottomRightCorner(m, m).imag();
    return jac;
}

NrResult nr_solve(const NetworkCase& net, const AdmittanceSet& adm,
                  const Eigen::VectorXcd& injections, const NrConfig& cfg,
                  const std::optional<PolarState>& initial) {
    if (!(cfg.tol > 0.0) || cfg.max_iter < 1) throw std::invalid_argument("invalid NR configuration");
    NrResult res;
    res.state = (cfg.flat_start || !initial) ? PolarState::flat(net) : *initial;
    res.state.vm(0) = std::abs(net.slack_voltage);
    res.state.va(0) = std::arg(net.slack_voltage);

    Eigen::VectorXd dx;
    for (int it = 1; it <= cfg.max_iter; ++it) {
        res.iterations = it;
        const Eigen::VectorXd r = power_residual(res.state, adm, injections);
        res.max_residual = r.cwiseAbs().maxCoeff();
        if (!std::isfinite(res.max_residual)) {
            res.diagnostic = "non-finite mismatch";
            return res;
        }
        if (res.max_residual < cfg.tol) {
            res.converged = true;
            return res;
        }
        if (!solve_jacobian(jacobian(res.state, adm), r, dx)) {
            res.diagnostic = "singular Jacobian at iteration " + std::to_string(it);
            return res;
        }
        apply_step(res.state, dx, 1.0);
    }
    const Eigen::VectorXd r = power_residual(res.state, adm, injections);
    res.max_residual = r.cwiseAbs().maxCoeff();
    res.converged = std::isfinite(res.max_residual) && res.max_residual < cfg.tol;
    if (!res.converged) res.diagnostic = "no convergence within max_iter";
    return res;
}

RefineResult dlse_refine(const PolarState& predicted, const AdmittanceSet& adm,
                         const Eigen::VectorXcd& injections, double damping) {
    if (!(damping > 0.0 && damping <= 1.0)) throw std::invalid_argument("damping must lie in (0, 1]");
    RefineResult out{predicted, false};
    Eigen::VectorXd dx;
    if (!solve_jacobian(jacobian(predicted, adm), power_residual(predicted, adm, injections), dx)) {
        out.singular = true;
        return out;
    }
    apply_step(out.state, dx, damping);
    return out;
}

}  // namespace hybridpf
