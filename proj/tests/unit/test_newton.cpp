#include <catch_amalgamated.hpp>

#include <random>

#include "hybridpf/izr.hpp"
#include "hybridpf/newton.hpp"
#include "support.hpp"

using namespace hybridpf;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

PolarState random_state(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> vm(0.9, 1.1);
    std::uniform_real_distribution<double> va(-0.2, 0.2);
    PolarState s;
    s.vm.resize(n);
    s.va.resize(n);
    s.vm(0) = 1.0;
    s.va(0) = 0.0;
    for (int i = 1; i < n; ++i) {
        s.vm(i) = vm(rng);
        s.va(i) = va(rng);
    }
    return s;
}

/// Central differences of the computed P, Q over the non-slack state variables.
Eigen::MatrixXd fd_jacobian(const PolarState& s, const AdmittanceSet& adm, double h) {
    const int n = static_cast<int>(s.vm.size());
    const int m = n - 1;
    Eigen::MatrixXd j(2 * m, 2 * m);
    for (int c = 0; c < 2 * m; ++c) {
        PolarState plus = s;
        PolarState minus = s;
        double& p = c < m ? plus.va(c + 1) : plus.vm(c - m + 1);
        double& q = c < m ? minus.va(c + 1) : minus.vm(c - m + 1);
        p += h;
        q -= h;
        const Eigen::VectorXcd sp = power_injections(plus, adm);
        const Eigen::VectorXcd sm = power_injections(minus, adm);
        for (int r = 0; r < m; ++r) {
            j(r, c) = (sp(r + 1).real() - sm(r + 1).real()) / (2 * h);
            j(r + m, c) = (sp(r + 1).imag() - sm(r + 1).imag()) / (2 * h);
        }
    }
    return j;
}

}  // namespace

TEST_CASE("flat state injects nothing") {
    const NetworkCase net = testing::ieee33();
    const AdmittanceSet adm = build_admittance(net);
    CHECK(power_injections(PolarState::flat(net), adm).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-bus injection from the first-order series voltage") {
    const NetworkCase net = testing::two_bus(0.1, 10.0);
    const AdmittanceSet adm = build_admittance(net);
    Eigen::VectorXcd v(2);
    v << 1.0, Complex(1.0, -0.01);
    const Eigen::VectorXcd s = power_injections(v, adm);
    CHECK_THAT(s(1).real(), WithinAbs(-0.1, 1e-12));
    CHECK_THAT(s(1).imag(), WithinAbs(0.0, 1e-3));
}

TEST_CASE("total injection equals total branch and shunt losses") {
    auto doc = nlohmann::json::parse(R"({"base_mva":100,"base_kv":10,
        "buses":[{"id":1,"kind":"slack"},{"id":2,"kind":"pq","gs":1.5,"bs":3.0},{"id":3,"kind":"pq"},{"id":4,"kind":"pq"}],
        "branches":[{"from":1,"to":2,"r":0.02,"x":0.06,"b":0.03},{"from":2,"to":3,"r":0.01,"x":0.05,"b":0.02,"tap":0.98},
                    {"from":2,"to":4,"r":0.03,"x":0.04}]})");
    for (const NetworkCase& net : {parse_case(doc), testing::ieee33()}) {
        const AdmittanceSet adm = build_admittance(net);
        std::mt19937_64 rng(5);
        for (int t = 0; t < 5; ++t) {
            const PolarState st = random_state(net.size(), rng);
            const Eigen::VectorXcd v = st.phasors();
            Complex losses = 0.0;
            for (const auto& b : net.branches) {
                // pi model with an off-nominal tap on the from side
                const Complex ys = 1.0 / Complex(b.r, b.x);
                const Complex ysh(0.0, b.b_total / 2.0);
                const Complex vf = v(b.from);
                const Complex vt = v(b.to);
                const Complex i_f = (ys + ysh) / (b.tap * b.tap) * vf - ys / b.tap * vt;
                const Complex i_t = (ys + ysh) * vt - ys / b.tap * vf;
                losses += vf * std::conj(i_f) + vt * std::conj(i_t);
            }
            for (int i = 0; i < net.size(); ++i) {
                const Complex y_sh(net.buses[i].shunt_g, net.buses[i].shunt_b);
                losses += v(i) * std::conj(y_sh * v(i));
            }
            CHECK(std::abs(power_injections(v, adm).sum() - losses) < 1e-10);
        }
    }
}

TEST_CASE("Jacobian matches central finite differences") {
    for (const NetworkCase& net : {testing::ieee33(), testing::five_bus()}) {
        const AdmittanceSet adm = build_admittance(net);
        std::mt19937_64 rng(9);
        for (int t = 0; t < 4; ++t) {
            const PolarState s = random_state(net.size(), rng);
            const Eigen::MatrixXd analytic = jacobian(s, adm);
            const Eigen::MatrixXd fd = fd_jacobian(s, adm, 1e-7);
            REQUIRE(analytic.rows() == 2 * (net.size() - 1));
            REQUIRE(analytic.cols() == 2 * (net.size() - 1));
            const double scale = analytic.cwiseAbs().maxCoeff();
            CHECK((analytic - fd).cwiseAbs().maxCoeff() / scale < 1e-6);
            CHECK(analytic.allFinite());
        }
    }
}

TEST_CASE("two-bus flat-start Jacobian entries") {
    const NetworkCase net = testing::two_bus(0.1);
    const AdmittanceSet adm = build_admittance(net);
    const Eigen::MatrixXd jac = jacobian(PolarState::flat(net), adm);
    REQUIRE(jac.rows() == 2);
    CHECK_THAT(jac(0, 0), WithinAbs(10.0, 1e-12));
    CHECK_THAT(jac(1, 1), WithinAbs(10.0, 1e-12));
}

TEST_CASE("Newton-Raphson on zero load converges immediately") {
    const NetworkCase net = testing::ieee33();
    const AdmittanceSet adm = build_admittance(net);
    const NrResult r = nr_solve(net, adm, Eigen::VectorXcd::Zero(33));
    CHECK(r.converged);
    CHECK(r.iterations == 1);
    CHECK((r.state.vm.array() - 1.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("Newton-Raphson fixed point") {
    const NetworkCase net = testing::ieee33();
    const AdmittanceSet adm = build_admittance(net);
    const Eigen::VectorXcd s = net.base_injections();
    const NrResult first = nr_solve(net, adm, s);
    REQUIRE(first.converged);
    NrConfig warm;
    warm.flat_start = false;
    const NrResult again = nr_solve(net, adm, s, warm, first.state);
    CHECK(again.converged);
    CHECK(again.iterations == 1);
    CHECK((again.state.vm - first.state.vm).cwiseAbs().maxCoeff() <= warm.tol);
}

TEST_CASE("Newton-Raphson reports failure on extreme load") {
    const NetworkCase net = testing::ieee33();
    const AdmittanceSet adm = build_admittance(net);
    const NrResult r = nr_solve(net, adm, net.base_injections() * 12.0);
    CHECK_FALSE(r.converged);
    CHECK_FALSE(r.diagnostic.empty());
}

TEST_CASE("d-LSE step") {
    const NetworkCase net = testing::ieee33();
    const AdmittanceSet adm = build_admittance(net);
    const Eigen::VectorXcd s = net.base_injections();
    const IzrSolution exact = izr_solve(net, adm, s);
    const PolarState truth = PolarState::from_phasors(exact.voltages);

    SECTION("exact input is a fixed point") {
        const RefineResult r = dlse_refine(truth, adm, s, 0.5);
        CHECK_FALSE(r.singular);
        CHECK((r.state.vm - truth.vm).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((r.state.va - truth.va).cwiseAbs().maxCoeff() < 1e-9);
    }
    SECTION("damping scales the correction") {
        PolarState pred = truth;
        pred.vm.tail(32).array() -= 0.01;
        const RefineResult half = dlse_refine(pred, adm, s, 0.5);
        const RefineResult full = dlse_refine(pred, adm, s, 1.0);
        CHECK(((full.state.vm - pred.vm) - 2.0 * (half.state.vm - pred.vm)).cwiseAbs().maxCoeff() < 1e-14);
        CHECK(half.state.vm(0) == pred.vm(0));
        CHECK(half.state.va(0) == pred.va(0));
    }
    SECTION("undamped step equals one Newton iteration") {
        PolarState pred = truth;
        pred.vm.tail(32).array() -= 0.005;
        pred.va.tail(32).array() += 0.002;
        const RefineResult step = dlse_refine(pred, adm, s, 1.0);
        NrConfig one;
        one.flat_start = false;
        one.max_iter = 1;
        const NrResult nr = nr_solve(net, adm, s, one, pred);
        CHECK((step.state.vm - nr.state.vm).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((step.state.va - nr.state.va).cwiseAbs().maxCoeff() < 1e-14);
    }
    SECTION("damped step with a known correction") {
        const NetworkCase two = testing::two_bus(0.1, 0.0, 0.0, 0.05);
        const AdmittanceSet adm2 = build_admittance(two);
        PolarState pred = PolarState::flat(two);
        pred.vm(1) = 0.95;
        // injections that make the linearized correction exactly +0.02 in vm
        const Eigen::MatrixXd jac = jacobian(pred, adm2);
        Eigen::Vector2d dx(0.0, 0.02);
        const Eigen::Vector2d rhs = jac * dx;
        Eigen::VectorXcd target = power_injections(pred, adm2);
        target(1) += Complex(rhs(0), rhs(1));
        const RefineResult r = dlse_refine(pred, adm2, target, 0.5);
        CHECK_THAT(r.state.vm(1), WithinRel(0.96, 1e-12));
    }
}
