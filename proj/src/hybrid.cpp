#include <chrono>
#include <cmath>

#include "hybridpf/hybrid.hpp"

namespace hybridpf {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

constexpr double kPercentileRelTol = 1e-9;

}  // namespace

MismatchParts mismatch_parts(const PolarState& state, const Eigen::VectorXcd& injections, const AdmittanceSet& adm) {
    const Eigen::VectorXcd ds = power_injections(state, adm) - injections;
    MismatchParts out;
    for (Eigen::Index i = 1; i < ds.size(); ++i) {
        const double m = std::abs(ds(i));
        if (!std::isfinite(m)) return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                                       std::numeric_limits<double>::infinity()};
        out.magnitude = std::max(out.magnitude, m);
        out.p = std::max(out.p, std::abs(ds(i).real()));
        out.q = std::max(out.q, std::abs(ds(i).imag()));
    }
    return out;
}

double max_mismatch(const PolarState& state, const Eigen::VectorXcd& injections, const AdmittanceSet& adm) {
    return mismatch_parts(state, injections, adm).magnitude;
}

std::string_view stage_name(TriggerStage s) {
    switch (s) {
        case TriggerStage::none: return "none";
        case TriggerStage::input_anomaly: return "input_anomaly";
        case TriggerStage::output_mismatch: return "output_mismatch";
    }
    return "none";
}

std::string_view path_name(SolvePath p) { return p == SolvePath::fast ? "fast" : "robust"; }

TriggerConfig TriggerConfig::from_stats(const TrainStats& stats) {
    TriggerConfig cfg;
    cfg.p995 = stats.feature_p995;
    return cfg;
}

void TriggerConfig::validate() const {
    if (!(tau >= 0.0)) throw std::invalid_argument("trigger tau must be non-negative");
}

TriggerDecision check_trigger(const Eigen::MatrixXd& raw_features, const PolarState& refined,
                              const Eigen::VectorXcd& injections, const AdmittanceSet& adm,
                              const TriggerConfig& cfg) {
    TriggerDecision d;
    d.observed_mismatch = max_mismatch(refined, injections, adm);
    if (cfg.input_anomaly) {
        for (Eigen::Index i = 0; i < raw_features.rows(); ++i) {
            for (Eigen::Index k = 0; k < raw_features.cols(); ++k) {
                if (std::abs(raw_features(i, k)) > cfg.p995(k) * (1.0 + kPercentileRelTol)) {
                    d.offending.push_back({static_cast<int>(i), static_cast<int>(k)});
                }
            }
        }
        if (!d.offending.empty()) {
            d.fired = true;
            d.stage = TriggerStage::input_anomaly;
            return d;
        }
    }
    if (cfg.output_mismatch && !(d.observed_mismatch <= cfg.tau)) {
        d.fired = true;
        d.stage = TriggerStage::output_mismatch;
    }
    return d;
}

HybridResult hybrid_solve(const Eigen::VectorXcd& injections, const gnn::Predictor& model, const NetworkCase& net,
                          const AdmittanceSet& adm, const TriggerConfig& trigger, const IzrConfig& izr,
                          ForcePath force) {
    HybridResult r;
    const auto t_start = Clock::now();

    auto t0 = Clock::now();
    const Eigen::MatrixXd features = model.raw_features(injections);
    const gnn::Prediction pred = model.predict_features(features);
    r.timings.predict = seconds_since(t0);

    t0 = Clock::now();
    const RefineResult refined = dlse_refine(pred.state, adm, injections, 0.5);
    r.refine_singular = refined.singular;
    r.timings.refine = seconds_since(t0);

    t0 = Clock::now();
    r.decision = check_trigger(features, refined.state, injections, adm, trigger);
    r.timings.trigger = seconds_since(t0);
    r.refined_mismatch = r.decision.observed_mismatch;

    const bool robust = force == ForcePath::robust || (force == ForcePath::none && r.decision.fired);
    if (robust) {
        t0 = Clock::now();
        const IzrSolution sol = izr_solve(net, adm, injections, izr);
        r.timings.robust = seconds_since(t0);
        if (!sol.converged) {
            throw HybridError("IZR fallback did not converge (max mismatch " + std::to_string(sol.max_mismatch) +
                              " after " + std::to_string(sol.terms_used) + " terms)");
        }
        r.path = SolvePath::robust;
        r.voltages = PolarState::from_phasors(sol.voltages);
        r.izr_terms = sol.terms_used;
    } else {
        r.path = SolvePath::fast;
        r.voltages = refined.state;
    }
    r.timings.total = seconds_since(t_start);
    r.gnn_mismatch = max_mismatch(pred.state, injections, adm);
    r.max_mismatch = max_mismatch(r.voltages, injections, adm);
    return r;
}

nlohmann::json to_json(const HybridResult& r) {
    nlohmann::json offending = nlohmann::json::array();
    for (const auto& [bus, feature] : r.decision.offending) offending.push_back({bus, feature});
    return {
        {"path", path_name(r.path)},
        {"max_mismatch", r.max_mismatch},
        {"gnn_mismatch", r.gnn_mismatch},
        {"refined_mismatch", r.refined_mismatch},
        {"refine_singular", r.refine_singular},
        {"izr_terms", r.izr_terms},
        {"trigger",
         {{"fired", r.decision.fired},
          {"stage", stage_name(r.decision.stage)},
          {"offending", offending},
          {"observed_mismatch", r.decision.observed_mismatch}}},
        {"vm", std::vector<double>(r.voltages.vm.data(), r.voltages.vm.data() + r.voltages.vm.size())},
        {"va", std::vector<double>(r.voltages.va.data(), r.voltages.va.data() + r.voltages.va.size())},
        {"timings_s",
         {{"predict", r.timings.predict},
          {"refine", r.timings.refine},
          {"trigger", r.timings.trigger},
          {"robust", r.timings.robust},
          {"total", r.timings.total}}},
    };
}

}  // namespace hybridpf
