#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "hybridpf/checkpoint.hpp"
#include "hybridpf/izr.hpp"
#include "hybridpf/newton.hpp"

namespace hybridpf {

inline constexpr double kFailureThreshold = 0.1;  // p.u.

/// Largest |dS_i| over the non-slack buses.
[[nodiscard]] double max_mismatch(const PolarState& state, const Eigen::VectorXcd& injections,
                                  const AdmittanceSet& adm);

struct MismatchParts {
    double magnitude = 0.0;
    double p = 0.0;
    double q = 0.0;
};

/// Max |dS_i|, max |dP_i| and max |dQ_i| over the non-slack buses.
[[nodiscard]] MismatchParts mismatch_parts(const PolarState& state, const Eigen::VectorXcd& injections,
                                           const AdmittanceSet& adm);

enum class TriggerStage { none, input_anomaly, output_mismatch };
[[nodiscard]] std::string_view stage_name(TriggerStage s);

struct TriggerConfig {
    double tau = kFailureThreshold;
    Eigen::Vector3d p995 = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    bool input_anomaly = true;
    bool output_mismatch = true;

    [[nodiscard]] static TriggerConfig from_stats(const TrainStats& stats);
    void validate() const;
};

struct TriggerDecision {
    bool fired = false;
    TriggerStage stage = TriggerStage::none;
    std::vector<std::array<int, 2>> offending;  // (bus, feature) above its percentile
    double observed_mismatch = 0.0;
};

/// Input anomaly on raw node features first, then the refined-state mismatch.
[[nodiscard]] TriggerDecision check_trigger(const Eigen::MatrixXd& raw_features, const PolarState& refined,
                                            const Eigen::VectorXcd& injections, const AdmittanceSet& adm,
                                            const TriggerConfig& cfg);

enum class SolvePath { fast, robust };
enum class ForcePath { none, fast, robust };
[[nodiscard]] std::string_view path_name(SolvePath p);

struct StageTimings {
    double predict = 0.0;
    double refine = 0.0;
    double trigger = 0.0;
    double robust = 0.0;
    double total = 0.0;
};

struct HybridResult {
    PolarState voltages;
    SolvePath path = SolvePath::fast;
    TriggerDecision decision;
    double max_mismatch = 0.0;
    double gnn_mismatch = 0.0;      // raw prediction
    double refined_mismatch = 0.0;  // after d-LSE, before routing
    bool refine_singular = false;
    int izr_terms = 0;
    StageTimings timings;  // seconds
};

class HybridError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Fast path (predict, d-LSE, trigger) with IZR fallback. Throws HybridError
/// when the robust path does not converge.
[[nodiscard]] HybridResult hybrid_solve(const Eigen::VectorXcd& injections, const gnn::Predictor& model,
                                        const NetworkCase& net, const AdmittanceSet& adm,
                                        const TriggerConfig& trigger, const IzrConfig& izr = {},
                                        ForcePath force = ForcePath::none);

[[nodiscard]] nlohmann::json to_json(const HybridResult& r);

}  // namespace hybridpf
