#pragma once

#include <array>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hybridpf/hybrid.hpp"

namespace hybridpf {

enum class Method { gnn_only, gnn_lse, hybrid, izr_only, nr_only };
inline constexpr std::array<Method, 5> kAllMethods{Method::gnn_only, Method::gnn_lse, Method::hybrid,
                                                   Method::izr_only, Method::nr_only};
[[nodiscard]] std::string_view method_name(Method m);
[[nodiscard]] bool needs_model(Method m);

struct CaseRow {
    int id = 0;
    Method method = Method::izr_only;
    bool failed = false;
    bool converged = true;
    double max_mismatch = 0.0;
    double max_dp = 0.0;
    double max_dq = 0.0;
    double vm_mae = 0.0;
    double va_mae_deg = 0.0;
    double seconds = 0.0;
    int iterations = 0;  // IZR terms or NR iterations
    // hybrid only
    SolvePath path = SolvePath::fast;
    TriggerStage stage = TriggerStage::none;
    double fast_mismatch = 0.0;  // GNN+d-LSE before routing
};

struct TimingStats {
    int count = 0;
    double mean = 0.0;
    double std = 0.0;
    double p10 = 0.0;
    double p50 = 0.0;
    double p90 = 0.0;
};

[[nodiscard]] TimingStats timing_stats(std::vector<double> seconds);

struct TriggerCounts {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    long tn = 0;
    std::optional<double> tpr;
    std::optional<double> fnr;
    std::optional<double> fpr;
    std::optional<double> precision;
};

/// Fills the rates from the counts; a zero denominator leaves a rate empty.
[[nodiscard]] TriggerCounts trigger_rates(long tp, long fp, long fn, long tn);

/// Positive = the GNN+d-LSE answer would have failed; predicted positive = trigger fired.
[[nodiscard]] TriggerCounts trigger_metrics(std::span<const CaseRow> hybrid_rows,
                                            double threshold = kFailureThreshold);

struct MethodReport {
    Method method = Method::izr_only;
    int cases = 0;
    int failures = 0;
    double failure_rate = 0.0;  // percent
    std::optional<double> vm_mae;
    std::optional<double> va_mae_deg;
    double avg_mismatch = 0.0;  // mean of per-case max |dS|
    TimingStats timing;
    std::optional<TriggerCounts> trigger;
    int fast_count = 0;
    int robust_count = 0;
    TimingStats fast_timing;
    TimingStats robust_timing;
};

struct EvalOptions {
    std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
    TriggerConfig trigger;
    IzrConfig izr;
    NrConfig nr;
    double failure_threshold = kFailureThreshold;
    int jobs = 1;
};

struct EvalReport {
    std::vector<MethodReport> methods;
    std::vector<CaseRow> rows;  // method-major, record order within a method

    [[nodiscard]] const MethodReport& get(Method m) const;
    [[nodiscard]] std::vector<CaseRow> rows_for(Method m) const;
};

class EvalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Runs every requested method over the records. Accuracy is measured against
/// the stored IZR labels. Timing uses a serial pass after one warm-up solve.
[[nodiscard]] EvalReport evaluate(std::span<const DatasetRecord* const> records, const gnn::Predictor* model,
                                  const NetworkCase& net, const AdmittanceSet& adm, const EvalOptions& opts);

[[nodiscard]] MethodReport summarize(Method m, std::span<const CaseRow> rows, double threshold);

/// Deterministic summary (no wall-clock fields).
void write_summary(std::ostream& out, const EvalReport& report, const nlohmann::json& provenance);
/// Timing table: method, count, mean, std, p10, p50, p90 (seconds).
void write_timing_csv(std::ostream& out, const EvalReport& report);
/// Per-case rows; wall-clock seconds only if with_timing.
void write_case_csv(std::ostream& out, std::span<const CaseRow> rows, bool with_timing);

struct SweepRow {
    double tau = 0.0;
    double trigger_rate = 0.0;  // percent
    double failure_rate = 0.0;  // percent at the fixed failure threshold
};

[[nodiscard]] std::vector<SweepRow> trigger_sweep(std::span<const DatasetRecord* const> records,
                                                  const gnn::Predictor& model, const NetworkCase& net,
                                                  const AdmittanceSet& adm, std::span<const double> taus,
                                                  const TriggerConfig& base, int jobs = 1);
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

enum class Variant { data_only, zbus_only, pinn_only, pinn_zbus };
inline constexpr std::array<Variant, 4> kAllVariants{Variant::data_only, Variant::zbus_only, Variant::pinn_only,
                                                     Variant::pinn_zbus};
[[nodiscard]] std::string_view variant_name(Variant v);
[[nodiscard]] gnn::TrainConfig apply_variant(gnn::TrainConfig cfg, Variant v);

struct AblationRow {
    Variant variant = Variant::pinn_zbus;
    double vm_mae = 0.0;
    double va_mae_deg = 0.0;
    double failure_rate = 0.0;  // percent, GNN-only
    double avg_mismatch = 0.0;
    int final_epoch = -1;
    gnn::TrainResult training;
};

using VariantCallback = std::function<void(Variant, const gnn::EpochLog&)>;

/// Trains each variant with identical data, seed and schedule, then scores
/// the raw GNN output on the test records.
[[nodiscard]] std::vector<AblationRow> ablation(const Dataset& data, std::span<const DatasetRecord* const> test,
                                                const NetworkCase& net, const AdmittanceSet& adm,
                                                const gnn::TrainConfig& base, std::span<const Variant> variants,
                                                int jobs = 1, const VariantCallback& on_epoch = {});
void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

/// (bin_lo, bin_hi, count) over equal-width bins.
void write_histogram_csv(std::ostream& out, std::span<const double> values, int bins);
/// (value, count) for integer-valued data.
void write_count_csv(std::ostream& out, std::span<const int> values, const std::string& label);

}  // namespace hybridpf
