#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "hybridpf/evaluation.hpp"
#include "hybridpf/parallel.hpp"

namespace hybridpf {

namespace {

using Clock = std::chrono::steady_clock;

struct Solved {
    PolarState state;
    bool converged = true;
    int iterations = 0;
    double seconds = 0.0;
    SolvePath path = SolvePath::fast;
    TriggerStage stage = TriggerStage::none;
    double fast_mismatch = 0.0;
};

Solved solve_case(Method m, const Eigen::VectorXcd& s, const gnn::Predictor* model, const NetworkCase& net,
                  const AdmittanceSet& adm, const EvalOptions& opts) {
    Solved out;
    const auto t0 = Clock::now();
    switch (m) {
        case Method::gnn_only: {
            out.state = model->predict(s).state;
            break;
        }
        case Method::gnn_lse: {
            const PolarState pred = model->predict(s).state;
            out.state = dlse_refine(pred, adm, s, 0.5).state;
            break;
        }
        case Method::hybrid: {
            const HybridResult r = hybrid_solve(s, *model, net, adm, opts.trigger, opts.izr);
            out.state = r.voltages;
            out.path = r.path;
            out.stage = r.decision.stage;
            out.fast_mismatch = r.refined_mismatch;
            out.iterations = r.izr_terms;
            out.seconds = r.timings.total;
            return out;
        }
        case Method::izr_only: {
            const IzrSolution sol = izr_solve(net, adm, s, opts.izr);
            out.state = PolarState::from_phasors(sol.voltages);
            out.converged = sol.converged;
            out.iterations = sol.terms_used;
            break;
        }
        case Method::nr_only: {
            const NrResult r = nr_solve(net, adm, s, opts.nr);
            out.state = r.state;
            out.converged = r.converged;
            out.iterations = r.iterations;
            break;
        }
    }
    out.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return out;
}

CaseRow score(Method m, const DatasetRecord& rec, const Solved& solved, const AdmittanceSet& adm,
              double threshold) {
    CaseRow row;
    row.id = rec.id;
    row.method = m;
    row.converged = solved.converged;
    row.iterations = solved.iterations;
    row.seconds = solved.seconds;
    row.path = solved.path;
    row.stage = solved.stage;
    row.fast_mismatch = solved.fast_mismatch;
    const MismatchParts mm = mismatch_parts(solved.state, rec.injections(), adm);
    row.max_mismatch = mm.magnitude;
    row.max_dp = mm.p;
    row.max_dq = mm.q;
    row.failed = !(mm.magnitude <= threshold) || (m == Method::nr_only && !solved.converged);
    const auto n = rec.vm.size();
    double vm = 0.0;
    double va = 0.0;
    for (Eigen::Index i = 1; i < n; ++i) {
        vm += std::abs(solved.state.vm(i) - rec.vm(i));
        va += std::abs(std::remainder(solved.state.va(i) - rec.va(i), 2.0 * std::numbers::pi));
    }
    row.vm_mae = vm / static_cast<double>(n - 1);
    row.va_mae_deg = va / static_cast<double>(n - 1) * 180.0 / std::numbers::pi;
    return row;
}

std::string fmt(double v, int precision = 6) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json("N/A");
}

}  // namespace

std::string_view method_name(Method m) {
    switch (m) {
        case Method::gnn_only: return "gnn_only";
        case Method::gnn_lse: return "gnn_lse";
        case Method::hybrid: return "hybrid";
        case Method::izr_only: return "izr_only";
        case Method::nr_only: return "nr_only";
    }
    return "unknown";
}

bool needs_model(Method m) { return m == Method::gnn_only || m == Method::gnn_lse || m == Method::hybrid; }

TimingStats timing_stats(std::vector<double> seconds) {
    TimingStats t;
    t.count = static_cast<int>(seconds.size());
    if (seconds.empty()) return t;
    double sum = 0.0;
    for (double s : seconds) sum += s;
    t.mean = sum / t.count;
    double sq = 0.0;
    for (double s : seconds) sq += (s - t.mean) * (s - t.mean);
    t.std = std::sqrt(sq / t.count);
    t.p10 = percentile(seconds, 10.0);
    t.p50 = percentile(seconds, 50.0);
    t.p90 = percentile(std::move(seconds), 90.0);
    return t;
}

TriggerCounts trigger_rates(long tp, long fp, long fn, long tn) {
    TriggerCounts c{tp, fp, fn, tn, {}, {}, {}, {}};
    if (tp + fn > 0) {
        c.tpr = 100.0 * tp / static_cast<double>(tp + fn);
        c.fnr = 100.0 * fn / static_cast<double>(tp + fn);
    }
    if (fp + tn > 0) c.fpr = 100.0 * fp / static_cast<double>(fp + tn);
    if (tp + fp > 0) c.precision = 100.0 * tp / static_cast<double>(tp + fp);
    return c;
}

TriggerCounts trigger_metrics(std::span<const CaseRow> hybrid_rows, double threshold) {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& r : hybrid_rows) {
        const bool positive = !(r.fast_mismatch <= threshold);
        const bool fired = r.stage != TriggerStage::none;
        if (positive && fired) ++tp;
        else if (positive) ++fn;
        else if (fired) ++fp;
        else ++tn;
    }
    return trigger_rates(tp, fp, fn, tn);
}

MethodReport summarize(Method m, std::span<const CaseRow> rows, double threshold) {
    MethodReport rep;
    rep.method = m;
    rep.cases = static_cast<int>(rows.size());
    double vm = 0.0, va = 0.0, mismatch = 0.0;
    int ok = 0;
    std::vector<double> all, fast, robust;
    for (const auto& r : rows) {
        mismatch += r.max_mismatch;
        all.push_back(r.seconds);
        if (r.failed) {
            ++rep.failures;
        } else {
            vm += r.vm_mae;
            va += r.va_mae_deg;
            ++ok;
        }
        if (m == Method::hybrid) {
            if (r.path == SolvePath::fast) {
                ++rep.fast_count;
                fast.push_back(r.seconds);
            } else {
                ++rep.robust_count;
                robust.push_back(r.seconds);
            }
        }
    }
    if (rep.cases > 0) {
        rep.failure_rate = 100.0 * rep.failures / rep.cases;
        rep.avg_mismatch = mismatch / rep.cases;
    }
    if (ok > 0) {
        rep.vm_mae = vm / ok;
        rep.va_mae_deg = va / ok;
    }
    rep.timing = timing_stats(std::move(all));
    if (m == Method::hybrid) {
        rep.trigger = trigger_metrics(rows, threshold);
        rep.fast_timing = timing_stats(std::move(fast));
        rep.robust_timing = timing_stats(std::move(robust));
    }
    return rep;
}

const MethodReport& EvalReport::get(Method m) const {
    for (const auto& r : methods) {
        if (r.method == m) return r;
    }
    throw std::out_of_range("method not in report: " + std::string(method_name(m)));
}

std::vector<CaseRow> EvalReport::rows_for(Method m) const {
    std::vector<CaseRow> out;
    for (const auto& r : rows) {
        if (r.method == m) out.push_back(r);
    }
    return out;
}

EvalReport evaluate(std::span<const DatasetRecord* const> records, const gnn::Predictor* model,
                    const NetworkCase& net, const AdmittanceSet& adm, const EvalOptions& opts) {
    if (records.empty()) throw EvalError("no records to evaluate");
    for (Method m : opts.methods) {
        if (needs_model(m) && !model) throw EvalError("method " + std::string(method_name(m)) + " needs a model");
    }
    opts.trigger.validate();
    EvalReport report;
    const bool serial = resolve_jobs(opts.jobs) == 1;
    for (Method m : opts.methods) {
        const Eigen::VectorXcd warm = records.front()->injections();
        static_cast<void>(solve_case(m, warm, model, net, adm, opts));

        std::vector<CaseRow> rows(records.size());
        parallel_for(records.size(), opts.jobs, [&](std::size_t i) {
            const Solved solved = solve_case(m, records[i]->injections(), model, net, adm, opts);
            rows[i] = score(m, *records[i], solved, adm, opts.failure_threshold);
        });
        if (!serial) {
            for (std::size_t i = 0; i < records.size(); ++i) {
                rows[i].seconds = solve_case(m, records[i]->injections(), model, net, adm, opts).seconds;
            }
        }
        report.methods.push_back(summarize(m, rows, opts.failure_threshold));
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    }
    return report;
}

void write_summary(std::ostream& out, const EvalReport& report, const nlohmann::json& provenance) {
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& r : report.methods) {
        nlohmann::json j{
            {"method", method_name(r.method)},
            {"cases", r.cases},
            {"failures", r.failures},
            {"failure_rate_pct", fmt(r.failure_rate, 4)},
            {"vm_mae_pu", r.vm_mae ? nlohmann::json(fmt(*r.vm_mae)) : nlohmann::json("N/A")},
            {"va_mae_deg", r.va_mae_deg ? nlohmann::json(fmt(*r.va_mae_deg)) : nlohmann::json("N/A")},
            {"avg_max_mismatch_pu", fmt(r.avg_mismatch)},
        };
        if (r.method == Method::hybrid) {
            j["fast_path_cases"] = r.fast_count;
            j["robust_path_cases"] = r.robust_count;
        }
        if (r.trigger) {
            const auto& t = *r.trigger;
            j["trigger"] = {{"tp", t.tp},
                            {"fp", t.fp},
                            {"fn", t.fn},
                            {"tn", t.tn},
                            {"tpr_pct", optional_json(t.tpr)},
                            {"fnr_pct", optional_json(t.fnr)},
                            {"fpr_pct", optional_json(t.fpr)},
                            {"precision_pct", optional_json(t.precision)}};
        }
        methods.push_back(std::move(j));
    }
    const nlohmann::json doc{
        {"provenance", provenance},
        {"notes",
         {"avg_max_mismatch_pu averages the per-case maximum |dS_i| over non-slack buses",
          "accuracy metrics exclude failed cases (max |dS_i| > 0.1 p.u. or NR non-convergence)",
          "input-anomaly trigger checks node features only"}},
        {"methods", methods},
    };
    out << doc.dump(2) << '\n';
}

void write_timing_csv(std::ostream& out, const EvalReport& report) {
    out << "method,count,mean_s,std_s,p10_s,p50_s,p90_s\n";
    auto line = [&](const std::string& name, const TimingStats& t) {
        out << name << ',' << t.count << ',' << fmt(t.mean) << ',' << fmt(t.std) << ',' << fmt(t.p10) << ','
            << fmt(t.p50) << ',' << fmt(t.p90) << '\n';
    };
    for (const auto& r : report.methods) {
        line(std::string(method_name(r.method)), r.timing);
        if (r.method == Method::hybrid) {
            line("hybrid_fast_path", r.fast_timing);
            line("hybrid_robust_path", r.robust_timing);
        }
    }
}

void write_case_csv(std::ostream& out, std::span<const CaseRow> rows, bool with_timing) {
    out << "method,case_id,failed,converged,max_mismatch,max_dp,max_dq,vm_mae,va_mae_deg,iterations,path,stage,"
           "fast_mismatch";
    if (with_timing) out << ",seconds";
    out << '\n';
    for (const auto& r : rows) {
        out << method_name(r.method) << ',' << r.id << ',' << (r.failed ? 1 : 0) << ',' << (r.converged ? 1 : 0)
            << ',' << fmt(r.max_mismatch, 10) << ',' << fmt(r.max_dp, 10) << ',' << fmt(r.max_dq, 10) << ','
            << fmt(r.vm_mae, 10) << ',' << fmt(r.va_mae_deg, 10) << ',' << r.iterations << ',';
        if (r.method == Method::hybrid) {
            out << path_name(r.path) << ',' << stage_name(r.stage) << ',' << fmt(r.fast_mismatch, 10);
        } else {
            out << ",,";
        }
        if (with_timing) out << ',' << fmt(r.seconds, 8);
        out << '\n';
    }
}

std::vector<SweepRow> trigger_sweep(std::span<const DatasetRecord* const> records, const gnn::Predictor& model,
                                    const NetworkCase& net, const AdmittanceSet& adm, std::span<const double> taus,
                                    const TriggerConfig& base, int jobs) {
    if (records.empty()) throw EvalError("no records for the trigger sweep");
    struct Fast {
        bool anomaly = false;
        double mismatch = 0.0;
    };
    std::vector<Fast> fast(records.size());
    TriggerConfig input_only = base;
    input_only.output_mismatch = false;
    parallel_for(records.size(), jobs, [&](std::size_t i) {
        const Eigen::VectorXcd s = records[i]->injections();
        const Eigen::MatrixXd features = model.raw_features(s);
        const PolarState refined = dlse_refine(model.predict_features(features).state, adm, s, 0.5).state;
        const TriggerDecision d = check_trigger(features, refined, s, adm, input_only);
        fast[i] = {d.fired, d.observed_mismatch};
    });
    // The robust path is IZR; failures there are checked once per case.
    std::vector<bool> robust_fails(records.size(), false);
    parallel_for(records.size(), jobs, [&](std::size_t i) {
        const Eigen::VectorXcd s = records[i]->injections();
        const IzrSolution sol = izr_solve(net, adm, s);
        robust_fails[i] = !(max_mismatch(PolarState::from_phasors(sol.voltages), s, adm) <= kFailureThreshold);
    });
    std::vector<SweepRow> out;
    for (double tau : taus) {
        int fired = 0, failed = 0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const bool robust = (base.input_anomaly && fast[i].anomaly) ||
                                (base.output_mismatch && !(fast[i].mismatch <= tau));
            fired += robust ? 1 : 0;
            const bool fail = robust ? static_cast<bool>(robust_fails[i]) : !(fast[i].mismatch <= kFailureThreshold);
            failed += fail ? 1 : 0;
        }
        const double n = static_cast<double>(records.size());
        out.push_back({tau, 100.0 * fired / n, 100.0 * failed / n});
    }
    return out;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
    out << "tau_pu,trigger_rate_pct,failure_rate_pct\n";
    for (const auto& r : rows) out << fmt(r.tau) << ',' << fmt(r.trigger_rate) << ',' << fmt(r.failure_rate) << '\n';
}

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::data_only: return "data_only";
        case Variant::zbus_only: return "zbus_only";
        case Variant::pinn_only: return "pinn_only";
        case Variant::pinn_zbus: return "pinn_zbus";
    }
    return "unknown";
}

gnn::TrainConfig apply_variant(gnn::TrainConfig cfg, Variant v) {
    cfg.features.zbus_features = v == Variant::zbus_only || v == Variant::pinn_zbus;
    cfg.physics = v == Variant::pinn_only || v == Variant::pinn_zbus;
    return cfg;
}

std::vector<AblationRow> ablation(const Dataset& data, std::span<const DatasetRecord* const> test,
                                  const NetworkCase& net, const AdmittanceSet& adm, const gnn::TrainConfig& base,
                                  std::span<const Variant> variants, int jobs, const VariantCallback& on_epoch) {
    if (!data.stats) throw EvalError("ablation dataset has no training statistics");
    if (test.empty()) throw EvalError("ablation needs test records");
    std::vector<AblationRow> rows(variants.size());
    parallel_for(variants.size(), jobs, [&](std::size_t k) {
        const Variant v = variants[k];
        const gnn::TrainConfig cfg = apply_variant(base, v);
        AblationRow& row = rows[k];
        row.variant = v;
        row.training = gnn::train(data, net, adm, cfg, [&](const gnn::EpochLog& e) {
            if (on_epoch) on_epoch(v, e);
        });
        row.final_epoch = row.training.final_epoch;
        gnn::ModelBundle bundle{row.training.final_params, *data.stats, cfg, data.case_name, data.case_checksum,
                                row.final_epoch};
        const gnn::Predictor model(std::move(bundle), net, adm);
        std::vector<CaseRow> cases;
        cases.reserve(test.size());
        for (const DatasetRecord* rec : test) {
            Solved solved;
            solved.state = model.predict(rec->injections()).state;
            cases.push_back(score(Method::gnn_only, *rec, solved, adm, kFailureThreshold));
        }
        double vm = 0.0, va = 0.0, mm = 0.0;
        int fails = 0;
        for (const auto& c : cases) {
            vm += c.vm_mae;
            va += c.va_mae_deg;
            mm += c.max_mismatch;
            fails += c.failed ? 1 : 0;
        }
        const double n = static_cast<double>(cases.size());
        row.vm_mae = vm / n;
        row.va_mae_deg = va / n;
        row.avg_mismatch = mm / n;
        row.failure_rate = 100.0 * fails / n;
    });
    return rows;
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
    out << "variant,zbus_features,physics_loss,vm_mae_pu,va_mae_deg,failure_rate_pct,avg_max_mismatch_pu,"
           "selected_epoch\n";
    for (const auto& r : rows) {
        const auto cfg = apply_variant({}, r.variant);
        out << variant_name(r.variant) << ',' << (cfg.features.zbus_features ? 1 : 0) << ','
            << (cfg.physics ? 1 : 0) << ',' << fmt(r.vm_mae) << ',' << fmt(r.va_mae_deg) << ','
            << fmt(r.failure_rate, 4) << ',' << fmt(r.avg_mismatch) << ',' << r.final_epoch << '\n';
    }
}

void write_histogram_csv(std::ostream& out, std::span<const double> values, int bins) {
    out << "bin_lo,bin_hi,count\n";
    if (values.empty() || bins <= 0) return;
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double hi = *hi_it > lo ? *hi_it : lo + 1e-12;
    const double width = (hi - lo) / bins;
    std::vector<long> counts(static_cast<std::size_t>(bins), 0);
    for (double v : values) {
        auto b = static_cast<long>((v - lo) / width);
        b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
        ++counts[static_cast<std::size_t>(b)];
    }
    for (int b = 0; b < bins; ++b) {
        out << fmt(lo + b * width, 8) << ',' << fmt(lo + (b + 1) * width, 8) << ',' << counts[b] << '\n';
    }
}

void write_count_csv(std::ostream& out, std::span<const int> values, const std::string& label) {
    std::map<int, long> counts;
    for (int v : values) ++counts[v];
    out << label << ",count\n";
    for (const auto& [v, c] : counts) out << v << ',' << c << '\n';
}

}  // namespace hybridpf
