#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "hybridpf/evaluation.hpp"
#include "hybridpf/parallel.hpp"

namespace fs = std::filesystem;
using namespace hybridpf;
using nlohmann::json;

namespace {

enum Exit : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kMissingFile = 3,
    kInvalidInput = 4,
    kInvariant = 5,
    kSolverFailure = 6,
};

struct Failure : std::runtime_error {
    Failure(int code, std::string kind, const std::string& msg)
        : std::runtime_error(msg), code(code), kind(std::move(kind)) {}
    int code;
    std::string kind;
};

int verbosity() {
    const char* v = std::getenv("HYBRIDPF_VERBOSE");
    return v ? std::atoi(v) : 1;
}

void info(const std::string& msg) {
    if (verbosity() >= 1) std::cerr << msg << '\n';
}

void debug(const std::string& msg) {
    if (verbosity() >= 2) std::cerr << msg << '\n';
}

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw Failure(kMissingFile, "missing_file", what + " not found: " + p.string());
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Failure(kMissingFile, "io", "cannot write " + p.string());
    return out;
}

/// One-line JSON comment heading every CSV artifact.
void csv_provenance(std::ostream& out, const json& provenance) { out << "# " << provenance.dump() << '\n'; }

struct Loaded {
    NetworkCase net;
    AdmittanceSet adm;
    std::uint64_t checksum = 0;
};

Loaded load(const fs::path& case_path) {
    require_file(case_path, "case file");
    Loaded l;
    l.net = load_case(case_path);
    l.adm = build_admittance(l.net);
    l.checksum = case_checksum(l.net);
    debug("case " + l.net.name + " checksum " + checksum_hex(l.checksum));
    return l;
}

Dataset load_dataset(const fs::path& p, const Loaded& c) {
    require_file(p, "dataset");
    Dataset d = read_dataset(p);
    if (d.case_checksum != c.checksum) {
        throw Failure(kInvariant, "checksum_mismatch",
                      "dataset " + p.string() + " was generated for case checksum " + checksum_hex(d.case_checksum) +
                          ", loaded case has " + checksum_hex(c.checksum));
    }
    return d;
}

gnn::ModelBundle load_model(const fs::path& p, const Loaded& c) {
    require_file(p, "checkpoint");
    gnn::ModelBundle b = gnn::load_checkpoint(p);
    if (b.case_checksum != c.checksum) {
        throw Failure(kInvariant, "checksum_mismatch",
                      "checkpoint " + p.string() + " was trained for case checksum " + checksum_hex(b.case_checksum) +
                          ", loaded case has " + checksum_hex(c.checksum));
    }
    return b;
}

std::vector<const DatasetRecord*> pick(const Dataset& d, const std::string& split) {
    if (split == "all") {
        std::vector<const DatasetRecord*> out;
        for (const auto& r : d.records) out.push_back(&r);
        return out;
    }
    return d.split(parse_split(split));
}

// ---------------------------------------------------------------- options

struct Common {
    fs::path case_path = fs::path(HYBRIDPF_DATA_DIR) / "ieee33bw.json";
    std::string profile = "desk";
    int jobs = 0;
    std::uint64_t seed = 42;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--case", c.case_path, "Network case JSON")->capture_default_str();
    app->add_option("--profile", c.profile, "Scale profile")->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
    app->add_option("--jobs", c.jobs, "Worker threads (0 = all cores, 1 = serial)")->capture_default_str();
    app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
}

struct GenOpts {
    Common common;
    fs::path out;
    std::optional<int> n;
    std::optional<double> stress_fraction;
    std::vector<double> nominal, stress, splits;
    std::optional<int> k_max;
    std::optional<double> coeff_tol, mismatch_tol;
};

struct TrainOpts {
    Common common;
    fs::path dataset, out_dir = "model";
    std::optional<int> epochs, batch_size, hidden, heads, pretrain, ramp, patience, warmup;
    std::optional<double> lr, w_pq, dropout, ema_decay;
    bool no_physics = false, no_zbus = false;
};

struct TriggerOpts {
    double tau = kFailureThreshold;
    bool no_input_anomaly = false;
    bool no_output_mismatch = false;
};

void add_trigger(CLI::App* app, TriggerOpts& t) {
    app->add_option("--tau", t.tau, "Output-mismatch trigger threshold (p.u.)")->capture_default_str();
    app->add_flag("--no-input-anomaly", t.no_input_anomaly, "Disable the input-anomaly trigger stage");
    app->add_flag("--no-output-mismatch", t.no_output_mismatch, "Disable the output-mismatch trigger stage");
}

TriggerConfig trigger_config(const TriggerOpts& t, const TrainStats& stats) {
    TriggerConfig cfg = TriggerConfig::from_stats(stats);
    cfg.tau = t.tau;
    cfg.input_anomaly = !t.no_input_anomaly;
    cfg.output_mismatch = !t.no_output_mismatch;
    cfg.validate();
    return cfg;
}

struct SolveOpts {
    Common common;
    fs::path model, dataset;
    std::optional<int> record;
    double scale = 1.0;
    bool force_robust = false, force_fast = false;
    TriggerOpts trigger;
};

struct EvalOpts {
    Common common;
    fs::path model, dataset, out_dir = "eval";
    std::string split = "test";
    std::vector<std::string> methods;
    TriggerOpts trigger;
};

struct AblateOpts {
    TrainOpts train;
    fs::path test_dataset;
    std::string split = "test";
    std::vector<std::string> variants;
};

struct SweepOpts {
    Common common;
    fs::path model, dataset, out = "sweep.csv";
    std::string split = "test";
    std::vector<double> taus{0.0, 0.02, 0.05, 0.1, 0.2, 0.5};
    TriggerOpts trigger;
};

struct BenchOpts {
    Common common;
    fs::path dataset, model, out_dir = "bench";
    std::string split = "all";
    int bins = 30;
};

GenConfig gen_config(const GenOpts& o) {
    GenConfig cfg;
    cfg.n_scenarios = o.common.profile == "paper" ? 50000 : 5000;
    if (o.n) cfg.n_scenarios = *o.n;
    cfg.seed = o.common.seed;
    cfg.jobs = o.common.jobs;
    if (o.stress_fraction) cfg.stress_fraction = *o.stress_fraction;
    if (!o.nominal.empty()) cfg.nominal_range = {o.nominal.at(0), o.nominal.at(1)};
    if (!o.stress.empty()) cfg.stress_range = {o.stress.at(0), o.stress.at(1)};
    if (!o.splits.empty()) cfg.splits = {o.splits.at(0), o.splits.at(1), o.splits.at(2)};
    if (o.k_max) cfg.izr.k_max = *o.k_max;
    if (o.coeff_tol) cfg.izr.coeff_tol = *o.coeff_tol;
    if (o.mismatch_tol) cfg.izr.mismatch_tol = *o.mismatch_tol;
    cfg.validate();
    return cfg;
}

gnn::TrainConfig train_config(const TrainOpts& o) {
    gnn::TrainConfig cfg = o.common.profile == "paper" ? gnn::TrainConfig::paper() : gnn::TrainConfig::desk();
    cfg.seed = o.common.seed;
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.batch_size) cfg.batch_size = *o.batch_size;
    if (o.hidden) cfg.shape.hidden = *o.hidden;
    if (o.heads) cfg.shape.heads = *o.heads;
    if (o.pretrain) cfg.pretrain_epochs = *o.pretrain;
    if (o.ramp) cfg.ramp_epochs = *o.ramp;
    if (o.patience) cfg.patience = *o.patience;
    if (o.warmup) cfg.warmup_epochs = *o.warmup;
    if (o.lr) {
        cfg.lr = *o.lr;
        cfg.lr_floor = std::min(cfg.lr_floor, cfg.lr);
    }
    if (o.w_pq) cfg.w_pq_final = *o.w_pq;
    if (o.dropout) cfg.dropout = *o.dropout;
    if (o.ema_decay) cfg.ema_decay = *o.ema_decay;
    cfg.physics = !o.no_physics;
    cfg.features.zbus_features = !o.no_zbus;
    cfg.validate();
    return cfg;
}

void add_train_options(CLI::App* app, TrainOpts& o) {
    add_common(app, o.common);
    app->add_option("--dataset", o.dataset, "Dataset produced by generate")->required();
    app->add_option("--epochs", o.epochs, "Training epochs");
    app->add_option("--batch-size", o.batch_size, "Mini-batch size");
    app->add_option("--hidden", o.hidden, "Hidden channels per head");
    app->add_option("--heads", o.heads, "Attention heads in hidden layers");
    app->add_option("--pretrain-epochs", o.pretrain, "Data-only epochs");
    app->add_option("--ramp-epochs", o.ramp, "Physics-weight ramp epochs");
    app->add_option("--patience", o.patience, "Early-stopping patience");
    app->add_option("--warmup-epochs", o.warmup, "Learning-rate warmup epochs");
    app->add_option("--lr", o.lr, "Peak learning rate");
    app->add_option("--w-pq", o.w_pq, "Final physics-loss weight");
    app->add_option("--dropout", o.dropout, "Dropout after layer 1");
    app->add_option("--ema-decay", o.ema_decay, "EMA decay of the loss scales");
}

json provenance(const Loaded& c, const json& config) {
    return {{"case", c.net.name}, {"case_checksum", checksum_hex(c.checksum)}, {"config", config}};
}

// --------------------------------------------------------------- commands

int run_generate(const GenOpts& o) {
    const Loaded c = load(o.common.case_path);
    const GenConfig cfg = gen_config(o);
    info("generating " + std::to_string(cfg.n_scenarios) + " scenarios");
    const Dataset d = generate_dataset(c.net, c.adm, cfg);
    write_dataset(o.out, d);
    info("wrote " + o.out.string() + " (" + std::to_string(d.resampled) + " resampled)");
    return kOk;
}

void write_training_outputs(const fs::path& dir, const Loaded& c, const Dataset& d, const gnn::TrainConfig& cfg,
                            const gnn::TrainResult& r, const std::string& stem) {
    const json prov = provenance(c, to_json(cfg));
    {
        auto out = open_out(dir / (stem + "_log.csv"));
        csv_provenance(out, prov);
        gnn::write_training_log(out, r.log);
    }
    gnn::save_checkpoint(dir / (stem + ".ckpt"), {r.final_params, *d.stats, cfg, c.net.name, c.checksum, r.final_epoch});
    json front = json::array();
    for (const auto& m : r.front.pareto) front.push_back({{"epoch", m.epoch}, {"val_data_raw", m.raw_data}, {"val_pq_raw", m.raw_pq}});
    json best = nullptr;
    if (r.front.best_total) best = {{"epoch", r.front.best_total->epoch}, {"val_data_raw", r.front.best_total->raw_data}, {"val_pq_raw", r.front.best_total->raw_pq}};
    const json summary{
        {"provenance", prov},
        {"selection_rule", "lowest scaled validation total under the final epoch's loss scales, ties to the earlier epoch"},
        {"selected_epoch", r.final_epoch},
        {"epochs_run", static_cast<int>(r.log.size())},
        {"early_stopped", r.early_stopped},
        {"best_total", best},
        {"pareto_front", front},
        {"final_scale", {{"data", r.final_scale.data}, {"pq", r.final_scale.pq}}},
    };
    auto out = open_out(dir / (stem + "_summary.json"));
    out << summary.dump(2) << '\n';
}

int run_train(const TrainOpts& o) {
    const Loaded c = load(o.common.case_path);
    const Dataset d = load_dataset(o.dataset, c);
    const gnn::TrainConfig cfg = train_config(o);
    info("training " + std::string(cfg.physics ? "with" : "without") + " physics loss, " +
         std::to_string(cfg.epochs) + " epochs");
    const auto r = gnn::train(d, c.net, c.adm, cfg, [](const gnn::EpochLog& e) {
        info("epoch " + std::to_string(e.epoch) + " train " + std::to_string(e.train_loss) + " val_data " +
             std::to_string(e.val_data_raw) + " val_pq " + std::to_string(e.val_pq_raw) +
             (e.saved_best ? " [best]" : "") + (e.saved_pareto ? " [pareto]" : ""));
    });
    fs::create_directories(o.out_dir);
    write_training_outputs(o.out_dir, c, d, cfg, r, "model");
    info("selected epoch " + std::to_string(r.final_epoch) + ", wrote " + (o.out_dir / "model.ckpt").string());
    return kOk;
}

int run_solve(const SolveOpts& o) {
    if (o.force_fast && o.force_robust) throw Failure(kUsage, "usage", "--force-fast and --force-robust are exclusive");
    const Loaded c = load(o.common.case_path);
    gnn::Predictor model(load_model(o.model, c), c.net, c.adm);
    Eigen::VectorXcd s;
    if (!o.dataset.empty()) {
        const Dataset d = load_dataset(o.dataset, c);
        const int idx = o.record.value_or(0);
        if (idx < 0 || idx >= static_cast<int>(d.records.size())) {
            throw Failure(kInvalidInput, "invalid_input", "record index out of range");
        }
        s = d.records[static_cast<std::size_t>(idx)].injections();
    } else {
        s = c.net.base_injections() * o.scale;
    }
    const ForcePath force = o.force_robust ? ForcePath::robust : o.force_fast ? ForcePath::fast : ForcePath::none;
    const HybridResult r = hybrid_solve(s, model, c.net, c.adm, trigger_config(o.trigger, model.stats()), {}, force);
    json out = to_json(r);
    out["case_checksum"] = checksum_hex(c.checksum);
    std::cout << out.dump(2) << '\n';
    return kOk;
}

int run_evaluate(const EvalOpts& o) {
    const Loaded c = load(o.common.case_path);
    const Dataset d = load_dataset(o.dataset, c);
    const auto records = pick(d, o.split);
    EvalOptions opts;
    opts.jobs = o.common.jobs;
    if (!o.methods.empty()) {
        opts.methods.clear();
        for (const auto& name : o.methods) {
            bool found = false;
            for (Method m : kAllMethods) {
                if (method_name(m) == name) {
                    opts.methods.push_back(m);
                    found = true;
                }
            }
            if (!found) throw Failure(kUsage, "usage", "unknown method " + name);
        }
    }
    std::optional<gnn::Predictor> model;
    if (!o.model.empty()) model.emplace(load_model(o.model, c), c.net, c.adm);
    for (Method m : opts.methods) {
        if (needs_model(m) && !model) throw Failure(kUsage, "usage", "--model is required for " + std::string(method_name(m)));
    }
    if (model) opts.trigger = trigger_config(o.trigger, model->stats());
    info("evaluating " + std::to_string(records.size()) + " cases");
    const EvalReport rep = evaluate(records, model ? &*model : nullptr, c.net, c.adm, opts);

    json config{{"dataset_config", to_json(d.config)},
                {"split", o.split},
                {"tau", opts.trigger.tau},
                {"input_anomaly", opts.trigger.input_anomaly},
                {"output_mismatch", opts.trigger.output_mismatch}};
    if (model) {
        config["model_config"] = to_json(model->bundle().config);
        config["model_epoch"] = model->bundle().epoch;
    }
    const json prov = provenance(c, config);
    fs::create_directories(o.out_dir);
    {
        auto out = open_out(o.out_dir / "eval_summary.json");
        write_summary(out, rep, prov);
    }
    {
        auto out = open_out(o.out_dir / "eval_cases.csv");
        csv_provenance(out, prov);
        write_case_csv(out, rep.rows, false);
    }
    {
        auto out = open_out(o.out_dir / "eval_timing.csv");
        csv_provenance(out, prov);
        write_timing_csv(out, rep);
    }
    {
        auto out = open_out(o.out_dir / "eval_case_timing.csv");
        csv_provenance(out, prov);
        write_case_csv(out, rep.rows, true);
    }
    for (const auto& m : rep.methods) {
        std::ostringstream line;
        line << method_name(m.method) << ": failure " << m.failure_rate << "%, avg mismatch " << m.avg_mismatch;
        info(line.str());
        if (m.trigger && m.trigger->fn > 0 && opts.trigger.output_mismatch && opts.trigger.tau <= kFailureThreshold) {
            throw Failure(kInvariant, "invariant", "trigger produced false negatives with tau at the failure threshold");
        }
        if (m.method == Method::hybrid && opts.trigger.output_mismatch && opts.trigger.tau <= kFailureThreshold &&
            m.failures > 0) {
            throw Failure(kInvariant, "invariant", "hybrid output exceeded the failure threshold");
        }
    }
    return kOk;
}

int run_ablate(const AblateOpts& o) {
    const Loaded c = load(o.train.common.case_path);
    const Dataset d = load_dataset(o.train.dataset, c);
    std::optional<Dataset> test_data;
    if (!o.test_dataset.empty()) test_data = load_dataset(o.test_dataset, c);
    const auto test = pick(test_data ? *test_data : d, o.split);
    const gnn::TrainConfig cfg = train_config(o.train);
    std::vector<Variant> variants;
    if (o.variants.empty()) {
        variants.assign(kAllVariants.begin(), kAllVariants.end());
    } else {
        for (const auto& name : o.variants) {
            bool found = false;
            for (Variant v : kAllVariants) {
                if (variant_name(v) == name) {
                    variants.push_back(v);
                    found = true;
                }
            }
            if (!found) throw Failure(kUsage, "usage", "unknown variant " + name);
        }
    }
    const auto rows = ablation(d, test, c.net, c.adm, cfg, variants, o.train.common.jobs,
                               [](Variant v, const gnn::EpochLog& e) {
                                   debug(std::string(variant_name(v)) + " epoch " + std::to_string(e.epoch) +
                                         " val_data " + std::to_string(e.val_data_raw));
                               });
    fs::create_directories(o.train.out_dir);
    const json prov = provenance(c, {{"train", to_json(cfg)},
                                     {"test_dataset", o.test_dataset.empty() ? o.train.dataset.string() : o.test_dataset.string()},
                                     {"split", o.split}});
    {
        auto out = open_out(o.train.out_dir / "ablation.csv");
        csv_provenance(out, prov);
        write_ablation_csv(out, rows);
    }
    for (const auto& r : rows) {
        write_training_outputs(o.train.out_dir, c, d, apply_variant(cfg, r.variant), r.training,
                               std::string(variant_name(r.variant)));
        std::ostringstream line;
        line << variant_name(r.variant) << ": vm_mae " << r.vm_mae << ", failure " << r.failure_rate << "%";
        info(line.str());
    }
    return kOk;
}

int run_sweep(const SweepOpts& o) {
    const Loaded c = load(o.common.case_path);
    const Dataset d = load_dataset(o.dataset, c);
    const gnn::Predictor model(load_model(o.model, c), c.net, c.adm);
    const auto records = pick(d, o.split);
    const TriggerConfig base = trigger_config(o.trigger, model.stats());
    const auto rows = trigger_sweep(records, model, c.net, c.adm, o.taus, base, o.common.jobs);
    auto out = open_out(o.out);
    csv_provenance(out, provenance(c, {{"split", o.split},
                                       {"input_anomaly", base.input_anomaly},
                                       {"model_config", to_json(model.bundle().config)}}));
    write_sweep_csv(out, rows);
    return kOk;
}

int run_bench(const BenchOpts& o) {
    const Loaded c = load(o.common.case_path);
    const Dataset d = load_dataset(o.dataset, c);
    const auto records = pick(d, o.split);
    std::optional<gnn::Predictor> model;
    if (!o.model.empty()) model.emplace(load_model(o.model, c), c.net, c.adm);

    EvalOptions opts;
    opts.jobs = 1;
    opts.methods = {Method::izr_only, Method::nr_only};
    if (model) {
        opts.methods.push_back(Method::hybrid);
        opts.trigger = TriggerConfig::from_stats(model->stats());
    }
    const EvalReport rep = evaluate(records, model ? &*model : nullptr, c.net, c.adm, opts);
    const auto izr = rep.rows_for(Method::izr_only);
    const auto nr = rep.rows_for(Method::nr_only);
    std::vector<double> izr_t, nr_t;
    std::vector<int> terms;
    for (std::size_t i = 0; i < izr.size(); ++i) {
        terms.push_back(izr[i].iterations);
        if (izr[i].converged && nr[i].converged) {
            izr_t.push_back(izr[i].seconds);
            nr_t.push_back(nr[i].seconds);
        }
    }
    const json prov = provenance(c, {{"dataset_config", to_json(d.config)}, {"split", o.split}});
    fs::create_directories(o.out_dir);
    {
        auto out = open_out(o.out_dir / "bench_timing.csv");
        csv_provenance(out, prov);
        out << "method,count,mean_s,std_s,p10_s,p50_s,p90_s\n";
        auto line = [&](const char* name, const TimingStats& t) {
            out << name << ',' << t.count << ',' << t.mean << ',' << t.std << ',' << t.p10 << ',' << t.p50 << ','
                << t.p90 << '\n';
        };
        line("izr_only", timing_stats(izr_t));
        line("nr_only", timing_stats(nr_t));
        if (model) {
            const auto& h = rep.get(Method::hybrid);
            line("hybrid", h.timing);
            line("hybrid_fast_path", h.fast_timing);
            line("hybrid_robust_path", h.robust_timing);
        }
    }
    {
        auto out = open_out(o.out_dir / "izr_terms_hist.csv");
        csv_provenance(out, prov);
        write_count_csv(out, terms, "terms_used");
    }
    auto hist = [&](const std::string& name, const std::vector<double>& values) {
        auto out = open_out(o.out_dir / name);
        csv_provenance(out, prov);
        write_histogram_csv(out, values, o.bins);
    };
    hist("izr_time_hist.csv", izr_t);
    hist("nr_time_hist.csv", nr_t);
    if (model) {
        std::vector<double> h;
        for (const auto& r : rep.rows_for(Method::hybrid)) h.push_back(r.seconds);
        hist("hybrid_time_hist.csv", h);
    }
    const auto ti = timing_stats(izr_t);
    const auto tn = timing_stats(nr_t);
    std::ostringstream line;
    line << "izr median " << ti.p50 * 1e3 << " ms, nr median " << tn.p50 * 1e3 << " ms over " << ti.count
         << " converged cases";
    info(line.str());
    return kOk;
}

void emit_error(int code, const std::string& kind, const std::string& message) {
    const json err{{"error", {{"code", code}, {"kind", kind}, {"message", message}}}};
    std::cerr << err.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid GNN / IZR power-flow toolkit"};
    app.require_subcommand(1);

    GenOpts gen;
    auto* g = app.add_subcommand("generate", "Generate a labeled scenario dataset");
    add_common(g, gen.common);
    g->add_option("--out", gen.out, "Output dataset path")->required();
    g->add_option("--n", gen.n, "Number of scenarios");
    g->add_option("--stress-fraction", gen.stress_fraction, "Fraction of stressed scenarios");
    g->add_option("--nominal", gen.nominal, "Nominal load multiplier range LO HI")->expected(2)->delimiter(',');
    g->add_option("--stress", gen.stress, "Stressed load multiplier range LO HI")->expected(2)->delimiter(',');
    g->add_option("--splits", gen.splits, "Train,val,test fractions")->expected(3)->delimiter(',');
    g->add_option("--k-max", gen.k_max, "Maximum IZR series terms");
    g->add_option("--coeff-tol", gen.coeff_tol, "IZR coefficient tolerance");
    g->add_option("--mismatch-tol", gen.mismatch_tol, "IZR mismatch tolerance");

    TrainOpts tr;
    auto* t = app.add_subcommand("train", "Train the GNN predictor");
    add_train_options(t, tr);
    t->add_option("--out-dir", tr.out_dir, "Output directory")->capture_default_str();
    t->add_flag("--no-physics", tr.no_physics, "Train without the physics loss");
    t->add_flag("--no-zbus", tr.no_zbus, "Zero the Z-bus feature columns");

    SolveOpts so;
    auto* s = app.add_subcommand("solve", "Solve one scenario with the hybrid runtime");
    add_common(s, so.common);
    s->add_option("--model", so.model, "Checkpoint")->required();
    s->add_option("--dataset", so.dataset, "Take the scenario from this dataset");
    s->add_option("--record", so.record, "Record index within --dataset");
    s->add_option("--scale", so.scale, "Uniform multiplier on the case loads (without --dataset)")->capture_default_str();
    s->add_flag("--force-robust", so.force_robust, "Always use the IZR path");
    s->add_flag("--force-fast", so.force_fast, "Always return the GNN+d-LSE answer");
    add_trigger(s, so.trigger);

    EvalOpts ev;
    auto* e = app.add_subcommand("evaluate", "Compare all solution methods on a dataset split");
    add_common(e, ev.common);
    e->add_option("--model", ev.model, "Checkpoint (needed for the learned methods)");
    e->add_option("--dataset", ev.dataset, "Dataset")->required();
    e->add_option("--split", ev.split, "train|val|test|all")->capture_default_str();
    e->add_option("--methods", ev.methods, "Subset of gnn_only,gnn_lse,hybrid,izr_only,nr_only")->delimiter(',');
    e->add_option("--out-dir", ev.out_dir, "Output directory")->capture_default_str();
    add_trigger(e, ev.trigger);

    AblateOpts ab;
    auto* a = app.add_subcommand("ablate", "Train and compare the four feature/loss variants");
    add_train_options(a, ab.train);
    a->add_option("--out-dir", ab.train.out_dir, "Output directory")->capture_default_str();
    a->add_option("--test-dataset", ab.test_dataset, "Dataset holding the (stressed) test scenarios");
    a->add_option("--split", ab.split, "Split of the test dataset")->capture_default_str();
    a->add_option("--variants", ab.variants, "Subset of data_only,zbus_only,pinn_only,pinn_zbus")->delimiter(',');

    SweepOpts sw;
    auto* w = app.add_subcommand("sweep", "Trigger-rate versus failure-rate over thresholds");
    add_common(w, sw.common);
    w->add_option("--model", sw.model, "Checkpoint")->required();
    w->add_option("--dataset", sw.dataset, "Dataset")->required();
    w->add_option("--split", sw.split, "train|val|test|all")->capture_default_str();
    w->add_option("--taus", sw.taus, "Thresholds (p.u.)")->delimiter(',')->capture_default_str();
    w->add_option("--out", sw.out, "Output CSV")->capture_default_str();
    add_trigger(w, sw.trigger);

    BenchOpts be;
    auto* b = app.add_subcommand("bench", "Timing tables and histograms");
    add_common(b, be.common);
    b->add_option("--dataset", be.dataset, "Dataset")->required();
    b->add_option("--model", be.model, "Checkpoint (adds the hybrid runtime)");
    b->add_option("--split", be.split, "train|val|test|all")->capture_default_str();
    b->add_option("--bins", be.bins, "Histogram bins")->capture_default_str();
    b->add_option("--out-dir", be.out_dir, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        emit_error(kUsage, "usage", err.what());
        return kUsage;
    }

    try {
        if (*g) return run_generate(gen);
        if (*t) return run_train(tr);
        if (*s) return run_solve(so);
        if (*e) return run_evaluate(ev);
        if (*a) return run_ablate(ab);
        if (*w) return run_sweep(sw);
        if (*b) return run_bench(be);
    } catch (const Failure& f) {
        emit_error(f.code, f.kind, f.what());
        return f.code;
    } catch (const CaseError& err) {
        emit_error(kInvalidInput, "invalid_case", err.what());
        return kInvalidInput;
    } catch (const DatasetError& err) {
        emit_error(kInvalidInput, "invalid_dataset", err.what());
        return kInvalidInput;
    } catch (const gnn::CheckpointError& err) {
        emit_error(kInvalidInput, "invalid_checkpoint", err.what());
        return kInvalidInput;
    } catch (const gnn::TrainingError& err) {
        emit_error(kSolverFailure, "training_failure", err.what());
        return kSolverFailure;
    } catch (const HybridError& err) {
        emit_error(kSolverFailure, "solver_failure", err.what());
        return kSolverFailure;
    } catch (const IzrError& err) {
        emit_error(kSolverFailure, "solver_failure", err.what());
        return kSolverFailure;
    } catch (const std::invalid_argument& err) {
        emit_error(kInvalidInput, "invalid_input", err.what());
        return kInvalidInput;
    } catch (const std::exception& err) {
        emit_error(kInternal, "internal", err.what());
        return kInternal;
    }
    return kInternal;
}
