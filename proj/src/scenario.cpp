#include "hybridpf/scenario.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "hybridpf/parallel.hpp"

namespace hybridpf {

namespace {

using nlohmann::json;

constexpr double kStdFloor = 1e-8;

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vector(const json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json vec3(const Eigen::Vector3d& v) { return json::array({v(0), v(1), v(2)}); }

Eigen::Vector3d vec3(const json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 3) throw DatasetError("expected a 3-vector in stats");
    return {v[0], v[1], v[2]};
}

struct PendingScenario {
    Eigen::VectorXd p;
    Eigen::VectorXd q;
    bool stressed = false;
};

PendingScenario scale_loads(const NetworkCase& net, const double* mult_p, const double* mult_q,
                            bool stressed) {
    PendingScenario s;
    s.stressed = stressed;
    s.p = Eigen::VectorXd::Zero(net.size());
    s.q = Eigen::VectorXd::Zero(net.size());
    for (int i = 1; i < net.size(); ++i) {
        s.p(i) = mult_p[i - 1] * net.buses[i].p_load;
        s.q(i) = mult_q[i - 1] * net.buses[i].q_load;
    }
    return s;
}

Eigen::VectorXcd injections_of(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    Eigen::VectorXcd s(p.size());
    s.real() = -p;
    s.imag() = -q;
    return s;
}

DatasetRecord label(const PendingScenario& sc, const IzrSolution& sol) {
    DatasetRecord r;
    r.stressed = sc.stressed;
    r.p = sc.p;
    r.q = sc.q;
    r.vm = sol.voltages.cwiseAbs();
    r.va = sol.voltages.unaryExpr([](const Complex& c) { return std::arg(c); }).real();
    r.terms_used = sol.terms_used;
    r.max_mismatch = sol.max_mismatch;
    return r;
}

}  // namespace

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw DatasetError("unknown split '" + name + "'");
}

void GenConfig::validate() const {
    if (n_scenarios < 1) throw std::invalid_argument("n_scenarios must be positive");
    if (nominal_range[0] > nominal_range[1] || stress_range[0] > stress_range[1]) {
        throw std::invalid_argument("load multiplier ranges need lo <= hi");
    }
    if (stress_fraction < 0.0 || stress_fraction > 1.0) {
        throw std::invalid_argument("stress_fraction must lie in [0, 1]");
    }
    for (double f : splits) {
        if (f < 0.0) throw std::invalid_argument("split fractions must be non-negative");
    }
    if (std::abs(splits[0] + splits[1] + splits[2] - 1.0) > 1e-9) {
        throw std::invalid_argument("split fractions must sum to 1");
    }
}

json to_json(const GenConfig& cfg) {
    return {{"n_scenarios", cfg.n_scenarios},
            {"nominal_range", cfg.nominal_range},
            {"stress_fraction", cfg.stress_fraction},
            {"stress_range", cfg.stress_range},
            {"seed", cfg.seed},
            {"splits", cfg.splits},
            {"izr", {{"k_max", cfg.izr.k_max},
                     {"coeff_tol", cfg.izr.coeff_tol},
                     {"mismatch_tol", cfg.izr.mismatch_tol}}}};
}

GenConfig gen_config_from_json(const json& j) {
    GenConfig cfg;
    cfg.n_scenarios = j.at("n_scenarios").get<int>();
    cfg.nominal_range = j.at("nominal_range").get<std::array<double, 2>>();
    cfg.stress_fraction = j.at("stress_fraction").get<double>();
    cfg.stress_range = j.at("stress_range").get<std::array<double, 2>>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.splits = j.at("splits").get<std::array<double, 3>>();
    cfg.izr.k_max = j.at("izr").at("k_max").get<int>();
    cfg.izr.coeff_tol = j.at("izr").at("coeff_tol").get<double>();
    cfg.izr.mismatch_tol = j.at("izr").at("mismatch_tol").get<double>();
    return cfg;
}

json to_json(const TrainStats& s) {
    return {{"feature_mean", vec3(s.feature_mean)},   {"feature_std", vec3(s.feature_std)},
            {"target_mean", vec3(s.target_mean)},     {"target_std", vec3(s.target_std)},
            {"feature_p995", vec3(s.feature_p995)},   {"train_count", s.train_count}};
}

TrainStats train_stats_from_json(const json& j) {
    TrainStats s;
    s.feature_mean = vec3(j.at("feature_mean"));
    s.feature_std = vec3(j.at("feature_std"));
    s.target_mean = vec3(j.at("target_mean"));
    s.target_std = vec3(j.at("target_std"));
    s.feature_p995 = vec3(j.at("feature_p995"));
    s.train_count = j.at("train_count").get<int>();
    return s;
}

Eigen::VectorXcd DatasetRecord::injections() const { return injections_of(p, q); }

Eigen::VectorXcd DatasetRecord::voltages() const {
    Eigen::VectorXcd v(vm.size());
    for (Eigen::Index i = 0; i < vm.size(); ++i) v(i) = std::polar(vm(i), va(i));
    return v;
}

std::vector<const DatasetRecord*> Dataset::split(Split s) const {
    std::vector<const DatasetRecord*> out;
    for (const auto& r : records) {
        if (r.split == s) out.push_back(&r);
    }
    return out;
}

Eigen::MatrixXd lhs_sample(int dims, int n, std::uint64_t seed) {
    if (dims < 1 || n < 1) throw std::invalid_argument("lhs_sample needs dims >= 1 and n >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::MatrixXd u(n, dims);
    std::vector<int> strata(n);
    for (int d = 0; d < dims; ++d) {
        std::iota(strata.begin(), strata.end(), 0);
        std::shuffle(strata.begin(), strata.end(), rng);
        for (int k = 0; k < n; ++k) {
            // Clamp guards the rounding case where (s + u) / n lands on the upper edge.
            const double x = (strata[k] + unit(rng)) / n;
            u(k, d) = std::min(x, std::nextafter((strata[k] + 1.0) / n, 0.0));
        }
    }
    return u;
}

TrainStats compute_percentiles(std::span<const DatasetRecord* const> train, const AdmittanceSet& adm) {
    if (train.empty()) throw DatasetError("train split is empty");
    const int n = adm.size();
    TrainStats stats;
    stats.train_count = static_cast<int>(train.size());

    std::array<std::vector<double>, 3> feature_values;
    std::array<std::vector<double>, 3> abs_feature_values;
    std::array<std::vector<double>, 3> target_values;
    for (const auto* rec : train) {
        if (rec->split != Split::train) {
            throw DatasetError("statistics may only be computed from the train split");
        }
        const Eigen::MatrixXd x = node_features(adm, rec->injections());
        for (int k = 0; k < 3; ++k) {
            for (int i = 0; i < n; ++i) {
                feature_values[k].push_back(x(i, k));
                abs_feature_values[k].push_back(std::abs(x(i, k)));
            }
        }
        for (int i = 1; i < n; ++i) {
            target_values[0].push_back(rec->vm(i));
            target_values[1].push_back(std::cos(rec->va(i)));
            target_values[2].push_back(std::sin(rec->va(i)));
        }
    }
    auto mean_std = [](const std::vector<double>& v, double& mean, double& stdev) {
        mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double acc = 0.0;
        for (double x : v) acc += (x - mean) * (x - mean);
        stdev = std::max(std::sqrt(acc / static_cast<double>(v.size())), kStdFloor);
    };
    for (int k = 0; k < 3; ++k) {
        mean_std(feature_values[k], stats.feature_mean(k), stats.feature_std(k));
        mean_std(target_values[k], stats.target_mean(k), stats.target_std(k));
        stats.feature_p995(k) = percentile(std::move(abs_feature_values[k]), 99.5);
    }
    return stats;
}

Dataset generate_dataset(const NetworkCase& net, const AdmittanceSet& adm, const GenConfig& cfg) {
    cfg.validate();
    const int n = cfg.n_scenarios;
    const int m = net.non_slack_size();
    const Eigen::MatrixXd u = lhs_sample(2 * m, n, cfg.seed);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 stress_rng(cfg.seed + 1);
    std::shuffle(order.begin(), order.end(), stress_rng);
    const int n_stressed = static_cast<int>(std::lround(cfg.stress_fraction * n));
    std::vector<bool> stressed(n, false);
    for (int k = 0; k < n_stressed; ++k) stressed[order[k]] = true;

    std::vector<PendingScenario> pending(n);
    std::vector<double> mult(2 * m);
    for (int s = 0; s < n; ++s) {
        const auto& range = stressed[s] ? cfg.stress_range : cfg.nominal_range;
        for (int d = 0; d < 2 * m; ++d) mult[d] = range[0] + u(s, d) * (range[1] - range[0]);
        pending[s] = scale_loads(net, mult.data(), mult.data() + m, stressed[s]);
    }

    std::vector<IzrSolution> solutions(n);
    parallel_for(static_cast<std::size_t>(n), cfg.jobs, [&](std::size_t s) {
        solutions[s] = izr_solve(net, adm, injections_of(pending[s].p, pending[s].q), cfg.izr);
    });

    Dataset data;
    data.case_name = net.name;
    data.case_checksum = case_checksum(net);
    data.config = cfg;
    data.records.resize(n);

    // Non-converged draws are replaced serially, in scenario order, from an
    // independent stream so the result does not depend on the worker count.
    std::mt19937_64 resample_rng(cfg.seed + 2);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int budget = std::max(1, n / 10);
    for (int s = 0; s < n; ++s) {
        IzrSolution sol = std::move(solutions[s]);
        while (!sol.converged) {
            if (++data.resampled > budget) {
                throw DatasetError("IZR failed on more than 10% of the scenario budget (" +
                                   std::to_string(data.resampled) + " resamples); last max mismatch " +
                                   std::to_string(sol.max_mismatch));
            }
            const auto& range = pending[s].stressed ? cfg.stress_range : cfg.nominal_range;
            for (int d = 0; d < 2 * m; ++d) mult[d] = range[0] + unit(resample_rng) * (range[1] - range[0]);
            pending[s] = scale_loads(net, mult.data(), mult.data() + m, pending[s].stressed);
            sol = izr_solve(net, adm, injections_of(pending[s].p, pending[s].q), cfg.izr);
        }
        data.records[s] = label(pending[s], sol);
        data.records[s].id = s;
    }

    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 split_rng(cfg.seed + 3);
    std::shuffle(order.begin(), order.end(), split_rng);
    const int n_val = static_cast<int>(std::lround(cfg.splits[1] * n));
    const int n_test = std::min(n - n_val, static_cast<int>(std::lround(cfg.splits[2] * n)));
    for (int k = 0; k < n; ++k) {
        Split sp = Split::train;
        if (k < n_val) {
            sp = Split::val;
        } else if (k < n_val + n_test) {
            sp = Split::test;
        }
        data.records[order[k]].split = sp;
    }

    const auto train = data.split(Split::train);
    if (!train.empty()) data.stats = compute_percentiles(train, adm);
    return data;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot write dataset file " + path.string());
    json header = {{"format", "hybridpf-dataset"},
                   {"version", 1},
                   {"case", data.case_name},
                   {"case_checksum", checksum_hex(data.case_checksum)},
                   {"config", to_json(data.config)},
                   {"stats", data.stats ? to_json(*data.stats) : json(nullptr)},
                   {"resampled", data.resampled},
                   {"records", data.records.size()}};
    out << header.dump() << '\n';
    for (const auto& r : data.records) {
        json line = {{"id", r.id},
                     {"split", split_name(r.split)},
                     {"stressed", r.stressed},
                     {"terms_used", r.terms_used},
                     {"max_mismatch", r.max_mismatch},
                     {"p", to_vector(r.p)},
                     {"q", to_vector(r.q)},
                     {"vm", to_vector(r.vm)},
                     {"va", to_vector(r.va)}};
        out << line.dump() << '\n';
    }
    if (!out) throw DatasetError("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open dataset file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DatasetError("dataset file is empty");
    Dataset data;
    try {
        const json header = json::parse(line);
        if (header.value("format", "") != "hybridpf-dataset") throw DatasetError("not a dataset file");
        data.case_name = header.at("case").get<std::string>();
        data.case_checksum = std::stoull(header.at("case_checksum").get<std::string>(), nullptr, 16);
        data.config = gen_config_from_json(header.at("config"));
        if (!header.at("stats").is_null()) data.stats = train_stats_from_json(header.at("stats"));
        data.resampled = header.at("resampled").get<int>();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            DatasetRecord r;
            r.id = j.at("id").get<int>();
            r.split = parse_split(j.at("split").get<std::string>());
            r.stressed = j.at("stressed").get<bool>();
            r.terms_used = j.at("terms_used").get<int>();
            r.max_mismatch = j.at("max_mismatch").get<double>();
            r.p = from_vector(j.at("p"));
            r.q = from_vector(j.at("q"));
            r.vm = from_vector(j.at("vm"));
            r.va = from_vector(j.at("va"));
            data.records.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw DatasetError(std::string("malformed dataset file: ") + e.what());
    }
    return data;
}

}  // namespace hybridpf
