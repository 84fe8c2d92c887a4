#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridpf/izr.hpp"
#include "hybridpf/network.hpp"

namespace hybridpf {

enum class Split { train, val, test };

[[nodiscard]] const char* split_name(Split s);
[[nodiscard]] Split parse_split(const std::string& name);

struct GenConfig {
    int n_scenarios = 5000;
    std::array<double, 2> nominal_range{0.5, 1.5};
    double stress_fraction = 0.2;
    std::array<double, 2> stress_range{1.5, 3.0};
    std::uint64_t seed = 42;
    std::array<double, 3> splits{0.70, 0.15, 0.15};  // train, val, test
    IzrConfig izr{};
    int jobs = 0;

    void validate() const;
};

[[nodiscard]] nlohmann::json to_json(const GenConfig& cfg);
[[nodiscard]] GenConfig gen_config_from_json(const nlohmann::json& j);

/// One solved scenario. Loads are per-unit consumption on every bus (slack 0).
struct DatasetRecord {
    int id = 0;
    Split split = Split::train;
    bool stressed = false;
    Eigen::VectorXd p;
    Eigen::VectorXd q;
    Eigen::VectorXd vm;
    Eigen::VectorXd va;
    int terms_used = 0;
    double max_mismatch = 0.0;

    [[nodiscard]] Eigen::VectorXcd injections() const;
    [[nodiscard]] Eigen::VectorXcd voltages() const;
};

/// Normalization statistics and input-anomaly percentiles from the train split.
struct TrainStats {
    Eigen::Vector3d feature_mean = Eigen::Vector3d::Zero();
    Eigen::Vector3d feature_std = Eigen::Vector3d::Ones();
    Eigen::Vector3d target_mean = Eigen::Vector3d::Zero();  // vm, cos, sin
    Eigen::Vector3d target_std = Eigen::Vector3d::Ones();
    Eigen::Vector3d feature_p995 = Eigen::Vector3d::Zero();  // of |x_k|
    int train_count = 0;
};

[[nodiscard]] nlohmann::json to_json(const TrainStats& stats);
[[nodiscard]] TrainStats train_stats_from_json(const nlohmann::json& j);

struct Dataset {
    std::string case_name;
    std::uint64_t case_checksum = 0;
    GenConfig config;
    std::optional<TrainStats> stats;
    int resampled = 0;
    std::vector<DatasetRecord> records;

    [[nodiscard]] std::vector<const DatasetRecord*> split(Split s) const;
};

/// Latin hypercube sample in [0, 1): each column has exactly one point per
/// stratum [k/n, (k+1)/n).
[[nodiscard]] Eigen::MatrixXd lhs_sample(int dims, int n, std::uint64_t seed);

/// Percentile with linear interpolation between order statistics (q in [0, 100]).
template <typename Scalar>
[[nodiscard]] Scalar percentile(std::vector<Scalar> values, Scalar q) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const Scalar pos = q / Scalar(100) * Scalar(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const Scalar frac = pos - Scalar(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

class DatasetError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Computes TrainStats; every record must belong to the train split.
[[nodiscard]] TrainStats compute_percentiles(std::span<const DatasetRecord* const> train,
                                             const AdmittanceSet& adm);

[[nodiscard]] Dataset generate_dataset(const NetworkCase& net, const AdmittanceSet& adm,
                                       const GenConfig& cfg);

void write_dataset(const std::filesystem::path& path, const Dataset& data);
[[nodiscard]] Dataset read_dataset(const std::filesystem::path& path);

}  // namespace hybridpf
