#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace hybridpf {

using Complex = std::complex<double>;

/// Raised for any malformed or physically invalid case description.
class CaseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class BusKind { slack, pq };

/// One bus in per-unit. Loads are consumption (positive = demand).
struct Bus {
    int id = 0;           // contiguous 0-based index, slack first
    int external_id = 0;  // id as written in the case document
    BusKind kind = BusKind::pq;
    double p_load = 0.0;
    double q_load = 0.0;
    double shunt_g = 0.0;
    double shunt_b = 0.0;
};

struct Branch {
    int from = 0;
    int to = 0;
    double r = 0.0;
    double x = 0.0;
    double b_total = 0.0;
    double tap = 1.0;
};

struct NetworkCase {
    std::string name;
    double base_mva = 100.0;
    double base_kv = 1.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    Complex slack_voltage{1.0, 0.0};

    [[nodiscard]] int size() const { return static_cast<int>(buses.size()); }
    [[nodiscard]] int non_slack_size() const { return size() - 1; }
    [[nodiscard]] bool is_radial() const { return branches.size() + 1 == buses.size(); }

    /// Net complex injection implied by the base loads: -(P + jQ) per bus.
    [[nodiscard]] Eigen::VectorXcd base_injections() const;
};

/// Parses a case document (see data/ieee33bw.json for the schema). Loads are
/// read in MW/MVAr and converted to per-unit; branch impedances are per-unit
/// unless the document sets "branch_units": "ohm". Bus indices are remapped to
/// 0-based with the slack bus first, remaining buses in document order.
[[nodiscard]] NetworkCase parse_case(const nlohmann::json& doc);
[[nodiscard]] NetworkCase parse_case_text(std::string_view text);
[[nodiscard]] NetworkCase load_case(const std::filesystem::path& path);

/// Canonical per-unit serialization; the checksum is taken over this form.
[[nodiscard]] nlohmann::json case_to_json(const NetworkCase& net);
[[nodiscard]] std::uint64_t case_checksum(const NetworkCase& net);
[[nodiscard]] std::string checksum_hex(std::uint64_t value);
[[nodiscard]] std::uint64_t fnv1a(std::string_view bytes,
                                  std::uint64_t seed = 0xcbf29ce484222325ULL);

/// All network matrices used by the solvers.
///
/// The reduced matrix covers the non-slack buses 1..N-1 (slack is bus 0), so
/// reduced index k corresponds to bus k + 1.
struct AdmittanceSet {
    Eigen::MatrixXcd y_full;
    Eigen::MatrixXcd y_ns;
    Eigen::VectorXcd y_slack_col;
    Eigen::PartialPivLU<Eigen::MatrixXcd> y_ns_lu;
    Eigen::MatrixXcd z_bus;

    /// Solves y_ns * x = rhs with the stored factorization.
    [[nodiscard]] Eigen::VectorXcd solve_ns(const Eigen::VectorXcd& rhs) const {
        return y_ns_lu.solve(rhs);
    }
    [[nodiscard]] int size() const { return static_cast<int>(y_full.rows()); }
};

[[nodiscard]] AdmittanceSet build_admittance(const NetworkCase& net);

/// How the fourth edge feature is filled.
enum class MutualFeature {
    zbus_entry,       // |z_bus(i, j)|, mutual impedance sensitivity
    branch_magnitude  // |r + jx| of the branch itself
};

struct FeatureOptions {
    bool zbus_features = true;  // false zeroes |Z_ii| and |Z_ij| (ablation)
    MutualFeature mutual = MutualFeature::zbus_entry;
};

struct FeatureSet {
    Eigen::MatrixXd node_features;           // N x 3: P_net, Q_net, |Z_ii|
    Eigen::MatrixXd edge_features;           // 2E x 4: R, X, B, |Z_ij|
    std::vector<std::array<int, 2>> edge_index;  // (source, target), rows 2k and 2k+1 per branch
};

inline constexpr int kNodeFeatureCount = 3;
inline constexpr int kEdgeFeatureCount = 4;

/// Node features for one scenario. Slack row is all zeros.
[[nodiscard]] Eigen::MatrixXd node_features(const AdmittanceSet& adm,
                                            const Eigen::VectorXcd& injections,
                                            const FeatureOptions& options = {});

/// Edge features and directed edge list; independent of the injections.
[[nodiscard]] FeatureSet edge_features(const NetworkCase& net, const AdmittanceSet& adm,
                                       const FeatureOptions& options = {});

[[nodiscard]] FeatureSet build_features(const NetworkCase& net, const AdmittanceSet& adm,
                                        const Eigen::VectorXcd& injections,
                                        const FeatureOptions& options = {});

}  // namespace hybridpf
