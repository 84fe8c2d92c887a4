#pragma once

#include <string>

#include "hybridpf/network.hpp"

namespace testing {

/// Slack bus 1 feeding bus 2 over a lossless line of reactance x (p.u.),
/// with the given load at bus 2 in MW/MVAr on a 100 MVA base.
inline hybridpf::NetworkCase two_bus(double x = 0.1, double p_mw = 0.0, double q_mvar = 0.0, double r = 0.0) {
    nlohmann::json doc{
        {"name", "two_bus"},
        {"base_mva", 100.0},
        {"base_kv", 10.0},
        {"buses",
         {{{"id", 1}, {"kind", "slack"}}, {{"id", 2}, {"kind", "pq"}, {"p_load", p_mw}, {"q_load", q_mvar}}}},
        {"branches", {{{"from", 1}, {"to", 2}, {"r", r}, {"x", x}}}},
    };
    return hybridpf::parse_case(doc);
}

/// Small radial feeder: 1-2-3-4 with a lateral 3-5.
inline hybridpf::NetworkCase five_bus(double load_scale = 1.0) {
    nlohmann::json doc{
        {"name", "five_bus"},
        {"base_mva", 100.0},
        {"base_kv", 12.66},
        {"buses",
         {{{"id", 1}, {"kind", "slack"}},
          {{"id", 2}, {"kind", "pq"}, {"p_load", 2.0 * load_scale}, {"q_load", 1.0 * load_scale}},
          {{"id", 3}, {"kind", "pq"}, {"p_load", 1.5 * load_scale}, {"q_load", 0.8 * load_scale}},
          {{"id", 4}, {"kind", "pq"}, {"p_load", 1.0 * load_scale}, {"q_load", 0.6 * load_scale}},
          {{"id", 5}, {"kind", "pq"}, {"p_load", 0.8 * load_scale}, {"q_load", 0.3 * load_scale}}}},
        {"branches",
         {{{"from", 1}, {"to", 2}, {"r", 0.01}, {"x", 0.03}},
          {{"from", 2}, {"to", 3}, {"r", 0.02}, {"x", 0.04}},
          {{"from", 3}, {"to", 4}, {"r", 0.03}, {"x", 0.05}},
          {{"from", 3}, {"to", 5}, {"r", 0.02}, {"x", 0.06}}}},
    };
    return hybridpf::parse_case(doc);
}

inline std::string data_path(const std::string& name) { return std::string(HYBRIDPF_DATA_DIR) + "/" + name; }

inline hybridpf::NetworkCase ieee33() { return hybridpf::load_case(data_path("ieee33bw.json")); }

}  // namespace testing
