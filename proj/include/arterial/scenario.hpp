#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "arterial/corridor.hpp"
#include "arterial/dynamics.hpp"
#include "arterial/error.hpp"
#include "arterial/reservation.hpp"
#include "arterial/structured_text.hpp"
#include "arterial/toad.hpp"

namespace arterial {

inline constexpr double kSaturationFlowPerLane = 1900.0;  // veh/h/lane
inline constexpr double kTargetVcUncongested = 0.65;
inline constexpr double kTargetVcCongested = 0.95;
inline constexpr double kDefaultLeftTurnFraction = 0.10;

struct ReservedMode {
  enum class Kind { Off, Fixed, Auto };
  Kind kind = Kind::Off;
  int count = 0;  // used by Fixed

  static ReservedMode off() { return {Kind::Off, 0}; }
  static ReservedMode fixed(int n) { return {Kind::Fixed, n}; }
  static ReservedMode automatic() { return {Kind::Auto, 0}; }

  bool operator==(const ReservedMode&) const = default;
};

inline std::string to_string(const ReservedMode& m) {
  switch (m.kind) {
    case ReservedMode::Kind::Off: return "off";
    case ReservedMode::Kind::Auto: return "auto";
    case ReservedMode::Kind::Fixed: return "fixed(" + std::to_string(m.count) + ")";
  }
  return "off";
}

inline ReservedMode parse_reserved_mode(std::string_view s) {
  if (s == "off") return ReservedMode::off();
  if (s == "auto") return ReservedMode::automatic();
  if (s.starts_with("fixed(") && s.ends_with(")")) {
    const auto inner = s.substr(6, s.size() - 7);
    int n = 0;
    auto [ptr, ec] = std::from_chars(inner.data(), inner.data() + inner.size(), n);
    if (ec == std::errc{} && ptr == inner.data() + inner.size() && n >= 0) return ReservedMode::fixed(n);
  }
  throw Error(ErrorKind::ConfigInvalid, "unknown reserved-lane mode '" + std::string(s) + "' (off | auto | fixed(n))");
}

inline int effective_reserved_count(const ReservedMode& m, LosClass los, double mp) {
  switch (m.kind) {
    case ReservedMode::Kind::Off: return 0;
    case ReservedMode::Kind::Fixed: return m.count;
    case ReservedMode::Kind::Auto: return recommended_reserved_lanes(los, mp);
  }
  return 0;
}

struct DemandProfile {
  std::array<double, 2> flow{0.0, 0.0};  // veh/h entering each direction
  std::vector<double> left_fraction;     // per intersection index; 0 where no left demand
};

/// Capacity of one signalized approach: lanes x saturation flow x g/C.
inline double approach_capacity(const Corridor& c, const Approach& a) {
  return c.links[a.link].lane_count() * kSaturationFlowPerLane *
         green_ratio(c.intersections[a.intersection].signal_plan);
}

/// Entry flow per direction so the critical approach reaches the regime's target v/c.
inline DemandProfile demand_for(LosClass los, const Corridor& c, double left_turn_fraction = kDefaultLeftTurnFraction) {
  const double target = los == LosClass::AtoC ? kTargetVcUncongested : kTargetVcCongested;
  DemandProfile p;
  for (int d = 0; d < 2; ++d) {
    double critical = std::numeric_limits<double>::infinity();
    for (const auto& a : c.approaches(d)) critical = std::min(critical, approach_capacity(c, a));
    if (!std::isfinite(critical)) {
      const Link& first = c.links[c.chain(d).front()];
      critical = first.lane_count() * kSaturationFlowPerLane;
    }
    p.flow[static_cast<std::size_t>(d)] = target * critical;
  }
  p.left_fraction.assign(c.intersections.size(), 0.0);
  for (std::size_t i = 0; i < c.intersections.size(); ++i) {
    if (c.intersections[i].has_left_demand()) p.left_fraction[i] = left_turn_fraction;
  }
  return p;
}

struct ScenarioConfig {
  std::shared_ptr<const Corridor> corridor;
  std::string testbed;
  std::string corridor_path;
  LosClass los = LosClass::AtoC;
  double mp = 0.0;
  ReservedMode reserved_mode = ReservedMode::off();
  std::uint64_t seed = 1;
  double warmup = 900.0;
  double duration = 3600.0;
  double dt = 0.1;
  double left_turn_fraction = kDefaultLeftTurnFraction;
  std::optional<std::array<double, 2>> flow_override;
  bool advisories_enabled = true;
  AdvisoryParams advisory;
  LaneChangeParams lane_change;
  double conventional_speed_spread = 0.10;
  // desired_speed is replaced by (speed factor x link speed limit) at runtime
  DriverParams conventional = default_params(VehicleClass::Conventional, 1.0);
  DriverParams automated = default_params(VehicleClass::Automated, 1.0);
};

inline void validate(const ScenarioConfig& cfg) {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::ConfigInvalid, m); };
  if (!cfg.corridor) fail("scenario has no corridor");
  if (!(cfg.warmup >= 0.0)) fail("warmup must be >= 0");
  if (!(cfg.duration > 0.0)) fail("duration must be > 0");
  if (!(cfg.dt > 0.0)) fail("dt must be > 0");
  if (!(cfg.mp >= 0.0 && cfg.mp <= 1.0)) fail("market penetration must lie in [0, 1]");
  if (!(cfg.left_turn_fraction >= 0.0 && cfg.left_turn_fraction <= 0.5)) fail("left_turn_fraction must lie in [0, 0.5]");
  if (cfg.flow_override && ((*cfg.flow_override)[0] < 0.0 || (*cfg.flow_override)[1] < 0.0)) fail("flows must be >= 0");
  if (!valid(cfg.conventional) || !valid(cfg.automated)) fail("driver parameters must be positive");
  if (!(cfg.advisory.control_interval > 0.0)) fail("control_interval must be > 0");
  if (!(cfg.advisory.v_min_factor > 0.0 && cfg.advisory.v_min_factor <= 1.0)) fail("v_min_factor must lie in (0, 1]");
  if (!(cfg.conventional_speed_spread >= 0.0 && cfg.conventional_speed_spread <= 0.1)) {
    fail("conventional_speed_spread must lie in [0, 0.1]");
  }
}

inline DemandProfile demand_for(const ScenarioConfig& cfg) {
  DemandProfile p = demand_for(cfg.los, *cfg.corridor, cfg.left_turn_fraction);
  if (cfg.flow_override) p.flow = *cfg.flow_override;
  return p;
}

// ---- files -----------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::shared_ptr<const Corridor> load_corridor(const std::filesystem::path& path) {
  try {
    return std::make_shared<const Corridor>(parse_corridor(read_file(path)));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::IoFailure) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

namespace detail {

inline void apply_driver_overrides(const Section* s, DriverParams& p) {
  if (!s) return;
  expect_keys(*s, {"max_accel", "comfortable_decel", "min_gap", "headway", "startup_lost_time"});
  p.max_accel = get_double(*s, "max_accel", p.max_accel);
  p.comfortable_decel = get_double(*s, "comfortable_decel", p.comfortable_decel);
  p.min_gap = get_double(*s, "min_gap", p.min_gap);
  p.headway = get_double(*s, "headway", p.headway);
  p.startup_lost_time = get_double(*s, "startup_lost_time", p.startup_lost_time);
}

}  // namespace detail

namespace detail {

/// Horizon, demand and behavior settings shared by scenario and sweep files.
inline void apply_run_settings(const Section& s, ScenarioConfig& cfg) {
  cfg.warmup = get_double(s, "warmup", cfg.warmup);
  cfg.duration = get_double(s, "duration", cfg.duration);
  cfg.dt = get_double(s, "dt", cfg.dt);
  cfg.left_turn_fraction = get_double(s, "left_turn_fraction", cfg.left_turn_fraction);
  if (const Entry* e = s.find("advisories")) cfg.advisories_enabled = parse_bool(*e);
  if (const Entry* e = s.find("flow")) {
    const auto parts = split_list(e->value);
    if (parts.size() != 2) value_fail(*e, "expected two flows (one per direction)");
    cfg.flow_override = std::array<double, 2>{parse_double(*e, parts[0]), parse_double(*e, parts[1])};
  }
  if (const Section* a = s.child("advisory")) {
    expect_keys(*a, {"v_min_factor", "control_interval", "end_margin", "horizon_cycles", "transition_accel",
                     "transition_decel", "discharge_per_queued"});
    auto& p = cfg.advisory;
    p.v_min_factor = get_double(*a, "v_min_factor", p.v_min_factor);
    p.control_interval = get_double(*a, "control_interval", p.control_interval);
    p.end_margin = get_double(*a, "end_margin", p.end_margin);
    p.horizon_cycles = get_double(*a, "horizon_cycles", p.horizon_cycles);
    p.transition_accel = get_double(*a, "transition_accel", p.transition_accel);
    p.transition_decel = get_double(*a, "transition_decel", p.transition_decel);
    p.discharge_per_queued = get_double(*a, "discharge_per_queued", p.discharge_per_queued);
  }
  if (const Section* l = s.child("lane_change")) {
    expect_keys(*l, {"threshold", "safe_decel", "mandatory_safe_decel", "lookahead", "reserved_bias"});
    auto& p = cfg.lane_change;
    p.threshold = get_double(*l, "threshold", p.threshold);
    p.safe_decel = get_double(*l, "safe_decel", p.safe_decel);
    p.mandatory_safe_decel = get_double(*l, "mandatory_safe_decel", p.mandatory_safe_decel);
    p.lookahead = get_double(*l, "lookahead", p.lookahead);
    p.reserved_bias = get_double(*l, "reserved_bias", p.reserved_bias);
  }
  apply_driver_overrides(s.child("conventional"), cfg.conventional);
  apply_driver_overrides(s.child("automated"), cfg.automated);
}

template <class Fn>
auto wrap_value(const Entry& e, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& err) {
    if (err.kind() == ErrorKind::Parse) throw;
    value_fail(e, err.what());
  }
}

}  // namespace detail

/// Reads a scenario file. Relative corridor paths resolve against the file's directory.
inline ScenarioConfig parse_scenario(std::string_view text, const std::filesystem::path& base_dir,
                                     bool load_corridor_file = true) {
  const Section root = parse_structured(text);
  expect_children(root, {"scenario"});
  const Section* s = root.child("scenario");
  if (!s) detail::parse_fail(1, "missing 'scenario { ... }' section");
  expect_keys(*s, {"testbed", "corridor", "los", "mp", "reserved_lanes", "seed", "warmup", "duration", "dt",
                   "left_turn_fraction", "flow", "advisories"});
  expect_children(*s, {"advisory", "lane_change", "conventional", "automated"});
  ScenarioConfig cfg;
  cfg.corridor_path = get_string(*s, "corridor");
  cfg.testbed = get_string(*s, "testbed", std::filesystem::path(cfg.corridor_path).stem().string());
  cfg.los = detail::wrap_value(require(*s, "los"), [&] { return parse_los(get_string(*s, "los")); });
  cfg.mp = get_double(*s, "mp");
  if (const Entry* e = s->find("reserved_lanes")) {
    cfg.reserved_mode = detail::wrap_value(*e, [&] { return parse_reserved_mode(e->value); });
  }
  if (const Entry* e = s->find("seed")) {
    const auto seed = parse_int(*e, e->value);
    if (seed < 0) value_fail(*e, "seed must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(seed);
  }
  detail::apply_run_settings(*s, cfg);
  if (load_corridor_file) {
    std::filesystem::path cp(cfg.corridor_path);
    if (cp.is_relative()) cp = base_dir / cp;
    cfg.corridor = load_corridor(cp);
  }
  validate(cfg);
  return cfg;
}

inline ScenarioConfig load_scenario(const std::filesystem::path& path) {
  return parse_scenario(read_file(path), path.parent_path());
}

}  // namespace arterial
