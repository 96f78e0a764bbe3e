#pragma once

#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "arterial/corridor.hpp"
#include "arterial/engine.hpp"
#include "arterial/scenario.hpp"

namespace support {

inline std::filesystem::path data_dir() { return ARTERIAL_DATA_DIR; }

inline std::shared_ptr<const arterial::Corridor> princeton() {
  static const auto c = arterial::load_corridor(data_dir() / "princeton.corridor");
  return c;
}

inline std::shared_ptr<const arterial::Corridor> woodbridge() {
  static const auto c = arterial::load_corridor(data_dir() / "woodbridge.corridor");
  return c;
}

/// Evenly spaced signals on a straight two-way road. Each link ends at the
/// next signal (stop bar at the link end); the last link ends at the exit.
struct Straight {
  int signals = 1;
  double link = 500.0;
  int lanes = 3;
  double limit = 20.0;
  double cycle = 60.0;
  double green = 30.0;
  double yellow = 3.0;
  double offset = 0.0;
  bool all_green = false;
  bool jughandles = false;
  bool left_turns = false;
  double diverge = 150.0;
  double ramp = 150.0;
  std::vector<int> reserved;
};

inline std::string corridor_text(const Straight& s) {
  std::ostringstream o;
  o.precision(17);
  o << "corridor {\n  name = straight\n  directions = EB, WB\n}\n";
  auto link = [&](const std::string& id, const std::string& dir, const std::string& down) {
    o << "link " << id << " {\n  direction = " << dir << "\n  length = " << s.link << "\n  lanes = " << s.lanes
      << "\n  speed_limit = " << s.limit << "\n  downstream = " << down << "\n";
    if (!s.reserved.empty()) {
      o << "  reserved = ";
      for (std::size_t i = 0; i < s.reserved.size(); ++i) o << (i ? ", " : "") << s.reserved[i];
      o << "\n";
    }
    o << "}\n";
  };
  for (int i = 0; i <= s.signals; ++i) link("EB-" + std::to_string(i), "EB", i < s.signals ? "X" + std::to_string(i) : "exit");
  for (int i = 0; i <= s.signals; ++i) {
    link("WB-" + std::to_string(i), "WB", i < s.signals ? "X" + std::to_string(s.signals - 1 - i) : "exit");
  }
  for (int i = 0; i < s.signals; ++i) {
    o << "intersection X" << i << " {\n  cycle = " << s.cycle << "\n  offset = " << s.offset << "\n";
    if (s.all_green) o << "  intervals = green " << s.cycle << "\n";
    else o << "  intervals = green " << s.green << ", yellow " << s.yellow << ", red " << (s.cycle - s.green - s.yellow) << "\n";
    o << "  stopbar = EB:" << s.link << ", WB:" << s.link << "\n";
    if (s.left_turns) o << "  left_turns = true\n";
    if (s.jughandles) {
      o << "  jughandle {\n    diverge_position = " << s.diverge << "\n    ramp_length = " << s.ramp << "\n  }\n";
    }
    o << "}\n";
  }
  return o.str();
}

inline std::shared_ptr<const arterial::Corridor> straight(const Straight& s) {
  return std::make_shared<const arterial::Corridor>(arterial::parse_corridor(corridor_text(s)));
}

/// Scenario with no generated traffic; tests insert vehicles by hand.
inline arterial::ScenarioConfig empty_scenario(std::shared_ptr<const arterial::Corridor> c, double duration = 600.0) {
  arterial::ScenarioConfig cfg;
  cfg.corridor = std::move(c);
  cfg.testbed = "test";
  cfg.warmup = 0.0;
  cfg.duration = duration;
  cfg.flow_override = std::array<double, 2>{0.0, 0.0};
  return cfg;
}

inline arterial::Vehicle vehicle(std::uint64_t id, arterial::VehicleClass cls, int direction, int lane, double position,
                                 double speed, double limit) {
  arterial::Vehicle v;
  v.id = id;
  v.cls = cls;
  v.direction = direction;
  v.lane = lane;
  v.position = position;
  v.speed = speed;
  v.params = arterial::default_params(cls, limit);
  v.speed_factor = 1.0;
  return v;
}

}  // namespace support
