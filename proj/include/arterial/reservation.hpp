#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "arterial/corridor.hpp"
#include "arterial/dynamics.hpp"
#include "arterial/error.hpp"

namespace arterial {

/// Demand regime: stable (LOS A..C) or near-capacity (LOS C..E).
enum class LosClass { AtoC, CtoE };

inline const char* to_string(LosClass los) { return los == LosClass::AtoC ? "A_to_C" : "C_to_E"; }

inline LosClass parse_los(std::string_view s) {
  if (s == "A_to_C" || s == "C" || s == "uncongested") return LosClass::AtoC;
  if (s == "C_to_E" || s == "E" || s == "congested") return LosClass::CtoE;
  throw Error(ErrorKind::ConfigInvalid, "unknown LOS class '" + std::string(s) + "' (expected A_to_C or C_to_E)");
}

// Boundary tolerance so that 0.1 computed as 1/10.0 or 0.1*1 lands on the same side.
inline constexpr double kMpTolerance = 1e-9;

/// Reserved inner lanes recommended for a demand regime and market penetration.
inline int recommended_reserved_lanes(LosClass los, double mp) {
  if (!(mp >= 0.0 && mp <= 1.0)) throw Error(ErrorKind::MpOutOfRange, "market penetration " + std::to_string(mp) + " outside [0, 1]");
  if (los == LosClass::AtoC) {
    if (mp < 0.10 - kMpTolerance) return 0;
    if (mp < 0.50 - kMpTolerance) return 1;
    return 2;
  }
  return mp > 0.60 + kMpTolerance ? 2 : 0;
}

enum class Access { Allowed, Forbidden };

inline Access lane_access(VehicleClass cls, const Lane& lane) {
  return (cls == VehicleClass::Conventional && lane.reserved) ? Access::Forbidden : Access::Allowed;
}

inline constexpr double kExitMargin = 300.0;

/// Diverge point of the jughandle at `intersection` in direction-chain coordinates.
inline double diverge_coordinate(const Corridor& corridor, int direction, std::size_t intersection) {
  if (intersection >= corridor.intersections.size()) {
    throw Error(ErrorKind::UnknownIntersection, "intersection index " + std::to_string(intersection));
  }
  const Intersection& x = corridor.intersections[intersection];
  if (!x.jughandle) throw Error(ErrorKind::UnknownIntersection, "intersection '" + x.id + "' has no jughandle");
  for (const auto& a : corridor.approaches(direction)) {
    if (a.intersection == intersection) return a.stopbar - x.jughandle->diverge_position;
  }
  throw Error(ErrorKind::UnknownIntersection, "intersection '" + x.id + "' is not on this direction");
}

inline std::vector<LaneObligation> obligations_for(const Vehicle& v, const Corridor& corridor,
                                                   double exit_margin = kExitMargin) {
  std::vector<LaneObligation> out;
  if (v.cls == VehicleClass::Conventional) {
    out.push_back(LaneObligation{v.id, ObligationKind::KeepOutOfReserved, v.position,
                                 corridor.link_at(v.direction, std::clamp(v.position, 0.0, corridor.length(v.direction)))});
  }
  if (v.route.left_at) {
    const double diverge = diverge_coordinate(corridor, v.direction, *v.route.left_at);
    const std::size_t cur = corridor.link_at(v.direction, std::clamp(v.position, 0.0, corridor.length(v.direction)));
    const Link& here = corridor.links[cur];
    const bool in_reserved = v.lane < here.lane_count() && here.lanes[static_cast<std::size_t>(v.lane)].reserved;
    if (v.cls == VehicleClass::Automated && in_reserved) {
      const double deadline = std::max(0.0, diverge - exit_margin);
      out.push_back(LaneObligation{v.id, ObligationKind::ExitReservedBefore, deadline, corridor.link_at(v.direction, deadline)});
    }
    out.push_back(LaneObligation{v.id, ObligationKind::ReachRightmostBefore, diverge, corridor.link_at(v.direction, diverge)});
  }
  return out;
}

}  // namespace arterial
