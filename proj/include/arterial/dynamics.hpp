#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>

#include "arterial/error.hpp"
#include "arterial/signal.hpp"

namespace arterial {

enum class VehicleClass : std::uint8_t { Conventional, Automated };

inline const char* to_string(VehicleClass c) { return c == VehicleClass::Automated ? "automated" : "conventional"; }

inline constexpr double kVehicleLength = 5.0;
inline constexpr double kEmergencyDecel = 9.0;
inline constexpr double kComfortDecelDilemma = 3.0;
inline constexpr double kSpeedBoundFactor = 1.1;

struct DriverParams {
  double desired_speed = 24.59;
  double max_accel = 1.5;
  double comfortable_decel = 2.0;
  double min_gap = 2.0;
  double headway = 1.5;
  double startup_lost_time = 2.0;
};

/// Class defaults; conventional drivers additionally scale desired speed per vehicle.
inline DriverParams default_params(VehicleClass cls, double speed_limit) {
  if (cls == VehicleClass::Automated) return DriverParams{speed_limit, 2.0, 2.5, 1.0, 0.9, 0.0};
  return DriverParams{speed_limit, 1.5, 2.0, 2.0, 1.5, 2.0};
}

inline bool valid(const DriverParams& p) {
  return p.desired_speed > 0 && p.max_accel > 0 && p.comfortable_decel > 0 && p.min_gap > 0 && p.headway > 0 &&
         p.startup_lost_time >= 0;
}

struct Route {
  std::optional<std::size_t> left_at;  // intersection index of the jughandle left turn

  bool through() const { return !left_at.has_value(); }
};

struct Vehicle {
  std::uint64_t id = 0;
  VehicleClass cls = VehicleClass::Conventional;
  int direction = 0;
  double position = 0.0;  // front bumper, meters from the direction's entry
  int lane = 0;
  double speed = 0.0;
  double accel = 0.0;
  Route route;
  std::optional<double> advisory;  // target speed, m/s
  double entry_time = 0.0;         // arrival (generation) time
  DriverParams params;

  // engine bookkeeping
  double speed_factor = 1.0;  // desired speed / link speed limit
  double inserted_time = 0.0;
  double free_flow_time = 0.0;
  double last_lane_change = -1e9;
  std::uint32_t next_approach = 0;
  std::uint32_t link_slot = 0;  // index within the direction chain
  std::int32_t yellow_latch = -1;  // approach index for which a go-on-yellow decision was made
  bool yellow_go = false;

  bool automated() const { return cls == VehicleClass::Automated; }
};

// ---- longitudinal ----------------------------------------------------------

/// IDM acceleration. `gap` empty means an unobstructed road ahead.
inline double idm_acceleration(double speed, std::optional<double> gap, double leader_speed, const DriverParams& p) {
  const double ratio = speed / p.desired_speed;
  const double r2 = ratio * ratio;
  double acc = p.max_accel * (1.0 - r2 * r2);
  if (gap) {
    if (!(*gap > 0.0)) throw Error(ErrorKind::NonPositiveGap, "gap must be positive, got " + std::to_string(*gap));
    const double dv = speed - leader_speed;
    const double s_star = p.min_gap + std::max(0.0, speed * p.headway + speed * dv / (2.0 * std::sqrt(p.max_accel * p.comfortable_decel)));
    const double q = s_star / *gap;
    acc -= p.max_accel * q * q;
  }
  return std::max(acc, -kEmergencyDecel);
}

inline double idm_acceleration(const Vehicle& follower, std::optional<double> gap, double leader_speed,
                               const DriverParams& p) {
  return idm_acceleration(follower.speed, gap, leader_speed, p);
}

/// Equilibrium bumper gap of a platoon cruising at `speed`.
inline double idm_equilibrium_gap(double speed, const DriverParams& p) {
  const double r = speed / p.desired_speed;
  return (p.min_gap + speed * p.headway) / std::sqrt(1.0 - r * r * r * r);
}

/// Ballistic update; speed is floored at zero mid-step.
inline Vehicle advance(Vehicle v, double commanded_accel, double dt) {
  v.accel = commanded_accel;
  const double next = v.speed + commanded_accel * dt;
  if (next < 0.0) {
    const double t_stop = v.speed / -commanded_accel;
    v.position += 0.5 * v.speed * t_stop;
    v.speed = 0.0;
  } else {
    v.position += v.speed * dt + 0.5 * commanded_accel * dt * dt;
    v.speed = next;
  }
  return v;
}

/// Seconds into a ballistic step at which the vehicle has covered `distance`.
inline double crossing_time(double speed, double accel, double distance) {
  if (distance <= 0.0) return 0.0;
  if (std::abs(accel) < 1e-12) return distance / speed;
  const double disc = std::max(0.0, speed * speed + 2.0 * accel * distance);
  return (std::sqrt(disc) - speed) / accel;
}

/// Displacement bound of one step.
inline double max_step_displacement(double v_max, double a_max, double dt) { return v_max * dt + 0.5 * a_max * dt * dt; }

/// Acceleration that moves speed toward `target` within one step, bounded by
/// [-decel, accel].
inline double tracking_acceleration(double speed, double target, double accel, double decel, double dt) {
  return std::clamp((target - speed) / dt, -decel, accel);
}

// ---- signals ---------------------------------------------------------------

struct VirtualLeader {
  double gap = 0.0;
  double speed = 0.0;
};

struct SignalContext {
  SignalState state = SignalState::Green;
  double since_green_onset = 0.0;
  bool first_in_queue = false;
  bool committed_through = false;  // go-on-yellow decision already made
  double time_to_green = std::numeric_limits<double>::infinity();  // known to connected vehicles
  double transition_accel = 1.5;  // rates an advised vehicle moves toward its target speed at
  double transition_decel = 2.0;
};

/// Farthest a vehicle can travel in `t` seconds when its speed moves from
/// `speed` toward `target` no faster than the given rates and never past it.
inline double reach_within(double speed, double target, double accel, double decel, double t) {
  if (t <= 0.0) return 0.0;
  const double rate = target >= speed ? accel : -decel;
  if (rate == 0.0) return speed * t;
  const double t_ramp = std::min(t, (target - speed) / rate);
  return speed * t_ramp + 0.5 * rate * t_ramp * t_ramp + target * (t - t_ramp);
}

/// A connected vehicle that cannot reach the bar before green onset, whatever
/// it does within its acceleration bounds, need not brake for the red. An
/// advised vehicle tracks its target speed; otherwise car following caps it at
/// its desired speed.
inline bool arrives_after_green(const Vehicle& v, double distance, const SignalContext& ctx) {
  if (!std::isfinite(ctx.time_to_green)) return false;
  const double reach = v.advisory ? reach_within(v.speed, *v.advisory, ctx.transition_accel, ctx.transition_decel,
                                                 ctx.time_to_green)
                                  : reach_within(v.speed, std::max(v.speed, v.params.desired_speed), v.params.max_accel,
                                                 0.0, ctx.time_to_green);
  return distance >= reach;
}

/// Dilemma-zone rule: go on yellow only when a comfortable stop is impossible.
inline bool go_on_yellow(double speed, double distance, double comfortable_decel = kComfortDecelDilemma) {
  if (speed <= 0.0) return false;
  if (distance <= 0.0) return true;
  return speed * speed / (2.0 * distance) > comfortable_decel;
}

inline std::optional<VirtualLeader> signal_interaction(const Vehicle& vehicle, double distance_to_stopbar,
                                                       const SignalContext& ctx) {
  const VirtualLeader bar{distance_to_stopbar, 0.0};
  switch (ctx.state) {
    case SignalState::Red:
      if (vehicle.cls == VehicleClass::Automated && arrives_after_green(vehicle, distance_to_stopbar, ctx)) {
        return std::nullopt;
      }
      return bar;
    case SignalState::Yellow:
      if (ctx.committed_through) return std::nullopt;
      return bar;
    case SignalState::Green:
      if (vehicle.cls == VehicleClass::Conventional && ctx.first_in_queue &&
          ctx.since_green_onset < vehicle.params.startup_lost_time) {
        return bar;
      }
      return std::nullopt;
  }
  return std::nullopt;
}

// ---- lane changing ---------------------------------------------------------

enum class LaneChange { Stay, Left, Right };

enum class ObligationKind { ExitReservedBefore, KeepOutOfReserved, ReachRightmostBefore };

struct LaneObligation {
  std::uint64_t vehicle_id = 0;
  ObligationKind kind = ObligationKind::KeepOutOfReserved;
  double position = 0.0;   // deadline, meters from the direction's entry
  std::size_t link = 0;    // link containing the deadline
};

/// Traffic in one adjacent lane around the deciding vehicle.
struct AdjacentLane {
  bool exists = false;
  bool accessible = false;  // lane_access verdict for the deciding vehicle
  bool reserved = false;
  std::optional<double> leader_gap;
  double leader_speed = 0.0;
  std::optional<double> follower_gap;
  double follower_speed = 0.0;
  DriverParams follower_params;
};

struct Neighborhood {
  double current_accel = 0.0;  // own IDM acceleration in the current lane
  int lane_count = 1;
  AdjacentLane left;
  AdjacentLane right;
};

struct LaneChangeParams {
  double threshold = 0.2;          // m/s^2 incentive for discretionary moves
  double safe_decel = 3.0;         // max imposed deceleration on the new follower
  double mandatory_safe_decel = 4.0;
  double lookahead = 600.0;        // obligations become active this far before their deadline
  double reserved_bias = 0.0;      // extra incentive for automated vehicles toward reserved lanes
};

namespace detail {

inline bool change_is_safe(const Vehicle& v, const AdjacentLane& lane, double safe_decel) {
  if (lane.leader_gap) {
    if (*lane.leader_gap <= 0.5) return false;
    if (idm_acceleration(v.speed, lane.leader_gap, lane.leader_speed, v.params) < -safe_decel) return false;
  }
  if (lane.follower_gap) {
    if (*lane.follower_gap <= 0.5) return false;
    const double imposed = idm_acceleration(lane.follower_speed, lane.follower_gap, v.speed, lane.follower_params);
    if (imposed < -safe_decel) return false;
  }
  return true;
}

inline double target_accel(const Vehicle& v, const AdjacentLane& lane) {
  if (lane.leader_gap && *lane.leader_gap <= 0.0) return -kEmergencyDecel;
  return idm_acceleration(v.speed, lane.leader_gap, lane.leader_speed, v.params);
}

}  // namespace detail

/// True when an obligation forces a move to the right at this position.
inline bool obligation_active(const Vehicle& v, const LaneObligation& ob, int lane_count, bool in_reserved,
                              double lookahead) {
  const double to_deadline = ob.position - v.position;
  if (to_deadline > lookahead) return false;
  switch (ob.kind) {
    case ObligationKind::ExitReservedBefore: return in_reserved;
    case ObligationKind::ReachRightmostBefore: return v.lane < lane_count - 1 && to_deadline > -1.0;
    case ObligationKind::KeepOutOfReserved: return false;
  }
  return false;
}

inline LaneChange lane_change_decision(const Vehicle& v, const Neighborhood& n, std::span<const LaneObligation> obligations,
                                       bool in_reserved, const LaneChangeParams& p = {}) {
  const bool conventional = v.cls == VehicleClass::Conventional;
  auto allowed = [&](const AdjacentLane& lane) {
    if (!lane.exists || !lane.accessible) return false;
    if (conventional && lane.reserved) return false;
    return true;
  };

  bool must_right = false;
  bool no_left = false;
  for (const auto& ob : obligations) {
    if (ob.kind == ObligationKind::ReachRightmostBefore && ob.position - v.position <= p.lookahead) no_left = true;
    if (obligation_active(v, ob, n.lane_count, in_reserved, p.lookahead)) must_right = true;
  }
  if (must_right) {
    if (allowed(n.right) && detail::change_is_safe(v, n.right, p.mandatory_safe_decel)) return LaneChange::Right;
    return LaneChange::Stay;
  }

  double best_gain = p.threshold;
  LaneChange best = LaneChange::Stay;
  auto consider = [&](const AdjacentLane& lane, LaneChange dir) {
    if (!allowed(lane)) return;
    if (!detail::change_is_safe(v, lane, p.safe_decel)) return;
    double gain = detail::target_accel(v, lane) - n.current_accel;
    if (!conventional) {
      if (lane.reserved && !in_reserved) gain += p.reserved_bias;
      if (!lane.reserved && in_reserved) gain -= p.reserved_bias;
    }
    if (gain > best_gain) {
      best_gain = gain;
      best = dir;
    }
  };
  if (!no_left) consider(n.left, LaneChange::Left);
  consider(n.right, LaneChange::Right);
  return best;
}

}  // namespace arterial
