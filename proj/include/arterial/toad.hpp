#pragma once

// Centralized speed-advisory agent. Once per control interval it receives the
// state of every equipped vehicle plus signal status and queue detection, and
// returns a constant target speed per vehicle chosen so that the vehicle's
// stop-bar arrival falls inside a green window.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "arterial/corridor.hpp"
#include "arterial/dynamics.hpp"
#include "arterial/signal.hpp"

namespace arterial {

struct EquippedState {
  std::uint64_t id = 0;
  int direction = 0;
  double position = 0.0;
  double speed = 0.0;
  int lane = 0;
  Route route;
};

struct SignalStatus {
  std::size_t intersection = 0;
  SignalState state = SignalState::Green;
};

/// Stopped vehicles reported by a lane's stop-bar queue detector.
struct LaneQueue {
  int direction = 0;
  int lane = 0;
  std::vector<double> stopped_positions;
};

struct SystemSnapshot {
  double time = 0.0;
  std::vector<EquippedState> equipped_states;  // automated vehicles only
  std::vector<SignalStatus> signal_states;
  std::vector<LaneQueue> queues;
  const Corridor* corridor = nullptr;
};

struct Advisory {
  std::uint64_t vehicle_id = 0;
  double target_speed = 0.0;
  double valid_until = 0.0;
};

struct AdvisoryParams {
  double v_min_factor = 0.3;
  double control_interval = 1.0;
  double end_margin = 1.0;          // seconds of green left at arrival
  double horizon_cycles = 3.0;
  double transition_accel = 1.5;    // bounded speed change toward the target
  double transition_decel = 2.0;
  double discharge_per_queued = 2.0;  // seconds added per queued vehicle ahead
};

/// Stop-bar arrival time when the vehicle moves from `u` toward constant speed
/// `v` at the bounded transition rate, then cruises. v > 0.
inline double arrival_time(double distance, double u, double v, double accel, double decel) {
  if (v >= u) {
    const double t_tr = (v - u) / accel;
    const double d_tr = 0.5 * (u + v) * t_tr;
    if (d_tr >= distance) return (-u + std::sqrt(u * u + 2.0 * accel * distance)) / accel;
    return t_tr + (distance - d_tr) / v;
  }
  const double t_tr = (u - v) / decel;
  const double d_tr = 0.5 * (u + v) * t_tr;
  if (d_tr >= distance) return (u - std::sqrt(std::max(0.0, u * u - 2.0 * decel * distance))) / decel;
  return t_tr + (distance - d_tr) / v;
}

struct AdvisoryPlan {
  double target_speed = 0.0;
  bool feasible = false;
  double arrival = 0.0;  // seconds from now at the chosen speed
};

inline constexpr double kOnsetMargin = 1e-3;  // s; keeps a planned arrival clear of rounding at green onset

/// Highest constant speed in [v_min, v_max] whose arrival lands in a usable
/// green window within the horizon. Windows are scanned in time order, so the
/// first window that admits any speed also holds the maximum.
inline AdvisoryPlan plan_advisory(double distance, double current_speed, double v_min, double v_max,
                                  const SignalPlan& plan, double now, const AdvisoryParams& p = {},
                                  double queue_delay = 0.0) {
  const double a = p.transition_accel;
  const double b = p.transition_decel;
  auto arrival = [&](double v) { return arrival_time(distance, current_speed, v, a, b); };
  const double horizon = p.horizon_cycles * plan.cycle();
  const double t_fast = arrival(v_max);
  const double t_slow = arrival(v_min);

  double search_from = now;
  for (int guard = 0; guard < 1000; ++guard) {
    const GreenWindow w = next_green_window(plan, search_from);
    if (w.start - now > horizon) break;
    const double earliest = w.start - now + queue_delay + kOnsetMargin;
    const double latest = std::min(w.end - p.end_margin - now, horizon);
    if (earliest <= latest && t_fast <= latest) {
      if (t_fast >= earliest) return {v_max, true, t_fast};
      if (t_slow < earliest) break;  // even the floor speed arrives too early for this and every later window
      double lo = v_min;
      double hi = v_max;
      for (int it = 0; it < 64; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (arrival(mid) >= earliest) lo = mid;
        else hi = mid;
      }
      return {lo, true, arrival(lo)};
    }
    if (!std::isfinite(w.end)) break;
    search_from = w.end + 1e-6;  // at w.end rounding can still report the closing window
  }
  return {v_min, false, t_slow};
}

inline double compute_advisory(double distance, double current_speed, double v_min, double v_max,
                               const SignalPlan& plan, double now, const AdvisoryParams& p = {},
                               double queue_delay = 0.0) {
  return plan_advisory(distance, current_speed, v_min, v_max, plan, now, p, queue_delay).target_speed;
}

inline std::vector<Advisory> issue_advisories(const SystemSnapshot& snapshot, const AdvisoryParams& p = {}) {
  std::vector<Advisory> out;
  if (!snapshot.corridor) return out;
  const Corridor& c = *snapshot.corridor;
  out.reserve(snapshot.equipped_states.size());
  // stopped positions per (direction, lane), sorted for range counting
  std::vector<std::vector<double>> stopped;
  auto slot = [](int direction, int lane) { return static_cast<std::size_t>(lane) * 2 + static_cast<std::size_t>(direction); };
  for (const auto& q : snapshot.queues) {
    if (q.direction < 0 || q.direction > 1 || q.lane < 0) continue;
    const std::size_t k = slot(q.direction, q.lane);
    if (stopped.size() <= k) stopped.resize(k + 1);
    stopped[k].insert(stopped[k].end(), q.stopped_positions.begin(), q.stopped_positions.end());
  }
  for (auto& v : stopped) std::sort(v.begin(), v.end());
  for (const auto& s : snapshot.equipped_states) {
    const double valid_until = snapshot.time + p.control_interval;
    const auto& approaches = c.approaches(s.direction);
    const Approach* next = nullptr;
    for (const auto& a : approaches) {
      if (a.stopbar > s.position) {
        next = &a;
        break;
      }
    }
    const std::size_t here = c.link_at(s.direction, std::clamp(s.position, 0.0, c.length(s.direction)));
    if (!next || (s.route.left_at && *s.route.left_at == next->intersection)) {
      out.push_back(Advisory{s.id, c.links[here].speed_limit, valid_until});
      continue;
    }
    const double v_max = c.links[next->link].speed_limit;
    const double v_min = p.v_min_factor * v_max;
    std::ptrdiff_t queued = 0;
    if (const std::size_t k = slot(s.direction, s.lane); k < stopped.size()) {
      const auto& q = stopped[k];
      queued = std::upper_bound(q.begin(), q.end(), next->stopbar) - std::upper_bound(q.begin(), q.end(), s.position);
    }
    const double target = compute_advisory(next->stopbar - s.position, s.speed, v_min, v_max,
                                           c.intersections[next->intersection].signal_plan, snapshot.time, p,
                                           p.discharge_per_queued * static_cast<double>(queued));
    out.push_back(Advisory{s.id, target, valid_until});
  }
  return out;
}

}  // namespace arterial
