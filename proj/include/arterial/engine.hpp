#pragma once

// Fixed-timestep microsimulation of a two-direction signalized corridor with
// jughandle left turns, reserved inner lanes and centralized speed advisories.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "arterial/corridor.hpp"
#include "arterial/dynamics.hpp"
#include "arterial/error.hpp"
#include "arterial/reservation.hpp"
#include "arterial/rng.hpp"
#include "arterial/scenario.hpp"
#include "arterial/signal.hpp"
#include "arterial/toad.hpp"

namespace arterial {

inline constexpr double kSeriesInterval = 300.0;   // metrics time-series bucket, s
inline constexpr double kSignalRange = 400.0;      // a stop bar starts acting as a leader within this distance
inline constexpr double kObstacleRange = 250.0;    // diverge/lane-end obstacles act within this distance
inline constexpr double kPanicDistance = 100.0;    // unmet obligations trigger a crawl within this distance
inline constexpr double kPanicSpeed = 3.0;
inline constexpr double kRampApproachDecel = 1.0;  // speed profile toward the ramp speed
inline constexpr double kStoppedSpeed = 1.0;       // queue detector threshold
inline constexpr double kLaneChangeCooldown = 2.0;  // s between changes by one vehicle
inline constexpr int kLaneChangeStride = 5;        // steps between discretionary evaluations

struct IntervalMetrics {
  double start = 0.0;  // seconds after warmup
  std::int64_t served = 0;
  double avg_delay = 0.0;
  double total_travel_time = 0.0;  // vehicle-hours
};

struct RunMetrics {
  double avg_delay_per_vehicle = 0.0;  // s
  std::int64_t vehicles_served = 0;
  double total_travel_time = 0.0;      // vehicle-hours
  std::int64_t vehicles_generated = 0;
  std::vector<IntervalMetrics> series;
};

struct RunAudit {
  std::int64_t collisions = 0;
  std::int64_t red_light_violations = 0;
  std::int64_t reserved_intrusions = 0;
  std::int64_t speed_violations = 0;
  std::int64_t teleports = 0;
  std::int64_t conservation_failures = 0;
  std::int64_t subordination_violations = 0;
  std::int64_t missed_diverges = 0;
  double min_gap = std::numeric_limits<double>::infinity();
  double min_delay = std::numeric_limits<double>::infinity();

  bool clean() const {
    return collisions == 0 && red_light_violations == 0 && reserved_intrusions == 0 && speed_violations == 0 &&
           teleports == 0 && conservation_failures == 0 && subordination_violations == 0 && missed_diverges == 0;
  }
};

struct RunResult {
  RunMetrics metrics;
  RunAudit audit;
  int reserved_count = 0;
};

// ---- arrivals ---------------------------------------------------------------

/// What arrival generation needs to know about the entry links.
struct EntryLayout {
  std::array<int, 2> lanes{1, 1};
  std::array<int, 2> reserved{0, 0};
  std::array<double, 2> speed_limit{1.0, 1.0};
  std::array<std::vector<std::size_t>, 2> left_candidates;  // intersections in travel order with left demand
  DriverParams conventional = default_params(VehicleClass::Conventional, 1.0);
  DriverParams automated = default_params(VehicleClass::Automated, 1.0);
  double speed_spread = 0.1;
};

inline EntryLayout entry_layout(const Corridor& c, const ScenarioConfig& cfg) {
  EntryLayout e;
  for (int d = 0; d < 2; ++d) {
    const auto k = static_cast<std::size_t>(d);
    const Link& first = c.links[c.chain(d).front()];
    e.lanes[k] = first.lane_count();
    e.reserved[k] = first.reserved_count();
    e.speed_limit[k] = first.speed_limit;
    for (const auto& a : c.approaches(d)) {
      if (c.intersections[a.intersection].has_left_demand()) e.left_candidates[k].push_back(a.intersection);
    }
  }
  e.conventional = cfg.conventional;
  e.automated = cfg.automated;
  e.speed_spread = cfg.conventional_speed_spread;
  return e;
}

/// Bernoulli-per-step arrivals for both directions. Every stream draws the same
/// number of values per arrival regardless of outcome, so runs that differ only
/// in mp or lane mode see identical arrival instants and route choices.
inline std::vector<Vehicle> generate_arrivals(const DemandProfile& profile, double mp, RandomStreams& rng, double t,
                                              double dt, const EntryLayout& layout, std::uint64_t& next_id) {
  std::vector<Vehicle> out;
  for (int d = 0; d < 2; ++d) {
    const auto k = static_cast<std::size_t>(d);
    const double p = profile.flow[k] * dt / 3600.0;
    if (!rng.arrivals.bernoulli(p)) continue;
    Vehicle v;
    v.id = next_id++;
    v.direction = d;
    v.entry_time = t;
    const double u_class = rng.classes.uniform();
    v.cls = u_class < mp ? VehicleClass::Automated : VehicleClass::Conventional;
    const double u_speed = rng.params.uniform();
    const double u_lane = rng.entry_lanes.uniform();
    if (v.automated()) {
      v.params = layout.automated;
      v.speed_factor = 1.0;
      v.lane = 0;
    } else {
      v.params = layout.conventional;
      v.speed_factor = 1.0 + layout.speed_spread * (2.0 * u_speed - 1.0);
      const int general = layout.lanes[k] - layout.reserved[k];
      v.lane = layout.reserved[k] + std::min(general - 1, static_cast<int>(u_lane * general));
    }
    v.params.desired_speed = v.speed_factor * layout.speed_limit[k];
    for (std::size_t x : layout.left_candidates[k]) {
      const double frac = x < profile.left_fraction.size() ? profile.left_fraction[x] : 0.0;
      if (rng.routes.uniform() < frac) {
        v.route.left_at = x;
        break;
      }
    }
    out.push_back(v);
  }
  return out;
}

// ---- world ------------------------------------------------------------------

class World {
 public:
  explicit World(ScenarioConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
    validate(cfg_);
    reserved_ = effective_reserved_count(cfg_.reserved_mode, cfg_.los, cfg_.mp);
    corridor_ = set_reserved_lanes(*cfg_.corridor, reserved_);
    for (int d = 0; d < 2; ++d) {
      const auto& chain = corridor_.chain(d);
      const int lanes = corridor_.links[chain.front()].lane_count();
      for (std::size_t k : chain) {
        if (corridor_.links[k].lane_count() != lanes) {
          throw Error(ErrorKind::ConfigInvalid, "direction '" + corridor_.directions[static_cast<std::size_t>(d)] +
                                                    "' changes lane count along its length; lane drops are not simulated");
        }
      }
    }
    demand_ = demand_for(cfg_);
    layout_ = entry_layout(corridor_, cfg_);
    build_geometry();
    signals_.resize(corridor_.intersections.size());
    control_every_ = std::max<std::int64_t>(1, std::llround(cfg_.advisory.control_interval / cfg_.dt));
    warmup_steps_ = std::llround(cfg_.warmup / cfg_.dt);
    end_steps_ = warmup_steps_ + std::llround(cfg_.duration / cfg_.dt);
    const auto buckets = static_cast<std::size_t>(std::ceil(cfg_.duration / kSeriesInterval - 1e-9));
    series_.resize(std::max<std::size_t>(1, buckets));
    for (std::size_t i = 0; i < series_.size(); ++i) series_[i].start = kSeriesInterval * static_cast<double>(i);
    series_delay_.assign(series_.size(), 0.0);
  }

  const ScenarioConfig& config() const { return cfg_; }
  const Corridor& corridor() const { return corridor_; }
  const DemandProfile& demand() const { return demand_; }
  int reserved_count() const { return reserved_; }
  double time() const { return static_cast<double>(step_) * cfg_.dt; }
  std::int64_t steps_taken() const { return step_; }
  std::int64_t total_steps() const { return end_steps_; }
  bool finished() const { return step_ >= end_steps_; }

  std::span<const Vehicle> lane(int d, int l) const { return dirs_[idx(d)].lanes[idx(l)].vehicles; }
  std::size_t entry_queue(int d, int l) const { return dirs_[idx(d)].lanes[idx(l)].entry_queue.size(); }
  int lane_count(int d) const { return geo_[idx(d)].lanes; }

  std::int64_t generated() const { return generated_; }
  std::int64_t exited() const { return exited_; }
  std::int64_t in_network() const {
    std::int64_t n = 0;
    for (const auto& ds : dirs_) {
      for (const auto& l : ds.lanes) n += static_cast<std::int64_t>(l.vehicles.size());
      for (const auto& r : ds.ramps) n += static_cast<std::int64_t>(r.vehicles.size());
    }
    return n;
  }
  std::int64_t queued_at_entry() const {
    std::int64_t n = 0;
    for (const auto& ds : dirs_) {
      for (const auto& l : ds.lanes) n += static_cast<std::int64_t>(l.entry_queue.size());
    }
    return n;
  }

  const RunAudit& audit() const { return audit_; }

  RunMetrics metrics() const {
    RunMetrics m;
    m.vehicles_served = served_;
    m.avg_delay_per_vehicle = served_ > 0 ? delay_sum_ / static_cast<double>(served_) : 0.0;
    m.total_travel_time = tt_seconds_ / 3600.0;
    m.vehicles_generated = generated_;
    m.series = series_;
    for (std::size_t i = 0; i < m.series.size(); ++i) {
      auto& s = m.series[i];
      s.avg_delay = s.served > 0 ? series_delay_[i] / static_cast<double>(s.served) : 0.0;
      s.total_travel_time /= 3600.0;
    }
    return m;
  }

  /// Places a vehicle on the mainline; the engine fills in its bookkeeping.
  void insert_vehicle(Vehicle v) {
    const auto& g = geo_[idx(v.direction)];
    if (v.lane < 0 || v.lane >= g.lanes) throw Error(ErrorKind::ConfigInvalid, "lane out of range");
    if (v.position < 0.0 || v.position > g.length) throw Error(ErrorKind::OutOfExtent, "position outside the corridor");
    prepare(v, v.position);
    v.entry_time = std::min(v.entry_time, time());
    v.inserted_time = time();
    ++generated_;
    place(dirs_[idx(v.direction)].lanes[idx(v.lane)].vehicles, std::move(v));
  }

  /// Order-sensitive digest of every vehicle's state.
  std::uint64_t state_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t x) {
      for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xffU;
        h *= 1099511628211ULL;
      }
    };
    mix(static_cast<std::uint64_t>(step_));
    for (const auto& ds : dirs_) {
      for (const auto& l : ds.lanes) {
        for (const auto& v : l.vehicles) {
          mix(v.id);
          mix(static_cast<std::uint64_t>(v.lane));
          mix(std::bit_cast<std::uint64_t>(v.position));
          mix(std::bit_cast<std::uint64_t>(v.speed));
        }
        mix(l.entry_queue.size());
      }
      for (const auto& r : ds.ramps) {
        for (const auto& v : r.vehicles) {
          mix(v.id);
          mix(std::bit_cast<std::uint64_t>(v.position));
          mix(std::bit_cast<std::uint64_t>(v.speed));
        }
      }
    }
    return h;
  }

  SystemSnapshot snapshot() const {
    SystemSnapshot s;
    s.time = time();
    s.corridor = &corridor_;
    for (std::size_t i = 0; i < corridor_.intersections.size(); ++i) s.signal_states.push_back({i, signals_[i].state});
    for (int d = 0; d < 2; ++d) {
      const auto& ds = dirs_[idx(d)];
      for (int l = 0; l < geo_[idx(d)].lanes; ++l) {
        LaneQueue q{d, l, {}};
        for (const auto& v : ds.lanes[idx(l)].vehicles) {
          if (v.automated()) s.equipped_states.push_back({v.id, d, v.position, v.speed, v.lane, v.route});
          if (v.speed < kStoppedSpeed) q.stopped_positions.push_back(v.position);
        }
        if (!q.stopped_positions.empty()) s.queues.push_back(std::move(q));
      }
    }
    return s;
  }

  void step() {
    const double t = time();
    const double dt = cfg_.dt;
    spawn(t, dt);
    update_signals(t);
    if (cfg_.advisories_enabled && step_ % control_every_ == 0) apply_advisories();
    for (int d = 0; d < 2; ++d) {
      auto& ds = dirs_[idx(d)];
      for (int l = 0; l < geo_[idx(d)].lanes; ++l) {
        auto& vs = ds.lanes[idx(l)].vehicles;
        for (std::size_t i = 0; i < vs.size(); ++i) vs[i].accel = mainline_accel(d, l, i);
      }
      for (auto& r : ds.ramps) {
        for (std::size_t i = 0; i < r.vehicles.size(); ++i) r.vehicles[i].accel = ramp_accel(r, i);
      }
    }
    lane_changes(t);
    advance_all(dt);
    transitions(t + dt);
    account(t, dt);
    ++step_;
  }

 private:
  struct LaneTraffic {
    std::vector<Vehicle> vehicles;  // front (largest position) first
    std::deque<Vehicle> entry_queue;
  };
  struct RampTraffic {
    std::size_t intersection = 0;
    double diverge = 0.0;
    double length = 0.0;
    double speed = 0.0;
    std::vector<Vehicle> vehicles;  // position measured from the diverge point
  };
  struct DirectionTraffic {
    std::vector<LaneTraffic> lanes;
    std::vector<RampTraffic> ramps;
  };
  struct Geometry {
    double length = 0.0;
    int lanes = 1;
    int reserved = 0;
    std::vector<double> link_end;
    std::vector<double> speed_limit;
    double max_limit = 0.0;
    std::vector<Approach> approaches;
    std::vector<double> diverge;   // per intersection; NaN when unused in this direction
    std::vector<int> ramp;         // per intersection; -1 when none
  };
  struct SignalNow {
    SignalState state = SignalState::Green;
    double since_green = 0.0;
    double to_green = 0.0;
  };
  struct PendingChange {
    int direction;
    int from;
    int to;
    std::uint64_t id;
    bool mandatory;
  };

  static std::size_t idx(int i) { return static_cast<std::size_t>(i); }

  void build_geometry() {
    for (int d = 0; d < 2; ++d) {
      auto& g = geo_[idx(d)];
      const auto& chain = corridor_.chain(d);
      g.length = corridor_.length(d);
      g.lanes = corridor_.links[chain.front()].lane_count();
      g.reserved = corridor_.links[chain.front()].reserved_count();
      for (std::size_t k : chain) {
        g.link_end.push_back(corridor_.links[k].end());
        g.speed_limit.push_back(corridor_.links[k].speed_limit);
        g.max_limit = std::max(g.max_limit, corridor_.links[k].speed_limit);
      }
      g.approaches = corridor_.approaches(d);
      g.diverge.assign(corridor_.intersections.size(), std::numeric_limits<double>::quiet_NaN());
      g.ramp.assign(corridor_.intersections.size(), -1);
      auto& ds = dirs_[idx(d)];
      ds.lanes.resize(idx(g.lanes));
      for (const auto& a : g.approaches) {
        const auto& x = corridor_.intersections[a.intersection];
        if (!x.jughandle) continue;
        g.diverge[a.intersection] = a.stopbar - x.jughandle->diverge_position;
        g.ramp[a.intersection] = static_cast<int>(ds.ramps.size());
        ds.ramps.push_back(RampTraffic{a.intersection, g.diverge[a.intersection], x.jughandle->ramp_length,
                                       x.jughandle->ramp_speed, {}});
      }
    }
  }

  std::uint32_t slot_at(const Geometry& g, double x) const {
    std::uint32_t s = 0;
    while (s + 1 < g.link_end.size() && x > g.link_end[s]) ++s;
    return s;
  }

  double free_flow_time(const Vehicle& v, double from) const {
    const auto& g = geo_[idx(v.direction)];
    double to = g.length;
    double extra = 0.0;
    if (v.route.left_at) {
      const auto& r = dirs_[idx(v.direction)].ramps[idx(g.ramp[*v.route.left_at])];
      to = r.diverge;
      extra = r.length / r.speed;
    }
    double t = 0.0;
    double start = 0.0;
    for (std::size_t s = 0; s < g.link_end.size() && start < to; ++s) {
      const double a = std::max(start, from);
      const double b = std::min(g.link_end[s], to);
      if (b > a) t += (b - a) / (v.speed_factor * g.speed_limit[s]);
      start = g.link_end[s];
    }
    return t + extra;
  }

  void prepare(Vehicle& v, double position) {
    const auto& g = geo_[idx(v.direction)];
    v.position = position;
    v.link_slot = slot_at(g, position);
    v.params.desired_speed = v.speed_factor * g.speed_limit[v.link_slot];
    v.next_approach = 0;
    while (v.next_approach < g.approaches.size() && g.approaches[v.next_approach].stopbar < position) ++v.next_approach;
    if (v.route.left_at && g.ramp[*v.route.left_at] < 0) v.route.left_at.reset();
    v.free_flow_time = free_flow_time(v, position);
    v.yellow_latch = -1;
  }

  static void place(std::vector<Vehicle>& vs, Vehicle v) {
    const double x = v.position;
    auto it = std::partition_point(vs.begin(), vs.end(), [x](const Vehicle& o) { return o.position >= x; });
    vs.insert(it, std::move(v));
  }

  static double follow(const Vehicle& v, double gap, double leader_speed) {
    if (gap <= 1e-3) return -kEmergencyDecel;
    return idm_acceleration(v.speed, gap, leader_speed, v.params);
  }

  // ---- (0) arrivals and entry release ----

  bool try_enter(LaneTraffic& lt, Vehicle& nv, double t) {
    double speed = nv.params.desired_speed;
    if (!lt.vehicles.empty()) {
      const Vehicle& last = lt.vehicles.back();
      const double gap = last.position - kVehicleLength;
      if (gap <= nv.params.min_gap) return false;
      auto ok = [&](double s) { return idm_acceleration(s, gap, last.speed, nv.params) >= -nv.params.comfortable_decel; };
      if (!ok(speed)) {
        speed = std::min(speed, last.speed);
        if (!ok(speed)) return false;
      }
    }
    nv.speed = speed;
    nv.inserted_time = t;
    lt.vehicles.push_back(nv);
    return true;
  }

  void spawn(double t, double dt) {
    for (auto& v : generate_arrivals(demand_, cfg_.mp, rng_, t, dt, layout_, next_id_)) {
      ++generated_;
      prepare(v, 0.0);
      dirs_[idx(v.direction)].lanes[idx(v.lane)].entry_queue.push_back(std::move(v));
    }
    for (auto& ds : dirs_) {
      for (auto& lt : ds.lanes) {
        if (!lt.entry_queue.empty() && try_enter(lt, lt.entry_queue.front(), t)) lt.entry_queue.pop_front();
      }
    }
  }

  // ---- (1) signals ----

  void update_signals(double t) {
    for (std::size_t i = 0; i < signals_.size(); ++i) {
      const auto& plan = corridor_.intersections[i].signal_plan;
      signals_[i].state = phase_state(plan, t);
      signals_[i].since_green = time_since_green_onset(plan, t);
      signals_[i].to_green = signals_[i].state == SignalState::Green ? 0.0 : next_green_window(plan, t).start - t;
    }
  }

  // ---- (2) advisories ----

  void apply_advisories() {
    const SystemSnapshot snap = snapshot();
    const auto advisories = issue_advisories(snap, cfg_.advisory);
    std::size_t k = 0;
    for (int d = 0; d < 2; ++d) {
      for (auto& lt : dirs_[idx(d)].lanes) {
        for (auto& v : lt.vehicles) {
          if (!v.automated()) continue;
          v.advisory = advisories[k++].target_speed;
        }
      }
    }
  }

  // ---- (3-4) longitudinal control ----

  double mainline_accel(int d, int l, std::size_t i) {
    auto& vs = dirs_[idx(d)].lanes[idx(l)].vehicles;
    Vehicle& v = vs[i];
    const auto& g = geo_[idx(d)];
    const double physical = i > 0 ? follow(v, vs[i - 1].position - kVehicleLength - v.position, vs[i - 1].speed)
                                  : idm_acceleration(v.speed, std::nullopt, 0.0, v.params);
    double acc = physical;

    if (v.next_approach < g.approaches.size()) {
      const Approach& ap = g.approaches[v.next_approach];
      const bool turning_off = v.route.left_at && *v.route.left_at == ap.intersection;
      const double dist = ap.stopbar - v.position;
      if (!turning_off && dist < kSignalRange) {
        const SignalNow& sig = signals_[ap.intersection];
        const auto approach_tag = static_cast<std::int32_t>(v.next_approach);
        if (sig.state != SignalState::Yellow) {
          v.yellow_latch = -1;
        } else if (v.yellow_latch != approach_tag) {
          v.yellow_latch = approach_tag;
          v.yellow_go = go_on_yellow(v.speed, dist);
        }
        const bool first = (i == 0 || vs[i - 1].position > ap.stopbar) && v.speed < 0.5 &&
                           dist < v.params.min_gap + 2.0;
        const SignalContext ctx{sig.state,
                                sig.since_green,
                                first,
                                v.yellow_latch == approach_tag && v.yellow_go,
                                sig.to_green,
                                cfg_.advisory.transition_accel,
                                cfg_.advisory.transition_decel};
        if (auto leader = signal_interaction(v, dist, ctx)) acc = std::min(acc, follow(v, leader->gap, leader->speed));
      }
    }

    if (v.route.left_at) {
      const auto& ramp = dirs_[idx(d)].ramps[idx(g.ramp[*v.route.left_at])];
      const double to = ramp.diverge - v.position;
      if (l != g.lanes - 1) {
        if (to < kObstacleRange) acc = std::min(acc, follow(v, to, 0.0));
        if (to < kPanicDistance) {
          acc = std::min(acc, std::max(-v.params.comfortable_decel,
                                       tracking_acceleration(v.speed, kPanicSpeed, v.params.max_accel,
                                                             v.params.comfortable_decel, cfg_.dt)));
        }
      } else {
        if (v.speed > ramp.speed) {
          const double allowed = std::sqrt(ramp.speed * ramp.speed + 2.0 * kRampApproachDecel * std::max(0.0, to));
          acc = std::min(acc, tracking_acceleration(v.speed, allowed, v.params.max_accel, v.params.comfortable_decel,
                                                    cfg_.dt));
        }
        if (to < kObstacleRange && !ramp.vehicles.empty()) {
          const Vehicle& last = ramp.vehicles.back();
          acc = std::min(acc, follow(v, ramp.diverge + last.position - kVehicleLength - v.position, last.speed));
        }
      }
    }

    if (v.advisory) {
      acc = std::min(acc, tracking_acceleration(v.speed, *v.advisory, cfg_.advisory.transition_accel,
                                                cfg_.advisory.transition_decel, cfg_.dt));
    }
    acc = std::max(acc, -kEmergencyDecel);
    if (acc > physical + 1e-12) ++audit_.subordination_violations;
    return acc;
  }

  double ramp_accel(const RampTraffic& r, std::size_t i) const {
    const Vehicle& v = r.vehicles[i];
    if (i == 0) return idm_acceleration(v.speed, std::nullopt, 0.0, v.params);
    return follow(v, r.vehicles[i - 1].position - kVehicleLength - v.position, r.vehicles[i - 1].speed);
  }

  // ---- (5) lane changes ----

  AdjacentLane adjacent(int d, int l, const Vehicle& v) const {
    AdjacentLane a;
    const auto& g = geo_[idx(d)];
    if (l < 0 || l >= g.lanes) return a;
    a.exists = true;
    a.reserved = l < g.reserved;
    a.accessible = lane_access(v.cls, Lane{l, a.reserved}) == Access::Allowed;
    const auto& vs = dirs_[idx(d)].lanes[idx(l)].vehicles;
    const double x = v.position;
    const auto it = std::partition_point(vs.begin(), vs.end(), [x](const Vehicle& o) { return o.position >= x; });
    if (it != vs.begin()) {
      const Vehicle& lead = *(it - 1);
      a.leader_gap = lead.position - kVehicleLength - x;
      a.leader_speed = lead.speed;
    }
    if (it != vs.end()) {
      a.follower_gap = x - kVehicleLength - it->position;
      a.follower_speed = it->speed;
      a.follower_params = it->params;
    }
    return a;
  }

  std::size_t obligations(const Vehicle& v, bool in_reserved, std::array<LaneObligation, 3>& out) const {
    std::size_t n = 0;
    if (v.cls == VehicleClass::Conventional) out[n++] = {v.id, ObligationKind::KeepOutOfReserved, v.position, 0};
    if (v.route.left_at) {
      const double diverge = geo_[idx(v.direction)].diverge[*v.route.left_at];
      if (v.automated() && in_reserved) {
        out[n++] = {v.id, ObligationKind::ExitReservedBefore, std::max(0.0, diverge - kExitMargin), 0};
      }
      out[n++] = {v.id, ObligationKind::ReachRightmostBefore, diverge, 0};
    }
    return n;
  }

  void lane_changes(double t) {
    pending_.clear();
    for (int d = 0; d < 2; ++d) {
      const auto& g = geo_[idx(d)];
      if (g.lanes < 2) continue;
      for (int l = 0; l < g.lanes; ++l) {
        const auto& vs = dirs_[idx(d)].lanes[idx(l)].vehicles;
        for (std::size_t i = 0; i < vs.size(); ++i) {
          const Vehicle& v = vs[i];
          const bool in_reserved = l < g.reserved;
          const bool mandatory_zone =
              (v.route.left_at && g.diverge[*v.route.left_at] - v.position <= cfg_.lane_change.lookahead) ||
              (v.cls == VehicleClass::Conventional && in_reserved);
          const bool due = mandatory_zone || (static_cast<std::uint64_t>(step_) + v.id) % kLaneChangeStride == 0;
          if (!due) continue;
          if (t - v.last_lane_change < kLaneChangeCooldown) continue;
          if (v.route.left_at && v.position >= g.diverge[*v.route.left_at]) continue;
          Neighborhood n;
          n.lane_count = g.lanes;
          n.current_accel = i > 0 ? follow(v, vs[i - 1].position - kVehicleLength - v.position, vs[i - 1].speed)
                                  : idm_acceleration(v.speed, std::nullopt, 0.0, v.params);
          n.left = adjacent(d, l - 1, v);
          n.right = adjacent(d, l + 1, v);
          std::array<LaneObligation, 3> obs;
          const std::size_t count = obligations(v, in_reserved, obs);
          const LaneChange c =
              lane_change_decision(v, n, std::span<const LaneObligation>(obs.data(), count), in_reserved, cfg_.lane_change);
          if (c == LaneChange::Stay) continue;
          pending_.push_back({d, l, c == LaneChange::Left ? l - 1 : l + 1, v.id, mandatory_zone});
        }
      }
    }
    // Applied one at a time against the updated state; earlier moves may invalidate later ones.
    for (const auto& pc : pending_) {
      auto& from = dirs_[idx(pc.direction)].lanes[idx(pc.from)].vehicles;
      const auto it = std::find_if(from.begin(), from.end(), [&](const Vehicle& o) { return o.id == pc.id; });
      if (it == from.end()) continue;
      const AdjacentLane target = adjacent(pc.direction, pc.to, *it);
      const double safe = pc.mandatory ? cfg_.lane_change.mandatory_safe_decel : cfg_.lane_change.safe_decel;
      if (!target.accessible || !detail::change_is_safe(*it, target, safe)) continue;
      Vehicle v = std::move(*it);
      from.erase(it);
      v.lane = pc.to;
      v.last_lane_change = t;
      auto& to = dirs_[idx(pc.direction)].lanes[idx(pc.to)].vehicles;
      const double x = v.position;
      auto pos = std::partition_point(to.begin(), to.end(), [x](const Vehicle& o) { return o.position >= x; });
      const auto k = static_cast<std::size_t>(pos - to.begin());
      to.insert(pos, std::move(v));
      Vehicle& mover = to[k];
      if (k > 0) {
        mover.accel = std::min(mover.accel, follow(mover, to[k - 1].position - kVehicleLength - mover.position, to[k - 1].speed));
      }
      if (k + 1 < to.size()) {
        Vehicle& f = to[k + 1];
        f.accel = std::min(f.accel, follow(f, mover.position - kVehicleLength - f.position, mover.speed));
      }
    }
  }

  // ---- (6) motion ----

  void move(Vehicle& v, double limit, double dt) {
    const double old = v.position;
    v = advance(std::move(v), v.accel, dt);
    if (v.speed > kSpeedBoundFactor * limit + 1e-9) ++audit_.speed_violations;
    if (v.position - old > max_step_displacement(kSpeedBoundFactor * limit, kEmergencyDecel, dt) + 1e-9) ++audit_.teleports;
  }

  void advance_all(double dt) {
    for (int d = 0; d < 2; ++d) {
      const auto& g = geo_[idx(d)];
      auto& ds = dirs_[idx(d)];
      for (auto& lt : ds.lanes) {
        for (auto& v : lt.vehicles) {
          const double old = v.position;
          const double old_speed = v.speed;
          move(v, g.speed_limit[v.link_slot], dt);
          if (v.next_approach < g.approaches.size()) {
            const Approach& ap = g.approaches[v.next_approach];
            if (old <= ap.stopbar && v.position > ap.stopbar) {
              const double crossed_at = time() + crossing_time(old_speed, v.accel, ap.stopbar - old);
              const auto& plan = corridor_.intersections[ap.intersection].signal_plan;
              if (phase_state(plan, crossed_at) == SignalState::Red) ++audit_.red_light_violations;
              ++v.next_approach;
              v.yellow_latch = -1;
              v.advisory.reset();
            }
          }
          while (v.link_slot + 1 < g.link_end.size() && v.position > g.link_end[v.link_slot]) {
            ++v.link_slot;
            v.params.desired_speed = v.speed_factor * g.speed_limit[v.link_slot];
          }
        }
      }
      for (auto& r : ds.ramps) {
        for (auto& v : r.vehicles) move(v, g.max_limit, dt);
      }
    }
  }

  // ---- (7) transitions ----

  void record_exit(const Vehicle& v, double exit_time) {
    ++exited_;
    const double delay = (exit_time - v.entry_time) - v.free_flow_time;
    audit_.min_delay = std::min(audit_.min_delay, delay);
    if (step_ + 1 > warmup_steps_ && step_ + 1 <= end_steps_) {
      ++served_;
      delay_sum_ += delay;
      const auto b = std::min(series_.size() - 1,
                              static_cast<std::size_t>((exit_time - cfg_.warmup) / kSeriesInterval));
      ++series_[b].served;
      series_delay_[b] += delay;
    }
  }

  void transitions(double now) {
    for (int d = 0; d < 2; ++d) {
      const auto& g = geo_[idx(d)];
      auto& ds = dirs_[idx(d)];
      for (int l = 0; l < g.lanes; ++l) {
        auto& vs = ds.lanes[idx(l)].vehicles;
        if (!std::is_sorted(vs.begin(), vs.end(), [](const Vehicle& a, const Vehicle& b) { return a.position > b.position; })) {
          std::stable_sort(vs.begin(), vs.end(), [](const Vehicle& a, const Vehicle& b) { return a.position > b.position; });
        }
        std::size_t keep = 0;
        for (std::size_t i = 0; i < vs.size(); ++i) {
          Vehicle& v = vs[i];
          if (v.position >= g.length) {
            record_exit(v, now);
            continue;
          }
          if (v.route.left_at) {
            auto& ramp = ds.ramps[idx(g.ramp[*v.route.left_at])];
            if (v.position >= ramp.diverge) {
              if (l == g.lanes - 1) {
                Vehicle rv = std::move(v);
                rv.position -= ramp.diverge;
                rv.params.desired_speed = ramp.speed;
                rv.advisory.reset();
                place(ramp.vehicles, std::move(rv));
                continue;
              }
              ++audit_.missed_diverges;
              v.route.left_at.reset();
              v.free_flow_time = (now - v.entry_time) + free_flow_time(v, v.position);
            }
          }
          if (keep != i) vs[keep] = std::move(v);
          ++keep;
        }
        vs.resize(keep);
      }
      for (auto& r : ds.ramps) {
        std::size_t keep = 0;
        for (std::size_t i = 0; i < r.vehicles.size(); ++i) {
          if (r.vehicles[i].position >= r.length) {
            record_exit(r.vehicles[i], now);
            continue;
          }
          if (keep != i) r.vehicles[keep] = std::move(r.vehicles[i]);
          ++keep;
        }
        r.vehicles.resize(keep);
      }
    }
  }

  // ---- (8) metrics and audits ----

  void check_gaps(const std::vector<Vehicle>& vs) {
    for (std::size_t i = 1; i < vs.size(); ++i) {
      const double gap = vs[i - 1].position - kVehicleLength - vs[i].position;
      audit_.min_gap = std::min(audit_.min_gap, gap);
      if (gap <= 0.0) ++audit_.collisions;
    }
  }

  void account(double t, double dt) {
    std::int64_t on_road = 0;
    for (int d = 0; d < 2; ++d) {
      const auto& g = geo_[idx(d)];
      auto& ds = dirs_[idx(d)];
      for (int l = 0; l < g.lanes; ++l) {
        const auto& vs = ds.lanes[idx(l)].vehicles;
        on_road += static_cast<std::int64_t>(vs.size());
        check_gaps(vs);
        if (l < g.reserved) {
          for (const auto& v : vs) {
            if (v.cls == VehicleClass::Conventional) ++audit_.reserved_intrusions;
          }
        }
      }
      for (const auto& r : ds.ramps) {
        on_road += static_cast<std::int64_t>(r.vehicles.size());
        check_gaps(r.vehicles);
      }
    }
    if (generated_ != on_road + queued_at_entry() + exited_) ++audit_.conservation_failures;
    if (step_ >= warmup_steps_ && step_ < end_steps_) {
      const double vs = static_cast<double>(on_road) * dt;
      tt_seconds_ += vs;
      const auto b = std::min(series_.size() - 1, static_cast<std::size_t>((t - cfg_.warmup) / kSeriesInterval));
      series_[b].total_travel_time += vs;
    }
  }

  ScenarioConfig cfg_;
  Corridor corridor_;
  int reserved_ = 0;
  DemandProfile demand_;
  EntryLayout layout_;
  RandomStreams rng_;
  std::array<Geometry, 2> geo_;
  std::array<DirectionTraffic, 2> dirs_;
  std::vector<SignalNow> signals_;
  std::vector<PendingChange> pending_;
  std::int64_t step_ = 0;
  std::int64_t control_every_ = 10;
  std::int64_t warmup_steps_ = 0;
  std::int64_t end_steps_ = 0;
  std::uint64_t next_id_ = 1;
  std::int64_t generated_ = 0;
  std::int64_t exited_ = 0;
  std::int64_t served_ = 0;
  double delay_sum_ = 0.0;
  double tt_seconds_ = 0.0;
  std::vector<IntervalMetrics> series_;
  std::vector<double> series_delay_;
  RunAudit audit_;
};

inline void step(World& world) { world.step(); }

inline SystemSnapshot collect(const World& world) { return world.snapshot(); }

inline RunResult run(const ScenarioConfig& config) {
  World w(config);
  while (!w.finished()) w.step();
  return RunResult{w.metrics(), w.audit(), w.reserved_count()};
}

}  // namespace arterial
