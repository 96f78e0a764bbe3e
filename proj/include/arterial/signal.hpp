#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "arterial/error.hpp"

namespace arterial {

enum class SignalState { Green, Yellow, Red };

inline const char* to_string(SignalState s) {
  switch (s) {
    case SignalState::Green: return "G";
    case SignalState::Yellow: return "Y";
    case SignalState::Red: return "R";
  }
  return "?";
}

inline SignalState parse_signal_state(std::string_view s) {
  if (s == "G" || s == "green" || s == "Green") return SignalState::Green;
  if (s == "Y" || s == "yellow" || s == "Yellow") return SignalState::Yellow;
  if (s == "R" || s == "red" || s == "Red") return SignalState::Red;
  throw Error(ErrorKind::InvalidPlan, "unknown signal state '" + std::string(s) + "'");
}

struct PhaseInterval {
  SignalState state = SignalState::Red;
  double duration = 0.0;

  bool operator==(const PhaseInterval&) const = default;
};

/// Half-open time interval [start, end) of mainline green, in absolute seconds.
struct GreenWindow {
  double start = 0.0;
  double end = 0.0;
};

/// Fixed-time plan for the mainline approach of one intersection. Local cycle
/// time is (t - offset) mod cycle; the intervals tile the cycle in order.
class SignalPlan {
 public:
  SignalPlan() = default;

  SignalPlan(double cycle, double offset, std::vector<PhaseInterval> intervals)
      : cycle_(cycle), offset_(offset), intervals_(std::move(intervals)) {
    validate();
  }

  double cycle() const noexcept { return cycle_; }
  double offset() const noexcept { return offset_; }
  const std::vector<PhaseInterval>& intervals() const noexcept { return intervals_; }

  /// Local time at which the green run begins, and its length.
  double green_begin() const noexcept { return green_begin_; }
  double green_length() const noexcept { return green_length_; }
  bool always_green() const noexcept { return green_length_ >= cycle_; }

  double local_time(double t) const noexcept {
    const double shifted = t - offset_;
    double local = shifted - std::floor(shifted / cycle_) * cycle_;
    if (local < 0.0) local += cycle_;
    if (local >= cycle_) local -= cycle_;
    return local;
  }

  bool operator==(const SignalPlan& o) const {
    return cycle_ == o.cycle_ && offset_ == o.offset_ && intervals_ == o.intervals_;
  }

 private:
  void validate() {
    if (!(cycle_ > 0.0)) throw Error(ErrorKind::InvalidPlan, "cycle must be positive");
    if (intervals_.empty()) throw Error(ErrorKind::InvalidPlan, "plan has no intervals");
    double sum = 0.0;
    for (const auto& iv : intervals_) {
      if (!(iv.duration > 0.0)) throw Error(ErrorKind::InvalidPlan, "interval durations must be positive");
      sum += iv.duration;
    }
    if (std::abs(sum - cycle_) > 1e-9 * std::max(1.0, cycle_)) {
      throw Error(ErrorKind::InvalidPlan, "interval durations sum to " + std::to_string(sum) +
                                              " but cycle is " + std::to_string(cycle_));
    }
    // Exactly one contiguous (cyclic) green run.
    const std::size_t n = intervals_.size();
    int runs = 0;
    bool all_green = true;
    for (std::size_t i = 0; i < n; ++i) {
      const bool g = intervals_[i].state == SignalState::Green;
      const bool prev_g = intervals_[(i + n - 1) % n].state == SignalState::Green;
      if (!g) all_green = false;
      if (g && !prev_g) ++runs;
    }
    if (all_green) {
      green_begin_ = 0.0;
      green_length_ = cycle_;
      return;
    }
    if (runs != 1) {
      throw Error(ErrorKind::InvalidPlan, "plan must contain exactly one contiguous green interval, found " +
                                              std::to_string(runs));
    }
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool g = intervals_[i].state == SignalState::Green;
      const bool prev_g = intervals_[(i + n - 1) % n].state == SignalState::Green;
      if (g && !prev_g) {
        green_begin_ = t;
        double len = 0.0;
        for (std::size_t k = 0; k < n && intervals_[(i + k) % n].state == SignalState::Green; ++k) {
          len += intervals_[(i + k) % n].duration;
        }
        green_length_ = len;
      }
      t += intervals_[i].duration;
    }
  }

  double cycle_ = 1.0;
  double offset_ = 0.0;
  std::vector<PhaseInterval> intervals_{{SignalState::Green, 1.0}};
  double green_begin_ = 0.0;
  double green_length_ = 1.0;
};

inline SignalState phase_state(const SignalPlan& plan, double t) {
  const double local = plan.local_time(t);
  double acc = 0.0;
  for (const auto& iv : plan.intervals()) {
    acc += iv.duration;
    if (local < acc) return iv.state;
  }
  return plan.intervals().back().state;
}

/// Earliest green window with start >= t. If green at t the window starts at t.
/// A permanently green plan yields an unbounded window.
inline GreenWindow next_green_window(const SignalPlan& plan, double t) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (plan.always_green()) return {t, inf};
  const double cycle = plan.cycle();
  const double local = plan.local_time(t);
  double into = local - plan.green_begin();
  if (into < 0.0) into += cycle;
  if (into < plan.green_length()) return {t, t + (plan.green_length() - into)};
  const double wait = cycle - into;
  return {t + wait, t + wait + plan.green_length()};
}

/// Seconds since the current green run began; only meaningful while green.
inline double time_since_green_onset(const SignalPlan& plan, double t) {
  if (plan.always_green()) return std::numeric_limits<double>::infinity();
  double into = plan.local_time(t) - plan.green_begin();
  if (into < 0.0) into += plan.cycle();
  return into;
}

/// Mainline green share of the cycle (g/C).
inline double green_ratio(const SignalPlan& plan) { return plan.green_length() / plan.cycle(); }

}  // namespace arterial
