#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "arterial/error.hpp"
#include "arterial/signal.hpp"
#include "arterial/structured_text.hpp"

namespace arterial {

inline constexpr int kMaxLanes = 5;

// ---- file-level description ------------------------------------------------

struct JughandleSpec {
  double diverge_position = 0.0;  // meters upstream of the stop bar
  double ramp_length = 0.0;
  double ramp_speed = 11.2;       // m/s on the ramp
  std::string target;

  bool operator==(const JughandleSpec&) const = default;
};

struct IntersectionSpec {
  std::string id;
  double cycle = 0.0;
  double offset = 0.0;
  std::vector<PhaseInterval> intervals;
  std::vector<std::pair<std::string, double>> stopbars;  // direction name -> meters from link start
  std::optional<JughandleSpec> jughandle;
  bool left_turns = false;
  bool through_only = false;
  int line = 0;

  bool operator==(const IntersectionSpec& o) const {
    return id == o.id && cycle == o.cycle && offset == o.offset && intervals == o.intervals &&
           stopbars == o.stopbars && jughandle == o.jughandle && left_turns == o.left_turns &&
           through_only == o.through_only;
  }
};

struct LinkSpec {
  std::string id;
  std::string direction;
  double length = 0.0;
  int lanes = 0;
  std::vector<int> reserved;  // reserved lane indices
  double speed_limit = 0.0;
  std::string downstream;     // intersection id or "exit"
  int line = 0;

  bool operator==(const LinkSpec& o) const {
    return id == o.id && direction == o.direction && length == o.length && lanes == o.lanes &&
           reserved == o.reserved && speed_limit == o.speed_limit && downstream == o.downstream;
  }
};

struct CorridorSpec {
  std::string name;
  std::array<std::string, 2> directions;
  std::vector<LinkSpec> links;
  std::vector<IntersectionSpec> intersections;

  bool operator==(const CorridorSpec&) const = default;
};

// ---- validated model -------------------------------------------------------

struct Lane {
  int index = 0;  // 0 = inner (left-most)
  bool reserved = false;

  bool operator==(const Lane&) const = default;
};

struct JughandleRamp {
  double diverge_position = 0.0;
  double ramp_length = 0.0;
  double ramp_speed = 11.2;
  std::string target;

  bool operator==(const JughandleRamp&) const = default;
};

struct Intersection {
  std::string id;
  SignalPlan signal_plan;
  std::optional<JughandleRamp> jughandle;
  bool left_turns = false;
  bool through_only = false;
  std::array<std::optional<double>, 2> stopbar_positions;  // per direction, meters from approach link start

  bool has_left_demand() const { return left_turns && jughandle.has_value() && !through_only; }

  bool operator==(const Intersection&) const = default;
};

struct Link {
  std::string id;
  int direction = 0;
  double length = 0.0;
  std::vector<Lane> lanes;
  double speed_limit = 0.0;
  std::optional<std::size_t> downstream_intersection;
  double start = 0.0;  // offset of the link start along its direction chain

  int lane_count() const { return static_cast<int>(lanes.size()); }
  int reserved_count() const {
    return static_cast<int>(std::count_if(lanes.begin(), lanes.end(), [](const Lane& l) { return l.reserved; }));
  }
  double end() const { return start + length; }

  bool operator==(const Link&) const = default;
};

/// A signalized approach expressed in direction-chain coordinates.
struct Approach {
  std::size_t intersection = 0;
  std::size_t link = 0;
  double stopbar = 0.0;  // meters from the direction's entry
};

class Corridor {
 public:
  std::string name;
  std::array<std::string, 2> directions;
  std::vector<Link> links;
  std::vector<Intersection> intersections;

  /// Link indices of one direction, entry to exit.
  const std::vector<std::size_t>& chain(int direction) const { return chains_[static_cast<std::size_t>(direction)]; }
  double length(int direction) const {
    const auto& c = chain(direction);
    return links[c.back()].end();
  }
  const std::vector<Approach>& approaches(int direction) const {
    return approaches_[static_cast<std::size_t>(direction)];
  }

  /// Index of the chain link covering `position` (ends belong to the upstream link).
  std::size_t link_at(int direction, double position) const {
    const auto& c = chain(direction);
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (position <= links[c[k]].end()) return c[k];
    }
    return c.back();
  }

  int direction_index(std::string_view name_) const {
    for (int d = 0; d < 2; ++d) {
      if (directions[static_cast<std::size_t>(d)] == name_) return d;
    }
    return -1;
  }

  std::optional<std::size_t> intersection_index(std::string_view id) const {
    for (std::size_t i = 0; i < intersections.size(); ++i) {
      if (intersections[i].id == id) return i;
    }
    return std::nullopt;
  }

  int min_lane_count() const {
    int m = kMaxLanes;
    for (const auto& l : links) m = std::min(m, l.lane_count());
    return m;
  }

  bool operator==(const Corridor& o) const {
    return name == o.name && directions == o.directions && links == o.links && intersections == o.intersections;
  }

 private:
  friend Corridor build_corridor(const CorridorSpec& spec);
  std::array<std::vector<std::size_t>, 2> chains_;
  std::array<std::vector<Approach>, 2> approaches_;
};

// ---- parsing ---------------------------------------------------------------

namespace detail {

inline std::vector<PhaseInterval> parse_intervals(const Entry& e) {
  std::vector<PhaseInterval> out;
  for (const auto& item : split_list(e.value)) {
    const auto space = item.find_first_of(" \t:");
    if (space == std::string::npos) value_fail(e, "interval '" + item + "' must be '<state> <seconds>'");
    const std::string state = std::string(trim(std::string_view(item).substr(0, space)));
    const std::string secs = std::string(trim(std::string_view(item).substr(space + 1)));
    try {
      out.push_back(PhaseInterval{parse_signal_state(state), parse_double(e, secs)});
    } catch (const Error& err) {
      if (err.kind() == ErrorKind::Parse) throw;
      value_fail(e, err.what());
    }
  }
  if (out.empty()) value_fail(e, "no intervals");
  return out;
}

inline std::vector<std::pair<std::string, double>> parse_stopbars(const Entry& e) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& item : split_list(e.value)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) value_fail(e, "stop bar '" + item + "' must be '<direction>:<meters>'");
    out.emplace_back(std::string(trim(std::string_view(item).substr(0, colon))),
                     parse_double(e, trim(std::string_view(item).substr(colon + 1))));
  }
  return out;
}

}  // namespace detail

inline CorridorSpec corridor_spec_from_section(const Section& root) {
  expect_children(root, {"corridor", "link", "intersection"});
  expect_keys(root, {});
  const Section* head = root.child("corridor");
  if (!head) detail::parse_fail(1, "missing 'corridor { ... }' header section");
  expect_keys(*head, {"name", "directions"});
  CorridorSpec spec;
  spec.name = get_string(*head, "name");
  const auto dirs = split_list(get_string(*head, "directions"));
  if (dirs.size() != 2 || dirs[0] == dirs[1]) {
    detail::parse_fail(require(*head, "directions").line, "exactly two distinct directions are required");
  }
  spec.directions = {dirs[0], dirs[1]};

  for (const Section* s : root.children_named("link")) {
    expect_keys(*s, {"direction", "length", "lanes", "reserved", "speed_limit", "downstream"});
    LinkSpec l;
    l.id = s->label;
    l.line = s->line;
    if (l.id.empty()) detail::parse_fail(s->line, "link sections need a label");
    l.direction = get_string(*s, "direction");
    l.length = get_double(*s, "length");
    l.lanes = static_cast<int>(get_int(*s, "lanes"));
    if (const Entry* r = s->find("reserved")) {
      for (const auto& idx : split_list(r->value)) l.reserved.push_back(static_cast<int>(parse_int(*r, idx)));
    }
    l.speed_limit = get_double(*s, "speed_limit");
    l.downstream = get_string(*s, "downstream");
    spec.links.push_back(std::move(l));
  }
  for (const Section* s : root.children_named("intersection")) {
    expect_keys(*s, {"cycle", "offset", "intervals", "stopbar", "left_turns", "through_only"});
    expect_children(*s, {"jughandle"});
    IntersectionSpec x;
    x.id = s->label;
    x.line = s->line;
    if (x.id.empty()) detail::parse_fail(s->line, "intersection sections need a label");
    x.cycle = get_double(*s, "cycle");
    x.offset = get_double(*s, "offset", 0.0);
    x.intervals = detail::parse_intervals(require(*s, "intervals"));
    x.stopbars = detail::parse_stopbars(require(*s, "stopbar"));
    x.through_only = get_bool(*s, "through_only", false);
    if (const Section* j = s->child("jughandle")) {
      expect_keys(*j, {"diverge_position", "ramp_length", "ramp_speed", "target"});
      JughandleSpec js;
      js.diverge_position = get_double(*j, "diverge_position");
      js.ramp_length = get_double(*j, "ramp_length");
      js.ramp_speed = get_double(*j, "ramp_speed", js.ramp_speed);
      js.target = get_string(*j, "target", x.id + "-cross");
      x.jughandle = js;
    }
    x.left_turns = get_bool(*s, "left_turns", x.jughandle.has_value());
    spec.intersections.push_back(std::move(x));
  }
  return spec;
}

inline CorridorSpec parse_corridor_spec(std::string_view text) { return corridor_spec_from_section(parse_structured(text)); }

inline Section corridor_spec_to_section(const CorridorSpec& spec) {
  Section root;
  Section head;
  head.name = "corridor";
  head.add("name", spec.name).add("directions", spec.directions[0] + ", " + spec.directions[1]);
  root.children.push_back(std::move(head));
  for (const auto& l : spec.links) {
    Section s;
    s.name = "link";
    s.label = l.id;
    std::string reserved;
    for (std::size_t i = 0; i < l.reserved.size(); ++i) {
      reserved += (i ? ", " : "") + std::to_string(l.reserved[i]);
    }
    s.add("direction", l.direction)
        .add("length", format_number(l.length))
        .add("lanes", std::to_string(l.lanes))
        .add("reserved", reserved)
        .add("speed_limit", format_number(l.speed_limit))
        .add("downstream", l.downstream);
    root.children.push_back(std::move(s));
  }
  for (const auto& x : spec.intersections) {
    Section s;
    s.name = "intersection";
    s.label = x.id;
    std::string intervals;
    for (std::size_t i = 0; i < x.intervals.size(); ++i) {
      intervals += (i ? ", " : "") + std::string(to_string(x.intervals[i].state)) + " " +
                   format_number(x.intervals[i].duration);
    }
    std::string stopbars;
    for (std::size_t i = 0; i < x.stopbars.size(); ++i) {
      stopbars += (i ? ", " : "") + x.stopbars[i].first + ":" + format_number(x.stopbars[i].second);
    }
    s.add("cycle", format_number(x.cycle))
        .add("offset", format_number(x.offset))
        .add("intervals", intervals)
        .add("stopbar", stopbars)
        .add("left_turns", x.left_turns ? "true" : "false")
        .add("through_only", x.through_only ? "true" : "false");
    if (x.jughandle) {
      Section j;
      j.name = "jughandle";
      j.add("diverge_position", format_number(x.jughandle->diverge_position))
          .add("ramp_length", format_number(x.jughandle->ramp_length))
          .add("ramp_speed", format_number(x.jughandle->ramp_speed))
          .add("target", x.jughandle->target);
      s.children.push_back(std::move(j));
    }
    root.children.push_back(std::move(s));
  }
  return root;
}

inline std::string format_corridor_spec(const CorridorSpec& spec) {
  return format_structured(corridor_spec_to_section(spec));
}

// ---- construction ----------------------------------------------------------

namespace detail {

[[noreturn]] inline void geometry_fail(int line, const std::string& msg) {
  throw Error(ErrorKind::InvalidGeometry, (line ? "line " + std::to_string(line) + ": " : std::string()) + msg);
}

}  // namespace detail

inline Corridor build_corridor(const CorridorSpec& spec) {
  Corridor c;
  c.name = spec.name;
  c.directions = spec.directions;

  for (const auto& xs : spec.intersections) {
    if (c.intersection_index(xs.id)) detail::geometry_fail(xs.line, "duplicate intersection '" + xs.id + "'");
    Intersection x;
    x.id = xs.id;
    try {
      x.signal_plan = SignalPlan(xs.cycle, xs.offset, xs.intervals);
    } catch (const Error& e) {
      throw Error(ErrorKind::InvalidPlan, "line " + std::to_string(xs.line) + ": intersection '" + xs.id + "': " + e.what());
    }
    x.left_turns = xs.left_turns;
    x.through_only = xs.through_only;
    if (xs.jughandle) {
      const auto& j = *xs.jughandle;
      if (!(j.diverge_position > 0.0)) detail::geometry_fail(xs.line, "jughandle diverge_position must be positive");
      if (!(j.ramp_length > 0.0)) detail::geometry_fail(xs.line, "jughandle ramp_length must be positive");
      if (!(j.ramp_speed > 0.0)) detail::geometry_fail(xs.line, "jughandle ramp_speed must be positive");
      x.jughandle = JughandleRamp{j.diverge_position, j.ramp_length, j.ramp_speed, j.target};
    }
    if (x.left_turns && !x.jughandle && !x.through_only) {
      throw Error(ErrorKind::LeftTurnWithoutJughandle,
                  "line " + std::to_string(xs.line) + ": intersection '" + xs.id +
                      "' declares left-turn demand but has no jughandle and is not flagged through_only");
    }
    for (const auto& [dir, pos] : xs.stopbars) {
      const int d = c.direction_index(dir);
      if (d < 0) detail::geometry_fail(xs.line, "stop bar for unknown direction '" + dir + "'");
      x.stopbar_positions[static_cast<std::size_t>(d)] = pos;
    }
    c.intersections.push_back(std::move(x));
  }

  for (const auto& ls : spec.links) {
    Link l;
    l.id = ls.id;
    l.direction = c.direction_index(ls.direction);
    if (l.direction < 0) detail::geometry_fail(ls.line, "link '" + ls.id + "' has unknown direction '" + ls.direction + "'");
    if (!(ls.length > 0.0)) detail::geometry_fail(ls.line, "link '" + ls.id + "' must have positive length");
    if (ls.lanes < 1 || ls.lanes > kMaxLanes) {
      detail::geometry_fail(ls.line, "link '" + ls.id + "' lane count " + std::to_string(ls.lanes) + " outside 1.." +
                                         std::to_string(kMaxLanes));
    }
    if (!(ls.speed_limit > 0.0)) detail::geometry_fail(ls.line, "link '" + ls.id + "' must have positive speed_limit");
    l.length = ls.length;
    l.speed_limit = ls.speed_limit;
    for (int i = 0; i < ls.lanes; ++i) l.lanes.push_back(Lane{i, false});
    std::vector<int> reserved = ls.reserved;
    std::sort(reserved.begin(), reserved.end());
    for (std::size_t i = 0; i < reserved.size(); ++i) {
      if (reserved[i] != static_cast<int>(i)) {
        detail::geometry_fail(ls.line, "link '" + ls.id + "': reserved lanes must be a contiguous prefix starting at lane 0");
      }
    }
    if (static_cast<int>(reserved.size()) >= ls.lanes) {
      throw Error(ErrorKind::TooManyReservedLanes, "line " + std::to_string(ls.line) + ": link '" + ls.id +
                                                       "' must keep at least one general lane");
    }
    for (int r : reserved) l.lanes[static_cast<std::size_t>(r)].reserved = true;
    if (ls.downstream != "exit") {
      const auto xi = c.intersection_index(ls.downstream);
      if (!xi) detail::geometry_fail(ls.line, "link '" + ls.id + "' ends at unknown intersection '" + ls.downstream + "'");
      l.downstream_intersection = *xi;
    }
    c.links.push_back(std::move(l));
  }

  for (int d = 0; d < 2; ++d) {
    auto& chain = c.chains_[static_cast<std::size_t>(d)];
    for (std::size_t i = 0; i < c.links.size(); ++i) {
      if (c.links[i].direction == d) chain.push_back(i);
    }
    if (chain.empty()) detail::geometry_fail(0, "direction '" + c.directions[static_cast<std::size_t>(d)] + "' has no links");
    double start = 0.0;
    for (std::size_t k = 0; k < chain.size(); ++k) {
      Link& l = c.links[chain[k]];
      const bool last = (k + 1 == chain.size());
      const int line = spec.links[chain[k]].line;
      if (last && l.downstream_intersection) {
        detail::geometry_fail(line, "last link of direction '" + c.directions[static_cast<std::size_t>(d)] + "' must end at 'exit'");
      }
      if (!last && !l.downstream_intersection) {
        detail::geometry_fail(line, "link '" + l.id + "' ends at 'exit' but is not the last link of its direction");
      }
      l.start = start;
      start += l.length;
      if (l.downstream_intersection) {
        const Intersection& x = c.intersections[*l.downstream_intersection];
        const auto& bar = x.stopbar_positions[static_cast<std::size_t>(d)];
        if (!bar) detail::geometry_fail(line, "intersection '" + x.id + "' has no stop bar for the approach from link '" + l.id + "'");
        if (!(*bar > 0.0) || *bar > l.length) {
          detail::geometry_fail(spec.intersections[*l.downstream_intersection].line,
                                "stop bar of '" + x.id + "' must lie within (0, length] of link '" + l.id + "'");
        }
        if (x.jughandle && x.jughandle->diverge_position > *bar) {
          detail::geometry_fail(spec.intersections[*l.downstream_intersection].line,
                                "jughandle of '" + x.id + "' diverges before the start of link '" + l.id + "'");
        }
        c.approaches_[static_cast<std::size_t>(d)].push_back(Approach{*l.downstream_intersection, chain[k], l.start + *bar});
      }
    }
  }

  // Opposing chains visit the same intersections in reverse order.
  std::vector<std::size_t> fwd, rev;
  for (const auto& a : c.approaches_[0]) fwd.push_back(a.intersection);
  for (const auto& a : c.approaches_[1]) rev.push_back(a.intersection);
  std::reverse(rev.begin(), rev.end());
  if (fwd != rev) detail::geometry_fail(0, "the two direction chains must traverse the same intersections in opposite order");
  for (std::size_t i = 0; i < fwd.size(); ++i) {
    for (std::size_t j = i + 1; j < fwd.size(); ++j) {
      if (fwd[i] == fwd[j]) detail::geometry_fail(0, "intersection '" + c.intersections[fwd[i]].id + "' appears twice in a chain");
    }
  }
  if (fwd.size() != c.intersections.size()) detail::geometry_fail(0, "every intersection must be approached by the corridor");
  return c;
}

inline CorridorSpec to_spec(const Corridor& c) {
  CorridorSpec spec;
  spec.name = c.name;
  spec.directions = c.directions;
  for (const auto& x : c.intersections) {
    IntersectionSpec xs;
    xs.id = x.id;
    xs.cycle = x.signal_plan.cycle();
    xs.offset = x.signal_plan.offset();
    xs.intervals = x.signal_plan.intervals();
    for (int d = 0; d < 2; ++d) {
      if (const auto& bar = x.stopbar_positions[static_cast<std::size_t>(d)]) {
        xs.stopbars.emplace_back(c.directions[static_cast<std::size_t>(d)], *bar);
      }
    }
    if (x.jughandle) {
      xs.jughandle = JughandleSpec{x.jughandle->diverge_position, x.jughandle->ramp_length, x.jughandle->ramp_speed,
                                   x.jughandle->target};
    }
    xs.left_turns = x.left_turns;
    xs.through_only = x.through_only;
    spec.intersections.push_back(std::move(xs));
  }
  for (const auto& l : c.links) {
    LinkSpec ls;
    ls.id = l.id;
    ls.direction = c.directions[static_cast<std::size_t>(l.direction)];
    ls.length = l.length;
    ls.lanes = l.lane_count();
    for (const auto& lane : l.lanes) {
      if (lane.reserved) ls.reserved.push_back(lane.index);
    }
    ls.speed_limit = l.speed_limit;
    ls.downstream = l.downstream_intersection ? c.intersections[*l.downstream_intersection].id : "exit";
    spec.links.push_back(std::move(ls));
  }
  return spec;
}

inline std::string format_corridor(const Corridor& c) { return format_corridor_spec(to_spec(c)); }

inline Corridor parse_corridor(std::string_view text) { return build_corridor(parse_corridor_spec(text)); }

// ---- operations ------------------------------------------------------------

/// Marks lanes 0..count-1 reserved on every mainline link; count 0 clears.
inline Corridor set_reserved_lanes(Corridor corridor, int count) {
  if (count < 0) throw Error(ErrorKind::TooManyReservedLanes, "reserved lane count must be nonnegative");
  const int limit = corridor.min_lane_count() - 1;
  if (count > limit) {
    throw Error(ErrorKind::TooManyReservedLanes, "cannot reserve " + std::to_string(count) +
                                                     " lanes: the narrowest link has " +
                                                     std::to_string(corridor.min_lane_count()) + " lanes");
  }
  for (auto& link : corridor.links) {
    for (auto& lane : link.lanes) lane.reserved = lane.index < count;
  }
  return corridor;
}

struct SignalAhead {
  std::size_t intersection = 0;
  double distance = 0.0;
};

/// Nearest downstream signalized stop bar at or ahead of `position`.
inline std::optional<SignalAhead> next_signal(const Corridor& corridor, int direction, double position) {
  if (direction < 0 || direction > 1) throw Error(ErrorKind::OutOfExtent, "unknown direction index");
  if (position < 0.0 || position > corridor.length(direction)) {
    throw Error(ErrorKind::OutOfExtent, "position " + std::to_string(position) + " outside [0, " +
                                            std::to_string(corridor.length(direction)) + "]");
  }
  for (const auto& a : corridor.approaches(direction)) {
    if (a.stopbar >= position) return SignalAhead{a.intersection, a.stopbar - position};
  }
  return std::nullopt;
}

}  // namespace arterial
