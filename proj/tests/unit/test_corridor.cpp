#include <gtest/gtest.h>

#include "arterial/corridor.hpp"
#include "support.hpp"

using namespace arterial;

namespace {

ErrorKind kind_of(const std::string& text) {
  try {
    parse_corridor(text);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::IoFailure;
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  return s.replace(pos, from.size(), to);
}

}  // namespace

TEST(BuildCorridor, PrincetonHasTwoThreeLaneChains) {
  const auto c = support::princeton();
  EXPECT_NEAR(c->length(0), 8047.0, 1.0);
  EXPECT_NEAR(c->length(1), 8047.0, 1.0);
  EXPECT_EQ(c->intersections.size(), 8u);
  for (const auto& l : c->links) EXPECT_EQ(l.lane_count(), 3);
  for (const auto& x : c->intersections) EXPECT_TRUE(x.jughandle.has_value()) << x.id;
  EXPECT_NEAR(c->links.front().speed_limit, 24.59, 1e-9);
}

TEST(BuildCorridor, PrincetonSignalsRunTheStandardPlan) {
  for (const auto& x : support::princeton()->intersections) {
    EXPECT_DOUBLE_EQ(x.signal_plan.cycle(), 120.0);
    EXPECT_DOUBLE_EQ(x.signal_plan.green_length(), 55.0);
  }
}

TEST(BuildCorridor, WoodbridgeIsAsymmetric) {
  const auto c = support::woodbridge();
  EXPECT_NEAR(c->length(0), 6437.0, 1.0);
  EXPECT_EQ(c->links[c->chain(0).front()].lane_count(), 4);
  EXPECT_EQ(c->links[c->chain(1).front()].lane_count(), 3);
  EXPECT_EQ(c->intersections.size(), 7u);
  int through_only = 0;
  for (const auto& x : c->intersections) {
    if (x.through_only) {
      ++through_only;
      EXPECT_FALSE(x.jughandle.has_value());
    }
  }
  EXPECT_EQ(through_only, 1);
}

TEST(BuildCorridor, LeftTurnsNeedAJughandle) {
  support::Straight s;
  std::string text = support::corridor_text(s);
  text = replace(text, "  stopbar = EB:500, WB:500\n", "  stopbar = EB:500, WB:500\n  left_turns = true\n");
  EXPECT_EQ(kind_of(text), ErrorKind::LeftTurnWithoutJughandle);
  const std::string flagged = replace(text, "left_turns = true\n", "left_turns = true\n  through_only = true\n");
  EXPECT_NO_THROW(parse_corridor(flagged));
}

TEST(BuildCorridor, GeometryErrors) {
  const std::string ok = support::corridor_text({});
  EXPECT_EQ(kind_of(replace(ok, "length = 500", "length = 0")), ErrorKind::InvalidGeometry);
  EXPECT_EQ(kind_of(replace(ok, "lanes = 3", "lanes = 6")), ErrorKind::InvalidGeometry);
  EXPECT_EQ(kind_of(replace(ok, "lanes = 3", "lanes = 0")), ErrorKind::InvalidGeometry);
  EXPECT_EQ(kind_of(replace(ok, "speed_limit = 20", "speed_limit = -1")), ErrorKind::InvalidGeometry);
  EXPECT_EQ(kind_of(replace(ok, "stopbar = EB:500", "stopbar = EB:600")), ErrorKind::InvalidGeometry);
  EXPECT_EQ(kind_of(replace(ok, "downstream = X0", "downstream = Q9")), ErrorKind::InvalidGeometry);
  EXPECT_EQ(kind_of(replace(ok, "intervals = green 30, yellow 3, red 27", "intervals = green 30, red 20")),
            ErrorKind::InvalidPlan);
}

TEST(BuildCorridor, ReservedLanesMustBeAnInnerPrefix) {
  support::Straight s;
  s.reserved = {1};
  EXPECT_EQ(kind_of(support::corridor_text(s)), ErrorKind::InvalidGeometry);
  s.reserved = {0, 1, 2};
  EXPECT_EQ(kind_of(support::corridor_text(s)), ErrorKind::TooManyReservedLanes);
  s.reserved = {1, 0};
  EXPECT_NO_THROW(parse_corridor(support::corridor_text(s)));
}

TEST(BuildCorridor, ParseErrorsCarryLineNumbers) {
  const std::string ok = support::corridor_text({});
  try {
    parse_corridor(replace(ok, "lanes = 3", "lanes = three"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("line 8"), std::string::npos) << e.what();
  }
  try {
    parse_corridor(replace(ok, "  lanes = 3\n", "  lanes = 3\n  colour = red\n"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
}

TEST(SetReservedLanes, ReservesInnerLanesEverywhere) {
  const Corridor c = set_reserved_lanes(*support::princeton(), 1);
  for (const auto& l : c.links) {
    EXPECT_TRUE(l.lanes[0].reserved);
    EXPECT_FALSE(l.lanes[1].reserved);
    EXPECT_FALSE(l.lanes[2].reserved);
  }
}

TEST(SetReservedLanes, ZeroClears) {
  const Corridor two = set_reserved_lanes(*support::princeton(), 2);
  const Corridor none = set_reserved_lanes(two, 0);
  for (const auto& l : none.links) EXPECT_EQ(l.reserved_count(), 0);
}

TEST(SetReservedLanes, MustLeaveAGeneralLane) {
  support::Straight s;
  s.lanes = 2;
  const auto c = support::straight(s);
  try {
    set_reserved_lanes(*c, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooManyReservedLanes);
  }
  EXPECT_NO_THROW(set_reserved_lanes(*c, 1));
}

TEST(SetReservedLanes, ContiguityForEveryCount) {
  for (int n = 0; n <= 2; ++n) {
    const Corridor c = set_reserved_lanes(*support::woodbridge(), n);
    for (const auto& l : c.links) {
      for (const auto& lane : l.lanes) EXPECT_EQ(lane.reserved, lane.index < n);
    }
  }
}

TEST(NextSignal, DistanceToTheNextStopBar) {
  support::Straight s;
  s.signals = 2;
  const auto c = support::straight(s);
  const auto a = next_signal(*c, 0, 400.0);
  ASSERT_TRUE(a);
  EXPECT_EQ(c->intersections[a->intersection].id, "X0");
  EXPECT_DOUBLE_EQ(a->distance, 100.0);
  const auto at_bar = next_signal(*c, 0, 500.0);
  ASSERT_TRUE(at_bar);
  EXPECT_EQ(c->intersections[at_bar->intersection].id, "X0");
  EXPECT_DOUBLE_EQ(at_bar->distance, 0.0);
  EXPECT_FALSE(next_signal(*c, 0, 1200.0).has_value());
}

TEST(NextSignal, WestboundMeetsSignalsInReverse) {
  support::Straight s;
  s.signals = 2;
  const auto c = support::straight(s);
  const auto a = next_signal(*c, 1, 10.0);
  ASSERT_TRUE(a);
  EXPECT_EQ(c->intersections[a->intersection].id, "X1");
}

TEST(NextSignal, OutsideTheCorridor) {
  const auto c = support::straight({});
  EXPECT_THROW(next_signal(*c, 0, -1.0), Error);
  EXPECT_THROW(next_signal(*c, 0, 1000.5), Error);
  try {
    next_signal(*c, 0, 5000.0);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OutOfExtent);
  }
}

TEST(NextSignal, DistanceDecreasesBetweenSignals) {
  const auto c = support::princeton();
  double previous = std::numeric_limits<double>::infinity();
  for (double x = 0.0; x < c->approaches(0).front().stopbar; x += 3.7) {
    const auto a = next_signal(*c, 0, x);
    ASSERT_TRUE(a);
    ASSERT_LT(a->distance, previous);
    previous = a->distance;
  }
}

TEST(CorridorRoundTrip, SerializeAndRebuild) {
  for (const auto& c : {support::princeton(), support::woodbridge()}) {
    const Corridor again = parse_corridor(format_corridor(*c));
    EXPECT_TRUE(again == *c) << c->name;
  }
  const Corridor reserved = set_reserved_lanes(*support::princeton(), 2);
  EXPECT_TRUE(parse_corridor(format_corridor(reserved)) == reserved);
}
