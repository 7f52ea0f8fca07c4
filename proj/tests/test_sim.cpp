#include <gtest/gtest.h>

#include <cmath>

#include "aircombat/sim.hpp"
#include "support.hpp"

using namespace aircombat;
using namespace aircombat::sim;
using testing_support::dense_ray;
using testing_support::random_scene;

namespace {

VehicleState at(double x, double y, double heading, double speed = 0.0) { return {x, y, heading, speed, 0.0, 0.0}; }

}  // namespace

// ---------------------------------------------------------------------------
// Kinematics

TEST(Kinematics, ThrottleTwoTenthsGivesHundredMetersPerSecondSquared) {
  const Scenario s;
  const auto n = apply_action(at(0, 0, 0), {0.2, 0.0}, s);
  EXPECT_EQ(n.accel, 100.0);
  EXPECT_EQ(n.speed, 10.0);
}

TEST(Kinematics, CoastingFrictionOpposesMotion) {
  const Scenario s;
  const auto n = apply_action(at(0, 0, 0, 100.0), {0.0, 0.0}, s);
  EXPECT_EQ(n.accel, -50.0);
  EXPECT_EQ(n.speed, 95.0);
  const auto back = apply_action(at(0, 0, 0, -100.0), {0.1, 0.0}, s);
  EXPECT_EQ(back.accel, 50.0);
  EXPECT_EQ(back.speed, -95.0);
}

TEST(Kinematics, FrictionStopsAtZeroWithoutReversing) {
  const Scenario s;
  auto st = at(0, 0, 0, 12.0);
  for (int i = 0; i < 5; ++i) st = apply_action(st, {0.0, 0.0}, s);
  EXPECT_EQ(st.speed, 0.0);
  st = apply_action(st, {0.0, 0.0}, s);
  EXPECT_EQ(st.speed, 0.0);
  EXPECT_EQ(st.accel, 0.0);
}

TEST(Kinematics, ThrottleDeadZone) {
  const Scenario s;
  EXPECT_EQ(apply_action(at(0, 0, 0), {0.15, 0.0}, s).accel, 0.0);
  EXPECT_EQ(apply_action(at(0, 0, 0), {-0.15, 0.0}, s).accel, 0.0);
  EXPECT_GT(apply_action(at(0, 0, 0), {0.1500001, 0.0}, s).accel, 0.0);
  EXPECT_LT(apply_action(at(0, 0, 0), {-0.1500001, 0.0}, s).accel, 0.0);
}

TEST(Kinematics, SteerDeadZone) {
  const Scenario s;
  EXPECT_EQ(apply_action(at(0, 0, 0.5), {0.0, 0.1}, s).heading, 0.5);
  EXPECT_EQ(apply_action(at(0, 0, 0.5), {0.0, -0.1}, s).heading, 0.5);
  EXPECT_NE(apply_action(at(0, 0, 0.5), {0.0, 0.1000001}, s).heading, 0.5);
}

TEST(Kinematics, FullSteerTurnsSixtyDegreesRight) {
  const Scenario s;
  const auto n = apply_action(at(0, 0, 0), {0.0, 1.0}, s);
  EXPECT_EQ(n.heading, -kPi / 3.0);
  EXPECT_EQ(n.last_turn, -kPi / 3.0);
  const auto half = apply_action(at(0, 0, 0), {0.0, -0.5}, s);
  EXPECT_DOUBLE_EQ(half.heading, kPi / 6.0);
}

TEST(Kinematics, SpeedAndAccelerationClamps) {
  const Scenario s;
  EXPECT_EQ(apply_action(at(0, 0, 0, 300.0), {1.0, 0.0}, s).speed, 300.0);
  EXPECT_EQ(apply_action(at(0, 0, 0, -300.0), {-1.0, 0.0}, s).speed, -300.0);
  EXPECT_EQ(apply_action(at(0, 0, 0), {2.0, 0.0}, s).accel, 600.0);
  EXPECT_EQ(apply_action(at(0, 0, 0), {-2.0, 0.0}, s).accel, -600.0);
}

TEST(Kinematics, PositionUsesUpdatedSpeedAndHeading) {
  const Scenario s;
  const auto n = apply_action(at(100, 100, 0, 100.0), {1.0, -1.0}, s);
  const double v = 150.0, h = kPi / 3.0;
  EXPECT_DOUBLE_EQ(n.x, 100.0 + v * std::cos(h) * 0.1);
  EXPECT_DOUBLE_EQ(n.y, 100.0 + v * std::sin(h) * 0.1);
}

TEST(Kinematics, NonFiniteActionRejected) {
  const Scenario s;
  EXPECT_THROW(apply_action(at(0, 0, 0), {std::nan(""), 0.0}, s), InputError);
}

TEST(KinematicsProperty, BoundsHoldUnderRandomActions) {
  const Scenario s;
  Rng rng(5);
  for (int run = 0; run < 50; ++run) {
    VehicleState st = at(0, 0, rng.uniform(-kPi, kPi), rng.uniform(-300, 300));
    for (int i = 0; i < 400; ++i) {
      st = apply_action(st, {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)}, s);
      ASSERT_LE(std::abs(st.speed), kMaxSpeed);
      ASSERT_LE(std::abs(st.accel), kMaxAccel);
      ASSERT_GT(st.heading, -kPi);
      ASSERT_LE(st.heading, kPi);
    }
  }
}

// ---------------------------------------------------------------------------
// LIDAR

TEST(Lidar, CenterOfEmptyArenaReadsFullRange) {
  const Scenario s;
  for (double r : lidar_scan(at(2000, 2000, 0.3), s)) EXPECT_EQ(r, 1000.0);
}

TEST(Lidar, RearRayHitsWestWall) {
  const Scenario s;
  const auto scan = lidar_scan(at(100, 2000, 0), s);
  EXPECT_EQ(scan[4], 100.0);
  EXPECT_NEAR(scan[4], dense_ray(s, {100, 2000}, kPi, 1000), 0.5);
}

TEST(Lidar, FrontRayAtBoundary) {
  const Scenario s;
  const double eps = 1e-3;
  EXPECT_NEAR(lidar_scan(at(eps, 2000, kPi), s)[0], eps, 1e-12);
}

TEST(Lidar, RayStopsAtObstacleFace) {
  Scenario s;
  s.obstacles = {{1000, 1000, 1200, 3000}};
  const auto scan = lidar_scan(at(500, 2000, 0), s);
  EXPECT_DOUBLE_EQ(scan[0], 500.0);
  EXPECT_DOUBLE_EQ(scan[1], std::min(1000.0, 500.0 * std::sqrt(2.0)));
}

TEST(Lidar, OutsideArenaIsGeometryError) {
  const Scenario s;
  EXPECT_THROW(lidar_scan(at(-1, 10, 0), s), GeometryError);
}

TEST(LidarProperty, AgreesWithDenseSamplingOracle) {
  Rng rng(77);
  for (int scene = 0; scene < 150; ++scene) {
    const Scenario s = random_scene(rng, static_cast<int>(rng.index(7)));
    Vec2 p;
    do p = {rng.uniform(0, s.width), rng.uniform(0, s.height)};
    while (s.in_obstacle(p));
    const double heading = rng.uniform(-kPi, kPi);
    const auto scan = lidar_scan(at(p.x, p.y, heading), s);
    for (int k = 0; k < kLidarRays; ++k)
      ASSERT_NEAR(scan[static_cast<std::size_t>(k)], dense_ray(s, p, heading + k * kPi / 4.0, s.lidar_range), 0.5)
          << "scene " << scene << " ray " << k;
  }
}

// ---------------------------------------------------------------------------
// Rewards

TEST(GoalReward, DistancePenaltyAtFiveKilometers) {
  const Scenario s;
  EXPECT_EQ(goal_reward({}, {0, 0}, {3000, 4000}, {}, s), -0.05);
}

TEST(GoalReward, GoalBonusAndWallPenalty) {
  const Scenario s;
  EXPECT_EQ(goal_reward({}, {3000, 3000}, {3000, 3000}, {Event::GoalReached}, s), 10000.0);
  EXPECT_EQ(goal_reward({}, {3000, 3000}, {3000, 3000}, {}, s), 0.0);
  EXPECT_DOUBLE_EQ(goal_reward({}, {0, 0}, {300, 400}, {Event::WallHit}, s), -100.0 - 1e-5 * 500.0);
}

TEST(GoalRewardProperty, TranslationInvariant) {
  const Scenario s;
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const Vec2 p{rng.uniform(0, 4000), rng.uniform(0, 4000)};
    const Vec2 g{rng.uniform(0, 4000), rng.uniform(0, 4000)};
    const Vec2 off{rng.uniform(-1000, 1000), rng.uniform(-1000, 1000)};
    const EventSet ev(static_cast<std::uint8_t>(rng.index(4)));
    EXPECT_NEAR(goal_reward({}, p, g, ev, s), goal_reward({}, p + off, g + off, ev, s), 1e-9);
  }
}

TEST(AspectAngles, HandGeometries) {
  auto astern = aa_ata(at(0, 0, 0), at(1000, 0, 0));
  EXPECT_NEAR(astern.aa, 0.0, 1e-12);
  EXPECT_NEAR(astern.ata, 0.0, 1e-12);
  auto head_on = aa_ata(at(0, 0, 0), at(1000, 0, kPi));
  EXPECT_NEAR(head_on.aa, kPi, 1e-12);
  EXPECT_NEAR(head_on.ata, 0.0, 1e-12);
  auto pursued = aa_ata(at(0, 0, 0), at(-1000, 0, 0));
  EXPECT_NEAR(pursued.aa, kPi, 1e-12);
  EXPECT_NEAR(pursued.ata, kPi, 1e-12);
  EXPECT_THROW(aa_ata(at(5, 5, 0), at(5, 5, 1)), GeometryError);
}

TEST(AspectAnglesProperty, RigidMotionInvariant) {
  Rng rng(10);
  for (int i = 0; i < 1000; ++i) {
    const auto a = at(rng.uniform(0, 4000), rng.uniform(0, 4000), rng.uniform(-kPi, kPi));
    const auto b = at(rng.uniform(0, 4000), rng.uniform(0, 4000), rng.uniform(-kPi, kPi));
    const double rot = rng.uniform(-kPi, kPi);
    const Vec2 off{rng.uniform(-500, 500), rng.uniform(-500, 500)};
    auto move = [&](VehicleState v) {
      const double x = v.x * std::cos(rot) - v.y * std::sin(rot) + off.x;
      const double y = v.x * std::sin(rot) + v.y * std::cos(rot) + off.y;
      return at(x, y, normalize_angle(v.heading + rot));
    };
    const auto before = aa_ata(a, b);
    const auto after = aa_ata(move(a), move(b));
    EXPECT_NEAR(before.aa, after.aa, 1e-9);
    EXPECT_NEAR(before.ata, after.ata, 1e-9);
  }
}

TEST(DogfightReward, Branches) {
  const Scenario s;
  EXPECT_EQ(dogfight_reward(at(0, 0, 0), at(1000, 0, 0), s), 1.0);
  EXPECT_EQ(dogfight_reward(at(0, 0, 0), at(1000, 0, kPi), s), 0.0);
  EXPECT_EQ(dogfight_reward(at(0, 0, 0), at(-1000, 0, 0), s), -1.0);
  EXPECT_EQ(dogfight_reward(at(0, 0, 0), at(50, 0, 0), s), -10.0);
  EXPECT_EQ(dogfight_reward(at(50, 0, 0), at(0, 0, 0), s), -10.0);
  EXPECT_EQ(dogfight_reward(at(0, 0, 0), at(2500, 0, 0), s), 0.0);
}

TEST(DogfightRewardProperty, FiringBranchIsAntisymmetric) {
  const Scenario s;
  Rng rng(11);
  int firing = 0;
  for (int i = 0; i < 200000; ++i) {
    const auto a = at(rng.uniform(0, 4000), rng.uniform(0, 4000), rng.uniform(-kPi, kPi));
    const auto b = at(rng.uniform(0, 4000), rng.uniform(0, 4000), rng.uniform(-kPi, kPi));
    const double r = distance(a.position(), b.position());
    if (!(r > s.dogfight.r_min && r < s.dogfight.r_max)) continue;
    if (dogfight_reward(a, b, s) == 1.0) {
      ++firing;
      ASSERT_EQ(dogfight_reward(b, a, s), -1.0);
    }
  }
  EXPECT_GT(firing, 100);
}

// ---------------------------------------------------------------------------
// Goal world

TEST(GoalWorld, ResetIsDeterministic) {
  GoalWorld a(obstacle_course()), b(obstacle_course());
  EXPECT_EQ(a.reset(42), b.reset(42));
  EXPECT_EQ(a.state(), b.state());
  EXPECT_NE(a.reset(43), b.reset(42));
}

TEST(GoalWorld, ObservationShapeAndRange) {
  GoalWorld w(obstacle_course());
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto obs = w.reset(seed);
    ASSERT_EQ(obs.size(), kGoalObservationSize);
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_GE(obs[i], 0.0);
      EXPECT_LE(obs[i], 1.0);
    }
  }
}

TEST(GoalWorld, StartsAvoidInflatedObstacles) {
  const Scenario s = obstacle_course();
  GoalWorld w(s);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    w.reset(seed);
    const Vec2 p = w.state().position();
    for (const auto& o : s.obstacles) {
      const bool inside = p.x >= o.min_x - kVehicleLength && p.x <= o.max_x + kVehicleLength &&
                          p.y >= o.min_y - kVehicleLength && p.y <= o.max_y + kVehicleLength;
      ASSERT_FALSE(inside) << "seed " << seed;
    }
  }
}

TEST(GoalWorld, FullThrottleAddsFiftyPerStepUntilClamp) {
  GoalWorld w{Scenario{}};
  w.set_state(at(100, 2000, 0));
  double expected = 0.0;
  for (int i = 0; i < 10; ++i) {
    w.step({1.0, 0.0});
    expected = std::min(300.0, expected + 50.0);
    EXPECT_EQ(w.state().speed, expected);
  }
}

TEST(GoalWorld, ReachingTheGoalEndsTheEpisode) {
  const Scenario s;
  GoalWorld w(s);
  w.set_state(at(s.goal.x - 10.0, s.goal.y, 0));
  const auto r = w.step({0.0, 0.0});
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.events.has(Event::GoalReached));
  EXPECT_DOUBLE_EQ(r.reward, 10000.0 - 1e-5 * 10.0);
  EXPECT_THROW(w.step({0.0, 0.0}), UsageError);
}

TEST(GoalWorld, WallContactStopsInsideWithPenalty) {
  const Scenario s;
  GoalWorld w(s);
  w.set_state(at(20, 2000, kPi, 300.0));
  const auto r = w.step({1.0, 0.0});
  EXPECT_TRUE(r.events.has(Event::WallHit));
  EXPECT_FALSE(r.done);
  EXPECT_EQ(w.state().speed, 0.0);
  EXPECT_TRUE(s.inside_arena(w.state().position()));
  EXPECT_NEAR(r.reward, -100.0 - 1e-5 * distance(w.state().position(), s.goal), 1e-12);
}

TEST(GoalWorld, TimeoutAfterMaxSteps) {
  Scenario s;
  s.max_steps = 5;
  GoalWorld w(s);
  w.reset(1);
  StepResult r;
  for (int i = 0; i < 5; ++i) r = w.step({0.0, 0.0});
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.events.has(Event::Timeout));
}

TEST(GoalWorld, StepBeforeResetIsUsageError) {
  GoalWorld w{Scenario{}};
  EXPECT_THROW(w.step({0, 0}), UsageError);
}

TEST(GoalWorldProperty, NeverLeavesArenaOrEntersObstacle) {
  const Scenario s = obstacle_course();
  GoalWorld w(s);
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    w.reset(seed);
    while (!w.done()) {
      const double throttle = rng.uniform() < 0.8 ? 1.0 : rng.uniform(-1, 1);
      w.step({throttle, rng.uniform(-1, 1)});
      ASSERT_TRUE(s.inside_arena(w.state().position()));
      ASSERT_FALSE(s.in_obstacle(w.state().position()));
    }
  }
}

TEST(GoalWorldProperty, BitReproducible) {
  auto run = [](std::uint64_t seed) {
    GoalWorld w(obstacle_course());
    Rng rng(seed + 1);
    std::vector<double> trace;
    auto obs = w.reset(seed);
    trace.insert(trace.end(), obs.begin(), obs.end());
    while (!w.done()) {
      auto r = w.step({rng.uniform(-1, 1), rng.uniform(-1, 1)});
      trace.insert(trace.end(), r.observation.begin(), r.observation.end());
      trace.push_back(r.reward);
    }
    return trace;
  };
  EXPECT_EQ(run(12), run(12));
}

// ---------------------------------------------------------------------------
// Dogfight world

TEST(DogfightWorld, AsternPursuitRewardsPlusMinusOne) {
  DogfightWorld w{Scenario{}};
  w.set_states(at(1000, 2000, 0), at(1500, 2000, 0));
  const auto r = w.step({0, 0}, {0, 0});
  EXPECT_EQ(r[0].reward, 1.0);
  EXPECT_EQ(r[1].reward, -1.0);
  EXPECT_FALSE(r[0].done);
}

TEST(DogfightWorld, CollisionEndsEpisode) {
  DogfightWorld w{Scenario{}};
  w.set_states(at(1000, 2000, 0), at(1050, 2000, 0));
  const auto r = w.step({0, 0}, {0, 0});
  EXPECT_EQ(r[0].reward, -10.0);
  EXPECT_EQ(r[1].reward, -10.0);
  EXPECT_TRUE(r[0].done && r[1].done);
  EXPECT_TRUE(r[0].events.has(Event::Collision));
}

TEST(DogfightWorld, HeadOnIsNeutral) {
  DogfightWorld w{Scenario{}};
  w.set_states(at(1000, 2000, 0), at(1500, 2000, kPi));
  const auto r = w.step({0, 0}, {0, 0});
  EXPECT_EQ(r[0].reward, 0.0);
  EXPECT_EQ(r[1].reward, 0.0);
}

TEST(DogfightWorld, ObservationPerspective) {
  DogfightWorld w{Scenario{}};
  w.set_states(at(1000, 2000, 0), at(1500, 2000, 0.7));
  const auto o0 = w.observe(0);
  const auto o1 = w.observe(1);
  ASSERT_EQ(o0.size(), kDogfightObservationSize);
  EXPECT_EQ(o0[5], o1[0]);
  EXPECT_EQ(o0[6], o1[1]);
  EXPECT_EQ(o0[8], 0.0);
  w.reset(4);
  Rng rng(4);
  for (int i = 0; i < 300 && !w.done(); ++i) {
    w.step({rng.uniform(-1, 1), rng.uniform(-1, 1)}, {rng.uniform(-1, 1), rng.uniform(-1, 1)});
    for (int a = 0; a < 2; ++a)
      for (double v : w.observe(a)) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
      }
  }
}

TEST(DogfightWorld, ResetSeparatesVehicles) {
  DogfightWorld w{Scenario{}};
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    w.reset(seed);
    EXPECT_GT(distance(w.vehicle(0).position(), w.vehicle(1).position()), 200.0);
  }
}

// ---------------------------------------------------------------------------
// Scenario files

TEST(Scenario, JsonRoundTripAndUnknownKeys) {
  const Scenario s = obstacle_course();
  const Scenario back = scenario_from_json(scenario_to_json(s));
  EXPECT_EQ(back.obstacles, s.obstacles);
  EXPECT_EQ(scenario_hash(back), scenario_hash(s));
  auto j = scenario_to_json(s);
  j["arena"]["depth"] = 3;
  EXPECT_THROW(scenario_from_json(j), ConfigError);
}

TEST(Scenario, InvalidGeometryRejected) {
  Scenario s;
  s.obstacles = {{-5, 10, 20, 30}};
  EXPECT_THROW(s.validate(), ConfigError);
  Scenario g;
  g.goal = {10, 10};
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(Scenario, ShippedFilesLoad) {
  const std::string dir = std::string(AIRCOMBAT_SOURCE_DIR) + "/scenarios/";
  EXPECT_EQ(load_scenario(dir + "obstacle_course.json").obstacles, obstacle_course().obstacles);
  EXPECT_EQ(load_scenario(dir + "small_empty.json").width, 600.0);
  EXPECT_NO_THROW(load_scenario(dir + "empty.json"));
  EXPECT_NO_THROW(load_scenario(dir + "dogfight.json"));
}
