#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aircombat/common.hpp"
#include "aircombat/scenario.hpp"

namespace aircombat::sim {

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // rad, counter-clockwise from +x
  double speed = 0.0;    // signed, m/s
  double accel = 0.0;    // commanded, m/s^2
  double last_turn = 0.0;

  Vec2 position() const { return {x, y}; }
  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

/// Normalized command: throttle and steer, each in [-1, 1]. Positive steer
/// turns right (clockwise).
struct Action {
  double throttle = 0.0;
  double steer = 0.0;
  friend bool operator==(const Action&, const Action&) = default;
};

enum class Event : std::uint8_t { WallHit = 1, GoalReached = 2, Timeout = 4, Collision = 8 };

class EventSet {
 public:
  constexpr EventSet() = default;
  constexpr explicit EventSet(std::uint8_t bits) : bits_(bits) {}
  constexpr EventSet(std::initializer_list<Event> events) {
    for (Event e : events) add(e);
  }
  constexpr bool has(Event e) const { return bits_ & static_cast<std::uint8_t>(e); }
  constexpr void add(Event e) { bits_ |= static_cast<std::uint8_t>(e); }
  constexpr void remove(Event e) { bits_ &= static_cast<std::uint8_t>(~static_cast<std::uint8_t>(e)); }
  constexpr std::uint8_t bits() const { return bits_; }
  constexpr bool empty() const { return bits_ == 0; }
  friend constexpr bool operator==(EventSet, EventSet) = default;

 private:
  std::uint8_t bits_ = 0;
};

inline std::vector<std::string> event_names(EventSet e) {
  std::vector<std::string> out;
  if (e.has(Event::WallHit)) out.emplace_back("wall_hit");
  if (e.has(Event::GoalReached)) out.emplace_back("goal_reached");
  if (e.has(Event::Timeout)) out.emplace_back("timeout");
  if (e.has(Event::Collision)) out.emplace_back("collision");
  return out;
}

inline EventSet events_from_names(const std::vector<std::string>& names) {
  EventSet e;
  for (const auto& n : names) {
    if (n == "wall_hit") e.add(Event::WallHit);
    else if (n == "goal_reached") e.add(Event::GoalReached);
    else if (n == "timeout") e.add(Event::Timeout);
    else if (n == "collision") e.add(Event::Collision);
    else throw InputError("unknown event name '" + n + "'");
  }
  return e;
}

using Observation = std::vector<double>;
inline constexpr std::size_t kGoalObservationSize = 14;
inline constexpr std::size_t kDogfightObservationSize = 9;
inline constexpr std::size_t kGoalDescriptorSize = 2;

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  EventSet events;
  Vec2 achieved;
};

// ---------------------------------------------------------------------------
// Kinematics

inline VehicleState apply_action(const VehicleState& state, Action action, const Scenario& scenario) {
  if (!is_finite(action.throttle) || !is_finite(action.steer))
    throw InputError("action components must be finite");
  const double dt = scenario.dt;
  VehicleState next = state;

  if (std::abs(action.throttle) > kThrottleDeadZone) {
    next.accel = std::clamp(kAccelGain * action.throttle, -kMaxAccel, kMaxAccel);
  } else if (state.speed != 0.0) {
    // Coasting: friction opposes motion and stops exactly at zero.
    const double magnitude = std::min(kFriction, std::abs(state.speed) / dt);
    next.accel = state.speed > 0.0 ? -magnitude : magnitude;
  } else {
    next.accel = 0.0;
  }
  const bool coasting = std::abs(action.throttle) <= kThrottleDeadZone;
  if (coasting && std::abs(state.speed) <= kFriction * dt) {
    next.speed = 0.0;
  } else {
    next.speed = std::clamp(state.speed + next.accel * dt, -kMaxSpeed, kMaxSpeed);
  }

  if (std::abs(action.steer) > kSteerDeadZone) {
    next.last_turn = -kMaxTurn * action.steer;
    next.heading = normalize_angle(state.heading + next.last_turn);
  } else {
    next.last_turn = 0.0;
  }
  next.x = state.x + next.speed * std::cos(next.heading) * dt;
  next.y = state.y + next.speed * std::sin(next.heading) * dt;
  return next;
}

// ---------------------------------------------------------------------------
// Geometry

/// Parametric entry of the ray/segment p + t*d into the open rectangle.
/// Returns (t_enter, normal of the entered face) when the path passes through
/// the interior with t_enter >= 0.
inline std::optional<std::pair<double, Vec2>> enter_rect(Vec2 p, Vec2 d, const Rect& r) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  Vec2 normal{};
  auto slab = [&](double origin, double dir, double lo, double hi, Vec2 lo_normal, Vec2 hi_normal) {
    if (dir == 0.0) return origin > lo && origin < hi;
    double t1 = (lo - origin) / dir;
    double t2 = (hi - origin) / dir;
    Vec2 n1 = lo_normal;
    if (t1 > t2) {
      std::swap(t1, t2);
      n1 = hi_normal;
    }
    if (t1 > t_near) {
      t_near = t1;
      normal = n1;
    }
    t_far = std::min(t_far, t2);
    return true;
  };
  if (!slab(p.x, d.x, r.min_x, r.max_x, {-1.0, 0.0}, {1.0, 0.0})) return std::nullopt;
  if (!slab(p.y, d.y, r.min_y, r.max_y, {0.0, -1.0}, {0.0, 1.0})) return std::nullopt;
  if (!(t_near < t_far) || t_far <= 0.0) return std::nullopt;
  if (t_near < 0.0) return std::make_pair(0.0, normal);  // origin already inside
  return std::make_pair(t_near, normal);
}

/// First contact of the motion segment from -> to with an arena wall or an
/// obstacle, as (fraction along the segment, inward normal).
struct Contact {
  double t = 0.0;
  Vec2 point;
  Vec2 normal;
};

inline std::optional<Contact> sweep(const Scenario& s, Vec2 from, Vec2 to) {
  const Vec2 d = to - from;
  std::optional<Contact> best;
  auto consider = [&](double t, Vec2 n) {
    if (t < 0.0 || t > 1.0) return;
    if (!best || t < best->t) best = Contact{t, from + t * d, n};
  };
  if (to.x < 0.0 && d.x != 0.0) consider((0.0 - from.x) / d.x, {1.0, 0.0});
  if (to.x > s.width && d.x != 0.0) consider((s.width - from.x) / d.x, {-1.0, 0.0});
  if (to.y < 0.0 && d.y != 0.0) consider((0.0 - from.y) / d.y, {0.0, 1.0});
  if (to.y > s.height && d.y != 0.0) consider((s.height - from.y) / d.y, {0.0, -1.0});
  for (const auto& o : s.obstacles) {
    if (auto hit = enter_rect(from, d, o); hit && hit->first < 1.0) consider(hit->first, hit->second);
  }
  if (best) {
    // The parametric contact can land a rounding error outside the arena.
    best->point.x = std::clamp(best->point.x, 0.0, s.width);
    best->point.y = std::clamp(best->point.y, 0.0, s.height);
  }
  return best;
}

/// Distance along a ray to the first wall or obstacle, capped at max_range.
inline double cast_ray(const Scenario& s, Vec2 origin, double angle, double max_range) {
  const Vec2 d{std::cos(angle), std::sin(angle)};
  double best = max_range;
  auto wall = [&](double origin_c, double dir_c, double limit) {
    if (dir_c > 0.0) best = std::min(best, (limit - origin_c) / dir_c);
    else if (dir_c < 0.0) best = std::min(best, (0.0 - origin_c) / dir_c);
  };
  wall(origin.x, d.x, s.width);
  wall(origin.y, d.y, s.height);
  for (const auto& o : s.obstacles)
    if (auto hit = enter_rect(origin, d, o)) best = std::min(best, hit->first);
  return std::clamp(best, 0.0, max_range);
}

inline std::array<double, kLidarRays> lidar_scan(const VehicleState& state, const Scenario& scenario) {
  if (!scenario.inside_arena(state.position()))
    throw GeometryError("lidar origin (" + std::to_string(state.x) + ", " + std::to_string(state.y) +
                        ") lies outside the arena");
  std::array<double, kLidarRays> out{};
  for (int k = 0; k < kLidarRays; ++k)
    out[static_cast<std::size_t>(k)] =
        cast_ray(scenario, state.position(), state.heading + k * (kPi / 4.0), scenario.lidar_range);
  return out;
}

// ---------------------------------------------------------------------------
// Rewards

inline double goal_reward(Vec2 /*prev_pos*/, Vec2 new_pos, Vec2 goal, EventSet events, const Scenario& scenario) {
  if (!is_finite(new_pos.x) || !is_finite(new_pos.y) || !is_finite(goal.x) || !is_finite(goal.y))
    throw InputError("goal_reward requires finite positions");
  double r = -scenario.rewards.distance_coeff * distance(new_pos, goal);
  if (events.has(Event::WallHit)) r += scenario.rewards.wall_penalty;
  if (events.has(Event::GoalReached)) r += scenario.rewards.goal_bonus;
  return r;
}

struct AspectAngles {
  double aa = 0.0;   // at the target, between its tail and the line to the attacker
  double ata = 0.0;  // at the attacker, between its nose and the line to the target
};

inline double unsigned_angle(Vec2 a, Vec2 b) {
  return std::atan2(std::abs(a.x * b.y - a.y * b.x), a.x * b.x + a.y * b.y);
}

inline AspectAngles aa_ata(const VehicleState& attacker, const VehicleState& target) {
  const Vec2 los = target.position() - attacker.position();
  if (los.x == 0.0 && los.y == 0.0) throw GeometryError("aspect angles are undefined for coincident vehicles");
  const Vec2 attacker_nose{std::cos(attacker.heading), std::sin(attacker.heading)};
  const Vec2 target_tail{-std::cos(target.heading), -std::sin(target.heading)};
  return {unsigned_angle(target_tail, -1.0 * los), unsigned_angle(attacker_nose, los)};
}

inline double dogfight_reward(const VehicleState& attacker, const VehicleState& target, const Scenario& scenario) {
  const auto& c = scenario.dogfight;
  const double range = distance(attacker.position(), target.position());
  const AspectAngles angles = aa_ata(attacker, target);
  if (range < c.r_min) return c.g_collision;
  if (range > c.r_min && range < c.r_max) {
    if (angles.aa < c.aa_fire && angles.ata < c.ata_fire) return c.g_advantage;
    if (angles.ata > c.ata_tail && angles.aa > c.aa_tail) return c.g_disadvantage;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Observations

/// Relative goal offset normalized by the arena extent.
inline std::array<double, kGoalDescriptorSize> goal_descriptor(Vec2 goal, Vec2 position, double width, double height) {
  return {(goal.x - position.x) / width, (goal.y - position.y) / height};
}

inline Observation observe_goal(const VehicleState& s, const Scenario& scenario) {
  Observation obs;
  obs.reserve(kGoalObservationSize);
  for (double d : lidar_scan(s, scenario)) obs.push_back(d / scenario.lidar_range);
  const double c = std::cos(s.heading);
  const double sn = std::sin(s.heading);
  obs.push_back(s.speed * c / kMaxSpeed);
  obs.push_back(s.speed * sn / kMaxSpeed);
  obs.push_back(s.accel * c / kMaxAccel);
  obs.push_back(s.accel * sn / kMaxAccel);
  obs.push_back(s.last_turn / kMaxTurn);
  obs.push_back(s.heading / kPi);
  return obs;
}

/// Moves a vehicle from `before` to its kinematic successor `after`, stopping
/// it against the first wall or obstacle the motion crosses. Returns true on
/// contact.
inline bool resolve_contact(const Scenario& s, const VehicleState& before, VehicleState& after) {
  const auto contact = sweep(s, before.position(), after.position());
  if (!contact) return false;
  Vec2 p = contact->point + kVehicleLength * contact->normal;
  p.x = std::clamp(p.x, 0.0, s.width);
  p.y = std::clamp(p.y, 0.0, s.height);
  if (s.in_obstacle(p) || sweep(s, contact->point, p)) p = contact->point;
  after.x = p.x;
  after.y = p.y;
  after.speed = 0.0;
  after.accel = 0.0;
  return true;
}

inline VehicleState sample_start(const Scenario& s, Rng& rng, const std::vector<Vec2>& keep_away,
                                 double keep_away_radius) {
  constexpr int kMaxTries = 10000;
  for (int i = 0; i < kMaxTries; ++i) {
    const Vec2 p{rng.uniform(0.0, s.width), rng.uniform(0.0, s.height)};
    const double heading = kPi - 2.0 * kPi * rng.uniform();  // (-pi, pi]
    bool ok = p.x > 0.0 && p.y > 0.0;
    for (const auto& o : s.obstacles) ok = ok && !o.inflated(kVehicleLength).contains(p);
    for (const auto& q : keep_away) ok = ok && distance(p, q) > keep_away_radius;
    if (ok) return VehicleState{p.x, p.y, heading, 0.0, 0.0, 0.0};
  }
  throw ConfigError("no feasible start position found after " + std::to_string(kMaxTries) + " samples");
}

// ---------------------------------------------------------------------------
// Goal-reaching world

class GoalWorld {
 public:
  explicit GoalWorld(Scenario scenario) : scenario_(std::move(scenario)) { scenario_.validate(); }

  Observation reset(std::uint64_t seed) {
    Rng rng(seed);
    state_ = sample_start(scenario_, rng, {scenario_.goal}, scenario_.goal_radius);
    steps_ = 0;
    done_ = false;
    started_ = true;
    return observe_goal(state_, scenario_);
  }

  StepResult step(Action action) {
    if (!started_) throw UsageError("step called before reset");
    if (done_) throw UsageError("step called on a finished episode");
    const VehicleState before = state_;
    VehicleState after = apply_action(before, action, scenario_);
    StepResult result;
    if (resolve_contact(scenario_, before, after)) result.events.add(Event::WallHit);
    state_ = after;
    ++steps_;
    if (distance(state_.position(), scenario_.goal) <= scenario_.goal_radius) {
      result.events.add(Event::GoalReached);
    } else if (steps_ >= scenario_.max_steps) {
      result.events.add(Event::Timeout);
    }
    result.done = result.events.has(Event::GoalReached) || result.events.has(Event::Timeout);
    done_ = result.done;
    result.achieved = state_.position();
    result.reward = goal_reward(before.position(), state_.position(), scenario_.goal, result.events, scenario_);
    result.observation = observe_goal(state_, scenario_);
    return result;
  }

  std::array<double, kGoalDescriptorSize> goal_descriptor() const {
    return sim::goal_descriptor(scenario_.goal, state_.position(), scenario_.width, scenario_.height);
  }

  const Scenario& scenario() const { return scenario_; }
  const VehicleState& state() const { return state_; }
  /// Places the vehicle directly; the episode restarts from this state.
  void set_state(const VehicleState& s) {
    state_ = s;
    steps_ = 0;
    done_ = false;
    started_ = true;
  }
  int steps() const { return steps_; }
  bool done() const { return done_; }

 private:
  Scenario scenario_;
  VehicleState state_;
  int steps_ = 0;
  bool done_ = false;
  bool started_ = false;
};

// ---------------------------------------------------------------------------
// Two-vehicle dogfight world

class DogfightWorld {
 public:
  explicit DogfightWorld(Scenario scenario) : scenario_(std::move(scenario)) { scenario_.validate(); }

  /// Places both vehicles at random, farther apart than twice r_min.
  void reset(std::uint64_t seed) {
    Rng rng(seed);
    vehicles_[0] = sample_start(scenario_, rng, {}, 0.0);
    vehicles_[1] = sample_start(scenario_, rng, {vehicles_[0].position()}, 2.0 * scenario_.dogfight.r_min);
    steps_ = 0;
    done_ = false;
    started_ = true;
  }

  void set_states(const VehicleState& a, const VehicleState& b) {
    vehicles_ = {a, b};
    steps_ = 0;
    done_ = false;
    started_ = true;
  }

  std::array<StepResult, 2> step(Action action0, Action action1) {
    if (!started_) throw UsageError("step called before reset");
    if (done_) throw UsageError("step called on a finished episode");
    const std::array<Action, 2> actions{action0, action1};
    std::array<VehicleState, 2> next{};
    std::array<StepResult, 2> results;
    for (std::size_t i = 0; i < 2; ++i) {
      next[i] = apply_action(vehicles_[i], actions[i], scenario_);
      if (resolve_contact(scenario_, vehicles_[i], next[i])) results[i].events.add(Event::WallHit);
    }
    vehicles_ = next;
    ++steps_;

    const double range = distance(vehicles_[0].position(), vehicles_[1].position());
    const bool collided = range < scenario_.dogfight.r_min;
    const bool timeout = steps_ >= scenario_.max_steps;
    for (std::size_t i = 0; i < 2; ++i) {
      auto& r = results[i];
      if (collided) {
        r.reward = scenario_.dogfight.g_collision;
        r.events.add(Event::Collision);
      } else {
        r.reward = dogfight_reward(vehicles_[i], vehicles_[1 - i], scenario_);
      }
      if (r.events.has(Event::WallHit)) r.reward += scenario_.dogfight.g_hit;
      if (timeout && !collided) r.events.add(Event::Timeout);
      r.done = collided || timeout;
      r.achieved = vehicles_[i].position();
      r.observation = observe(static_cast<int>(i));
    }
    done_ = collided || timeout;
    return results;
  }

  Observation observe(int agent_id) const {
    if (agent_id != 0 && agent_id != 1) throw InputError("agent_id must be 0 or 1");
    const VehicleState& me = vehicles_[static_cast<std::size_t>(agent_id)];
    const VehicleState& other = vehicles_[static_cast<std::size_t>(1 - agent_id)];
    const double w = scenario_.width;
    const double h = scenario_.height;
    double bearing = 0.0;
    if (me.position() != other.position())
      bearing = normalize_angle(std::atan2(other.y - me.y, other.x - me.x) - me.heading);
    return {me.x / w,
            me.y / h,
            me.heading / kPi,
            me.speed * std::cos(me.heading) / kMaxSpeed,
            me.speed * std::sin(me.heading) / kMaxSpeed,
            other.x / w,
            other.y / h,
            me.last_turn / kMaxTurn,
            bearing / kPi};
  }

  const Scenario& scenario() const { return scenario_; }
  const VehicleState& vehicle(int i) const { return vehicles_.at(static_cast<std::size_t>(i)); }
  int steps() const { return steps_; }
  bool done() const { return done_; }

 private:
  Scenario scenario_;
  std::array<VehicleState, 2> vehicles_{};
  int steps_ = 0;
  bool done_ = false;
  bool started_ = false;
};

}  // namespace aircombat::sim
