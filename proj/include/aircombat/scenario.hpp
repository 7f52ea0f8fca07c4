#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aircombat/common.hpp"

namespace aircombat::sim {

inline constexpr double kMaxSpeed = 300.0;      // m/s
inline constexpr double kMaxAccel = 600.0;      // m/s^2
inline constexpr double kAccelGain = 500.0;     // m/s^2 per unit throttle
inline constexpr double kFriction = 50.0;       // m/s^2 when coasting
inline constexpr double kMaxTurn = kPi / 3.0;   // rad per control step
inline constexpr double kThrottleDeadZone = 0.15;
inline constexpr double kSteerDeadZone = 0.1;
inline constexpr double kVehicleLength = 50.0;  // m
inline constexpr int kLidarRays = 8;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

struct Rect {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  friend bool operator==(const Rect&, const Rect&) = default;

  bool strictly_contains(Vec2 p) const { return p.x > min_x && p.x < max_x && p.y > min_y && p.y < max_y; }
  bool contains(Vec2 p) const { return p.x >= min_x && p.x <= max_x && p.y >= min_y && p.y <= max_y; }
  Rect inflated(double margin) const { return {min_x - margin, min_y - margin, max_x + margin, max_y + margin}; }
};

struct RewardConstants {
  double goal_bonus = 10000.0;
  double wall_penalty = -100.0;
  double distance_coeff = 1e-5;
};

/// Dogfight reward table. Angles are radians here; files carry degrees.
struct DogfightConstants {
  double r_min = 100.0;
  double r_max = 2000.0;
  double aa_fire = deg2rad(60.0);
  double ata_fire = deg2rad(30.0);
  double aa_tail = deg2rad(150.0);
  double ata_tail = deg2rad(120.0);
  double g_hit = -100.0;  // wall contact
  double g_advantage = 1.0;
  double g_disadvantage = -1.0;
  double g_collision = -10.0;
};

struct Scenario {
  double width = 4000.0;
  double height = 4000.0;
  std::vector<Rect> obstacles;
  Vec2 goal{3000.0, 3000.0};
  double goal_radius = kVehicleLength;
  int max_steps = 1000;
  double dt = 0.1;
  double lidar_range = 1000.0;
  RewardConstants rewards;
  DogfightConstants dogfight;

  bool inside_arena(Vec2 p) const { return p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height; }

  bool in_obstacle(Vec2 p) const {
    for (const auto& o : obstacles)
      if (o.strictly_contains(p)) return true;
    return false;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid scenario: " + m); };
    if (!(width > 0.0 && height > 0.0)) fail("arena width and height must be positive");
    if (!(dt > 0.0)) fail("dt must be positive");
    if (max_steps < 1) fail("episode.max_steps must be at least 1");
    if (!(lidar_range > 0.0)) fail("lidar range must be positive");
    if (!(goal_radius > 0.0)) fail("goal radius must be positive");
    for (std::size_t i = 0; i < obstacles.size(); ++i) {
      const Rect& o = obstacles[i];
      const auto tag = "obstacle " + std::to_string(i);
      if (!(o.max_x > o.min_x && o.max_y > o.min_y)) fail(tag + " has non-positive area");
      if (!(o.min_x > 0.0 && o.min_y > 0.0 && o.max_x < width && o.max_y < height))
        fail(tag + " is not strictly inside the arena");
    }
    if (!inside_arena(goal)) fail("goal lies outside the arena");
    for (const auto& o : obstacles)
      if (o.contains(goal)) fail("goal lies inside an obstacle");
    const double wall_clearance = std::min({goal.x, width - goal.x, goal.y, height - goal.y});
    if (!(wall_clearance > goal_radius)) fail("goal must be farther than goal_radius from every wall");
    if (!(0.0 < dogfight.r_min && dogfight.r_min < dogfight.r_max)) fail("dogfight requires 0 < r_min < r_max");
  }
};

/// Scenario file schema (JSON). Distances in meters, angles in degrees:
///
///   {
///     "arena":     {"width": 4000, "height": 4000, "dt": 0.1},
///     "obstacles": [{"min_x": .., "min_y": .., "max_x": .., "max_y": ..}, ...],
///     "goal":      {"x": 3000, "y": 3000, "radius": 50},
///     "lidar":     {"range": 1000},
///     "rewards":   {"goal_bonus": 10000, "wall_penalty": -100, "distance_coeff": 1e-5},
///     "dogfight":  {"r_min": 100, "r_max": 2000, "aa_fire_deg": 60, "ata_fire_deg": 30,
///                   "aa_tail_deg": 150, "ata_tail_deg": 120, "g_hit": -100,
///                   "g_advantage": 1, "g_disadvantage": -1, "g_collision": -10},
///     "episode":   {"max_steps": 1000}
///   }
///
/// Every key is optional and falls back to the defaults above; unknown keys
/// are rejected.
inline Scenario scenario_from_json(const nlohmann::json& j) {
  using nlohmann::json;
  Scenario s;
  auto check_keys = [](const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError("scenario key '" + where + "' must be an object");
    for (const auto& [k, v] : obj.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || k == a;
      if (!ok) throw ConfigError("unknown scenario key '" + where + (where.empty() ? "" : ".") + k + "'");
    }
  };
  auto num = [](const json& obj, const char* key, double fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_number()) throw ConfigError("scenario key '" + where + "." + key + "' must be a number");
    return obj.at(key).get<double>();
  };

  check_keys(j, "", {"arena", "obstacles", "goal", "lidar", "rewards", "dogfight", "episode", "name"});
  if (j.contains("arena")) {
    const auto& a = j.at("arena");
    check_keys(a, "arena", {"width", "height", "dt"});
    s.width = num(a, "width", s.width, "arena");
    s.height = num(a, "height", s.height, "arena");
    s.dt = num(a, "dt", s.dt, "arena");
  }
  if (j.contains("obstacles")) {
    if (!j.at("obstacles").is_array()) throw ConfigError("scenario key 'obstacles' must be an array");
    for (const auto& o : j.at("obstacles")) {
      if (o.is_array() && o.size() == 4) {
        s.obstacles.push_back({o[0].get<double>(), o[1].get<double>(), o[2].get<double>(), o[3].get<double>()});
      } else {
        check_keys(o, "obstacles[]", {"min_x", "min_y", "max_x", "max_y"});
        for (const char* k : {"min_x", "min_y", "max_x", "max_y"})
          if (!o.contains(k)) throw ConfigError(std::string("scenario key 'obstacles[].") + k + "' is required");
        s.obstacles.push_back({num(o, "min_x", 0, "obstacles[]"), num(o, "min_y", 0, "obstacles[]"),
                               num(o, "max_x", 0, "obstacles[]"), num(o, "max_y", 0, "obstacles[]")});
      }
    }
  }
  if (j.contains("goal")) {
    const auto& g = j.at("goal");
    check_keys(g, "goal", {"x", "y", "radius"});
    s.goal = {num(g, "x", s.goal.x, "goal"), num(g, "y", s.goal.y, "goal")};
    s.goal_radius = num(g, "radius", s.goal_radius, "goal");
  }
  if (j.contains("lidar")) {
    check_keys(j.at("lidar"), "lidar", {"range"});
    s.lidar_range = num(j.at("lidar"), "range", s.lidar_range, "lidar");
  }
  if (j.contains("rewards")) {
    const auto& r = j.at("rewards");
    check_keys(r, "rewards", {"goal_bonus", "wall_penalty", "distance_coeff"});
    s.rewards.goal_bonus = num(r, "goal_bonus", s.rewards.goal_bonus, "rewards");
    s.rewards.wall_penalty = num(r, "wall_penalty", s.rewards.wall_penalty, "rewards");
    s.rewards.distance_coeff = num(r, "distance_coeff", s.rewards.distance_coeff, "rewards");
  }
  if (j.contains("dogfight")) {
    const auto& d = j.at("dogfight");
    check_keys(d, "dogfight", {"r_min", "r_max", "aa_fire_deg", "ata_fire_deg", "aa_tail_deg", "ata_tail_deg", "g_hit",
                               "g_advantage", "g_disadvantage", "g_collision"});
    auto& c = s.dogfight;
    c.r_min = num(d, "r_min", c.r_min, "dogfight");
    c.r_max = num(d, "r_max", c.r_max, "dogfight");
    c.aa_fire = deg2rad(num(d, "aa_fire_deg", rad2deg(c.aa_fire), "dogfight"));
    c.ata_fire = deg2rad(num(d, "ata_fire_deg", rad2deg(c.ata_fire), "dogfight"));
    c.aa_tail = deg2rad(num(d, "aa_tail_deg", rad2deg(c.aa_tail), "dogfight"));
    c.ata_tail = deg2rad(num(d, "ata_tail_deg", rad2deg(c.ata_tail), "dogfight"));
    c.g_hit = num(d, "g_hit", c.g_hit, "dogfight");
    c.g_advantage = num(d, "g_advantage", c.g_advantage, "dogfight");
    c.g_disadvantage = num(d, "g_disadvantage", c.g_disadvantage, "dogfight");
    c.g_collision = num(d, "g_collision", c.g_collision, "dogfight");
  }
  if (j.contains("episode")) {
    check_keys(j.at("episode"), "episode", {"max_steps"});
    const auto& e = j.at("episode");
    if (e.contains("max_steps")) {
      if (!e.at("max_steps").is_number_integer()) throw ConfigError("scenario key 'episode.max_steps' must be an integer");
      s.max_steps = e.at("max_steps").get<int>();
    }
  }
  s.validate();
  return s;
}

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["arena"] = {{"width", s.width}, {"height", s.height}, {"dt", s.dt}};
  j["obstacles"] = nlohmann::json::array();
  for (const auto& o : s.obstacles)
    j["obstacles"].push_back({{"min_x", o.min_x}, {"min_y", o.min_y}, {"max_x", o.max_x}, {"max_y", o.max_y}});
  j["goal"] = {{"x", s.goal.x}, {"y", s.goal.y}, {"radius", s.goal_radius}};
  j["lidar"] = {{"range", s.lidar_range}};
  j["rewards"] = {{"goal_bonus", s.rewards.goal_bonus},
                  {"wall_penalty", s.rewards.wall_penalty},
                  {"distance_coeff", s.rewards.distance_coeff}};
  const auto& d = s.dogfight;
  j["dogfight"] = {{"r_min", d.r_min},
                   {"r_max", d.r_max},
                   {"aa_fire_deg", rad2deg(d.aa_fire)},
                   {"ata_fire_deg", rad2deg(d.ata_fire)},
                   {"aa_tail_deg", rad2deg(d.aa_tail)},
                   {"ata_tail_deg", rad2deg(d.ata_tail)},
                   {"g_hit", d.g_hit},
                   {"g_advantage", d.g_advantage},
                   {"g_disadvantage", d.g_disadvantage},
                   {"g_collision", d.g_collision}};
  j["episode"] = {{"max_steps", s.max_steps}};
  return j;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse scenario file " + path.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

/// FNV-1a over the canonical JSON form; lets a client check that a server
/// runs the same scenario.
inline std::uint64_t scenario_hash(const Scenario& s) {
  const std::string text = scenario_to_json(s).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// The 4000 x 4000 m layout with rectangular obstacles used for the
/// obstacle-course runs.
inline Scenario obstacle_course() {
  Scenario s;
  s.obstacles = {
      {800.0, 800.0, 1400.0, 1200.0},
      {2200.0, 600.0, 2600.0, 1800.0},
      {600.0, 2400.0, 1600.0, 2800.0},
      {2000.0, 2200.0, 2400.0, 2600.0},
      {3200.0, 1400.0, 3600.0, 2000.0},
      {1400.0, 3300.0, 2600.0, 3600.0},
  };
  s.goal = {3000.0, 3000.0};
  s.validate();
  return s;
}

}  // namespace aircombat::sim
