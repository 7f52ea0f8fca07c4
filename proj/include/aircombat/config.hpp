#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aircombat/bc.hpp"
#include "aircombat/common.hpp"
#include "aircombat/scenario.hpp"
#include "aircombat/td3.hpp"

namespace aircombat::harness {

using nlohmann::json;

struct Schedule {
  std::size_t exploration_episodes = 200;
  int steps_per_episode = 1000;
  std::size_t validation_every = 100;
  std::size_t validation_episodes = 30;
  std::size_t total_episodes = 1000;
  /// Stop once a validation reaches this success rate (after at least two
  /// validations); 0 disables early stopping.
  double stop_success_rate = 0.0;
};

struct BcSettings {
  std::size_t demo_episodes = 0;
  std::size_t pretrain_epochs = 0;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  double holdout_fraction = 0.2;
  bool seed_buffer = true;
};

struct Seeds {
  std::uint64_t env = 1;
  std::uint64_t agent = 2;
};

struct RemoteSettings {
  std::vector<std::string> servers;  // empty: local environments
  std::size_t count = 1;             // local environment count when servers is empty
};

struct RunConfig {
  sim::Scenario scenario;
  std::string scenario_path;
  td3::Td3Config td3;
  Schedule schedule;
  bool her_enabled = true;
  BcSettings bc;
  Seeds seeds;
  std::string output_dir = "run";
  RemoteSettings remote;
  std::size_t buffer_capacity = replay::ReplayBuffer::kDefaultCapacity;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid run config: " + m); };
    td3.validate();
    scenario.validate();
    if (schedule.steps_per_episode < 1) fail("schedule.steps_per_episode must be positive");
    if (schedule.validation_every < 1) fail("schedule.validation_every must be positive");
    if (schedule.validation_episodes < 1) fail("schedule.validation_episodes must be positive");
    if (schedule.total_episodes < 1) fail("schedule.total_episodes must be positive");
    if (schedule.validation_every > schedule.total_episodes)
      fail("schedule.validation_every must not exceed schedule.total_episodes");
    if (buffer_capacity < 1) fail("buffer_capacity must be positive");
    if (remote.servers.empty() && remote.count < 1) fail("remote.count must be positive");
    if (output_dir.empty()) fail("output_dir must be set");
  }

  /// Scenario with the episode length taken from the schedule.
  sim::Scenario episode_scenario() const {
    sim::Scenario s = scenario;
    s.max_steps = schedule.steps_per_episode;
    return s;
  }
};

namespace detail {

inline void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config key '" + where + "' must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    const json& v = obj.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("");
      if constexpr (std::is_unsigned_v<T>)
        if (v.get<std::int64_t>() < 0 && !v.is_number_unsigned()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    }
    out = v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + (where.empty() ? std::string(key) : where + "." + key) +
                      "' has the wrong type");
  }
}

}  // namespace detail

/// Run configuration file (JSON):
///
///   {
///     "scenario": "scenarios/empty.json" | { inline scenario object },
///     "td3": {"gamma", "rho", "actor_lr", "critic_lr", "target_noise_sigma", "target_noise_clip",
///             "policy_delay", "batch_size", "explore_sigma", "epsilon_random", "hidden_layers"},
///     "schedule": {"exploration_episodes", "steps_per_episode", "validation_every",
///                  "validation_episodes", "total_episodes", "stop_success_rate"},
///     "her": true,
///     "bc": {"demo_episodes", "pretrain_epochs", "lr", "batch_size", "holdout_fraction", "seed_buffer"},
///     "seeds": {"env", "agent"},
///     "output_dir": "run",
///     "remote": {"servers": ["host:port", ...] | "local", "count": 1},
///     "buffer_capacity": 1000000
///   }
///
/// A relative scenario path is resolved against base_dir.
inline RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  using detail::read;
  RunConfig c;
  detail::reject_unknown(j, "", {"scenario", "td3", "schedule", "her", "bc", "seeds", "output_dir", "remote",
                                 "buffer_capacity"});
  if (j.contains("scenario")) {
    const json& s = j.at("scenario");
    if (s.is_string()) {
      std::filesystem::path p = s.get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      c.scenario_path = p.string();
      c.scenario = sim::load_scenario(p);
    } else if (s.is_object()) {
      c.scenario = sim::scenario_from_json(s);
    } else {
      throw ConfigError("config key 'scenario' must be a path or an object");
    }
  }
  if (j.contains("td3")) {
    const json& t = j.at("td3");
    detail::reject_unknown(t, "td3", {"gamma", "rho", "actor_lr", "critic_lr", "target_noise_sigma",
                                      "target_noise_clip", "policy_delay", "batch_size", "explore_sigma",
                                      "epsilon_random", "hidden_layers"});
    read(t, "gamma", c.td3.gamma, "td3");
    read(t, "rho", c.td3.rho, "td3");
    read(t, "actor_lr", c.td3.actor_lr, "td3");
    read(t, "critic_lr", c.td3.critic_lr, "td3");
    read(t, "target_noise_sigma", c.td3.target_noise_sigma, "td3");
    read(t, "target_noise_clip", c.td3.target_noise_clip, "td3");
    read(t, "policy_delay", c.td3.policy_delay, "td3");
    read(t, "batch_size", c.td3.batch_size, "td3");
    read(t, "explore_sigma", c.td3.explore_sigma, "td3");
    read(t, "epsilon_random", c.td3.epsilon_random, "td3");
    if (t.contains("hidden_layers")) {
      try {
        c.td3.hidden_layers = t.at("hidden_layers").get<std::vector<int>>();
      } catch (const std::exception&) {
        throw ConfigError("config key 'td3.hidden_layers' must be a list of integers");
      }
    }
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    detail::reject_unknown(s, "schedule", {"exploration_episodes", "steps_per_episode", "validation_every",
                                           "validation_episodes", "total_episodes", "stop_success_rate"});
    read(s, "exploration_episodes", c.schedule.exploration_episodes, "schedule");
    read(s, "steps_per_episode", c.schedule.steps_per_episode, "schedule");
    read(s, "validation_every", c.schedule.validation_every, "schedule");
    read(s, "validation_episodes", c.schedule.validation_episodes, "schedule");
    read(s, "total_episodes", c.schedule.total_episodes, "schedule");
    read(s, "stop_success_rate", c.schedule.stop_success_rate, "schedule");
  }
  read(j, "her", c.her_enabled, "");
  if (j.contains("bc")) {
    const json& b = j.at("bc");
    detail::reject_unknown(b, "bc", {"demo_episodes", "pretrain_epochs", "lr", "batch_size", "holdout_fraction",
                                     "seed_buffer"});
    read(b, "demo_episodes", c.bc.demo_episodes, "bc");
    read(b, "pretrain_epochs", c.bc.pretrain_epochs, "bc");
    read(b, "lr", c.bc.lr, "bc");
    read(b, "batch_size", c.bc.batch_size, "bc");
    read(b, "holdout_fraction", c.bc.holdout_fraction, "bc");
    read(b, "seed_buffer", c.bc.seed_buffer, "bc");
  }
  if (j.contains("seeds")) {
    detail::reject_unknown(j.at("seeds"), "seeds", {"env", "agent"});
    read(j.at("seeds"), "env", c.seeds.env, "seeds");
    read(j.at("seeds"), "agent", c.seeds.agent, "seeds");
  }
  read(j, "output_dir", c.output_dir, "");
  if (j.contains("remote")) {
    const json& r = j.at("remote");
    detail::reject_unknown(r, "remote", {"servers", "count"});
    if (r.contains("servers")) {
      const json& s = r.at("servers");
      if (s.is_string() && s.get<std::string>() == "local") {
        c.remote.servers.clear();
      } else if (s.is_array()) {
        for (const auto& a : s) {
          if (!a.is_string()) throw ConfigError("config key 'remote.servers' must hold host:port strings");
          c.remote.servers.push_back(a.get<std::string>());
        }
      } else {
        throw ConfigError("config key 'remote.servers' must be \"local\" or a list of host:port strings");
      }
    }
    read(r, "count", c.remote.count, "remote");
  }
  read(j, "buffer_capacity", c.buffer_capacity, "");
  c.validate();
  return c;
}

inline json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config file " + path.string() + ": " + e.what());
  }
}

/// Applies "a.b.c=value" overrides; value is parsed as JSON and falls back to
/// a plain string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  json j = load_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j, path.parent_path());
}

}  // namespace aircombat::harness
