#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <functional>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aircombat/bc.hpp"
#include "aircombat/config.hpp"
#include "aircombat/net.hpp"
#include "aircombat/replay.hpp"
#include "aircombat/sim.hpp"
#include "aircombat/td3.hpp"

namespace aircombat::harness {

enum class Phase { Explore, Train, Validate };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Explore: return "explore";
    case Phase::Train: return "train";
    case Phase::Validate: return "validate";
  }
  return "?";
}

/// One line of the metrics log. For validation records `episode` is the
/// validation index, `episode_return` the mean return and `success_rate` the
/// fraction of successful episodes.
struct MetricsRecord {
  Phase phase = Phase::Train;
  std::size_t episode = 0;
  std::size_t steps = 0;        // steps in this episode (validation: episodes run)
  std::size_t total_steps = 0;  // environment steps taken in the run so far
  double episode_return = 0.0;
  std::optional<double> actor_loss;
  std::optional<std::pair<double, double>> critic_loss;
  bool success = false;
  std::optional<double> success_rate;
  std::optional<int> agent;
  double wall_clock = 0.0;

  json to_json() const {
    json j;
    j["phase"] = phase_name(phase);
    j["episode"] = episode;
    j["steps"] = steps;
    j["total_steps"] = total_steps;
    j["return"] = episode_return;
    j["actor_loss"] = actor_loss ? json(*actor_loss) : json(nullptr);
    j["critic_loss"] = critic_loss ? json::array({critic_loss->first, critic_loss->second}) : json(nullptr);
    j["success"] = success;
    if (success_rate) j["success_rate"] = *success_rate;
    if (agent) j["agent"] = *agent;
    j["wall_clock"] = wall_clock;
    return j;
  }
};

class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path) : out_(path, std::ios::trunc), start_(Clock::now()) {
    if (!out_) throw ConfigError("cannot write metrics file " + path.string());
  }

  void write(MetricsRecord r) {
    r.wall_clock = std::chrono::duration<double>(Clock::now() - start_).count();
    out_ << r.to_json().dump() << '\n';
    out_.flush();
    records_.push_back(std::move(r));
  }

  const std::vector<MetricsRecord>& records() const { return records_; }

 private:
  using Clock = std::chrono::steady_clock;
  std::ofstream out_;
  Clock::time_point start_;
  std::vector<MetricsRecord> records_;
};

// ---------------------------------------------------------------------------
// Environment pools: N goal-reaching environments stepped in lockstep, either
// in-process or over the wire.

struct EnvStep {
  sim::Observation observation;
  double reward = 0.0;
  bool done = false;
  sim::EventSet events;
  Vec2 achieved;
};

class EnvPool {
 public:
  virtual ~EnvPool() = default;
  virtual std::size_t size() const = 0;
  /// Resets the listed environments; returns (observation, position) per entry.
  virtual std::vector<std::pair<sim::Observation, Vec2>> reset(const std::vector<std::size_t>& which,
                                                               const std::vector<std::uint64_t>& seeds) = 0;
  /// Steps the listed environments with the matching actions.
  virtual std::vector<EnvStep> step(const std::vector<std::size_t>& which, const std::vector<sim::Action>& actions) = 0;
};

class LocalPool : public EnvPool {
 public:
  LocalPool(const sim::Scenario& s, std::size_t n) : worlds_(n, sim::GoalWorld(s)) {}
  std::size_t size() const override { return worlds_.size(); }

  std::vector<std::pair<sim::Observation, Vec2>> reset(const std::vector<std::size_t>& which,
                                                       const std::vector<std::uint64_t>& seeds) override {
    std::vector<std::pair<sim::Observation, Vec2>> out;
    for (std::size_t k = 0; k < which.size(); ++k) {
      auto obs = worlds_[which[k]].reset(seeds[k]);
      out.emplace_back(std::move(obs), worlds_[which[k]].state().position());
    }
    return out;
  }

  std::vector<EnvStep> step(const std::vector<std::size_t>& which, const std::vector<sim::Action>& actions) override {
    std::vector<EnvStep> out;
    for (std::size_t k = 0; k < which.size(); ++k) {
      auto r = worlds_[which[k]].step(actions[k]);
      out.push_back({std::move(r.observation), r.reward, r.done, r.events, r.achieved});
    }
    return out;
  }

 private:
  std::vector<sim::GoalWorld> worlds_;
};

class RemotePool : public EnvPool {
 public:
  RemotePool(const std::vector<std::string>& servers, const sim::Scenario& expected) {
    for (const auto& s : servers)
      envs_.push_back(std::make_unique<net::RemoteEnv>(net::Endpoint::parse(s), std::chrono::seconds(30),
                                                       sim::scenario_hash(expected)));
  }
  std::size_t size() const override { return envs_.size(); }

  std::vector<std::pair<sim::Observation, Vec2>> reset(const std::vector<std::size_t>& which,
                                                       const std::vector<std::uint64_t>& seeds) override {
    for (std::size_t k = 0; k < which.size(); ++k) envs_[which[k]]->send_reset(seeds[k]);
    std::vector<std::pair<sim::Observation, Vec2>> out;
    for (std::size_t i : which) out.push_back(envs_[i]->receive_reset());
    return out;
  }

  std::vector<EnvStep> step(const std::vector<std::size_t>& which, const std::vector<sim::Action>& actions) override {
    for (std::size_t k = 0; k < which.size(); ++k) envs_[which[k]]->send_step(actions[k]);
    std::vector<EnvStep> out;
    for (std::size_t i : which) {
      auto r = envs_[i]->receive_step();
      out.push_back({std::move(r.observation), r.reward, r.done, r.events, r.achieved});
    }
    return out;
  }

 private:
  std::vector<std::unique_ptr<net::RemoteEnv>> envs_;
};

// ---------------------------------------------------------------------------
// Validation

struct ValidationResult {
  double mean_return = 0.0;
  double success_rate = 0.0;
  std::vector<Vec2> first_trajectory;  // positions of the first episode, start included
};

/// Seed of validation episode k; disjoint in practice from training seeds,
/// which come from a different stream of mix_seed.
inline std::uint64_t validation_seed(std::uint64_t seed, std::size_t k) {
  return mix_seed(seed ^ 0x5a17da7e5eedULL, k);
}

using GoalPolicy = std::function<sim::Action(const sim::Observation&, Vec2 position)>;

inline ValidationResult validate_policy(const GoalPolicy& policy, const sim::Scenario& scenario,
                                        std::size_t n_episodes, std::uint64_t seed) {
  ValidationResult out;
  sim::GoalWorld world(scenario);
  double total = 0.0;
  std::size_t successes = 0;
  for (std::size_t e = 0; e < n_episodes; ++e) {
    sim::Observation obs = world.reset(validation_seed(seed, e));
    if (e == 0) out.first_trajectory.push_back(world.state().position());
    double ret = 0.0;
    bool reached = false;
    while (!world.done()) {
      auto r = world.step(policy(obs, world.state().position()));
      ret += r.reward;
      reached = reached || r.events.has(sim::Event::GoalReached);
      if (e == 0) out.first_trajectory.push_back(r.achieved);
      obs = std::move(r.observation);
    }
    total += ret;
    successes += reached ? 1 : 0;
  }
  out.mean_return = n_episodes ? total / static_cast<double>(n_episodes) : 0.0;
  out.success_rate = n_episodes ? static_cast<double>(successes) / static_cast<double>(n_episodes) : 0.0;
  return out;
}

/// Deterministic-mode evaluation; the agent is taken by const reference and
/// no buffer is touched.
inline ValidationResult validate(const td3::Td3Agent& agent, const sim::Scenario& scenario, std::size_t n_episodes,
                                 std::uint64_t seed) {
  const auto layout = td3::InputLayout::goal_reaching(scenario);
  const td3::Td3Config cfg;
  Rng unused(0);
  return validate_policy(
      [&](const sim::Observation& obs, Vec2 pos) {
        return td3::select_action(agent, layout.input(obs, scenario.goal, pos), td3::Mode::Deterministic, cfg, unused);
      },
      scenario, n_episodes, seed);
}

/// Trajectory file: {"scenario": {...}, "positions": [[x, y], ...]}.
inline void save_trajectory(const std::filesystem::path& path, const sim::Scenario& scenario,
                            const std::vector<Vec2>& positions) {
  json j;
  j["scenario"] = sim::scenario_to_json(scenario);
  j["positions"] = json::array();
  for (const auto& p : positions) j["positions"].push_back({p.x, p.y});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write trajectory file " + path.string());
  out << j.dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Goal-reaching training

struct TrainResult {
  td3::Td3Agent agent;
  std::vector<MetricsRecord> metrics;
  std::vector<ValidationResult> validations;
  std::size_t buffer_size = 0;
  replay::ReplayBuffer buffer;  // final replay contents
  std::size_t exploration_transitions = 0;
  std::int64_t exploration_updates = 0;
  std::optional<bc::BcReport> bc_report;
};

/// Seed of the k-th training-side episode (exploration and training share one
/// counter so no two episodes reuse a start).
inline std::uint64_t episode_seed(std::uint64_t env_seed, std::uint64_t k) { return mix_seed(env_seed, k); }

inline std::unique_ptr<EnvPool> make_pool(const RunConfig& config, const sim::Scenario& scenario) {
  if (!config.remote.servers.empty()) return std::make_unique<RemotePool>(config.remote.servers, scenario);
  return std::make_unique<LocalPool>(scenario, config.remote.count);
}

/// Runs the full schedule: optional behavioral-cloning warm start, random
/// exploration, then TD3 training with periodic validation. Writes
/// metrics.jsonl, checkpoints (latest.ckpt, best.ckpt, final.ckpt) and the first
/// validation trajectory of each validation point under config.output_dir.
inline TrainResult train(const RunConfig& config) {
  config.validate();
  namespace fs = std::filesystem;
  const fs::path out_dir = config.output_dir;
  std::error_code ec;
  fs::create_directories(out_dir / "episodes", ec);
  if (ec) throw ConfigError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const sim::Scenario scenario = config.episode_scenario();
  const auto layout = td3::InputLayout::goal_reaching(scenario);
  const auto reward_fn = replay::goal_reward_fn(scenario);
  const td3::Td3Config& cfg = config.td3;

  TrainResult result;
  result.agent = td3::Td3Agent::create(layout.input_dim(), 2, cfg.hidden_layers, config.seeds.agent);
  td3::Td3Agent& agent = result.agent;
  replay::ReplayBuffer buffer(config.buffer_capacity);
  Rng rng(mix_seed(config.seeds.agent, 0xabcdefULL));
  MetricsLog log(out_dir / "metrics.jsonl");

  if (config.bc.demo_episodes > 0) {
    const auto demos = bc::collect_demonstrations(scenario, config.bc.demo_episodes, mix_seed(config.seeds.env, 0xbcULL));
    if (config.bc.pretrain_epochs > 0) {
      bc::BcOptions opts{config.bc.pretrain_epochs, config.bc.lr, config.bc.batch_size, config.bc.holdout_fraction};
      result.bc_report = bc::bc_pretrain(agent.actor, demos.pairs, opts, rng);
      agent.actor_target = agent.actor;
    }
    if (config.bc.seed_buffer) bc::seed_buffer(buffer, demos.episodes, config.her_enabled, scenario);
  }

  auto pool = make_pool(config, scenario);
  const std::size_t n_envs = pool->size();
  std::uint64_t episodes_started = 0;
  std::size_t total_steps = 0;

  auto mean_or_null = [](double sum, std::size_t n) { return n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt; };

  // Runs `target` episodes across the pool. `choose` picks each action;
  // `learn` is called once per environment step.
  struct EpisodeState {
    sim::Observation obs;
    Vec2 pos;
    replay::Episode transitions;
    double ret = 0.0;
    bool reached = false;
    double actor_loss_sum = 0.0;
    std::size_t actor_loss_n = 0;
    double c1_sum = 0.0, c2_sum = 0.0;
    std::size_t critic_n = 0;
  };

  std::optional<double> best_return;
  std::size_t validation_index = 0;

  auto run_phase = [&](Phase phase, std::size_t target, auto&& choose, auto&& after_episode) {
    std::vector<EpisodeState> st(n_envs);
    std::vector<bool> active(n_envs, false);
    std::size_t started = 0;
    std::size_t finished = 0;
    auto start = [&](const std::vector<std::size_t>& which) {
      std::vector<std::uint64_t> seeds;
      for (std::size_t k = 0; k < which.size(); ++k) seeds.push_back(episode_seed(config.seeds.env, episodes_started++));
      auto obs = pool->reset(which, seeds);
      for (std::size_t k = 0; k < which.size(); ++k) {
        st[which[k]] = EpisodeState{};
        st[which[k]].obs = std::move(obs[k].first);
        st[which[k]].pos = obs[k].second;
        active[which[k]] = true;
      }
      started += which.size();
    };
    {
      std::vector<std::size_t> first;
      for (std::size_t i = 0; i < n_envs && started + first.size() < target; ++i) first.push_back(i);
      start(first);
    }
    bool stop = false;
    while (finished < target && !stop) {
      std::vector<std::size_t> which;
      std::vector<sim::Action> actions;
      for (std::size_t i = 0; i < n_envs; ++i) {
        if (!active[i]) continue;
        which.push_back(i);
        actions.push_back(choose(st[i]));
      }
      if (which.empty()) break;
      auto steps = pool->step(which, actions);
      std::vector<std::size_t> restart;
      for (std::size_t k = 0; k < which.size(); ++k) {
        const std::size_t i = which[k];
        auto& s = st[i];
        auto& r = steps[k];
        s.transitions.push_back({s.obs, scenario.goal, actions[k], r.reward, r.observation, r.done, r.events, s.pos, r.achieved});
        s.ret += r.reward;
        s.reached = s.reached || r.events.has(sim::Event::GoalReached);
        s.obs = std::move(r.observation);
        s.pos = r.achieved;
        ++total_steps;
        if (phase == Phase::Train) {
          const auto report = td3::train_step(agent, buffer, layout, cfg, rng);
          if (!report.skipped) {
            s.c1_sum += report.critic_losses.critic1;
            s.c2_sum += report.critic_losses.critic2;
            ++s.critic_n;
          }
          if (report.actor_loss) {
            s.actor_loss_sum += *report.actor_loss;
            ++s.actor_loss_n;
          }
        }
        if (r.done) {
          replay::store_episode(buffer, s.transitions, config.her_enabled, reward_fn, scenario.goal_radius);
          if (phase == Phase::Explore) result.exploration_transitions += s.transitions.size();
          MetricsRecord rec;
          rec.phase = phase;
          rec.episode = finished;
          rec.steps = s.transitions.size();
          rec.total_steps = total_steps;
          rec.episode_return = s.ret;
          rec.success = s.reached;
          rec.actor_loss = mean_or_null(s.actor_loss_sum, s.actor_loss_n);
          if (s.critic_n)
            rec.critic_loss = std::make_pair(s.c1_sum / static_cast<double>(s.critic_n),
                                             s.c2_sum / static_cast<double>(s.critic_n));
          log.write(rec);
          ++finished;
          active[i] = false;
          if (after_episode(finished)) stop = true;
          if (!stop && started < target) restart.push_back(i);
        }
      }
      if (!restart.empty()) start(restart);
    }
  };

  auto random_action = [&](EpisodeState&) {
    return sim::Action{rng.uniform(cfg.action_low, cfg.action_high), rng.uniform(cfg.action_low, cfg.action_high)};
  };
  const std::int64_t updates_before = agent.critic_updates + agent.actor_updates;
  run_phase(Phase::Explore, config.schedule.exploration_episodes, random_action, [](std::size_t) { return false; });
  result.exploration_updates = agent.critic_updates + agent.actor_updates - updates_before;

  auto explore_action = [&](EpisodeState& s) {
    return td3::select_action(agent, layout.input(s.obs, scenario.goal, s.pos), td3::Mode::Explore, cfg, rng);
  };
  auto on_train_episode = [&](std::size_t finished) {
    if (finished % config.schedule.validation_every != 0) return false;
    const auto v = validate(agent, scenario, config.schedule.validation_episodes, config.seeds.env);
    MetricsRecord rec;
    rec.phase = Phase::Validate;
    rec.episode = validation_index;
    rec.steps = config.schedule.validation_episodes;
    rec.total_steps = total_steps;
    rec.episode_return = v.mean_return;
    rec.success_rate = v.success_rate;
    rec.success = v.success_rate > 0.0;
    log.write(rec);
    json meta = {{"validation_index", validation_index}, {"mean_return", v.mean_return}, {"success_rate", v.success_rate}};
    agent.save(out_dir / "latest.ckpt", meta);
    if (!best_return || v.mean_return > *best_return) {
      best_return = v.mean_return;
      agent.save(out_dir / "best.ckpt", meta);
    }
    char name[64];
    std::snprintf(name, sizeof name, "validation_%04zu.json", validation_index);
    save_trajectory(out_dir / "episodes" / name, scenario, v.first_trajectory);
    result.validations.push_back(v);
    ++validation_index;
    return config.schedule.stop_success_rate > 0.0 && result.validations.size() >= 2 &&
           v.success_rate >= config.schedule.stop_success_rate &&
           v.mean_return > result.validations.front().mean_return;
  };

  try {
    run_phase(Phase::Train, config.schedule.total_episodes, explore_action, on_train_episode);
  } catch (const DivergenceError&) {
    agent.save(out_dir / "diverged_last_good.ckpt");
    throw;
  }
  agent.save(out_dir / "final.ckpt");
  result.metrics = log.records();
  result.buffer_size = buffer.size();
  result.buffer = std::move(buffer);
  return result;
}

// ---------------------------------------------------------------------------
// Two-agent dogfight training with one shared replay buffer

struct DogfightResult {
  std::array<td3::Td3Agent, 2> agents;
  std::vector<MetricsRecord> metrics;
  std::size_t buffer_size = 0;
  std::size_t world_steps = 0;
};

inline DogfightResult train_dogfight(const RunConfig& config) {
  config.validate();
  namespace fs = std::filesystem;
  const fs::path out_dir = config.output_dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const sim::Scenario scenario = config.episode_scenario();
  const auto layout = td3::InputLayout::dogfight();
  const td3::Td3Config& cfg = config.td3;
  DogfightResult result;
  for (int a = 0; a < 2; ++a)
    result.agents[static_cast<std::size_t>(a)] =
        td3::Td3Agent::create(layout.input_dim(), 2, cfg.hidden_layers, mix_seed(config.seeds.agent, 100 + a));
  replay::ReplayBuffer buffer(config.buffer_capacity);
  Rng rng(mix_seed(config.seeds.agent, 0xd06f16ULL));
  MetricsLog log(out_dir / "metrics.jsonl");
  sim::DogfightWorld world(scenario);
  std::uint64_t episode_counter = 0;
  std::size_t validation_index = 0;

  auto input_of = [&](const sim::Observation& obs) {
    nn::Matrix m(1, layout.input_dim());
    for (std::size_t i = 0; i < obs.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = obs[i];
    return m;
  };

  auto run_episode = [&](Phase phase, std::size_t index) {
    world.reset(episode_seed(config.seeds.env, episode_counter++));
    std::array<double, 2> ret{0.0, 0.0};
    std::array<double, 2> actor_sum{0.0, 0.0}, c1{0.0, 0.0}, c2{0.0, 0.0};
    std::array<std::size_t, 2> actor_n{0, 0}, critic_n{0, 0};
    std::size_t steps = 0;
    while (!world.done()) {
      std::array<sim::Observation, 2> obs{world.observe(0), world.observe(1)};
      std::array<sim::Action, 2> act{};
      for (std::size_t a = 0; a < 2; ++a) {
        if (phase == Phase::Explore)
          act[a] = {rng.uniform(cfg.action_low, cfg.action_high), rng.uniform(cfg.action_low, cfg.action_high)};
        else
          act[a] = td3::select_action(result.agents[a], input_of(obs[a]), td3::Mode::Explore, cfg, rng);
      }
      const Vec2 p0 = world.vehicle(0).position();
      const Vec2 p1 = world.vehicle(1).position();
      auto res = world.step(act[0], act[1]);
      ++steps;
      ++result.world_steps;
      const std::array<Vec2, 2> before{p0, p1};
      for (std::size_t a = 0; a < 2; ++a) {
        buffer.push({obs[a], Vec2{}, act[a], res[a].reward, res[a].observation, res[a].done, res[a].events, before[a],
                     res[a].achieved});
        ret[a] += res[a].reward;
      }
      if (phase == Phase::Train) {
        for (std::size_t a = 0; a < 2; ++a) {
          const auto report = td3::train_step(result.agents[a], buffer, layout, cfg, rng);
          if (!report.skipped) {
            c1[a] += report.critic_losses.critic1;
            c2[a] += report.critic_losses.critic2;
            ++critic_n[a];
          }
          if (report.actor_loss) {
            actor_sum[a] += *report.actor_loss;
            ++actor_n[a];
          }
        }
      }
    }
    for (std::size_t a = 0; a < 2; ++a) {
      MetricsRecord rec;
      rec.phase = phase;
      rec.episode = index;
      rec.steps = steps;
      rec.total_steps = result.world_steps;
      rec.episode_return = ret[a];
      rec.agent = static_cast<int>(a);
      if (actor_n[a]) rec.actor_loss = actor_sum[a] / static_cast<double>(actor_n[a]);
      if (critic_n[a])
        rec.critic_loss = std::make_pair(c1[a] / static_cast<double>(critic_n[a]), c2[a] / static_cast<double>(critic_n[a]));
      rec.success = ret[a] > ret[1 - a];
      log.write(rec);
    }
  };

  auto run_validation = [&]() {
    sim::DogfightWorld vworld(scenario);
    std::array<double, 2> total{0.0, 0.0};
    Rng unused(0);
    for (std::size_t e = 0; e < config.schedule.validation_episodes; ++e) {
      vworld.reset(validation_seed(config.seeds.env, e));
      while (!vworld.done()) {
        std::array<sim::Action, 2> act{};
        for (std::size_t a = 0; a < 2; ++a)
          act[a] = td3::select_action(result.agents[a], input_of(vworld.observe(static_cast<int>(a))),
                                      td3::Mode::Deterministic, cfg, unused);
        auto res = vworld.step(act[0], act[1]);
        total[0] += res[0].reward;
        total[1] += res[1].reward;
      }
    }
    for (std::size_t a = 0; a < 2; ++a) {
      MetricsRecord rec;
      rec.phase = Phase::Validate;
      rec.episode = validation_index;
      rec.steps = config.schedule.validation_episodes;
      rec.total_steps = result.world_steps;
      rec.episode_return = total[a] / static_cast<double>(config.schedule.validation_episodes);
      rec.agent = static_cast<int>(a);
      rec.success = total[a] > total[1 - a];
      log.write(rec);
      result.agents[a].save(out_dir / ("agent" + std::to_string(a) + ".ckpt"),
                            {{"validation_index", validation_index}, {"mean_return", rec.episode_return}});
    }
    ++validation_index;
  };

  for (std::size_t e = 0; e < config.schedule.exploration_episodes; ++e) run_episode(Phase::Explore, e);
  for (std::size_t e = 0; e < config.schedule.total_episodes; ++e) {
    run_episode(Phase::Train, e);
    if ((e + 1) % config.schedule.validation_every == 0) run_validation();
  }
  for (std::size_t a = 0; a < 2; ++a) result.agents[a].save(out_dir / ("agent" + std::to_string(a) + ".ckpt"));
  result.metrics = log.records();
  result.buffer_size = buffer.size();
  return result;
}

}  // namespace aircombat::harness
