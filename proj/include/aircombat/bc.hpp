#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <vector>

#include "aircombat/common.hpp"
#include "aircombat/container.hpp"
#include "aircombat/nn.hpp"
#include "aircombat/replay.hpp"
#include "aircombat/sim.hpp"
#include "aircombat/td3.hpp"

namespace aircombat::bc {

using nn::Matrix;

/// Deceleration the expert plans its approach around, below full braking.
inline constexpr double kPlannedDecel = sim::kAccelGain / 2.0;
/// Speed error that maps to full throttle.
inline constexpr double kSpeedBand = 100.0;

/// Pure-pursuit controller: steer to null the bearing error and track a
/// target speed that falls off as sqrt(2 * decel * distance) near the goal.
/// Both outputs are continuous in the state.
inline sim::Action expert_action(const sim::VehicleState& state, Vec2 goal) {
  const double dx = goal.x - state.x;
  const double dy = goal.y - state.y;
  const double dist = std::hypot(dx, dy);
  const double bearing = dist > 0.0 ? normalize_angle(std::atan2(dy, dx) - state.heading) : 0.0;
  const double steer = std::clamp(-bearing / sim::kMaxTurn, -1.0, 1.0);
  const double target_speed = std::min(sim::kMaxSpeed, std::sqrt(2.0 * kPlannedDecel * dist));
  const double throttle = std::clamp((target_speed - state.speed) / kSpeedBand, -1.0, 1.0);
  return {throttle, steer};
}

struct DemoPair {
  std::vector<double> input;  // observation ++ goal descriptor
  sim::Action action;
};

struct Demonstrations {
  std::vector<replay::Episode> episodes;
  std::vector<DemoPair> pairs;
  std::size_t successes = 0;
};

/// Runs the expert for n_episodes; episode i is reset with mix_seed(seed, i).
inline Demonstrations collect_demonstrations(const sim::Scenario& scenario, std::size_t n_episodes,
                                             std::uint64_t seed) {
  Demonstrations demos;
  sim::GoalWorld world(scenario);
  const auto layout = td3::InputLayout::goal_reaching(scenario);
  for (std::size_t e = 0; e < n_episodes; ++e) {
    sim::Observation obs = world.reset(mix_seed(seed, e));
    replay::Episode episode;
    bool reached = false;
    while (!world.done()) {
      const Vec2 before = world.state().position();
      const sim::Action action = expert_action(world.state(), scenario.goal);
      const Matrix input = layout.input(obs, scenario.goal, before);
      demos.pairs.push_back({std::vector<double>(input.data(), input.data() + input.size()), action});
      sim::StepResult r = world.step(action);
      reached = reached || r.events.has(sim::Event::GoalReached);
      episode.push_back({obs, scenario.goal, action, r.reward, r.observation, r.done, r.events, before, r.achieved});
      obs = std::move(r.observation);
    }
    demos.successes += reached ? 1 : 0;
    demos.episodes.push_back(std::move(episode));
  }
  return demos;
}

struct BcOptions {
  std::size_t epochs = 50;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  double holdout_fraction = 0.2;
};

struct BcReport {
  std::vector<double> train_mse;    // per epoch, over the training split
  std::vector<double> holdout_mse;  // per epoch, empty when there is no holdout split
};

inline Matrix pair_inputs(const std::vector<DemoPair>& pairs, const std::vector<std::size_t>& idx) {
  Matrix m(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(pairs[idx.front()].input.size()));
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < pairs[idx[r]].input.size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = pairs[idx[r]].input[c];
  return m;
}

inline Matrix pair_actions(const std::vector<DemoPair>& pairs, const std::vector<std::size_t>& idx) {
  Matrix m(static_cast<Eigen::Index>(idx.size()), 2);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    m(static_cast<Eigen::Index>(r), 0) = pairs[idx[r]].action.throttle;
    m(static_cast<Eigen::Index>(r), 1) = pairs[idx[r]].action.steer;
  }
  return m;
}

/// Mean over rows of the squared action error (summed over action components).
inline double bc_mse(const nn::Mlp& actor, const Matrix& inputs, const Matrix& targets) {
  const Matrix diff = nn::predict(actor, inputs) - targets;
  return diff.squaredNorm() / static_cast<double>(diff.rows());
}

inline td3::LossGradient bc_loss_gradient(const nn::Mlp& actor, const Matrix& inputs, const Matrix& targets) {
  const auto cache = nn::forward(actor, inputs);
  const Matrix diff = cache.output() - targets;
  td3::LossGradient out;
  out.loss = diff.squaredNorm() / static_cast<double>(diff.rows());
  out.grads = nn::backward(actor, cache, 2.0 * diff).params;
  return out;
}

/// Supervised regression of expert actions with Adam over shuffled minibatches.
inline BcReport bc_pretrain(nn::Mlp& actor, const std::vector<DemoPair>& pairs, const BcOptions& opts, Rng& rng) {
  if (pairs.size() < 10) throw InsufficientDataError("behavioral cloning needs at least 10 pairs");
  if (!(opts.holdout_fraction >= 0.0 && opts.holdout_fraction < 1.0))
    throw ConfigError("holdout_fraction must lie in [0, 1)");
  for (const auto& p : pairs)
    if (static_cast<int>(p.input.size()) != actor.input_size())
      throw InputError("demonstration input width does not match the actor");

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const auto n_holdout = static_cast<std::size_t>(std::floor(opts.holdout_fraction * static_cast<double>(pairs.size())));
  std::vector<std::size_t> holdout(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_holdout));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_holdout), order.end());

  const Matrix train_x = pair_inputs(pairs, train);
  const Matrix train_y = pair_actions(pairs, train);
  Matrix hold_x, hold_y;
  if (!holdout.empty()) {
    hold_x = pair_inputs(pairs, holdout);
    hold_y = pair_actions(pairs, holdout);
  }

  nn::AdamState opt = nn::AdamState::for_network(actor);
  BcReport report;
  const std::size_t batch = std::max<std::size_t>(1, std::min(opts.batch_size, train.size()));
  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    for (std::size_t start = 0; start < perm.size(); start += batch) {
      const std::size_t end = std::min(perm.size(), start + batch);
      Matrix x(static_cast<Eigen::Index>(end - start), train_x.cols());
      Matrix y(static_cast<Eigen::Index>(end - start), 2);
      for (std::size_t i = start; i < end; ++i) {
        x.row(static_cast<Eigen::Index>(i - start)) = train_x.row(static_cast<Eigen::Index>(perm[i]));
        y.row(static_cast<Eigen::Index>(i - start)) = train_y.row(static_cast<Eigen::Index>(perm[i]));
      }
      auto g = bc_loss_gradient(actor, x, y);
      nn::adam_step(actor, g.grads, opt, opts.lr);
    }
    report.train_mse.push_back(bc_mse(actor, train_x, train_y));
    if (!holdout.empty()) report.holdout_mse.push_back(bc_mse(actor, hold_x, hold_y));
  }
  return report;
}

inline std::size_t seed_buffer(replay::ReplayBuffer& buffer, const std::vector<replay::Episode>& episodes,
                               bool her_enabled, const sim::Scenario& scenario) {
  std::size_t pushed = 0;
  const auto reward_fn = replay::goal_reward_fn(scenario);
  for (const auto& e : episodes) pushed += replay::store_episode(buffer, e, her_enabled, reward_fn, scenario.goal_radius);
  return pushed;
}

/// Record file: one row per pair in "inputs" (n x d) and "actions" (n x 2).
inline void save_pairs(const std::filesystem::path& path, const std::vector<DemoPair>& pairs) {
  io::Container c(io::ContainerKind::Demonstrations);
  const std::size_t d = pairs.empty() ? 0 : pairs.front().input.size();
  std::vector<double> inputs, actions;
  for (const auto& p : pairs) {
    if (p.input.size() != d) throw InputError("demonstration pairs must share one input width");
    inputs.insert(inputs.end(), p.input.begin(), p.input.end());
    actions.insert(actions.end(), {p.action.throttle, p.action.steer});
  }
  c.meta() = {{"count", pairs.size()}, {"input_dim", d}};
  c.add("inputs", {pairs.size(), d}, std::move(inputs));
  c.add("actions", {pairs.size(), 2}, std::move(actions));
  c.save(path);
}

inline std::vector<DemoPair> load_pairs(const std::filesystem::path& path) {
  const auto c = io::Container::load(path, io::ContainerKind::Demonstrations);
  const auto& in = c.get("inputs");
  const auto& act = c.get("actions");
  if (in.shape.size() != 2 || act.shape.size() != 2 || in.shape[0] != act.shape[0] || act.shape[1] != 2)
    throw io::ShapeMismatchError("demonstration records have inconsistent shapes");
  std::vector<DemoPair> pairs(in.shape[0]);
  const std::size_t d = in.shape[1];
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pairs[i].input.assign(in.data.begin() + static_cast<std::ptrdiff_t>(i * d),
                          in.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    pairs[i].action = {act.data[2 * i], act.data[2 * i + 1]};
  }
  return pairs;
}

}  // namespace aircombat::bc
