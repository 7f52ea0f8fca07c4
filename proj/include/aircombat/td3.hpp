#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "aircombat/common.hpp"
#include "aircombat/container.hpp"
#include "aircombat/nn.hpp"
#include "aircombat/replay.hpp"

namespace aircombat::td3 {

using nn::Matrix;
using nn::Vector;

struct Td3Config {
  double gamma = 0.99;
  double rho = 0.995;  // polyak retention
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double target_noise_sigma = 0.2;
  double target_noise_clip = 0.5;
  int policy_delay = 2;
  std::size_t batch_size = 256;
  double explore_sigma = 0.1;
  double epsilon_random = 0.1;
  double action_low = -1.0;
  double action_high = 1.0;
  std::vector<int> hidden_layers = {256, 256};

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid td3 config: " + m); };
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
    if (!(rho >= 0.0 && rho <= 1.0)) fail("rho must lie in [0, 1]");
    if (!(target_noise_sigma >= 0.0)) fail("target_noise_sigma must be >= 0");
    if (!(target_noise_clip >= 0.0)) fail("target_noise_clip must be >= 0");
    if (policy_delay < 1) fail("policy_delay must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(action_low < action_high)) fail("action_low must be below action_high");
    if (!(explore_sigma >= 0.0)) fail("explore_sigma must be >= 0");
    if (!(epsilon_random >= 0.0 && epsilon_random <= 1.0)) fail("epsilon_random must lie in [0, 1]");
    if (!(actor_lr >= 0.0 && critic_lr >= 0.0)) fail("learning rates must be >= 0");
    for (int h : hidden_layers)
      if (h <= 0) fail("hidden layer sizes must be positive");
  }
};

/// How transitions become network inputs: the observation, optionally
/// followed by the goal descriptor relative to the vehicle position.
struct InputLayout {
  std::size_t obs_dim = sim::kGoalObservationSize;
  bool goal_conditioned = true;
  double width = 1.0;
  double height = 1.0;

  static InputLayout goal_reaching(const sim::Scenario& s) {
    return {sim::kGoalObservationSize, true, s.width, s.height};
  }
  static InputLayout dogfight() { return {sim::kDogfightObservationSize, false, 1.0, 1.0}; }

  int input_dim() const { return static_cast<int>(obs_dim + (goal_conditioned ? sim::kGoalDescriptorSize : 0)); }

  void write(Matrix& m, Eigen::Index r, const sim::Observation& obs, Vec2 goal, Vec2 position) const {
    if (obs.size() != obs_dim) throw InputError("observation width does not match the input layout");
    for (std::size_t i = 0; i < obs_dim; ++i) m(r, static_cast<Eigen::Index>(i)) = obs[i];
    if (goal_conditioned) {
      const auto g = sim::goal_descriptor(goal, position, width, height);
      m(r, static_cast<Eigen::Index>(obs_dim)) = g[0];
      m(r, static_cast<Eigen::Index>(obs_dim + 1)) = g[1];
    }
  }

  Matrix input(const sim::Observation& obs, Vec2 goal, Vec2 position) const {
    Matrix m(1, input_dim());
    write(m, 0, obs, goal, position);
    return m;
  }
};

struct Batch {
  Matrix inputs;       // B x input_dim
  Matrix actions;      // B x 2
  Vector rewards;      // B
  Matrix next_inputs;  // B x input_dim
  Vector dones;        // B, 1.0 where terminal

  Eigen::Index size() const { return inputs.rows(); }
};

inline Batch make_batch(const replay::ReplayBuffer& buffer, const std::vector<std::size_t>& indices,
                        const InputLayout& layout) {
  const auto n = static_cast<Eigen::Index>(indices.size());
  Batch b;
  b.inputs.resize(n, layout.input_dim());
  b.next_inputs.resize(n, layout.input_dim());
  b.actions.resize(n, 2);
  b.rewards.resize(n);
  b.dones.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = buffer.at(indices[static_cast<std::size_t>(i)]);
    layout.write(b.inputs, i, t.obs, t.goal, t.achieved);
    layout.write(b.next_inputs, i, t.next_obs, t.goal, t.achieved_next);
    b.actions(i, 0) = t.action.throttle;
    b.actions(i, 1) = t.action.steer;
    b.rewards(i) = t.reward;
    b.dones(i) = t.done ? 1.0 : 0.0;
  }
  return b;
}

inline Matrix concat_columns(const Matrix& a, const Matrix& b) {
  Matrix m(a.rows(), a.cols() + b.cols());
  m << a, b;
  return m;
}

struct Td3Agent {
  nn::Mlp actor;
  nn::Mlp actor_target;
  nn::Mlp critic1;
  nn::Mlp critic2;
  nn::Mlp critic1_target;
  nn::Mlp critic2_target;
  nn::AdamState actor_opt;
  nn::AdamState critic1_opt;
  nn::AdamState critic2_opt;
  std::int64_t critic_updates = 0;
  std::int64_t actor_updates = 0;

  int input_dim() const { return actor.input_size(); }
  int action_dim() const { return actor.output_size(); }

  /// Actor: input -> hidden... -> action (tanh). Critics: input ++ action ->
  /// hidden... -> 1 (linear). Targets start as exact copies.
  static Td3Agent create(int input_dim, int action_dim, const std::vector<int>& hidden, std::uint64_t seed) {
    std::vector<int> actor_sizes{input_dim};
    actor_sizes.insert(actor_sizes.end(), hidden.begin(), hidden.end());
    actor_sizes.push_back(action_dim);
    std::vector<int> critic_sizes{input_dim + action_dim};
    critic_sizes.insert(critic_sizes.end(), hidden.begin(), hidden.end());
    critic_sizes.push_back(1);

    Td3Agent a;
    a.actor = nn::init_mlp(actor_sizes, nn::OutputActivation::Tanh, mix_seed(seed, 0));
    a.critic1 = nn::init_mlp(critic_sizes, nn::OutputActivation::Linear, mix_seed(seed, 1));
    a.critic2 = nn::init_mlp(critic_sizes, nn::OutputActivation::Linear, mix_seed(seed, 2));
    a.actor_target = a.actor;
    a.critic1_target = a.critic1;
    a.critic2_target = a.critic2;
    a.actor_opt = nn::AdamState::for_network(a.actor);
    a.critic1_opt = nn::AdamState::for_network(a.critic1);
    a.critic2_opt = nn::AdamState::for_network(a.critic2);
    return a;
  }

  void save(const std::filesystem::path& path, const nlohmann::json& extra_meta = {}) const {
    io::Container c(io::ContainerKind::Checkpoint);
    c.meta()["kind"] = "td3_agent";
    c.meta()["critic_updates"] = critic_updates;
    c.meta()["actor_updates"] = actor_updates;
    if (!extra_meta.is_null()) c.meta()["extra"] = extra_meta;
    io::put_network(c, "actor", actor);
    io::put_network(c, "actor_target", actor_target);
    io::put_network(c, "critic1", critic1);
    io::put_network(c, "critic2", critic2);
    io::put_network(c, "critic1_target", critic1_target);
    io::put_network(c, "critic2_target", critic2_target);
    io::put_optimizer(c, "actor_opt", actor_opt);
    io::put_optimizer(c, "critic1_opt", critic1_opt);
    io::put_optimizer(c, "critic2_opt", critic2_opt);
    c.save(path);
  }

  /// Loads an agent; when expected_input_dim is given, refuses checkpoints
  /// built for a different network input.
  static Td3Agent load(const std::filesystem::path& path, int expected_input_dim = 0) {
    const auto c = io::Container::load(path, io::ContainerKind::Checkpoint);
    Td3Agent a;
    a.actor = io::get_network(c, "actor");
    if (expected_input_dim > 0 && a.actor.input_size() != expected_input_dim)
      throw io::ShapeMismatchError("checkpoint actor expects input width " + std::to_string(a.actor.input_size()) +
                                   ", expected " + std::to_string(expected_input_dim));
    a.actor_target = io::get_network(c, "actor_target", a.actor.layer_sizes);
    a.critic1 = io::get_network(c, "critic1");
    a.critic2 = io::get_network(c, "critic2", a.critic1.layer_sizes);
    a.critic1_target = io::get_network(c, "critic1_target", a.critic1.layer_sizes);
    a.critic2_target = io::get_network(c, "critic2_target", a.critic1.layer_sizes);
    a.actor_opt = io::get_optimizer(c, "actor_opt", a.actor);
    a.critic1_opt = io::get_optimizer(c, "critic1_opt", a.critic1);
    a.critic2_opt = io::get_optimizer(c, "critic2_opt", a.critic2);
    a.critic_updates = c.meta().value("critic_updates", std::int64_t{0});
    a.actor_updates = c.meta().value("actor_updates", std::int64_t{0});
    return a;
  }
};

enum class Mode { Deterministic, Explore };

inline sim::Action clip_action(double throttle, double steer, const Td3Config& cfg) {
  return {std::clamp(throttle, cfg.action_low, cfg.action_high), std::clamp(steer, cfg.action_low, cfg.action_high)};
}

inline sim::Action select_action(const Td3Agent& agent, const Matrix& input, Mode mode, const Td3Config& cfg,
                                 Rng& rng) {
  if (input.rows() != 1 || input.cols() != agent.input_dim())
    throw InputError("select_action expects a single row of width " + std::to_string(agent.input_dim()));
  if (mode == Mode::Explore && cfg.epsilon_random > 0.0 && rng.uniform() < cfg.epsilon_random)
    return {rng.uniform(cfg.action_low, cfg.action_high), rng.uniform(cfg.action_low, cfg.action_high)};
  const Matrix out = nn::predict(agent.actor, input);
  double a0 = out(0, 0);
  double a1 = out(0, 1);
  if (mode == Mode::Explore) {
    a0 += rng.normal(0.0, cfg.explore_sigma);
    a1 += rng.normal(0.0, cfg.explore_sigma);
  }
  return clip_action(a0, a1, cfg);
}

/// a' = clip(target_out + clip(noise, -c, c), low, high), elementwise.
inline Matrix smooth_actions(const Matrix& target_out, const Matrix& noise, const Td3Config& cfg) {
  const double c = cfg.target_noise_clip;
  return (target_out + noise.cwiseMax(-c).cwiseMin(c)).cwiseMax(cfg.action_low).cwiseMin(cfg.action_high);
}

inline Matrix smooth_target_action(const Td3Agent& agent, const Matrix& next_inputs, const Td3Config& cfg, Rng& rng) {
  const Matrix target_out = nn::predict(agent.actor_target, next_inputs);
  Matrix noise(target_out.rows(), target_out.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.normal(0.0, cfg.target_noise_sigma);
  return smooth_actions(target_out, noise, cfg);
}

/// y = r + gamma * (1 - d) * min(q1, q2)
inline Vector td_target(const Vector& rewards, const Vector& dones, const Vector& q1, const Vector& q2, double gamma) {
  return rewards.array() + gamma * (1.0 - dones.array()) * q1.cwiseMin(q2).array();
}

inline Vector compute_td_target(const Td3Agent& agent, const Batch& batch, const Td3Config& cfg, Rng& rng) {
  const Matrix next_actions = smooth_target_action(agent, batch.next_inputs, cfg, rng);
  const Matrix critic_in = concat_columns(batch.next_inputs, next_actions);
  const Vector q1 = nn::predict(agent.critic1_target, critic_in).col(0);
  const Vector q2 = nn::predict(agent.critic2_target, critic_in).col(0);
  return td_target(batch.rewards, batch.dones, q1, q2, cfg.gamma);
}

struct LossGradient {
  double loss = 0.0;
  nn::GradientSet grads;
};

/// mean((Q(s, a) - y)^2) and its parameter gradient; y is a constant.
inline LossGradient critic_loss_gradient(const nn::Mlp& critic, const Matrix& inputs, const Matrix& actions,
                                         const Vector& y) {
  const auto cache = nn::forward(critic, concat_columns(inputs, actions));
  const Vector residual = cache.output().col(0) - y;
  LossGradient out;
  out.loss = residual.squaredNorm() / static_cast<double>(residual.size());
  out.grads = nn::backward(critic, cache, 2.0 * Matrix(residual)).params;
  return out;
}

/// -mean(Q(s, mu(s))) and its gradient with respect to the actor parameters,
/// chained through the (frozen) critic's input gradient.
inline LossGradient actor_loss_gradient(const nn::Mlp& actor, const nn::Mlp& critic, const Matrix& inputs) {
  const auto actor_cache = nn::forward(actor, inputs);
  const auto critic_cache = nn::forward(critic, concat_columns(inputs, actor_cache.output()));
  const auto batch = static_cast<double>(inputs.rows());
  LossGradient out;
  out.loss = -critic_cache.output().col(0).mean();
  const auto critic_back = nn::backward(critic, critic_cache, Matrix::Constant(inputs.rows(), 1, -1.0));
  // backward returns d(loss)/d(row) with the 1/B mean factor folded in; the
  // actor backward applies its own mean, so undo one factor here.
  const Matrix action_grad = batch * critic_back.input.rightCols(actor.output_size());
  out.grads = nn::backward(actor, actor_cache, action_grad).params;
  return out;
}

inline void polyak_update(const nn::Mlp& live, nn::Mlp& target, double rho) {
  if (!live.same_shape(target)) throw InputError("polyak_update needs shape-congruent networks");
  if (!(rho >= 0.0 && rho <= 1.0)) throw InputError("polyak rho must lie in [0, 1]");
  if (rho == 0.0) {
    target = live;
    return;
  }
  // Written as a step toward live so that equal networks stay bit-identical.
  for (std::size_t k = 0; k < live.num_layers(); ++k) {
    target.weights[k] += (1.0 - rho) * (live.weights[k] - target.weights[k]);
    target.biases[k] += (1.0 - rho) * (live.biases[k] - target.biases[k]);
  }
}

struct CriticLosses {
  double critic1 = 0.0;
  double critic2 = 0.0;
};

inline CriticLosses critic_update(Td3Agent& agent, const Batch& batch, const Vector& y, const Td3Config& cfg) {
  if (batch.size() == 0) throw InputError("critic_update needs a nonempty batch");
  auto g1 = critic_loss_gradient(agent.critic1, batch.inputs, batch.actions, y);
  auto g2 = critic_loss_gradient(agent.critic2, batch.inputs, batch.actions, y);
  if (!is_finite(g1.loss) || !is_finite(g2.loss) || !g1.grads.all_finite() || !g2.grads.all_finite())
    throw DivergenceError("critic loss diverged (non-finite value)");
  nn::adam_step(agent.critic1, g1.grads, agent.critic1_opt, cfg.critic_lr);
  nn::adam_step(agent.critic2, g2.grads, agent.critic2_opt, cfg.critic_lr);
  ++agent.critic_updates;
  return {g1.loss, g2.loss};
}

/// Delayed policy step: runs only when the critic update count is a multiple
/// of policy_delay, then tracks all three target networks.
inline std::optional<double> actor_update(Td3Agent& agent, const Batch& batch, const Td3Config& cfg) {
  if (batch.size() == 0) throw InputError("actor_update needs a nonempty batch");
  if (agent.critic_updates % cfg.policy_delay != 0) return std::nullopt;
  auto g = actor_loss_gradient(agent.actor, agent.critic1, batch.inputs);
  if (!is_finite(g.loss) || !g.grads.all_finite()) throw DivergenceError("actor loss diverged (non-finite value)");
  nn::adam_step(agent.actor, g.grads, agent.actor_opt, cfg.actor_lr);
  polyak_update(agent.actor, agent.actor_target, cfg.rho);
  polyak_update(agent.critic1, agent.critic1_target, cfg.rho);
  polyak_update(agent.critic2, agent.critic2_target, cfg.rho);
  ++agent.actor_updates;
  return g.loss;
}

struct UpdateReport {
  bool skipped = false;  // buffer below batch size; nothing changed
  CriticLosses critic_losses;
  std::optional<double> actor_loss;
  std::int64_t critic_updates = 0;
  std::int64_t actor_updates = 0;
};

inline UpdateReport train_step(Td3Agent& agent, const replay::ReplayBuffer& buffer, const InputLayout& layout,
                               const Td3Config& cfg, Rng& rng) {
  UpdateReport report;
  if (buffer.size() < cfg.batch_size) {
    report.skipped = true;
  } else {
    const Batch batch = make_batch(buffer, buffer.sample_indices(cfg.batch_size, rng), layout);
    const Vector y = compute_td_target(agent, batch, cfg, rng);
    report.critic_losses = critic_update(agent, batch, y, cfg);
    report.actor_loss = actor_update(agent, batch, cfg);
  }
  report.critic_updates = agent.critic_updates;
  report.actor_updates = agent.actor_updates;
  return report;
}

}  // namespace aircombat::td3
