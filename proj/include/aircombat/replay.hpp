#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "aircombat/common.hpp"
#include "aircombat/container.hpp"
#include "aircombat/sim.hpp"

namespace aircombat::replay {

using sim::Action;
using sim::EventSet;
using sim::Observation;

/// One goal-conditioned step. `goal` is an absolute arena position; the
/// network-facing descriptor is derived from it and the achieved positions
/// when batches are assembled, so relabeling only has to swap this field.
struct Transition {
  Observation obs;
  Vec2 goal;
  Action action;
  double reward = 0.0;
  Observation next_obs;
  bool done = false;
  EventSet events;
  Vec2 achieved;       // position before the step
  Vec2 achieved_next;  // position after the step

  friend bool operator==(const Transition&, const Transition&) = default;
};

using Episode = std::vector<Transition>;

/// Fixed-capacity ring; once full each push overwrites the oldest entry.
class ReplayBuffer {
 public:
  static constexpr std::size_t kDefaultCapacity = 1'000'000;

  explicit ReplayBuffer(std::size_t capacity = kDefaultCapacity) : capacity_(capacity) {
    if (capacity == 0) throw InputError("replay capacity must be positive");
  }

  void push(Transition t) {
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(t));
    } else {
      storage_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t cursor() const { return cursor_; }
  bool empty() const { return storage_.empty(); }

  /// i-th entry in storage order (not age order).
  const Transition& at(std::size_t i) const { return storage_.at(i); }

  /// Entries from oldest to newest.
  std::vector<Transition> ordered() const {
    std::vector<Transition> out;
    out.reserve(storage_.size());
    const std::size_t start = storage_.size() < capacity_ ? 0 : cursor_;
    for (std::size_t i = 0; i < storage_.size(); ++i) out.push_back(storage_[(start + i) % storage_.size()]);
    return out;
  }

  /// Uniform with replacement over the current contents.
  std::vector<std::size_t> sample_indices(std::size_t batch_size, Rng& rng) const {
    if (batch_size == 0 || storage_.size() < batch_size)
      throw InsufficientDataError("replay buffer holds " + std::to_string(storage_.size()) +
                                  " transitions, batch needs " + std::to_string(batch_size));
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.index(storage_.size()));
    return idx;
  }

  std::vector<Transition> sample(std::size_t batch_size, Rng& rng) const {
    std::vector<Transition> out;
    for (std::size_t i : sample_indices(batch_size, rng)) out.push_back(storage_[i]);
    return out;
  }

  void save(const std::filesystem::path& path) const;
  static ReplayBuffer load(const std::filesystem::path& path);

 private:
  std::size_t capacity_;
  std::vector<Transition> storage_;
  std::size_t cursor_ = 0;
};

/// reward(prev_pos, new_pos, goal, events)
using RewardFn = std::function<double(Vec2, Vec2, Vec2, EventSet)>;

inline RewardFn goal_reward_fn(const sim::Scenario& scenario) {
  return [scenario](Vec2 prev, Vec2 next, Vec2 goal, EventSet events) {
    return sim::goal_reward(prev, next, goal, events, scenario);
  };
}

/// Final-state hindsight relabeling: the episode is replayed as if its last
/// achieved position had been the goal. Only goal, reward, done and the
/// goal/timeout event flags change; wall contacts are kept. The copy ends at
/// the first step that lands within goal_radius of the new goal.
inline Episode her_relabel(const Episode& episode, const RewardFn& reward_fn, double goal_radius) {
  if (episode.empty()) throw InputError("cannot relabel an empty episode");
  const Vec2 new_goal = episode.back().achieved_next;
  Episode out;
  out.reserve(episode.size());
  for (const Transition& original : episode) {
    Transition t = original;
    t.goal = new_goal;
    t.events.remove(sim::Event::GoalReached);
    t.events.remove(sim::Event::Timeout);
    t.done = distance(t.achieved_next, new_goal) <= goal_radius;
    if (t.done) t.events.add(sim::Event::GoalReached);
    t.reward = reward_fn(t.achieved, t.achieved_next, new_goal, t.events);
    out.push_back(std::move(t));
    if (out.back().done) break;
  }
  return out;
}

/// Stores the episode, followed by its relabeled copy when HER is enabled.
/// Returns the number of pushes.
inline std::size_t store_episode(ReplayBuffer& buffer, const Episode& episode, bool her_enabled,
                                 const RewardFn& reward_fn = {}, double goal_radius = 0.0) {
  for (const auto& t : episode) buffer.push(t);
  std::size_t pushed = episode.size();
  if (her_enabled && !episode.empty()) {
    if (!reward_fn) throw InputError("HER storage needs a reward function");
    for (auto& t : her_relabel(episode, reward_fn, goal_radius)) {
      buffer.push(std::move(t));
      ++pushed;
    }
  }
  return pushed;
}

// Snapshot layout: meta {capacity, cursor, size, obs_dim}; records "obs",
// "next_obs" (size x obs_dim) and "fields" (size x 13: goal xy, action xy,
// reward, done, events, achieved xy, achieved_next xy, 2 reserved zeros).
inline void ReplayBuffer::save(const std::filesystem::path& path) const {
  io::Container c(io::ContainerKind::ReplaySnapshot);
  const std::size_t n = storage_.size();
  const std::size_t obs_dim = n ? storage_.front().obs.size() : 0;
  c.meta() = {{"capacity", capacity_}, {"cursor", cursor_}, {"size", n}, {"obs_dim", obs_dim}};
  std::vector<double> obs, next_obs, fields;
  obs.reserve(n * obs_dim);
  next_obs.reserve(n * obs_dim);
  fields.reserve(n * 13);
  for (const auto& t : storage_) {
    if (t.obs.size() != obs_dim || t.next_obs.size() != obs_dim)
      throw InputError("replay snapshot requires a uniform observation width");
    obs.insert(obs.end(), t.obs.begin(), t.obs.end());
    next_obs.insert(next_obs.end(), t.next_obs.begin(), t.next_obs.end());
    fields.insert(fields.end(), {t.goal.x, t.goal.y, t.action.throttle, t.action.steer, t.reward, t.done ? 1.0 : 0.0,
                                 static_cast<double>(t.events.bits()), t.achieved.x, t.achieved.y, t.achieved_next.x,
                                 t.achieved_next.y, 0.0, 0.0});
  }
  c.add("obs", {n, obs_dim}, std::move(obs));
  c.add("next_obs", {n, obs_dim}, std::move(next_obs));
  c.add("fields", {n, 13}, std::move(fields));
  c.save(path);
}

inline ReplayBuffer ReplayBuffer::load(const std::filesystem::path& path) {
  const auto c = io::Container::load(path, io::ContainerKind::ReplaySnapshot);
  std::size_t capacity = 0, cursor = 0, n = 0, obs_dim = 0;
  try {
    capacity = c.meta().at("capacity").get<std::size_t>();
    cursor = c.meta().at("cursor").get<std::size_t>();
    n = c.meta().at("size").get<std::size_t>();
    obs_dim = c.meta().at("obs_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw io::CorruptFileError(std::string("replay snapshot meta: ") + e.what());
  }
  if (capacity == 0 || n > capacity || cursor >= capacity) throw io::CorruptFileError("replay snapshot counters");
  const auto& obs = c.get("obs").data;
  const auto& next_obs = c.get("next_obs").data;
  const auto& fields = c.get("fields").data;
  if (obs.size() != n * obs_dim || next_obs.size() != n * obs_dim || fields.size() != n * 13)
    throw io::ShapeMismatchError("replay snapshot record sizes disagree with its meta");
  ReplayBuffer b(capacity);
  b.storage_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Transition t;
    t.obs.assign(obs.begin() + static_cast<std::ptrdiff_t>(i * obs_dim),
                 obs.begin() + static_cast<std::ptrdiff_t>((i + 1) * obs_dim));
    t.next_obs.assign(next_obs.begin() + static_cast<std::ptrdiff_t>(i * obs_dim),
                      next_obs.begin() + static_cast<std::ptrdiff_t>((i + 1) * obs_dim));
    const double* f = fields.data() + i * 13;
    t.goal = {f[0], f[1]};
    t.action = {f[2], f[3]};
    t.reward = f[4];
    t.done = f[5] != 0.0;
    t.events = EventSet(static_cast<std::uint8_t>(f[6]));
    t.achieved = {f[7], f[8]};
    t.achieved_next = {f[9], f[10]};
    b.storage_.push_back(std::move(t));
  }
  b.cursor_ = cursor;
  return b;
}

}  // namespace aircombat::replay
