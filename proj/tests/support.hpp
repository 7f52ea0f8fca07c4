#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "aircombat/common.hpp"
#include "aircombat/nn.hpp"
#include "aircombat/scenario.hpp"

namespace testing_support {

using namespace aircombat;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("aircombat_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Marches a ray at 0.25 m increments and reports the first sample that is
/// outside the arena or strictly inside an obstacle.
inline double dense_ray(const sim::Scenario& s, Vec2 origin, double angle, double range) {
  constexpr double kStep = 0.25;
  const double c = std::cos(angle), sn = std::sin(angle);
  for (double t = 0.0; t <= range; t += kStep) {
    const Vec2 p{origin.x + t * c, origin.y + t * sn};
    if (p.x < 0.0 || p.x > s.width || p.y < 0.0 || p.y > s.height || s.in_obstacle(p)) return t;
  }
  return range;
}

/// Random obstacle layout with n rectangles strictly inside the arena.
inline sim::Scenario random_scene(Rng& rng, int n_obstacles) {
  sim::Scenario s;
  s.width = rng.uniform(500.0, 3000.0);
  s.height = rng.uniform(500.0, 3000.0);
  s.goal = {s.width / 2.0, s.height / 2.0};
  s.goal_radius = 10.0;
  for (int i = 0; i < n_obstacles; ++i) {
    const double w = rng.uniform(20.0, s.width / 3.0);
    const double h = rng.uniform(20.0, s.height / 3.0);
    const double x = rng.uniform(1.0, s.width - w - 1.0);
    const double y = rng.uniform(1.0, s.height - h - 1.0);
    s.obstacles.push_back({x, y, x + w, y + h});
  }
  return s;
}

/// Independent dense-layer forward: straight loops, no Eigen products.
inline nn::Matrix loop_forward(const nn::Mlp& net, const nn::Matrix& input) {
  nn::Matrix a = input;
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const auto& w = net.weights[k];
    const auto& b = net.biases[k];
    nn::Matrix z(a.rows(), w.rows());
    for (Eigen::Index r = 0; r < a.rows(); ++r)
      for (Eigen::Index o = 0; o < w.rows(); ++o) {
        double acc = b(o);
        for (Eigen::Index i = 0; i < w.cols(); ++i) acc += w(o, i) * a(r, i);
        const bool last = k + 1 == net.num_layers();
        if (!last) acc = acc > 0.0 ? acc : 0.0;
        else if (net.output == nn::OutputActivation::Tanh) acc = std::tanh(acc);
        z(r, o) = acc;
      }
    a = z;
  }
  return a;
}

inline nn::Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  nn::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

}  // namespace testing_support
