#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aircombat/common.hpp"
#include "aircombat/scenario.hpp"

namespace aircombat::plots {

using nlohmann::json;

struct PlotError : Error {
  using Error::Error;
};

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Trailing moving average over at most `window` values.
inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  if (window == 0) throw InputError("moving average window must be positive");
  std::vector<double> out;
  out.reserve(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    sum += v[i];
    if (i >= window) sum -= v[i - window];
    out.push_back(sum / static_cast<double>(std::min(i + 1, window)));
  }
  return out;
}

/// Parsed metrics log, grouped per agent (goal-reaching runs have one group, -1).
struct MetricsSeries {
  std::map<int, Series> actor_loss;
  std::map<int, Series> critic1_loss;
  std::map<int, Series> critic2_loss;
  std::map<int, Series> episode_return;   // explore + train episodes, x = running episode count
  std::map<int, Series> validation;       // x = validation index
  std::size_t records = 0;
};

inline MetricsSeries read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PlotError("cannot open metrics log " + path.string());
  MetricsSeries m;
  std::map<int, std::size_t> episodes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      const std::string phase = j.at("phase").get<std::string>();
      const int agent = j.contains("agent") ? j.at("agent").get<int>() : -1;
      const auto step = static_cast<double>(j.at("total_steps").get<std::size_t>());
      const double ret = j.at("return").get<double>();
      if (phase == "validate") {
        auto& s = m.validation[agent];
        s.x.push_back(static_cast<double>(j.at("episode").get<std::size_t>()));
        s.y.push_back(ret);
      } else if (phase == "explore" || phase == "train") {
        auto& s = m.episode_return[agent];
        s.x.push_back(static_cast<double>(episodes[agent]++));
        s.y.push_back(ret);
        if (!j.at("actor_loss").is_null()) {
          m.actor_loss[agent].x.push_back(step);
          m.actor_loss[agent].y.push_back(j.at("actor_loss").get<double>());
        }
        if (!j.at("critic_loss").is_null()) {
          m.critic1_loss[agent].x.push_back(step);
          m.critic1_loss[agent].y.push_back(j.at("critic_loss").at(0).get<double>());
          m.critic2_loss[agent].x.push_back(step);
          m.critic2_loss[agent].y.push_back(j.at("critic_loss").at(1).get<double>());
        }
      } else {
        throw PlotError("unknown phase '" + phase + "'");
      }
    } catch (const PlotError& e) {
      throw PlotError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const std::exception& e) {
      throw PlotError(path.string() + ":" + std::to_string(line_no) + ": malformed metrics record (" + e.what() + ")");
    }
    ++m.records;
  }
  if (m.records == 0) throw PlotError("metrics log " + path.string() + " is empty");
  return m;
}

inline std::string agent_suffix(int agent) { return agent < 0 ? "" : " (agent " + std::to_string(agent) + ")"; }

// ---------------------------------------------------------------------------
// SVG line charts

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return colors[i % 6];
}

inline std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                                  const std::vector<Series>& series) {
  constexpr double W = 800, H = 480, L = 80, R = 20, T = 40, B = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
    << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0;
    const double yv = y0 + (y1 - y0) * k / 4.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << fmt(xv) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"11\">" << fmt(yv) << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 16
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << x_label << "</text>\n";
  o << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
    << "font-size=\"13\" transform=\"rotate(-90 18 " << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    o << "<polyline fill=\"none\" stroke=\"" << palette(si) << "\" stroke-width=\"1.5\" data-label=\"" << s.label
      << "\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!first) o << ' ';
      o << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i]));
      first = false;
    }
    o << "\"/>\n";
    o << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (si + 1) << "\" text-anchor=\"end\" fill=\"" << palette(si)
      << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline std::string csv_table(const std::vector<Series>& series, const std::string& x_name) {
  std::ostringstream o;
  o << "series," << x_name << ",value\n";
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) o << s.label << ',' << fmt(s.x[i]) << ',' << fmt(s.y[i]) << '\n';
  return o.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PlotError("cannot write " + path.string());
  out << text;
}

/// Writes actor_loss, critic_loss, reward_moving_average and validation_reward
/// charts (.svg) and tables (.csv) into out_dir; returns the written paths.
/// The log is fully parsed before anything is written.
inline std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& metrics_path,
                                                     const std::filesystem::path& out_dir,
                                                     std::size_t window = 100) {
  const MetricsSeries m = read_metrics(metrics_path);

  std::vector<Series> actor, critic, reward, validation;
  for (const auto& [a, s] : m.actor_loss) actor.push_back({"actor" + agent_suffix(a), s.x, s.y});
  for (const auto& [a, s] : m.critic1_loss) critic.push_back({"critic 1" + agent_suffix(a), s.x, s.y});
  for (const auto& [a, s] : m.critic2_loss) critic.push_back({"critic 2" + agent_suffix(a), s.x, s.y});
  for (const auto& [a, s] : m.episode_return)
    reward.push_back({"return " + std::to_string(window) + "-episode mean" + agent_suffix(a), s.x,
                      moving_average(s.y, window)});
  for (const auto& [a, s] : m.validation) validation.push_back({"validation" + agent_suffix(a), s.x, s.y});

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw PlotError("cannot create " + out_dir.string() + ": " + ec.message());

  struct Chart {
    const char* name;
    const char* title;
    const char* x_label;
    const char* y_label;
    const char* csv_x;
    const std::vector<Series>* series;
  };
  const Chart charts[] = {
      {"actor_loss", "Actor loss", "environment step", "loss", "step", &actor},
      {"critic_loss", "Critic loss", "environment step", "loss", "step", &critic},
      {"reward_moving_average", "Episode return (moving average)", "episode", "return", "episode", &reward},
      {"validation_reward", "Validation reward", "validation index", "mean return", "index", &validation},
  };
  std::vector<std::filesystem::path> written;
  for (const auto& c : charts) {
    const auto svg = out_dir / (std::string(c.name) + ".svg");
    const auto csv = out_dir / (std::string(c.name) + ".csv");
    write_text(svg, line_chart_svg(c.title, c.x_label, c.y_label, *c.series));
    write_text(csv, csv_table(*c.series, c.csv_x));
    written.push_back(svg);
    written.push_back(csv);
  }
  return written;
}

// ---------------------------------------------------------------------------
// Trajectory rendering

struct Trajectory {
  sim::Scenario scenario;
  std::vector<Vec2> positions;
};

inline Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PlotError("cannot open trajectory " + path.string());
  try {
    const json j = json::parse(in);
    Trajectory t;
    t.scenario = sim::scenario_from_json(j.at("scenario"));
    for (const auto& p : j.at("positions")) t.positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    if (t.positions.empty()) throw PlotError("trajectory has no positions");
    return t;
  } catch (const PlotError&) {
    throw;
  } catch (const std::exception& e) {
    throw PlotError("malformed trajectory " + path.string() + ": " + e.what());
  }
}

/// Top-down view: arena outline, obstacles, goal disc, path with start marker.
inline std::string trajectory_svg(const Trajectory& t) {
  const auto& s = t.scenario;
  const double scale = 800.0 / std::max(s.width, s.height);
  const double W = s.width * scale, H = s.height * scale;
  auto px = [&](double x) { return x * scale; };
  auto py = [&](double y) { return H - y * scale; };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(W) << "\" height=\"" << fmt(H)
    << "\" viewBox=\"0 0 " << fmt(W) << ' ' << fmt(H) << "\">\n";
  o << "<rect width=\"" << fmt(W) << "\" height=\"" << fmt(H) << "\" fill=\"white\" stroke=\"black\"/>\n";
  for (const auto& r : s.obstacles)
    o << "<rect x=\"" << fmt(px(r.min_x)) << "\" y=\"" << fmt(py(r.max_y)) << "\" width=\""
      << fmt((r.max_x - r.min_x) * scale) << "\" height=\"" << fmt((r.max_y - r.min_y) * scale)
      << "\" fill=\"#888\"/>\n";
  o << "<circle cx=\"" << fmt(px(s.goal.x)) << "\" cy=\"" << fmt(py(s.goal.y)) << "\" r=\""
    << fmt(std::max(2.0, s.goal_radius * scale)) << "\" fill=\"#2ca02c\" fill-opacity=\"0.5\"/>\n";
  o << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < t.positions.size(); ++i)
    o << (i ? " " : "") << fmt(px(t.positions[i].x)) << ',' << fmt(py(t.positions[i].y));
  o << "\"/>\n";
  o << "<circle cx=\"" << fmt(px(t.positions.front().x)) << "\" cy=\"" << fmt(py(t.positions.front().y))
    << "\" r=\"4\" fill=\"#d62728\"/>\n";
  o << "</svg>\n";
  return o.str();
}

inline void render_trajectory(const std::filesystem::path& trajectory_path, const std::filesystem::path& svg_path) {
  write_text(svg_path, trajectory_svg(load_trajectory(trajectory_path)));
}

}  // namespace aircombat::plots
