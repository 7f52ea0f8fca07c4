// Command-line front end: training, evaluation, environment serving and plots.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aircombat/bc.hpp"
#include "aircombat/config.hpp"
#include "aircombat/net.hpp"
#include "aircombat/plots.hpp"
#include "aircombat/training.hpp"

namespace fs = std::filesystem;
using namespace aircombat;
using nlohmann::json;

namespace {

struct ConfigArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string output_dir;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config, "run configuration file (JSON)");
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set schedule.total_episodes=300");
  cmd->add_option("--output-dir", args.output_dir, "output directory (overrides output_dir)");
}

harness::RunConfig resolve_config(const ConfigArgs& args) {
  json j = json::object();
  fs::path base;
  if (!args.config.empty()) {
    j = harness::load_json_file(args.config);
    base = fs::path(args.config).parent_path();
  }
  for (const auto& o : args.overrides) harness::apply_override(j, o);
  if (!args.output_dir.empty()) j["output_dir"] = args.output_dir;
  return harness::run_config_from_json(j, base);
}

sim::Scenario resolve_scenario(const std::string& scenario_path, const ConfigArgs& args) {
  if (!scenario_path.empty()) return sim::load_scenario(scenario_path);
  if (!args.config.empty() || !args.overrides.empty()) return resolve_config(args).episode_scenario();
  return sim::Scenario{};
}

int cmd_train(const ConfigArgs& args) {
  const auto config = resolve_config(args);
  const auto r = harness::train(config);
  std::printf("trained %zu episodes; buffer %zu transitions\n", r.metrics.size() - r.validations.size(),
              r.buffer_size);
  if (!r.validations.empty())
    std::printf("last validation: mean return %.3f, success rate %.3f\n", r.validations.back().mean_return,
                r.validations.back().success_rate);
  std::printf("outputs in %s\n", config.output_dir.c_str());
  return 0;
}

int cmd_train_dogfight(const ConfigArgs& args) {
  const auto config = resolve_config(args);
  const auto r = harness::train_dogfight(config);
  std::printf("dogfight training finished: %zu world steps, buffer %zu transitions\n", r.world_steps,
              r.buffer_size);
  std::printf("outputs in %s\n", config.output_dir.c_str());
  return 0;
}

int cmd_evaluate(const ConfigArgs& args, const std::string& checkpoint, const std::string& scenario_path,
                 std::size_t episodes, std::optional<std::uint64_t> seed) {
  if (!fs::exists(checkpoint)) throw io::FileAccessError("checkpoint not found: " + checkpoint);
  std::uint64_t s = 1;
  sim::Scenario scenario;
  if (!args.config.empty() || !args.overrides.empty()) {
    const auto config = resolve_config(args);
    scenario = config.episode_scenario();
    s = config.seeds.env;
  }
  if (!scenario_path.empty()) scenario = sim::load_scenario(scenario_path);
  if (seed) s = *seed;
  const auto layout = td3::InputLayout::goal_reaching(scenario);
  const auto agent = td3::Td3Agent::load(checkpoint, layout.input_dim());
  const auto v = harness::validate(agent, scenario, episodes, s);
  std::printf("episodes %zu, mean return %.6f, success rate %.4f\n", episodes, v.mean_return, v.success_rate);
  return 0;
}

int cmd_bc_pretrain(const ConfigArgs& args, std::size_t episodes, std::size_t epochs, const std::string& out,
                    const std::string& demos_out) {
  const auto config = resolve_config(args);
  const auto scenario = config.episode_scenario();
  const std::size_t n = episodes ? episodes : std::max<std::size_t>(config.bc.demo_episodes, 1);
  const auto demos = bc::collect_demonstrations(scenario, n, mix_seed(config.seeds.env, 0xbcULL));
  std::printf("expert: %zu/%zu episodes reached the goal, %zu pairs\n", demos.successes, n, demos.pairs.size());
  if (!demos_out.empty()) bc::save_pairs(demos_out, demos.pairs);

  const auto layout = td3::InputLayout::goal_reaching(scenario);
  auto agent = td3::Td3Agent::create(layout.input_dim(), 2, config.td3.hidden_layers, config.seeds.agent);
  bc::BcOptions opts{epochs ? epochs : std::max<std::size_t>(config.bc.pretrain_epochs, 1), config.bc.lr,
                     config.bc.batch_size, config.bc.holdout_fraction};
  Rng rng(mix_seed(config.seeds.agent, 0xbcULL));
  const auto report = bc::bc_pretrain(agent.actor, demos.pairs, opts, rng);
  agent.actor_target = agent.actor;
  std::printf("train mse %.6f", report.train_mse.back());
  if (!report.holdout_mse.empty()) std::printf(", holdout mse %.6f", report.holdout_mse.back());
  std::printf("\n");
  const fs::path path = out.empty() ? fs::path(config.output_dir) / "bc.ckpt" : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  agent.save(path, {{"bc_epochs", opts.epochs}, {"demo_episodes", n}});
  std::printf("checkpoint written to %s\n", path.string().c_str());
  return 0;
}

int cmd_serve_env(const ConfigArgs& args, const std::string& scenario_path, const std::string& bind) {
  const auto scenario = resolve_scenario(scenario_path, args);
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  net::EnvServer server(scenario, net::Endpoint::parse(bind));
  std::printf("listening on %s\n", server.endpoint().str().c_str());
  std::fflush(stdout);
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  return 0;
}

int cmd_plot(const ConfigArgs& args, std::string metrics, std::string out) {
  if (metrics.empty()) {
    if (args.config.empty() && args.output_dir.empty())
      throw UsageError("plot needs --metrics or a --config/--output-dir locating the run");
    metrics = (fs::path(resolve_config(args).output_dir) / "metrics.jsonl").string();
  }
  if (out.empty()) out = (fs::path(metrics).parent_path() / "plots").string();
  const auto written = plots::emit_plots(metrics, out);
  for (const auto& p : written) std::printf("%s\n", p.string().c_str());
  return 0;
}

int cmd_replay(const std::string& trajectory, std::string out) {
  if (out.empty()) out = fs::path(trajectory).replace_extension(".svg").string();
  plots::render_trajectory(trajectory, out);
  std::printf("%s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aircombat: TD3 + HER training for Dubins vehicles"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  ConfigArgs train_args, dog_args, eval_args, bc_args, serve_args, plot_args;

  auto* train = app.add_subcommand("train", "train a goal-reaching agent");
  add_config_options(train, train_args);

  auto* dog = app.add_subcommand("train-dogfight", "train two agents against each other with a shared buffer");
  add_config_options(dog, dog_args);

  auto* eval = app.add_subcommand("evaluate", "run deterministic validation episodes with a checkpoint");
  add_config_options(eval, eval_args);
  std::string checkpoint, eval_scenario;
  std::size_t eval_episodes = 30;
  std::optional<std::uint64_t> eval_seed;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--scenario", eval_scenario, "scenario file (overrides the config scenario)");
  eval->add_option("--episodes", eval_episodes, "number of episodes")->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed, "validation seed");

  auto* bcp = app.add_subcommand("bc-pretrain", "collect expert demonstrations and pretrain an actor");
  add_config_options(bcp, bc_args);
  std::size_t bc_episodes = 0, bc_epochs = 0;
  std::string bc_out, bc_demos;
  bcp->add_option("--episodes", bc_episodes, "demonstration episodes (default bc.demo_episodes)");
  bcp->add_option("--epochs", bc_epochs, "training epochs (default bc.pretrain_epochs)");
  bcp->add_option("--checkpoint", bc_out, "output checkpoint (default <output_dir>/bc.ckpt)");
  bcp->add_option("--demos", bc_demos, "also write the demonstration pairs to this file");

  auto* serve = app.add_subcommand("serve-env", "serve a goal-reaching environment over TCP");
  add_config_options(serve, serve_args);
  std::string serve_scenario, bind = "127.0.0.1:5555";
  serve->add_option("--scenario", serve_scenario, "scenario file");
  serve->add_option("--bind", bind, "listen address host:port (port 0 picks a free port)");

  auto* plot = app.add_subcommand("plot", "render charts and tables from a metrics log");
  add_config_options(plot, plot_args);
  std::string metrics, plot_out;
  plot->add_option("--metrics", metrics, "metrics.jsonl file");
  plot->add_option("--out", plot_out, "output directory (default: plots/ next to the log)");

  auto* rep = app.add_subcommand("replay", "render a stored episode trajectory as SVG");
  std::string trajectory, replay_out, replay_config;
  rep->add_option("--trajectory", trajectory, "trajectory JSON written during validation")->required();
  rep->add_option("--out", replay_out, "output SVG path");
  rep->add_option("--config", replay_config, "accepted for uniformity; unused");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "aircombat: error: %s\n", e.what());
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*dog) return cmd_train_dogfight(dog_args);
    if (*eval) return cmd_evaluate(eval_args, checkpoint, eval_scenario, eval_episodes, eval_seed);
    if (*bcp) return cmd_bc_pretrain(bc_args, bc_episodes, bc_epochs, bc_out, bc_demos);
    if (*serve) return cmd_serve_env(serve_args, serve_scenario, bind);
    if (*plot) return cmd_plot(plot_args, metrics, plot_out);
    if (*rep) return cmd_replay(trajectory, replay_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "aircombat: error: %s\n", e.what());
    return 1;
  }
  return 2;
}
