#include <gtest/gtest.h>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "aircombat/net.hpp"
#include "support.hpp"

using testing_support::TempDir;

namespace {

struct Run {
  int status = -1;
  std::string output;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Run run(const std::string& args) {
  const std::string cmd = quote(AIRCOMBAT_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.output.append(buf, n);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string config_path(const char* name) {
  return (std::filesystem::path(AIRCOMBAT_SOURCE_DIR) / "configs" / name).string();
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST(Cli, UnknownSubcommandPrintsUsage) {
  const auto r = run("fly-away");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("Usage"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("train-dogfight"), std::string::npos);
}

TEST(Cli, NoSubcommandIsAnError) { EXPECT_NE(run("").status, 0); }

TEST(Cli, UnknownFlagRejected) {
  const auto r = run("train --config " + quote(config_path("smoke.json")) + " --frobnicate 3");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("frobnicate"), std::string::npos) << r.output;
}

TEST(Cli, MissingCheckpointNamesThePath) {
  const auto r = run("evaluate --checkpoint missing.ckpt");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("missing.ckpt"), std::string::npos) << r.output;
}

TEST(Cli, MissingConfigNamesThePath) {
  const auto r = run("train --config /nonexistent/run.json");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("/nonexistent/run.json"), std::string::npos) << r.output;
}

TEST(Cli, SchemaViolationNamesTheKey) {
  TempDir dir("cli");
  { std::ofstream(dir / "bad.json") << R"({"schedule": {"total_episodes": "many"}})"; }
  const auto r = run("train --config " + quote((dir / "bad.json").string()));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("schedule.total_episodes"), std::string::npos) << r.output;
  const auto r2 = run("train --config " + quote(config_path("smoke.json")) + " --set td3.colour=blue");
  EXPECT_NE(r2.output.find("td3.colour"), std::string::npos) << r2.output;
}

TEST(Cli, SmokeTrainThenEvaluatePlotAndReplay) {
  TempDir dir("cli");
  const auto r = run("train --config " + quote(config_path("smoke.json")) + " --output-dir " + quote(dir.path()));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_GE(count_lines(dir / "metrics.jsonl"), 30u);

  const auto e = run("evaluate --checkpoint " + quote((dir / "final.ckpt").string()) + " --config " +
                     quote(config_path("smoke.json")) + " --episodes 3");
  EXPECT_EQ(e.status, 0) << e.output;
  EXPECT_NE(e.output.find("success rate"), std::string::npos);

  const auto p = run("plot --metrics " + quote((dir / "metrics.jsonl").string()) + " --out " + quote(dir / "plots"));
  EXPECT_EQ(p.status, 0) << p.output;
  for (const char* f : {"actor_loss.svg", "critic_loss.svg", "reward_moving_average.svg", "validation_reward.svg",
                        "validation_reward.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / "plots" / f)) << f;

  const auto rp = run("replay --trajectory " + quote((dir / "episodes" / "validation_0000.json").string()) +
                      " --out " + quote((dir / "traj.svg").string()));
  EXPECT_EQ(rp.status, 0) << rp.output;
  EXPECT_TRUE(std::filesystem::exists(dir / "traj.svg"));
}

TEST(Cli, EvaluateRejectsWrongObservationWidth) {
  TempDir dir("cli");
  const auto r = run("train-dogfight --config " + quote(config_path("dogfight_smoke.json")) + " --output-dir " +
                     quote(dir.path()) + " --set schedule.steps_per_episode=20");
  ASSERT_EQ(r.status, 0) << r.output;
  const auto e = run("evaluate --checkpoint " + quote((dir / "agent0.ckpt").string()));
  EXPECT_EQ(e.status, 1);
  EXPECT_NE(e.output.find("input width"), std::string::npos) << e.output;
}

TEST(Cli, BcPretrainWritesCheckpointAndDemos) {
  TempDir dir("cli");
  const auto r = run("bc-pretrain --config " + quote(config_path("smoke.json")) + " --output-dir " +
                     quote(dir.path()) + " --episodes 2 --epochs 2 --demos " + quote((dir / "d.bin").string()));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_TRUE(std::filesystem::exists(dir / "bc.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "d.bin"));
}

TEST(Cli, PlotOfEmptyLogFails) {
  TempDir dir("cli");
  { std::ofstream(dir / "metrics.jsonl"); }
  const auto r = run("plot --metrics " + quote((dir / "metrics.jsonl").string()) + " --out " + quote(dir / "p"));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("empty"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "p"));
}

TEST(Cli, ServeEnvAnswersAndStopsOnSignal) {
  int fds[2];
  ASSERT_EQ(::pipe(fds), 0);
  const pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    ::dup2(fds[1], STDOUT_FILENO);
    ::close(fds[0]);
    ::execl(AIRCOMBAT_CLI, AIRCOMBAT_CLI, "serve-env", "--bind", "127.0.0.1:0", static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fds[1]);
  std::string line;
  char c;
  while (::read(fds[0], &c, 1) == 1 && c != '\n') line += c;
  ::close(fds[0]);
  ASSERT_EQ(line.rfind("listening on ", 0), 0u) << line;
  const auto ep = aircombat::net::Endpoint::parse(line.substr(13));
  {
    aircombat::net::RemoteEnv env(ep, std::chrono::seconds(5));
    const auto [obs, pos] = env.reset(3);
    EXPECT_EQ(obs.size(), 14u);
    EXPECT_FALSE(env.step({1.0, 0.0}).done);
  }
  ::kill(pid, SIGTERM);
  int status = 0;
  ::waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
}
