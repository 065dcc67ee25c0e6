// Command-line front end: forge corpora, train/evaluate models, run the
// analysis passes, aggregate reports, and reproduce the shipped presets.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "iml/runner.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  int64_t seed = -1;
};

uint64_t pick_seed(const iml::ExperimentConfig& config, int64_t seed_flag) {
  if (seed_flag >= 0) return static_cast<uint64_t>(seed_flag);
  iml::check(!config.seeds.empty(), "config has an empty seed list");
  return config.seeds.front();
}

std::string run_dir_for(const iml::ExperimentConfig& config, uint64_t seed,
                        const std::string& out_flag) {
  if (!out_flag.empty()) return out_flag;
  return config.out_dir + "/seed" + std::to_string(seed);
}

std::string self_path() {
  char buf[4096];
  ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  iml::check(n > 0, "cannot resolve own executable path");
  buf[n] = '\0';
  return std::string(buf);
}

/// Runs `argv` as a child process, returns its exit code.
int spawn_child(const std::vector<std::string>& argv) {
  std::vector<char*> raw;
  for (const auto& a : argv) raw.push_back(const_cast<char*>(a.c_str()));
  raw.push_back(nullptr);
  pid_t pid = ::fork();
  iml::check(pid >= 0, "fork failed");
  if (pid == 0) {
    ::execv(raw[0], raw.data());
    std::perror("execv");
    ::_exit(127);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128;
}

/// Fans the seed list out to independent child `train` runs, at most `jobs`
/// at a time, after forging each seed's bundle in-process.
void repro_one(const iml::ExperimentConfig& config, const std::string& root,
               int64_t seed_flag, int jobs) {
  fs::create_directories(root);
  iml::ExperimentConfig resolved = config;
  resolved.out_dir = root;
  iml::save_config(resolved, root + "/config.json");

  std::vector<uint64_t> seeds = resolved.seeds;
  if (seed_flag >= 0) seeds = {static_cast<uint64_t>(seed_flag)};

  for (uint64_t s : seeds) iml::cmd_forge(resolved, s, root + "/seed" + std::to_string(s));

  const std::string self = self_path();
  std::vector<std::pair<uint64_t, pid_t>> running;
  auto reap_one = [&]() {
    int status = 0;
    pid_t done = ::wait(&status);
    int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128;
    for (size_t i = 0; i < running.size(); ++i) {
      if (running[i].second == done) {
        iml::check(code == 0, "seed " + std::to_string(running[i].first) +
                                  " child run failed with exit code " + std::to_string(code));
        running.erase(running.begin() + static_cast<long>(i));
        return;
      }
    }
  };
  for (uint64_t s : seeds) {
    while (static_cast<int>(running.size()) >= jobs) reap_one();
    std::vector<std::string> argv = {self,
                                     "train",
                                     "--config",
                                     root + "/config.json",
                                     "--seed",
                                     std::to_string(s),
                                     "--out",
                                     root + "/seed" + std::to_string(s)};
    std::vector<char*> raw;
    for (const auto& a : argv) raw.push_back(const_cast<char*>(a.c_str()));
    raw.push_back(nullptr);
    pid_t pid = ::fork();
    iml::check(pid >= 0, "fork failed");
    if (pid == 0) {
      ::execv(raw[0], raw.data());
      std::perror("execv");
      ::_exit(127);
    }
    running.emplace_back(s, pid);
    std::cout << "seed " << s << ": training started (pid " << pid << ")\n";
  }
  while (!running.empty()) reap_one();

  iml::cmd_report(root);
  std::cout << "report written under " << root << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic definition/QA corpora, from-scratch transformer training, and the "
               "two-stage analysis suite"};
  app.require_subcommand(1);

  CommonArgs forge_args, train_args, eval_args, align_args, probe_args;
  std::string eval_ckpt, align_ckpt, probe_ckpt;
  std::string report_dir;
  std::string preset_name, repro_out;
  int64_t repro_seed = -1;
  int repro_jobs = 2;

  auto add_common = [](CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    cmd->add_option("--config", args.config_path, "experiment config file (JSON)")
        ->required(config_required);
    cmd->add_option("--seed", args.seed, "seed (overrides the config seed list)");
    cmd->add_option("--out", args.out_dir, "run directory (default <out_dir>/seed<seed>)");
  };

  CLI::App* forge_cmd = app.add_subcommand("forge", "generate a dataset bundle");
  add_common(forge_cmd, forge_args);
  CLI::App* train_cmd = app.add_subcommand("train", "train on a forged bundle");
  add_common(train_cmd, train_args);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the bundle's eval sets");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  CLI::App* align_cmd = app.add_subcommand("align", "gradient alignment analysis of a checkpoint");
  add_common(align_cmd, align_args);
  align_cmd->add_option("--checkpoint", align_ckpt, "checkpoint file")->required();
  CLI::App* probe_cmd = app.add_subcommand("probe", "linear probes on a checkpoint's activations");
  add_common(probe_cmd, probe_args);
  probe_cmd->add_option("--checkpoint", probe_ckpt, "checkpoint file")->required();
  CLI::App* report_cmd = app.add_subcommand("report", "aggregate seed runs into tables and charts");
  report_cmd->add_option("--out", report_dir, "run root containing seed* directories")->required();
  CLI::App* repro_cmd = app.add_subcommand("repro", "run a named preset end to end");
  repro_cmd->add_option("--preset", preset_name, "preset name")->required();
  repro_cmd->add_option("--out", repro_out, "output root (default runs/<preset>)");
  repro_cmd->add_option("--seed", repro_seed, "restrict to a single seed");
  repro_cmd->add_option("--jobs", repro_jobs, "concurrent seed runs")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (forge_cmd->parsed()) {
      auto config = iml::load_config(forge_args.config_path);
      uint64_t seed = pick_seed(config, forge_args.seed);
      iml::cmd_forge(config, seed, run_dir_for(config, seed, forge_args.out_dir));
    } else if (train_cmd->parsed()) {
      auto config = iml::load_config(train_args.config_path);
      uint64_t seed = pick_seed(config, train_args.seed);
      iml::cmd_train(config, seed, run_dir_for(config, seed, train_args.out_dir));
    } else if (eval_cmd->parsed()) {
      auto config = iml::load_config(eval_args.config_path);
      uint64_t seed = pick_seed(config, eval_args.seed);
      iml::cmd_eval(config, seed, run_dir_for(config, seed, eval_args.out_dir), eval_ckpt);
    } else if (align_cmd->parsed()) {
      auto config = iml::load_config(align_args.config_path);
      uint64_t seed = pick_seed(config, align_args.seed);
      iml::cmd_align(config, seed, run_dir_for(config, seed, align_args.out_dir), align_ckpt);
    } else if (probe_cmd->parsed()) {
      auto config = iml::load_config(probe_args.config_path);
      uint64_t seed = pick_seed(config, probe_args.seed);
      iml::cmd_probe(config, seed, run_dir_for(config, seed, probe_args.out_dir), probe_ckpt);
    } else if (report_cmd->parsed()) {
      iml::cmd_report(report_dir);
    } else if (repro_cmd->parsed()) {
      auto presets = iml::make_preset(preset_name);
      std::string root = repro_out.empty() ? "runs/" + preset_name : repro_out;
      for (const auto& [suffix, config] : presets) {
        std::string dir = suffix.empty() ? root : root + "/" + suffix;
        repro_one(config, dir, repro_seed, repro_jobs);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
