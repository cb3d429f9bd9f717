// Regenerates the pilot training artifacts that back the acceptance suite.
// Each task is independent, so runs can be spread across processes:
//   r3l_pilot --list
//   r3l_pilot --pilot-dir tests/pilot_data --task train:relative:green:standard:1
// Artifact names match the r3l CLI layout (checkpoints/, metrics/).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <vector>

#include "r3l/common.hpp"
#include "r3l/trainer.hpp"

namespace fs = std::filesystem;
using namespace r3l;

namespace {

std::int64_t pilot_steps() {
  if (const char* env = std::getenv("R3L_PILOT_STEPS"))
    return std::atoll(env);
  return 60000;
}

std::int64_t sweep_steps() {
  if (const char* env = std::getenv("R3L_SWEEP_STEPS"))
    return std::atoll(env);
  return 100000;
}

TrainConfig pilot_config(Mode mode, Visual visual, Task task,
                         std::uint32_t seed) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.spec = {visual, task};
  cfg.seed = seed;
  cfg.total_steps = pilot_steps();
  return cfg;
}

std::string bundle_name(const TrainConfig& cfg) {
  std::string name = cat(to_string(cfg.mode), "_", to_string(cfg.spec.visual),
                         "_", to_string(cfg.spec.task), "_s", cfg.seed);
  if (cfg.multicolor) name += "_mc";
  return name;
}

void save_run(const std::string& pilot_dir, const TrainConfig& cfg,
              const TrainResult& res) {
  fs::create_directories(fs::path(pilot_dir) / "checkpoints");
  fs::create_directories(fs::path(pilot_dir) / "metrics");
  std::string name = bundle_name(cfg);
  save_bundle(res.bundle,
              (fs::path(pilot_dir) / "checkpoints" / (name + ".r3lp")).string());
  res.metrics.write_csv(
      (fs::path(pilot_dir) / "metrics" / (name + ".csv")).string());
  const auto& last = res.metrics.rows.back();
  std::printf("%s: final eval %.1f +- %.1f%s\n", name.c_str(),
              last.eval_return_mean, last.eval_return_std,
              res.nan_aborted ? " [nan-aborted]" : "");
}

// The full grid behind the acceptance suite.
std::vector<std::string> task_list() {
  std::vector<std::string> tasks;
  for (const char* mode : {"absolute", "relative"}) {
    for (std::uint32_t seed : {1u, 2u}) {
      for (const char* visual : {"green", "red", "blue"})
        tasks.push_back(cat("train:", mode, ":", visual, ":standard:", seed));
      tasks.push_back(cat("train:", mode, ":green:scrambled:", seed));
    }
    tasks.push_back(cat("train:", mode, ":green:standard:3"));
  }
  for (std::uint32_t seed : {1u, 2u})
    tasks.push_back(cat("multicolor:", seed));
  tasks.push_back("sweep");
  return tasks;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

int run_task(const std::string& pilot_dir, const std::string& task) {
  auto parts = split(task, ':');
  if (parts[0] == "train" && parts.size() == 5) {
    TrainConfig cfg = pilot_config(
        mode_from_string(parts[1]), visual_from_string(parts[2]),
        task_from_string(parts[3]),
        static_cast<std::uint32_t>(std::stoul(parts[4])));
    save_run(pilot_dir, cfg, train(cfg));
    return 0;
  }
  if (parts[0] == "multicolor" && parts.size() == 2) {
    TrainConfig cfg =
        pilot_config(Mode::absolute, Visual::green, Task::standard,
                     static_cast<std::uint32_t>(std::stoul(parts[1])));
    cfg.multicolor = true;
    save_run(pilot_dir, cfg, train_multicolor(cfg));
    return 0;
  }
  if (parts[0] == "sweep" && parts.size() == 1) {
    TrainConfig base =
        pilot_config(Mode::relative, Visual::green, Task::standard, 1);
    base.total_steps = sweep_steps();
    SweepResult sweep = alpha_sweep(base, {1.0, 0.999, 0.99, 0.9}, true);
    fs::create_directories(fs::path(pilot_dir) / "sweep");
    for (const auto& run : sweep.runs) {
      char label[64];
      std::snprintf(label, sizeof(label), "sweep_a%g%s", run.alpha,
                    run.ema_on_old ? "_onold" : "");
      run.metrics.write_csv(
          (fs::path(pilot_dir) / "sweep" / (std::string(label) + ".csv"))
              .string());
    }
    write_combined_curves(
        sweep, (fs::path(pilot_dir) / "sweep" / "sweep_combined.csv").string());
    std::printf("sweep done: best alpha %g (%s)\n", sweep.best_alpha,
                sweep.best_ema_on_old ? "ema_on_old" : "ema_on_new");
    return 0;
  }
  fail("unknown pilot task '", task, "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pilot artifact generator"};
  std::string pilot_dir = "tests/pilot_data";
  std::string task;
  bool list = false;
  bool all = false;
  app.add_option("--pilot-dir", pilot_dir, "artifact directory");
  app.add_option("--task", task, "one task from --list");
  app.add_flag("--list", list, "print all tasks");
  app.add_flag("--all", all, "run every task sequentially");
  CLI11_PARSE(app, argc, argv);

  try {
    if (list) {
      for (const auto& t : task_list()) std::cout << t << "\n";
      return 0;
    }
    if (all) {
      for (const auto& t : task_list()) run_task(pilot_dir, t);
      return 0;
    }
    if (task.empty()) {
      std::cerr << "pass --task, --all, or --list\n";
      return 1;
    }
    return run_task(pilot_dir, task);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  }
}
