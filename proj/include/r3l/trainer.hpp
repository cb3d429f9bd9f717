#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "r3l/agent.hpp"
#include "r3l/rollout.hpp"

namespace r3l {

// PPO configuration. Defaults are recorded into every checkpoint under hp_*.
struct TrainConfig {
  std::int64_t total_steps = 0;
  int n_envs = 8;
  int rollout_len = 128;
  int epochs = 4;
  int minibatch_size = 256;
  float gamma = 0.99f;
  float gae_lambda = 0.95f;
  float clip_eps = 0.2f;
  float entropy_coef = 0.01f;
  float value_coef = 0.5f;
  float lr = 2.5e-4f;
  float grad_clip = 0.5f;
  float alpha = 0.999f;
  bool ema_on_old = false;
  bool ema_every_env_step = false;
  bool norm_adv = true;
  Mode mode = Mode::absolute;
  VariationSpec spec;
  std::uint32_t seed = 1;
  std::int64_t eval_interval = 10000;
  int eval_episodes = 10;
  bool multicolor = false;  // set by train_multicolor, not a config key

  void validate() const;
  std::string serialize() const;

  static TrainConfig parse_text(const std::string& text);
  static TrainConfig parse_file(const std::string& path);
};

struct MetricsRow {
  std::int64_t step = 0;
  double eval_return_mean = 0;
  double eval_return_std = 0;
  double loss_policy = 0;
  double loss_value = 0;
  double entropy = 0;
  double approx_kl = 0;
  double anchor_drift = 0;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  void write_csv(const std::string& path) const;
  static MetricsTable read_csv(const std::string& path);
};

struct TrainResult {
  PolicyBundle bundle;
  MetricsTable metrics;
  bool nan_aborted = false;
  // Largest |ratio - 1| seen on the first minibatch of the first epoch; a
  // log-prob consistency probe between rollout and update paths.
  double max_initial_ratio_dev = 0.0;
  std::uint64_t raw_anchor_checksum_before = 0;
  std::uint64_t raw_anchor_checksum_after = 0;
};

TrainResult train(const TrainConfig& cfg);

// Same loop with the background visual resampled from {green, red, blue} at
// every reset.
TrainResult train_multicolor(TrainConfig cfg);

struct EvalStats {
  double mean = 0;
  double stddev = 0;
  std::vector<double> returns;
};

EvalStats evaluate_greedy(const PolicyBundle& bundle, const VariationSpec& spec,
                          const std::vector<std::uint32_t>& track_seeds,
                          bool multicolor = false);

// The ten fixed track seeds used for periodic evaluation during training.
std::vector<std::uint32_t> eval_track_seeds(std::uint32_t seed, int episodes);

struct SweepRun {
  double alpha = 0;
  bool ema_on_old = false;
  MetricsTable metrics;
};

struct SweepResult {
  std::vector<SweepRun> runs;
  double best_alpha = 0;
  bool best_ema_on_old = false;
  double best_final_eval = 0;
};

// One training run per alpha (per convention when both_conventions is set),
// each from the same base config and seed. Best run = argmax of the final
// evaluation mean.
SweepResult alpha_sweep(const TrainConfig& base,
                        const std::vector<double>& alphas,
                        bool both_conventions = false);

// step column + one eval_mean/eval_std column pair per run.
void write_combined_curves(const SweepResult& sweep, const std::string& path);

}  // namespace r3l
