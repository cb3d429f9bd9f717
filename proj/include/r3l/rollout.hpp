#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "r3l/gridracer.hpp"
#include "r3l/tensor.hpp"

namespace r3l {

struct GaeResult {
  MatX<float> advantages;  // T x N
  MatX<float> returns;     // advantages + values
};

// Standard generalized advantage estimation over time-major arrays.
// dones[t][i] = 1 when env i's episode terminated at step t; bootstrap holds
// the value estimate of the observation after the last stored step.
GaeResult compute_gae(const MatX<float>& rewards, const MatX<float>& values,
                      const MatX<float>& dones,
                      const Eigen::VectorXf& bootstrap, float gamma,
                      float lam);

// Per-minibatch advantage normalization (mean 0, std 1).
void normalize_advantages(Eigen::VectorXf& adv);

// Experience for one PPO iteration. Frames live in a pool; each step stores
// the ids of its observation stack (oldest first), so shared frames are
// encoded once during updates. Stack tails survive iteration boundaries via
// begin_iteration.
class RolloutBuffer {
 public:
  RolloutBuffer(int n_envs, int rollout_len, int frame_stack);

  int n_envs() const { return n_envs_; }
  int rollout_len() const { return rollout_len_; }
  int batch_size() const { return n_envs_ * rollout_len_; }

  // Clears step data and compacts the pool down to the frames still
  // referenced by the env stack states.
  void begin_iteration(std::vector<std::array<int, 4>>& stack_states);

  int add_frame(Observation obs);
  const Observation& frame(int id) const { return pool_[static_cast<std::size_t>(id)]; }
  int pool_size() const { return static_cast<int>(pool_.size()); }

  void record(int t, int env, const std::array<int, 4>& stack, int action,
              float log_prob, float value, float reward, bool done);

  void fill_advantages(const Eigen::VectorXf& bootstrap, float gamma,
                       float lam);
  bool advantages_ready() const { return advantages_ready_; }

  // Flat views, index j = t * n_envs + env.
  const std::array<int, 4>& stack_of(int flat) const {
    return stacks_[static_cast<std::size_t>(flat)];
  }
  int action_of(int flat) const { return actions_[static_cast<std::size_t>(flat)]; }
  float log_prob_of(int flat) const { return log_probs_[static_cast<std::size_t>(flat)]; }
  float value_of(int flat) const { return values_flat_[static_cast<std::size_t>(flat)]; }
  float advantage_of(int flat) const { return advantages_flat_[static_cast<std::size_t>(flat)]; }
  float return_of(int flat) const { return returns_flat_[static_cast<std::size_t>(flat)]; }

  const MatX<float>& rewards() const { return rewards_; }
  const MatX<float>& values() const { return values_; }
  const MatX<float>& dones() const { return dones_; }

 private:
  int n_envs_;
  int rollout_len_;
  int frame_stack_;
  std::vector<Observation> pool_;
  std::vector<std::array<int, 4>> stacks_;
  std::vector<int> actions_;
  std::vector<float> log_probs_;
  std::vector<float> values_flat_;
  std::vector<float> advantages_flat_;
  std::vector<float> returns_flat_;
  MatX<float> rewards_, values_, dones_;
  bool advantages_ready_ = false;
};

}  // namespace r3l
