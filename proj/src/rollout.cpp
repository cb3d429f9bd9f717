#include "r3l/rollout.hpp"

#include <cmath>
#include <unordered_map>

#include "r3l/common.hpp"

namespace r3l {

GaeResult compute_gae(const MatX<float>& rewards, const MatX<float>& values,
                      const MatX<float>& dones,
                      const Eigen::VectorXf& bootstrap, float gamma,
                      float lam) {
  Eigen::Index t_len = rewards.rows(), n = rewards.cols();
  if (values.rows() != t_len || values.cols() != n || dones.rows() != t_len ||
      dones.cols() != n || bootstrap.size() != n)
    fail("compute_gae: misaligned inputs, rewards ", t_len, "x", n,
         ", values ", values.rows(), "x", values.cols(), ", dones ",
         dones.rows(), "x", dones.cols(), ", bootstrap ", bootstrap.size());
  GaeResult out;
  out.advantages = MatX<float>::Zero(t_len, n);
  out.returns = MatX<float>::Zero(t_len, n);
  Eigen::RowVectorXf gae = Eigen::RowVectorXf::Zero(n);
  for (Eigen::Index t = t_len - 1; t >= 0; --t) {
    Eigen::RowVectorXf nonterminal = 1.0f - dones.row(t).array();
    Eigen::RowVectorXf next_value;
    if (t + 1 < t_len)
      next_value = values.row(t + 1);
    else
      next_value = bootstrap.transpose();
    Eigen::RowVectorXf delta =
        rewards.row(t).array() +
        gamma * next_value.array() * nonterminal.array() -
        values.row(t).array();
    gae = delta.array() + gamma * lam * nonterminal.array() * gae.array();
    out.advantages.row(t) = gae;
    out.returns.row(t) = gae + values.row(t);
  }
  return out;
}

void normalize_advantages(Eigen::VectorXf& adv) {
  if (adv.size() == 0) return;
  float mean = adv.mean();
  float var = (adv.array() - mean).square().mean();
  adv = (adv.array() - mean) / (std::sqrt(var) + 1e-8f);
}

RolloutBuffer::RolloutBuffer(int n_envs, int rollout_len, int frame_stack)
    : n_envs_(n_envs), rollout_len_(rollout_len), frame_stack_(frame_stack) {
  if (n_envs < 1 || rollout_len < 1)
    fail("rollout buffer needs positive n_envs and rollout_len");
  std::size_t batch = static_cast<std::size_t>(batch_size());
  stacks_.resize(batch);
  actions_.resize(batch);
  log_probs_.resize(batch);
  values_flat_.resize(batch);
  advantages_flat_.resize(batch);
  returns_flat_.resize(batch);
  rewards_ = MatX<float>::Zero(rollout_len, n_envs);
  values_ = MatX<float>::Zero(rollout_len, n_envs);
  dones_ = MatX<float>::Zero(rollout_len, n_envs);
}

void RolloutBuffer::begin_iteration(
    std::vector<std::array<int, 4>>& stack_states) {
  std::vector<Observation> kept;
  std::unordered_map<int, int> remap;
  for (auto& stack : stack_states) {
    for (auto& id : stack) {
      auto it = remap.find(id);
      if (it == remap.end()) {
        int fresh = static_cast<int>(kept.size());
        kept.push_back(pool_[static_cast<std::size_t>(id)]);
        remap.emplace(id, fresh);
        id = fresh;
      } else {
        id = it->second;
      }
    }
  }
  pool_ = std::move(kept);
  rewards_.setZero();
  values_.setZero();
  dones_.setZero();
  advantages_ready_ = false;
}

int RolloutBuffer::add_frame(Observation obs) {
  pool_.push_back(std::move(obs));
  return static_cast<int>(pool_.size()) - 1;
}

void RolloutBuffer::record(int t, int env, const std::array<int, 4>& stack,
                           int action, float log_prob, float value,
                           float reward, bool done) {
  std::size_t flat = static_cast<std::size_t>(t) * n_envs_ + env;
  stacks_[flat] = stack;
  actions_[flat] = action;
  log_probs_[flat] = log_prob;
  values_flat_[flat] = value;
  rewards_(t, env) = reward;
  values_(t, env) = value;
  dones_(t, env) = done ? 1.0f : 0.0f;
}

void RolloutBuffer::fill_advantages(const Eigen::VectorXf& bootstrap,
                                    float gamma, float lam) {
  GaeResult g = compute_gae(rewards_, values_, dones_, bootstrap, gamma, lam);
  for (int t = 0; t < rollout_len_; ++t)
    for (int i = 0; i < n_envs_; ++i) {
      std::size_t flat = static_cast<std::size_t>(t) * n_envs_ + i;
      advantages_flat_[flat] = g.advantages(t, i);
      returns_flat_[flat] = g.returns(t, i);
    }
  advantages_ready_ = true;
}

}  // namespace r3l
