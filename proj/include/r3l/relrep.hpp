#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "r3l/gridracer.hpp"
#include "r3l/tensor.hpp"

namespace r3l {

// Reference landmarks for the relative projection: raw observations plus
// their current (EMA-smoothed) embeddings under some encoder.
struct AnchorSet {
  std::vector<Observation> raw;   // d single frames
  MatX<float> embedded;           // d x m
  float alpha = 0.999f;
  std::string provenance;

  // degenerate-input warnings (zero-norm cosines, skipped EMA rows)
  mutable std::int64_t degenerate_count = 0;
  std::int64_t skipped_update_rows = 0;

  int count() const { return static_cast<int>(embedded.rows()); }
  int latent_width() const { return static_cast<int>(embedded.cols()); }
};

// Vector of cosine similarities between one latent and the anchor set.
struct RelativeEmbedding {
  Eigen::VectorXf values;
};

// values[k] = cos(latent, anchor_k). Zero-norm latents or anchor rows give
// cosine 0 and increment the anchor set's degenerate counter.
RelativeEmbedding project(const Eigen::VectorXf& latent,
                          const AnchorSet& anchors);

// Batched form: one latent per row, one RelativeEmbedding per row.
MatX<float> project_rows(const MatX<float>& latents, const AnchorSet& anchors);

// Blends freshly computed anchor embeddings into the stored ones. With the
// default convention the stored matrix becomes
//   alpha * fresh + (1 - alpha) * previous;
// ema_on_old flips the weights. Rows with non-finite fresh values are
// skipped and counted.
void ema_update(AnchorSet& anchors, const MatX<float>& fresh,
                bool ema_on_old = false);

using FrameEncoder = std::function<Eigen::VectorXf(const Observation&)>;

// Per-frame encode -> project -> concatenate (oldest frame first).
Eigen::VectorXf embed_stack(const std::vector<Observation>& frames,
                            const FrameEncoder& encoder,
                            const AnchorSet& anchors,
                            int expected_stack = 4);

// Collects anchor frames by driving a scripted policy on the given spec and
// uniformly subsampling the rollout. Deterministic in (spec, seed).
std::vector<Observation> collect_anchor_frames(const VariationSpec& spec,
                                               std::uint32_t seed, int count,
                                               int rollout_len = 200,
                                               float eps = 0.2f);

// Full anchor-set construction: collect frames, embed them, set provenance.
AnchorSet make_anchor_set(const VariationSpec& spec, std::uint32_t seed,
                          int count, const FrameEncoder& encoder,
                          float alpha);

void save_anchor_set(const std::string& path, const AnchorSet& anchors);
AnchorSet load_anchor_set(const std::string& path);

std::uint64_t file_hash(const std::string& path);

}  // namespace r3l
