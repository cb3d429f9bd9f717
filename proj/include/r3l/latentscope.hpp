#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "r3l/agent.hpp"

namespace r3l {

enum class CollectionMethod { action_replay, pixel_transform };

std::string to_string(CollectionMethod m);
CollectionMethod collection_method_from_string(const std::string& s);

// Aligned frame lists from two environment variations: frame i of u
// corresponds to frame i of v.
struct ParallelCorpus {
  VariationSpec spec_u;
  VariationSpec spec_v;
  CollectionMethod method = CollectionMethod::action_replay;
  std::uint32_t seed = 0;
  std::vector<int> actions;
  std::vector<Observation> frames_u;
  std::vector<Observation> frames_v;

  std::size_t size() const { return frames_u.size(); }
};

// action_replay drives spec_u with the scripted exploratory policy and
// replays the recorded actions on spec_v (same task required).
// pixel_transform recolors spec_u's frames into spec_v's palette; it is
// defined only between the solid-color visuals.
ParallelCorpus collect_parallel(const VariationSpec& spec_u,
                                const VariationSpec& spec_v,
                                std::uint32_t seed, int n_frames,
                                CollectionMethod method);

void save_corpus(const std::string& path, const ParallelCorpus& corpus);
ParallelCorpus load_corpus(const std::string& path);

// M[i][j] = cos(rep_u(frame_u[i]), rep_v(frame_v[j])) where rep is the raw
// encoder latent (absolute space) or its relative projection.
MatX<float> similarity_matrix(const ParallelCorpus& corpus,
                              const PolicyBundle& bundle_u,
                              const PolicyBundle& bundle_v, Mode space);

// Mean of the diagonal minus mean of the off-diagonal entries.
struct GapStats {
  double diag_mean = 0;
  double offdiag_mean = 0;
  double gap = 0;
};

GapStats diagonal_gap(const MatX<float>& m);

// [-1,1] -> [0,255] grayscale PGM.
void export_heatmap(const MatX<float>& matrix, const std::string& path);

// Mean-centered PCA onto the top two components. Deterministic sign
// convention: the largest-magnitude loading of each component is positive.
std::vector<std::array<float, 2>> project_2d(
    const std::vector<Eigen::VectorXf>& vectors);

void write_projection_csv(const std::string& path,
                          const std::vector<std::array<float, 2>>& points,
                          const std::vector<std::string>& labels);

}  // namespace r3l
