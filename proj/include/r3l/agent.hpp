#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "r3l/gridracer.hpp"
#include "r3l/optim.hpp"
#include "r3l/relrep.hpp"
#include "r3l/tape.hpp"

namespace r3l {

enum class Mode { absolute, relative };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

// Fixed architecture. The encoder is the convolutional stack up to and
// including the dense layer that produces the latent; the controller is
// everything after it, value head included, so stitching swaps both the
// action and value functions.
struct NetDims {
  static constexpr int frame_stack = 4;
  static constexpr int latent_width = 128;   // m
  static constexpr int anchor_count = 64;    // d, controller input per frame
  static constexpr int conv1_out = 16, conv1_k = 4, conv1_s = 2;
  static constexpr int conv2_out = 32, conv2_k = 3, conv2_s = 2;
  static constexpr int conv3_out = 32, conv3_k = 3, conv3_s = 1;
  static constexpr int hidden1 = 128, hidden2 = 64;

  static int conv_flat_size();  // flatten width for 48x48 inputs
  static int controller_input(Mode mode);
};

// Encoder weights + controller weights + mode + provenance metadata. The
// anchor set is present exactly in relative mode.
struct PolicyBundle {
  Mode mode = Mode::absolute;
  VariationSpec spec;
  std::uint32_t seed = 0;
  int action_count = 5;
  ParamStore params;
  std::optional<AnchorSet> anchors;
  std::map<std::string, std::string> metadata;
};

PolicyBundle init_policy(Mode mode, const VariationSpec& spec,
                         std::uint32_t seed);

// Frame -> latent, batched over rows for throughput.
Eigen::VectorXf encode_frame(const ParamStore& params, const Observation& obs);
MatX<float> encode_frames(const ParamStore& params,
                          const std::vector<const Observation*>& frames);

// Converts u8 frames into the [N,C,H,W] float tensor the conv stack expects.
Tensor frames_to_tensor(const std::vector<const Observation*>& frames);

struct ControllerOut {
  Eigen::VectorXf logits;
  float value = 0.0f;
};

ControllerOut controller_forward(const ParamStore& params,
                                 const Eigen::VectorXf& input);

struct ControllerBatchOut {
  MatX<float> logits;       // N x actions
  Eigen::VectorXf values;   // N
};

ControllerBatchOut controller_forward_batch(const ParamStore& params,
                                            const MatX<float>& inputs);

// Assembles the controller input for a stack of frames under the bundle's
// mode (concatenated latents or concatenated relative embeddings).
Eigen::VectorXf controller_input_for(const PolicyBundle& bundle,
                                     const std::vector<Observation>& stack);

struct ActResult {
  int action = 0;
  float log_prob = 0.0f;
  float value = 0.0f;
};

// sample=false takes the argmax (ties resolved to the lowest index);
// sample=true draws from the categorical distribution using rng.
ActResult act(const PolicyBundle& bundle, const std::vector<Observation>& stack,
              bool sample, Pcg32& rng);

// Runs one full greedy episode, encoding each frame once and shifting the
// stack incrementally. Action choices match act(bundle, stack, false, ...).
struct EpisodeResult {
  double total_reward = 0;
  int steps = 0;
  std::vector<int> actions;
};

EpisodeResult run_episode_greedy(const PolicyBundle& bundle, GridRacer& env);

// Per-frame block for the controller input: the latent itself in absolute
// mode, its relative projection otherwise.
Eigen::VectorXf frame_block(const PolicyBundle& bundle, const Observation& obs);

// Checkpoint I/O. Relative bundles write an anchor sidecar next to the
// checkpoint and record its hash; load verifies it.
void save_bundle(const PolicyBundle& bundle, const std::string& path);
PolicyBundle load_bundle(const std::string& path);

std::string anchor_sidecar_path(const std::string& checkpoint_path);

}  // namespace r3l
