#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "r3l/rng.hpp"

namespace r3l {

enum class Visual { green, red, blue, far, yellow };
enum class Task { standard, slow, scrambled, no_idle };

// One environment instance is defined by a (visual, task) pair.
struct VariationSpec {
  Visual visual = Visual::green;
  Task task = Task::standard;

  bool operator==(const VariationSpec&) const = default;
};

std::string to_string(Visual v);
std::string to_string(Task t);
std::string to_string(const VariationSpec& spec);
Visual visual_from_string(const std::string& s);
Task task_from_string(const std::string& s);

// Action indices: 0 steer left, 1 steer right, 2 accelerate, 3 brake,
// 4 idle (absent under no_idle). The scrambled task remaps incoming actions
// through this fixed permutation before the dynamics see them.
inline constexpr std::array<int, 5> kScrambledPermutation = {2, 3, 0, 1, 4};

struct Observation {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;  // row-major, RGB interleaved
  int frame_index = 0;

  bool operator==(const Observation&) const = default;
  std::uint64_t checksum() const;
};

struct StepResult {
  Observation obs;
  float reward = 0.0f;
  bool done = false;
};

// Top-down looped-track driving on a 48x48 pixel frame. The road is divided
// into angular checkpoint sectors; entering an unvisited sector on the road
// pays the checkpoint bonus, and the episode ends when the whole lap has
// been covered (the slow task gets the longer cap for exactly that reason).
// Everything is deterministic given (spec, seed, action sequence): track
// layout, dynamics, rendering, and per-reset visual cycling.
class GridRacer {
 public:
  static constexpr int kFrame = 48;
  static constexpr int kWorld = 192;  // generous run-off before out-of-bounds
#ifndef R3L_MAX_SPEED
#define R3L_MAX_SPEED 2.0f
#endif
#ifndef R3L_CHECKPOINTS
#define R3L_CHECKPOINTS 32
#endif
  static constexpr float kMaxSpeed = R3L_MAX_SPEED;
  static constexpr float kSpeedLimit = 0.5f * kMaxSpeed;  // slow task
  static constexpr float kCheckpointBonus = 10.0f;
  static constexpr float kStepPenalty = 0.1f;
  static constexpr float kCrashPenalty = 100.0f;
  static constexpr int kCheckpoints = R3L_CHECKPOINTS;

  GridRacer(VariationSpec spec, std::uint32_t seed);

  const VariationSpec& spec() const { return spec_; }
  int action_count() const { return spec_.task == Task::no_idle ? 4 : 5; }
  int episode_cap() const { return spec_.task == Task::slow ? 3000 : 1000; }

  // Draws the visual uniformly from `cycle` at every reset.
  void set_visual_cycle(std::vector<Visual> cycle);

  Observation reset();
  StepResult step(int action);

  bool done() const { return done_; }
  int step_count() const { return step_count_; }

  // Read-only state for scripted policies and oracles.
  float pos_x() const { return x_; }
  float pos_y() const { return y_; }
  int heading() const { return heading_; }
  float speed() const { return speed_; }
  bool lap_completed() const { return lap_completed_; }
  int visited_checkpoints() const;
  // Center of checkpoint sector `index` on the centerline.
  std::pair<float, float> checkpoint_pos(int index) const;
  int checkpoint_sector(float x, float y) const;
  bool on_road(float x, float y) const;
  // Centerline point at polar angle phi around the track center.
  std::pair<float, float> centerline_point(double phi) const;
  double car_angle() const;
  bool on_track(float x, float y) const;
  Visual current_visual() const { return visual_; }

  Observation render() const;

 private:
  void build_track();
  void place_car();

  VariationSpec spec_;
  Visual visual_;
  std::vector<Visual> visual_cycle_;
  Pcg32 track_rng_;
  Pcg32 cycle_rng_;

  std::vector<std::uint8_t> world_;      // 0 bg, 1 track, 2 marker
  std::vector<std::uint8_t> world_far_;  // same classes, thickened for zoom-out
  std::vector<std::uint8_t> drivable_;   // road plus run-off apron
  std::vector<std::pair<float, float>> checkpoints_;
  std::array<float, 12> radii_{};

  float x_ = 0, y_ = 0;
  int heading_ = 0;
  float speed_ = 0;
  std::vector<bool> visited_;
  bool lap_completed_ = false;
  int step_count_ = 0;
  int frame_index_ = 0;
  bool done_ = true;
};

// Replays an action sequence from scratch. Stops early if the episode ends;
// `truncated` is set in that case. Frame 0 is the reset observation.
struct ReplayResult {
  std::vector<Observation> frames;
  std::vector<float> rewards;
  std::vector<bool> dones;
  bool truncated = false;
};

ReplayResult replay(const VariationSpec& spec, std::uint32_t seed,
                    const std::vector<int>& actions);

// Epsilon-greedy track-following heuristic used for data collection.
int track_following_action(const GridRacer& env, Pcg32& rng, float eps);

// Rollout record: spec + seed + the action bytes needed to reproduce it.
struct RolloutRecord {
  VariationSpec spec;
  std::uint32_t seed = 0;
  std::vector<int> actions;
};

void save_rollout_record(const std::string& path, const RolloutRecord& rec);
RolloutRecord load_rollout_record(const std::string& path);

// Frame dump for inspection.
void dump_frame_ppm(const std::string& path, const Observation& obs);

}  // namespace r3l
