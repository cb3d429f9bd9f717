#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "r3l/agent.hpp"

namespace r3l {

struct EncoderEntry {
  Mode mode = Mode::absolute;
  VariationSpec spec;
  std::uint32_t seed = 0;
  ParamStore params;  // enc.* weights only
  std::optional<AnchorSet> anchors;
  std::uint64_t weight_hash = 0;
  std::string source;
};

struct ControllerEntry {
  Mode mode = Mode::absolute;
  VariationSpec spec;
  std::uint32_t seed = 0;
  int action_count = 5;
  ParamStore params;  // ctrl.* weights only
  std::uint64_t weight_hash = 0;
  std::string source;
};

// Immutable collection of encoder and controller halves split out of trained
// bundles.
class ModuleRegistry {
 public:
  void add_bundle(const PolicyBundle& bundle, const std::string& source = "");

  // Loads every *.r3lp checkpoint under dir. Unreadable files are skipped and
  // reported through warnings.
  static ModuleRegistry from_directory(const std::string& dir,
                                       std::vector<std::string>* warnings);

  const std::vector<EncoderEntry>& encoders() const { return encoders_; }
  const std::vector<ControllerEntry>& controllers() const {
    return controllers_;
  }
  bool empty() const { return encoders_.empty() && controllers_.empty(); }

 private:
  std::vector<EncoderEntry> encoders_;
  std::vector<ControllerEntry> controllers_;
};

bool stitch_admissible(const EncoderEntry& enc, const ControllerEntry& ctrl,
                       std::string* why = nullptr);

// Welds an encoder to a controller with no weight modification. Relative
// stitches carry the encoder's anchor set.
PolicyBundle stitch(const EncoderEntry& enc, const ControllerEntry& ctrl);

struct StitchResult {
  Mode mode = Mode::absolute;
  VariationSpec encoder_spec;
  std::uint32_t encoder_seed = 0;
  VariationSpec controller_spec;
  std::uint32_t controller_seed = 0;
  std::vector<std::uint32_t> track_seeds;
  std::vector<double> per_track_returns;
  double mean = 0;
  double stddev = 0;
};

struct MatrixCell {
  Mode mode = Mode::absolute;
  Visual visual = Visual::green;  // evaluation visual (from encoders)
  Task task = Task::standard;     // evaluation task (from controllers)
  std::vector<StitchResult> pairs;
  double mean = 0;
  double stddev = 0;
  int score_count = 0;
};

struct MatrixResult {
  std::vector<MatrixCell> cells;  // absent cells are omitted

  void write_pair_csv(const std::string& path) const;
  void write_cell_csv(const std::string& path) const;
};

// Evaluates every admissible encoder x controller pair on the encoder's
// visual and the controller's task, greedily, over the given track seeds.
// Same-variation cells only admit pairs with different training seeds.
// threads > 1 evaluates pairs concurrently; results are identical.
MatrixResult evaluate_matrix(const ModuleRegistry& registry,
                             const std::vector<std::uint32_t>& track_seeds,
                             int threads = 1);

struct TimeSavedReport {
  int visual_count = 0;
  int task_count = 0;
  std::vector<std::vector<double>> cell_hours;  // [task][visual]
  std::vector<std::pair<int, int>> trained_cells;
  double trained_hours = 0;
  double total_hours = 0;
  double saved_hours = 0;

  std::string render() const;
};

// Training-time accounting: a diagonal of max(visual_count, task_count)
// trained cells covers every variation on both axes; all remaining agents
// come from stitching.
TimeSavedReport time_saved(int visual_count, int task_count,
                           const std::vector<std::vector<double>>& cell_hours);

}  // namespace r3l
