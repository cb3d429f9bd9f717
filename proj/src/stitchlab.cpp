#include "r3l/stitchlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "r3l/common.hpp"
#include "r3l/trainer.hpp"

namespace r3l {

namespace {

bool is_encoder_param(const std::string& name) {
  return name.rfind("enc.", 0) == 0;
}

ParamStore copy_params(const ParamStore& src, bool encoder_half) {
  ParamStore out;
  for (const auto& name : src.order)
    if (is_encoder_param(name) == encoder_half) out.add(name, src.param(name));
  return out;
}

// Frames per stack times per-frame block width, derived from the controller's
// first dense layer.
int controller_block_width(const ControllerEntry& ctrl) {
  return ctrl.params.param("ctrl.fc1.w").dim(1) / NetDims::frame_stack;
}

int encoder_block_width(const EncoderEntry& enc) {
  if (enc.mode == Mode::relative) {
    if (!enc.anchors) return -1;
    return enc.anchors->count();
  }
  return NetDims::latent_width;
}

}  // namespace

void ModuleRegistry::add_bundle(const PolicyBundle& bundle,
                                const std::string& source) {
  EncoderEntry enc;
  enc.mode = bundle.mode;
  enc.spec = bundle.spec;
  enc.seed = bundle.seed;
  enc.params = copy_params(bundle.params, true);
  enc.anchors = bundle.anchors;
  enc.weight_hash = enc.params.checksum();
  enc.source = source;
  encoders_.push_back(std::move(enc));

  ControllerEntry ctrl;
  ctrl.mode = bundle.mode;
  ctrl.spec = bundle.spec;
  ctrl.seed = bundle.seed;
  ctrl.action_count = bundle.action_count;
  ctrl.params = copy_params(bundle.params, false);
  ctrl.weight_hash = ctrl.params.checksum();
  ctrl.source = source;
  controllers_.push_back(std::move(ctrl));
}

ModuleRegistry ModuleRegistry::from_directory(
    const std::string& dir, std::vector<std::string>* warnings) {
  if (!std::filesystem::is_directory(dir))
    fail("registry directory '", dir, "' does not exist");
  std::vector<std::string> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".r3lp")
      paths.push_back(entry.path().string());
  std::sort(paths.begin(), paths.end());
  ModuleRegistry reg;
  for (const auto& path : paths) {
    try {
      PolicyBundle bundle = load_bundle(path);
      reg.add_bundle(bundle, std::filesystem::path(path).filename().string());
    } catch (const Error& e) {
      if (warnings)
        warnings->push_back(cat("skipping '", path, "': ", e.what()));
    }
  }
  return reg;
}

bool stitch_admissible(const EncoderEntry& enc, const ControllerEntry& ctrl,
                       std::string* why) {
  if (enc.mode != ctrl.mode) {
    if (why)
      *why = cat("mode mismatch: encoder is ", to_string(enc.mode),
                 ", controller is ", to_string(ctrl.mode));
    return false;
  }
  int eb = encoder_block_width(enc);
  int cb = controller_block_width(ctrl);
  if (eb != cb) {
    if (why)
      *why = cat("width mismatch: encoder provides ", eb,
                 " values per frame, controller expects ", cb);
    return false;
  }
  return true;
}

PolicyBundle stitch(const EncoderEntry& enc, const ControllerEntry& ctrl) {
  std::string why;
  if (!stitch_admissible(enc, ctrl, &why)) fail("cannot stitch: ", why);
  PolicyBundle out;
  out.mode = enc.mode;
  out.spec = VariationSpec{enc.spec.visual, ctrl.spec.task};
  out.seed = enc.seed;
  out.action_count = ctrl.action_count;
  for (const auto& name : enc.params.order)
    out.params.add(name, enc.params.param(name));
  for (const auto& name : ctrl.params.order)
    out.params.add(name, ctrl.params.param(name));
  out.anchors = enc.anchors;
  out.metadata["stitched"] = "1";
  out.metadata["encoder_spec"] = to_string(enc.spec);
  out.metadata["encoder_seed"] = std::to_string(enc.seed);
  out.metadata["controller_spec"] = to_string(ctrl.spec);
  out.metadata["controller_seed"] = std::to_string(ctrl.seed);
  return out;
}

MatrixResult evaluate_matrix(const ModuleRegistry& registry,
                             const std::vector<std::uint32_t>& track_seeds,
                             int threads) {
  struct PairJob {
    const EncoderEntry* enc;
    const ControllerEntry* ctrl;
    std::size_t cell;
  };

  // Cells: distinct (mode, encoder visual, controller task) combinations in
  // registration order.
  MatrixResult result;
  std::vector<PairJob> jobs;
  auto cell_index = [&](Mode mode, Visual v, Task t) {
    for (std::size_t i = 0; i < result.cells.size(); ++i)
      if (result.cells[i].mode == mode && result.cells[i].visual == v &&
          result.cells[i].task == t)
        return i;
    MatrixCell cell;
    cell.mode = mode;
    cell.visual = v;
    cell.task = t;
    result.cells.push_back(cell);
    return result.cells.size() - 1;
  };

  // Same-variation pairs count only across training seeds, except when a
  // cell would otherwise be empty: a registry with a single bundle still
  // evaluates its own encoder+controller pair (the self-stitching identity).
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& enc : registry.encoders()) {
      for (const auto& ctrl : registry.controllers()) {
        if (!stitch_admissible(enc, ctrl, nullptr)) continue;
        bool self_pair = enc.spec == ctrl.spec && enc.seed == ctrl.seed;
        if ((pass == 0) == self_pair) continue;
        std::size_t cell = cell_index(enc.mode, enc.spec.visual, ctrl.spec.task);
        if (pass == 1) {
          bool populated = false;
          for (const auto& job : jobs) populated |= job.cell == cell;
          if (populated) continue;
        }
        jobs.push_back({&enc, &ctrl, cell});
      }
    }
  }

  std::vector<StitchResult> outcomes(jobs.size());
  auto run_job = [&](std::size_t j) {
    const PairJob& job = jobs[j];
    PolicyBundle bundle = stitch(*job.enc, *job.ctrl);
    VariationSpec eval_spec{job.enc->spec.visual, job.ctrl->spec.task};
    EvalStats stats = evaluate_greedy(bundle, eval_spec, track_seeds);
    StitchResult r;
    r.mode = job.enc->mode;
    r.encoder_spec = job.enc->spec;
    r.encoder_seed = job.enc->seed;
    r.controller_spec = job.ctrl->spec;
    r.controller_seed = job.ctrl->seed;
    r.track_seeds = track_seeds;
    r.per_track_returns = stats.returns;
    r.mean = stats.mean;
    r.stddev = stats.stddev;
    outcomes[j] = std::move(r);
  };

  if (threads <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    std::vector<std::thread> pool;
    std::size_t stride = static_cast<std::size_t>(threads);
    for (std::size_t t = 0; t < stride; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t j = t; j < jobs.size(); j += stride) run_job(j);
      });
    for (auto& th : pool) th.join();
  }

  for (std::size_t j = 0; j < jobs.size(); ++j)
    result.cells[jobs[j].cell].pairs.push_back(std::move(outcomes[j]));

  for (auto& cell : result.cells) {
    double sum = 0;
    int n = 0;
    for (const auto& p : cell.pairs)
      for (double r : p.per_track_returns) {
        sum += r;
        ++n;
      }
    cell.score_count = n;
    cell.mean = n ? sum / n : 0;
    double sq = 0;
    for (const auto& p : cell.pairs)
      for (double r : p.per_track_returns) sq += (r - cell.mean) * (r - cell.mean);
    cell.stddev = n ? std::sqrt(sq / n) : 0;
  }
  return result;
}

void MatrixResult::write_pair_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail("cannot open '", path, "' for writing");
  out << "encoder_visual,encoder_task,encoder_seed,controller_visual,"
         "controller_task,controller_seed,track_seed,return\n";
  for (const auto& cell : cells)
    for (const auto& p : cell.pairs)
      for (std::size_t k = 0; k < p.per_track_returns.size(); ++k) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%s,%u,%s,%s,%u,%u,%.9g\n",
                      to_string(p.encoder_spec.visual).c_str(),
                      to_string(p.encoder_spec.task).c_str(), p.encoder_seed,
                      to_string(p.controller_spec.visual).c_str(),
                      to_string(p.controller_spec.task).c_str(),
                      p.controller_seed, p.track_seeds[k],
                      p.per_track_returns[k]);
        out << buf;
      }
  if (!out) fail("short write to '", path, "'");
}

void MatrixResult::write_cell_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail("cannot open '", path, "' for writing");
  out << "mode,visual,task,pairs,scores,mean,std\n";
  for (const auto& cell : cells) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%zu,%d,%.9g,%.9g\n",
                  to_string(cell.mode).c_str(),
                  to_string(cell.visual).c_str(), to_string(cell.task).c_str(),
                  cell.pairs.size(), cell.score_count, cell.mean, cell.stddev);
    out << buf;
  }
  if (!out) fail("short write to '", path, "'");
}

TimeSavedReport time_saved(int visual_count, int task_count,
                           const std::vector<std::vector<double>>& cell_hours) {
  if (visual_count < 1 || task_count < 1)
    fail("time_saved: counts must be at least 1, got ", visual_count, "x",
         task_count);
  if (static_cast<int>(cell_hours.size()) != task_count)
    fail("time_saved: expected ", task_count, " cost rows, got ",
         cell_hours.size());
  for (const auto& row : cell_hours) {
    if (static_cast<int>(row.size()) != visual_count)
      fail("time_saved: expected ", visual_count, " costs per row, got ",
           row.size());
    for (double h : row)
      if (!(h > 0)) fail("time_saved: cell costs must be positive, got ", h);
  }

  TimeSavedReport rep;
  rep.visual_count = visual_count;
  rep.task_count = task_count;
  rep.cell_hours = cell_hours;
  for (const auto& row : cell_hours)
    for (double h : row) rep.total_hours += h;
  int diag = std::max(visual_count, task_count);
  for (int k = 0; k < diag; ++k) {
    int t = k % task_count;
    int v = k % visual_count;
    rep.trained_cells.emplace_back(t, v);
    rep.trained_hours += cell_hours[static_cast<std::size_t>(t)]
                                   [static_cast<std::size_t>(v)];
  }
  rep.saved_hours = rep.total_hours - rep.trained_hours;
  return rep;
}

std::string TimeSavedReport::render() const {
  std::ostringstream os;
  os << "training-time accounting (" << task_count << " tasks x "
     << visual_count << " visuals)\n\n";
  os << "      ";
  for (int v = 0; v < visual_count; ++v) {
    char h[16];
    std::snprintf(h, sizeof(h), "%8s", cat("V", v + 1).c_str());
    os << h;
  }
  os << "\n";
  for (int t = 0; t < task_count; ++t) {
    char rowh[16];
    std::snprintf(rowh, sizeof(rowh), "%-6s", cat("T", t + 1).c_str());
    os << rowh;
    for (int v = 0; v < visual_count; ++v) {
      bool trained = false;
      for (auto [tt, tv] : trained_cells)
        if (tt == t && tv == v) trained = true;
      char buf[32];
      std::snprintf(buf, sizeof(buf), trained ? "  [%4gh]" : "   %4gh ",
                    cell_hours[static_cast<std::size_t>(t)]
                              [static_cast<std::size_t>(v)]);
      os << buf;
    }
    os << "\n";
  }
  os << "\n";
  os << "trained cells ([..], one per variation on each axis): "
     << trained_cells.size() << ", totaling " << trained_hours << " h\n";
  os << "every cell trained end-to-end would total " << total_hours << " h\n";
  os << "saved by stitching the rest: " << saved_hours << " h\n";
  return os.str();
}

}  // namespace r3l
