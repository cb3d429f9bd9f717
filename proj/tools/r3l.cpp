// r3l: train, stitch, and analyze GridRacer policies with relative-space
// encoders. One subcommand per workflow stage; see README for examples.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "r3l/common.hpp"
#include "r3l/image.hpp"
#include "r3l/latentscope.hpp"
#include "r3l/manifest.hpp"
#include "r3l/stitchlab.hpp"
#include "r3l/trainer.hpp"

namespace fs = std::filesystem;
using namespace r3l;

namespace {

struct GlobalOpts {
  std::string out_dir;
  std::string config_path;
  std::int64_t seed = -1;  // -1: take the config / subcommand default
  int threads = 1;
};

void make_out_layout(const std::string& out) {
  fs::create_directories(fs::path(out) / "checkpoints");
  fs::create_directories(fs::path(out) / "metrics");
  fs::create_directories(fs::path(out) / "matrices");
  fs::create_directories(fs::path(out) / "heatmaps");
}

std::string run_name(const TrainConfig& cfg) {
  std::string name = cat(to_string(cfg.mode), "_", to_string(cfg.spec.visual),
                         "_", to_string(cfg.spec.task), "_s", cfg.seed);
  if (cfg.multicolor) name += "_mc";
  return name;
}

std::vector<std::uint32_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint32_t> seeds;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty())
      seeds.push_back(static_cast<std::uint32_t>(std::stoul(item)));
  return seeds;
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> vals;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) vals.push_back(std::stod(item));
  return vals;
}

TrainConfig load_config(const GlobalOpts& g) {
  if (g.config_path.empty()) fail("--config is required");
  TrainConfig cfg = TrainConfig::parse_file(g.config_path);
  if (g.seed >= 0) cfg.seed = static_cast<std::uint32_t>(g.seed);
  cfg.validate();
  return cfg;
}

int cmd_train(const GlobalOpts& g, bool multicolor) {
  auto start = std::chrono::steady_clock::now();
  TrainConfig cfg = load_config(g);
  make_out_layout(g.out_dir);
  TrainResult res = multicolor ? train_multicolor(cfg) : train(cfg);
  std::string name = run_name(res.bundle.mode == cfg.mode ? cfg : cfg);
  if (multicolor) cfg.multicolor = true;
  name = run_name(cfg);

  RunManifest manifest;
  manifest.command = multicolor ? "train-multicolor" : "train";
  manifest.config_path = g.config_path;
  manifest.out_dir = g.out_dir;
  manifest.seed = cfg.seed;

  std::string ckpt = cat("checkpoints/", name, ".r3lp");
  save_bundle(res.bundle, (fs::path(g.out_dir) / ckpt).string());
  manifest.add_artifact(ckpt);
  if (res.bundle.mode == Mode::relative) {
    manifest.add_artifact(cat("checkpoints/", name, ".r3la"));
  }
  std::string metrics = cat("metrics/", name, ".csv");
  res.metrics.write_csv((fs::path(g.out_dir) / metrics).string());
  manifest.add_artifact(metrics);

  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  manifest.write((fs::path(g.out_dir) / "manifest.txt").string());

  if (res.nan_aborted) {
    std::cerr << "training aborted on a non-finite loss; last good "
                 "checkpoint written to "
              << ckpt << "\n";
    return 3;
  }
  const auto& last = res.metrics.rows.back();
  std::printf("%s final eval %.1f +- %.1f over %zu rows\n", name.c_str(),
              last.eval_return_mean, last.eval_return_std,
              res.metrics.rows.size());
  return 0;
}

int cmd_sweep_alpha(const GlobalOpts& g, const std::string& alphas_csv,
                    bool both_conventions) {
  auto start = std::chrono::steady_clock::now();
  TrainConfig cfg = load_config(g);
  make_out_layout(g.out_dir);
  std::vector<double> alphas = parse_double_list(alphas_csv);
  if (alphas.empty()) fail("--alphas list is empty");
  SweepResult sweep = alpha_sweep(cfg, alphas, both_conventions);

  RunManifest manifest;
  manifest.command = "sweep-alpha";
  manifest.config_path = g.config_path;
  manifest.out_dir = g.out_dir;
  manifest.seed = cfg.seed;
  for (const auto& run : sweep.runs) {
    char label[64];
    std::snprintf(label, sizeof(label), "sweep_a%g%s", run.alpha,
                  run.ema_on_old ? "_onold" : "");
    std::string rel = cat("metrics/", label, ".csv");
    run.metrics.write_csv((fs::path(g.out_dir) / rel).string());
    manifest.add_artifact(rel);
  }
  std::string combined = "metrics/sweep_combined.csv";
  write_combined_curves(sweep, (fs::path(g.out_dir) / combined).string());
  manifest.add_artifact(combined);
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  manifest.write((fs::path(g.out_dir) / "manifest.txt").string());
  std::printf("best alpha %g (%s) final eval %.1f\n", sweep.best_alpha,
              sweep.best_ema_on_old ? "ema_on_old" : "ema_on_new",
              sweep.best_final_eval);
  return 0;
}

int cmd_collect_anchors(const GlobalOpts& g, const std::string& visual,
                        const std::string& task, int count,
                        const std::string& bundle_path) {
  auto start = std::chrono::steady_clock::now();
  make_out_layout(g.out_dir);
  VariationSpec spec{visual_from_string(visual), task_from_string(task)};
  std::uint32_t seed = g.seed >= 0 ? static_cast<std::uint32_t>(g.seed) : 1;

  FrameEncoder encoder;
  PolicyBundle holder;
  if (!bundle_path.empty()) {
    if (!fs::exists(bundle_path)) fail("missing bundle '", bundle_path, "'");
    holder = load_bundle(bundle_path);
  } else {
    holder = init_policy(Mode::absolute, spec, seed);
  }
  encoder = [&holder](const Observation& o) {
    return encode_frame(holder.params, o);
  };

  AnchorSet set = make_anchor_set(spec, seed, count, encoder, 0.999f);
  RunManifest manifest;
  manifest.command = "collect-anchors";
  manifest.out_dir = g.out_dir;
  manifest.seed = seed;
  std::string rel = cat("checkpoints/anchors_", to_string(spec.visual), "_",
                        to_string(spec.task), "_s", seed, ".r3la");
  save_anchor_set((fs::path(g.out_dir) / rel).string(), set);
  manifest.add_artifact(rel);
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  manifest.write((fs::path(g.out_dir) / "manifest.txt").string());
  std::printf("%d anchors collected on %s\n", set.count(),
              to_string(spec).c_str());
  return 0;
}

int cmd_collect_corpus(const GlobalOpts& g, const std::string& visual_u,
                       const std::string& task_u, const std::string& visual_v,
                       const std::string& task_v, int frames,
                       const std::string& method) {
  auto start = std::chrono::steady_clock::now();
  make_out_layout(g.out_dir);
  VariationSpec u{visual_from_string(visual_u), task_from_string(task_u)};
  VariationSpec v{visual_from_string(visual_v), task_from_string(task_v)};
  std::uint32_t seed = g.seed >= 0 ? static_cast<std::uint32_t>(g.seed) : 1;
  CollectionMethod m = collection_method_from_string(method);
  ParallelCorpus corpus = collect_parallel(u, v, seed, frames, m);

  RunManifest manifest;
  manifest.command = "collect-corpus";
  manifest.out_dir = g.out_dir;
  manifest.seed = seed;
  std::string rel = cat("corpus_", to_string(u.visual), "-", to_string(v.visual),
                        "_", method, "_s", seed, ".r3lc");
  save_corpus((fs::path(g.out_dir) / rel).string(), corpus);
  manifest.add_artifact(rel);
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  manifest.write((fs::path(g.out_dir) / "manifest.txt").string());
  std::printf("collected %zu aligned frame pairs (%s)\n", corpus.size(),
              method.c_str());
  return 0;
}

int cmd_stitch_eval(const GlobalOpts& g, const std::string& registry_dir,
                    const std::string& track_seeds_csv, int tracks,
                    const std::string& task_hours_csv) {
  auto start = std::chrono::steady_clock::now();
  make_out_layout(g.out_dir);
  std::vector<std::string> warnings;
  ModuleRegistry registry =
      ModuleRegistry::from_directory(registry_dir, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  if (registry.empty())
    fail("registry '", registry_dir, "' holds no loadable checkpoints");

  std::vector<std::uint32_t> seeds;
  if (!track_seeds_csv.empty()) {
    seeds = parse_seed_list(track_seeds_csv);
  } else {
    std::uint32_t base = g.seed >= 0 ? static_cast<std::uint32_t>(g.seed) : 1;
    seeds = eval_track_seeds(base, tracks);
  }
  if (seeds.empty()) fail("no track seeds given");

  MatrixResult matrix = evaluate_matrix(registry, seeds, g.threads);
  bool any_pairs = false;
  for (const auto& cell : matrix.cells) any_pairs |= !cell.pairs.empty();
  if (!any_pairs)
    fail_as(ErrorCode::no_admissible_pairs,
            "no admissible encoder/controller pairs in '", registry_dir, "'");

  RunManifest manifest;
  manifest.command = "stitch-eval";
  manifest.out_dir = g.out_dir;
  manifest.seed = seeds[0];
  matrix.write_pair_csv(
      (fs::path(g.out_dir) / "matrices/stitch_pairs.csv").string());
  manifest.add_artifact("matrices/stitch_pairs.csv");
  matrix.write_cell_csv(
      (fs::path(g.out_dir) / "matrices/stitch_cells.csv").string());
  manifest.add_artifact("matrices/stitch_cells.csv");

  if (!task_hours_csv.empty()) {
    std::vector<double> task_hours = parse_double_list(task_hours_csv);
    std::set<Visual> visuals;
    std::set<Task> tasks;
    for (const auto& cell : matrix.cells) {
      visuals.insert(cell.visual);
      tasks.insert(cell.task);
    }
    int vc = static_cast<int>(visuals.size());
    int tc = static_cast<int>(tasks.size());
    if (static_cast<int>(task_hours.size()) != tc)
      fail("--task-hours wants ", tc, " entries (one per task row), got ",
           task_hours.size());
    std::vector<std::vector<double>> cells(static_cast<std::size_t>(tc));
    for (int t = 0; t < tc; ++t)
      cells[static_cast<std::size_t>(t)]
          .assign(static_cast<std::size_t>(vc),
                  task_hours[static_cast<std::size_t>(t)]);
    TimeSavedReport rep = time_saved(vc, tc, cells);
    std::ofstream out(
        (fs::path(g.out_dir) / "matrices/time_saved.txt").string());
    out << rep.render();
    out.close();
    manifest.add_artifact("matrices/time_saved.txt");
    std::printf("%s", rep.render().c_str());
  }

  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  manifest.write((fs::path(g.out_dir) / "manifest.txt").string());

  for (const auto& cell : matrix.cells)
    std::printf("cell %s %s/%s: mean %.1f +- %.1f over %d scores\n",
                to_string(cell.mode).c_str(), to_string(cell.visual).c_str(),
                to_string(cell.task).c_str(), cell.mean, cell.stddev,
                cell.score_count);
  return 0;
}

int cmd_analyze(const GlobalOpts& g, const std::string& corpus_path,
                const std::string& bundle_u_path,
                const std::string& bundle_v_path) {
  auto start = std::chrono::steady_clock::now();
  for (const auto& p : {corpus_path, bundle_u_path, bundle_v_path})
    if (!fs::exists(p)) fail("missing input '", p, "'");
  make_out_layout(g.out_dir);
  ParallelCorpus corpus = load_corpus(corpus_path);
  PolicyBundle bu = load_bundle(bundle_u_path);
  PolicyBundle bv = load_bundle(bundle_v_path);
  if (bu.mode == Mode::relative && !bu.anchors)
    fail_as(ErrorCode::missing_anchors, "bundle '", bundle_u_path,
            "' has no anchors for relative analysis");

  RunManifest manifest;
  manifest.command = "analyze";
  manifest.out_dir = g.out_dir;
  manifest.seed = corpus.seed;

  std::ofstream gap_csv((fs::path(g.out_dir) / "metrics/gap_stats.csv").string());
  gap_csv << "space,diag_mean,offdiag_mean,gap\n";
  for (Mode space : {Mode::absolute, Mode::relative}) {
    if (space == Mode::relative && (!bu.anchors || !bv.anchors))
      fail_as(ErrorCode::missing_anchors,
              "relative analysis needs anchors on both bundles");
    MatX<float> sim = similarity_matrix(corpus, bu, bv, space);
    std::string rel = cat("heatmaps/", to_string(space), ".pgm");
    export_heatmap(sim, (fs::path(g.out_dir) / rel).string());
    manifest.add_artifact(rel);
    GapStats gap = diagonal_gap(sim);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g\n",
                  to_string(space).c_str(), gap.diag_mean, gap.offdiag_mean,
                  gap.gap);
    gap_csv << buf;
    std::printf("%s space: diag %.4f offdiag %.4f gap %.4f\n",
                to_string(space).c_str(), gap.diag_mean, gap.offdiag_mean,
                gap.gap);

    // side-by-side 2-d projections of both encoders' representations
    std::vector<Eigen::VectorXf> reps;
    std::vector<std::string> labels;
    for (const auto* side : {&corpus.frames_u, &corpus.frames_v}) {
      const PolicyBundle& b = side == &corpus.frames_u ? bu : bv;
      const VariationSpec& spec =
          side == &corpus.frames_u ? corpus.spec_u : corpus.spec_v;
      for (const auto& f : *side) {
        Eigen::VectorXf latent = encode_frame(b.params, f);
        if (space == Mode::relative)
          reps.push_back(project(latent, *b.anchors).values);
        else
          reps.push_back(latent);
        labels.push_back(to_string(spec));
      }
    }
    auto points = project_2d(reps);
    std::string proj_rel = cat("metrics/projection_", to_string(space), ".csv");
    write_projection_csv((fs::path(g.out_dir) / proj_rel).string(), points,
                         labels);
    manifest.add_artifact(proj_rel);
  }
  gap_csv.close();
  manifest.add_artifact("metrics/gap_stats.csv");
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  manifest.write((fs::path(g.out_dir) / "manifest.txt").string());
  return 0;
}

int cmd_replay_dump(const GlobalOpts& g, const std::string& visual,
                    const std::string& task, const std::string& record_path,
                    int steps, const std::string& policy) {
  auto start = std::chrono::steady_clock::now();
  make_out_layout(g.out_dir);
  fs::create_directories(fs::path(g.out_dir) / "frames");

  RolloutRecord rec;
  if (!record_path.empty()) {
    if (!fs::exists(record_path)) fail("missing record '", record_path, "'");
    rec = load_rollout_record(record_path);
  } else {
    rec.spec = {visual_from_string(visual), task_from_string(task)};
    rec.seed = g.seed >= 0 ? static_cast<std::uint32_t>(g.seed) : 1;
    GridRacer env(rec.spec, rec.seed);
    env.reset();
    Pcg32 rng(mix_seed(rec.seed, 0xd0d0));
    for (int i = 0; i < steps && !env.done(); ++i) {
      int a = policy == "random"
                  ? static_cast<int>(rng.next_below(
                        static_cast<std::uint32_t>(env.action_count())))
                  : track_following_action(env, rng, 0.2f);
      rec.actions.push_back(a);
      env.step(a);
    }
  }

  ReplayResult rr = replay(rec.spec, rec.seed, rec.actions);
  RunManifest manifest;
  manifest.command = "replay-dump";
  manifest.out_dir = g.out_dir;
  manifest.seed = rec.seed;
  for (std::size_t i = 0; i < rr.frames.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "frames/%05zu.ppm", i);
    dump_frame_ppm((fs::path(g.out_dir) / name).string(), rr.frames[i]);
    manifest.add_artifact(name);
  }
  save_rollout_record((fs::path(g.out_dir) / "record.r3lr").string(), rec);
  manifest.add_artifact("record.r3lr");
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  manifest.write((fs::path(g.out_dir) / "manifest.txt").string());
  std::printf("dumped %zu frames%s\n", rr.frames.size(),
              rr.truncated ? " (episode ended early)" : "");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GridRacer policies with relative-space stitching"};
  app.require_subcommand(1);

  GlobalOpts g;
  if (const char* env_threads = std::getenv("R3L_THREADS"))
    g.threads = std::max(1, std::atoi(env_threads));
  app.add_option("--out", g.out_dir, "output directory")->required();
  app.add_option("--config", g.config_path, "key=value config file");
  app.add_option("--seed", g.seed, "seed override");
  app.add_option("--threads", g.threads, "worker threads where supported");

  auto* train_cmd = app.add_subcommand("train", "PPO training run");
  auto* train_mc_cmd = app.add_subcommand(
      "train-multicolor", "training with per-reset background colors");

  std::string alphas = "1.0,0.999,0.99,0.9";
  bool both_conv = false;
  auto* sweep_cmd =
      app.add_subcommand("sweep-alpha", "train across EMA coefficients");
  sweep_cmd->add_option("--alphas", alphas, "comma-separated alpha list");
  sweep_cmd->add_flag("--both-conventions", both_conv,
                      "run each alpha under both EMA conventions");

  std::string visual = "green", task = "standard", bundle_path;
  int anchor_count = NetDims::anchor_count;
  auto* anchors_cmd =
      app.add_subcommand("collect-anchors", "record an anchor set");
  anchors_cmd->add_option("--visual", visual, "environment visual");
  anchors_cmd->add_option("--task", task, "environment task");
  anchors_cmd->add_option("--count", anchor_count, "anchors to keep");
  anchors_cmd->add_option("--bundle", bundle_path,
                          "embed with this checkpoint's encoder");

  std::string visual_v = "red", task_v = "standard",
              method = "action_replay";
  int corpus_frames = 200;
  auto* corpus_cmd =
      app.add_subcommand("collect-corpus", "aligned frames from two specs");
  corpus_cmd->add_option("--visual-u", visual, "first visual");
  corpus_cmd->add_option("--task-u", task, "first task");
  corpus_cmd->add_option("--visual-v", visual_v, "second visual");
  corpus_cmd->add_option("--task-v", task_v, "second task");
  corpus_cmd->add_option("--frames", corpus_frames, "aligned frame count");
  corpus_cmd->add_option("--method", method,
                         "action_replay or pixel_transform");

  std::string registry_dir, track_seeds_csv, task_hours_csv;
  int tracks = 10;
  auto* stitch_cmd = app.add_subcommand(
      "stitch-eval", "evaluate every admissible encoder x controller pair");
  stitch_cmd->add_option("--registry", registry_dir, "checkpoint directory")
      ->required();
  stitch_cmd->add_option("--track-seeds", track_seeds_csv,
                         "explicit track seed list");
  stitch_cmd->add_option("--tracks", tracks, "derived track seed count");
  stitch_cmd->add_option("--task-hours", task_hours_csv,
                         "per-task training hours for the time report");

  std::string corpus_path, bundle_u, bundle_v;
  auto* analyze_cmd =
      app.add_subcommand("analyze", "similarity heatmaps and gap statistics");
  analyze_cmd->add_option("--corpus", corpus_path, "corpus file")->required();
  analyze_cmd->add_option("--bundle-u", bundle_u, "first checkpoint")
      ->required();
  analyze_cmd->add_option("--bundle-v", bundle_v, "second checkpoint")
      ->required();

  std::string record_path, dump_policy = "heuristic";
  int dump_steps = 100;
  auto* dump_cmd =
      app.add_subcommand("replay-dump", "replay actions and dump PPM frames");
  dump_cmd->add_option("--visual", visual, "environment visual");
  dump_cmd->add_option("--task", task, "environment task");
  dump_cmd->add_option("--record", record_path, "existing rollout record");
  dump_cmd->add_option("--steps", dump_steps, "steps to generate");
  dump_cmd->add_option("--policy", dump_policy, "heuristic or random");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(g, false);
    if (train_mc_cmd->parsed()) return cmd_train(g, true);
    if (sweep_cmd->parsed()) return cmd_sweep_alpha(g, alphas, both_conv);
    if (anchors_cmd->parsed())
      return cmd_collect_anchors(g, visual, task, anchor_count, bundle_path);
    if (corpus_cmd->parsed())
      return cmd_collect_corpus(g, visual, task, visual_v, task_v,
                                corpus_frames, method);
    if (stitch_cmd->parsed())
      return cmd_stitch_eval(g, registry_dir, track_seeds_csv, tracks,
                             task_hours_csv);
    if (analyze_cmd->parsed())
      return cmd_analyze(g, corpus_path, bundle_u, bundle_v);
    if (dump_cmd->parsed())
      return cmd_replay_dump(g, visual, task, record_path, dump_steps,
                             dump_policy);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
