#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "r3l/common.hpp"
#include "r3l/stitchlab.hpp"
#include "r3l/trainer.hpp"

using r3l::Mode;
using r3l::ModuleRegistry;
using r3l::PolicyBundle;
using r3l::Task;
using r3l::VariationSpec;
using r3l::Visual;

namespace {

PolicyBundle make_bundle(Mode mode, Visual v, Task t, std::uint32_t seed) {
  VariationSpec spec{v, t};
  PolicyBundle b = r3l::init_policy(mode, spec, seed);
  if (mode == Mode::relative)
    b.anchors = r3l::make_anchor_set(
        spec, seed, r3l::NetDims::anchor_count,
        [&](const r3l::Observation& o) {
          return r3l::encode_frame(b.params, o);
        },
        0.999f);
  return b;
}

}  // namespace

TEST_CASE("self-stitching reproduces the original bundle exactly") {
  for (Mode mode : {Mode::absolute, Mode::relative}) {
    PolicyBundle original = make_bundle(mode, Visual::green, Task::standard, 5);
    ModuleRegistry reg;
    reg.add_bundle(original);
    PolicyBundle stitched =
        r3l::stitch(reg.encoders()[0], reg.controllers()[0]);
    CHECK(stitched.params.checksum() == original.params.checksum());

    // identical greedy trajectories on fresh tracks
    for (std::uint32_t track : {11u, 12u, 13u}) {
      r3l::GridRacer env_a({Visual::green, Task::standard}, track);
      r3l::GridRacer env_b({Visual::green, Task::standard}, track);
      auto ea = r3l::run_episode_greedy(original, env_a);
      auto eb = r3l::run_episode_greedy(stitched, env_b);
      CHECK(ea.actions == eb.actions);
      CHECK(ea.total_reward == eb.total_reward);
    }
  }
}

TEST_CASE("stitching preserves the component weights") {
  PolicyBundle a = make_bundle(Mode::relative, Visual::green, Task::standard, 1);
  PolicyBundle b = make_bundle(Mode::relative, Visual::red, Task::standard, 2);
  ModuleRegistry reg;
  reg.add_bundle(a);
  reg.add_bundle(b);
  const auto& enc = reg.encoders()[0];
  const auto& ctrl = reg.controllers()[1];
  std::uint64_t enc_hash_before = enc.params.checksum();
  std::uint64_t ctrl_hash_before = ctrl.params.checksum();
  PolicyBundle stitched = r3l::stitch(enc, ctrl);
  CHECK(enc.params.checksum() == enc_hash_before);
  CHECK(ctrl.params.checksum() == ctrl_hash_before);
  for (const auto& name : enc.params.order)
    CHECK(stitched.params.param(name).checksum() ==
          enc.params.param(name).checksum());
  for (const auto& name : ctrl.params.order)
    CHECK(stitched.params.param(name).checksum() ==
          ctrl.params.param(name).checksum());
  CHECK(stitched.spec.visual == Visual::green);
  CHECK(stitched.spec.task == Task::standard);
  REQUIRE(stitched.anchors.has_value());
  CHECK((stitched.anchors->embedded - a.anchors->embedded)
            .cwiseAbs()
            .maxCoeff() == 0.0f);
}

TEST_CASE("mode and width mismatches are rejected with an explanation") {
  PolicyBundle abs = make_bundle(Mode::absolute, Visual::green, Task::standard, 1);
  PolicyBundle rel = make_bundle(Mode::relative, Visual::green, Task::standard, 2);
  ModuleRegistry reg;
  reg.add_bundle(abs);
  reg.add_bundle(rel);
  std::string why;
  CHECK_FALSE(r3l::stitch_admissible(reg.encoders()[0], reg.controllers()[1],
                                     &why));
  CHECK(why.find("mode") != std::string::npos);
  CHECK_THROWS_WITH_AS(
      (void)r3l::stitch(reg.encoders()[0], reg.controllers()[1]),
      doctest::Contains("mode"), r3l::Error);
  // admissibility is symmetric in registration order
  CHECK_FALSE(r3l::stitch_admissible(reg.encoders()[1], reg.controllers()[0],
                                     &why));
}

TEST_CASE("admissible pairs skip same-variation same-seed combinations") {
  ModuleRegistry reg;
  reg.add_bundle(make_bundle(Mode::absolute, Visual::green, Task::standard, 1));
  reg.add_bundle(make_bundle(Mode::absolute, Visual::green, Task::standard, 2));
  auto matrix = r3l::evaluate_matrix(reg, {101u, 102u});
  REQUIRE(matrix.cells.size() == 1);
  // 2 encoders x 2 controllers minus the two same-seed pairs
  CHECK(matrix.cells[0].pairs.size() == 2);
  for (const auto& p : matrix.cells[0].pairs)
    CHECK(p.encoder_seed != p.controller_seed);
}

TEST_CASE("single-bundle registry yields a 1x1 matrix equal to end-to-end") {
  PolicyBundle b = make_bundle(Mode::absolute, Visual::green, Task::standard, 9);
  ModuleRegistry reg;
  reg.add_bundle(b);
  std::vector<std::uint32_t> tracks = {21u, 22u, 23u};
  auto matrix = r3l::evaluate_matrix(reg, tracks);
  REQUIRE(matrix.cells.size() == 1);
  REQUIRE(matrix.cells[0].pairs.size() == 1);
  auto direct = r3l::evaluate_greedy(b, b.spec, tracks);
  CHECK(matrix.cells[0].mean == doctest::Approx(direct.mean));
  for (std::size_t i = 0; i < tracks.size(); ++i)
    CHECK(matrix.cells[0].pairs[0].per_track_returns[i] ==
          doctest::Approx(direct.returns[i]));
}

TEST_CASE("matrix csv outputs are well-formed") {
  ModuleRegistry reg;
  reg.add_bundle(make_bundle(Mode::absolute, Visual::green, Task::standard, 1));
  reg.add_bundle(make_bundle(Mode::absolute, Visual::red, Task::standard, 2));
  auto matrix = r3l::evaluate_matrix(reg, {5u, 6u});
  auto dir = std::filesystem::temp_directory_path() / "r3l_matrix_test";
  std::filesystem::create_directories(dir);
  matrix.write_pair_csv((dir / "pairs.csv").string());
  matrix.write_cell_csv((dir / "cells.csv").string());
  std::ifstream pairs((dir / "pairs.csv").string());
  std::string header;
  std::getline(pairs, header);
  CHECK(header ==
        "encoder_visual,encoder_task,encoder_seed,controller_visual,"
        "controller_task,controller_seed,track_seed,return");
  int rows = 0;
  std::string line;
  while (std::getline(pairs, line))
    if (!line.empty()) ++rows;
  int pair_count = 0;
  for (const auto& cell : matrix.cells)
    pair_count += static_cast<int>(cell.pairs.size());
  // cross-spec pairs only: green-enc x red-ctrl and red-enc x green-ctrl
  CHECK(pair_count == 2);
  CHECK(rows == pair_count * 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("threaded matrix evaluation matches single-threaded results") {
  ModuleRegistry reg;
  reg.add_bundle(make_bundle(Mode::absolute, Visual::green, Task::standard, 1));
  reg.add_bundle(make_bundle(Mode::absolute, Visual::red, Task::standard, 2));
  auto m1 = r3l::evaluate_matrix(reg, {5u, 6u, 7u}, 1);
  auto m2 = r3l::evaluate_matrix(reg, {5u, 6u, 7u}, 2);
  REQUIRE(m1.cells.size() == m2.cells.size());
  for (std::size_t c = 0; c < m1.cells.size(); ++c) {
    CHECK(m1.cells[c].mean == m2.cells[c].mean);
    CHECK(m1.cells[c].stddev == m2.cells[c].stddev);
  }
}

TEST_CASE("time_saved reproduces the 4x4 reference grid exactly") {
  std::vector<std::vector<double>> hours = {
      {3, 3, 3, 3}, {4, 4, 4, 4}, {3, 3, 3, 3}, {3, 3, 3, 3}};
  auto rep = r3l::time_saved(4, 4, hours);
  CHECK(rep.trained_hours == doctest::Approx(13.0));
  CHECK(rep.total_hours == doctest::Approx(52.0));
  CHECK(rep.saved_hours == doctest::Approx(39.0));
  CHECK(rep.trained_cells.size() == 4);
  std::string text = rep.render();
  CHECK(text.find("13") != std::string::npos);
  CHECK(text.find("52") != std::string::npos);
}

TEST_CASE("time_saved trivial and rectangular cases") {
  auto one = r3l::time_saved(1, 1, {{2.5}});
  CHECK(one.saved_hours == doctest::Approx(0.0));

  std::vector<std::vector<double>> grid(3, std::vector<double>(2, 1.0));
  auto rect = r3l::time_saved(2, 3, grid);  // 2 visuals x 3 tasks
  CHECK(rect.trained_hours == doctest::Approx(3.0));
  CHECK(rect.total_hours == doctest::Approx(6.0));
  CHECK(rect.saved_hours == doctest::Approx(3.0));
}

TEST_CASE("time_saved rejects bad inputs") {
  CHECK_THROWS_AS((void)r3l::time_saved(0, 1, {}), r3l::Error);
  CHECK_THROWS_AS((void)r3l::time_saved(1, 1, {{-1.0}}), r3l::Error);
  CHECK_THROWS_AS((void)r3l::time_saved(2, 1, {{1.0}}), r3l::Error);
}

TEST_CASE("saved time scales with the grid area, trained with its max side") {
  // trained cost grows like max(V,T); saved like V*T
  for (int v = 1; v <= 5; ++v) {
    for (int t = 1; t <= 5; ++t) {
      std::vector<std::vector<double>> grid(
          static_cast<std::size_t>(t),
          std::vector<double>(static_cast<std::size_t>(v), 1.0));
      auto rep = r3l::time_saved(v, t, grid);
      CHECK(rep.trained_hours == doctest::Approx(std::max(v, t)));
      CHECK(rep.saved_hours ==
            doctest::Approx(static_cast<double>(v) * t - std::max(v, t)));
    }
  }
}

TEST_CASE("registry loading skips corrupt checkpoints with a warning") {
  auto dir = std::filesystem::temp_directory_path() / "r3l_registry_test";
  std::filesystem::create_directories(dir);
  PolicyBundle good = make_bundle(Mode::absolute, Visual::green, Task::standard, 3);
  r3l::save_bundle(good, (dir / "good.r3lp").string());
  {
    std::ofstream bad((dir / "bad.r3lp").string(), std::ios::binary);
    bad << "garbage";
  }
  std::vector<std::string> warnings;
  ModuleRegistry reg = ModuleRegistry::from_directory(dir.string(), &warnings);
  CHECK(reg.encoders().size() == 1);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("bad.r3lp") != std::string::npos);
  std::filesystem::remove_all(dir);
}
