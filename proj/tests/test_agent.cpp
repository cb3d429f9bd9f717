#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "r3l/agent.hpp"
#include "r3l/common.hpp"

using r3l::GridRacer;
using r3l::Mode;
using r3l::Observation;
using r3l::Pcg32;
using r3l::PolicyBundle;
using r3l::Task;
using r3l::VariationSpec;
using r3l::Visual;

namespace {

VariationSpec green_std() { return {Visual::green, Task::standard}; }

std::vector<Observation> fresh_stack(const VariationSpec& spec,
                                     std::uint32_t seed) {
  GridRacer env(spec, seed);
  Observation first = env.reset();
  std::vector<Observation> stack(4, first);
  return stack;
}

PolicyBundle relative_bundle(std::uint32_t seed) {
  PolicyBundle b = r3l::init_policy(Mode::relative, green_std(), seed);
  b.anchors = r3l::make_anchor_set(
      green_std(), seed, r3l::NetDims::anchor_count,
      [&](const Observation& o) { return r3l::encode_frame(b.params, o); },
      0.999f);
  return b;
}

}  // namespace

TEST_CASE("fresh bundles act with valid action indices") {
  PolicyBundle b = r3l::init_policy(Mode::absolute, green_std(), 1);
  auto stack = fresh_stack(green_std(), 1);
  Pcg32 rng(0);
  auto r = r3l::act(b, stack, false, rng);
  CHECK(r.action >= 0);
  CHECK(r.action < b.action_count);
  CHECK(std::isfinite(r.log_prob));
  CHECK(std::isfinite(r.value));

  PolicyBundle nb = r3l::init_policy(Mode::absolute,
                                     {Visual::green, Task::no_idle}, 1);
  CHECK(nb.action_count == 4);
}

TEST_CASE("sampling is deterministic given identical rng state") {
  PolicyBundle b = r3l::init_policy(Mode::absolute, green_std(), 3);
  auto stack = fresh_stack(green_std(), 3);
  Pcg32 r1(123), r2(123);
  for (int i = 0; i < 10; ++i) {
    auto a1 = r3l::act(b, stack, true, r1);
    auto a2 = r3l::act(b, stack, true, r2);
    CHECK(a1.action == a2.action);
    CHECK(a1.log_prob == a2.log_prob);
  }
}

TEST_CASE("relative logits are invariant to positive latent rescaling") {
  PolicyBundle b = relative_bundle(7);
  auto stack = fresh_stack(green_std(), 7);

  // baseline
  Eigen::VectorXf in = r3l::controller_input_for(b, stack);
  auto base = r3l::controller_forward(b.params, in);

  // the same pipeline with every encoder output scaled by 10
  auto scaled_encoder = [&](const Observation& o) {
    return (10.0f * r3l::encode_frame(b.params, o)).eval();
  };
  Eigen::VectorXf scaled_in =
      r3l::embed_stack(stack, scaled_encoder, *b.anchors, 4);
  auto scaled = r3l::controller_forward(b.params, scaled_in);

  REQUIRE(base.logits.size() == scaled.logits.size());
  for (Eigen::Index i = 0; i < base.logits.size(); ++i)
    CHECK(std::fabs(base.logits[i] - scaled.logits[i]) <= 1e-5f);
}

TEST_CASE("absolute act equals the stepwise encoder+controller pipeline") {
  PolicyBundle b = r3l::init_policy(Mode::absolute, green_std(), 11);
  auto stack = fresh_stack(green_std(), 11);

  Eigen::VectorXf manual(4 * r3l::NetDims::latent_width);
  for (int i = 0; i < 4; ++i)
    manual.segment(i * r3l::NetDims::latent_width, r3l::NetDims::latent_width) =
        r3l::encode_frame(b.params, stack[static_cast<std::size_t>(i)]);
  auto manual_out = r3l::controller_forward(b.params, manual);

  Pcg32 rng(0);
  auto r = r3l::act(b, stack, false, rng);
  Eigen::Index best = 0;
  manual_out.logits.maxCoeff(&best);
  CHECK(r.action == static_cast<int>(best));
  CHECK(r.value == doctest::Approx(manual_out.value));
}

TEST_CASE("checkpoint round-trip reproduces act outputs bit-exactly") {
  auto dir = std::filesystem::temp_directory_path() / "r3l_agent_rt";
  std::filesystem::create_directories(dir);

  SUBCASE("absolute") {
    PolicyBundle b = r3l::init_policy(Mode::absolute, green_std(), 21);
    b.metadata["hp_lr"] = "0.00025";
    std::string path = (dir / "abs.r3lp").string();
    r3l::save_bundle(b, path);
    PolicyBundle back = r3l::load_bundle(path);
    CHECK(back.params.checksum() == b.params.checksum());
    CHECK(back.metadata.at("hp_lr") == "0.00025");
    auto stack = fresh_stack(green_std(), 21);
    Pcg32 r1(9), r2(9);
    auto a1 = r3l::act(b, stack, true, r1);
    auto a2 = r3l::act(back, stack, true, r2);
    CHECK(a1.action == a2.action);
    CHECK(a1.log_prob == a2.log_prob);
    CHECK(a1.value == a2.value);
  }

  SUBCASE("relative with anchor sidecar") {
    PolicyBundle b = relative_bundle(22);
    std::string path = (dir / "rel.r3lp").string();
    r3l::save_bundle(b, path);
    CHECK(std::filesystem::exists(dir / "rel.r3la"));
    PolicyBundle back = r3l::load_bundle(path);
    REQUIRE(back.anchors.has_value());
    CHECK(back.anchors->count() == r3l::NetDims::anchor_count);
    CHECK((back.anchors->embedded - b.anchors->embedded)
              .cwiseAbs()
              .maxCoeff() == 0.0f);
    auto stack = fresh_stack(green_std(), 22);
    Pcg32 r1(9), r2(9);
    auto a1 = r3l::act(b, stack, false, r1);
    auto a2 = r3l::act(back, stack, false, r2);
    CHECK(a1.action == a2.action);
    CHECK(a1.log_prob == a2.log_prob);
  }

  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupted magic is reported as such") {
  auto dir = std::filesystem::temp_directory_path() / "r3l_agent_bad";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "bad.r3lp").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "XXXX junk";
  }
  CHECK_THROWS_WITH_AS((void)r3l::load_bundle(path),
                       doctest::Contains("magic"), r3l::Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("anchor hash mismatch names expected and actual hashes") {
  auto dir = std::filesystem::temp_directory_path() / "r3l_agent_hash";
  std::filesystem::create_directories(dir);
  PolicyBundle b = relative_bundle(31);
  std::string path = (dir / "rel.r3lp").string();
  r3l::save_bundle(b, path);

  // corrupt one byte of the anchor sidecar
  std::string anchor_path = (dir / "rel.r3la").string();
  {
    std::fstream f(anchor_path,
                   std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(64);
    char c = 0;
    f.read(&c, 1);
    f.seekp(64);
    c = static_cast<char>(c ^ 0x5a);
    f.write(&c, 1);
  }
  try {
    (void)r3l::load_bundle(path);
    FAIL("expected an anchor hash mismatch");
  } catch (const r3l::Error& e) {
    std::string msg = e.what();
    CHECK(msg.find("hash mismatch") != std::string::npos);
    CHECK(msg.find("expected") != std::string::npos);
    CHECK(msg.find("actual") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("truncated checkpoints are rejected") {
  auto dir = std::filesystem::temp_directory_path() / "r3l_agent_trunc";
  std::filesystem::create_directories(dir);
  PolicyBundle b = r3l::init_policy(Mode::absolute, green_std(), 5);
  std::string path = (dir / "abs.r3lp").string();
  r3l::save_bundle(b, path);
  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 1024);
  CHECK_THROWS_WITH_AS((void)r3l::load_bundle(path),
                       doctest::Contains("truncated"), r3l::Error);
  std::filesystem::remove_all(dir);
}
