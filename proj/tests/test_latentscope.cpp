#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "r3l/common.hpp"
#include "r3l/image.hpp"
#include "r3l/latentscope.hpp"
#include "support/oracles.hpp"

using r3l::CollectionMethod;
using r3l::MatX;
using r3l::Mode;
using r3l::ParallelCorpus;
using r3l::PolicyBundle;
using r3l::Task;
using r3l::VariationSpec;
using r3l::Visual;

namespace {

VariationSpec spec(Visual v, Task t = Task::standard) { return {v, t}; }

PolicyBundle bundle_for(Mode mode, Visual v, std::uint32_t seed) {
  PolicyBundle b = r3l::init_policy(mode, spec(v), seed);
  if (mode == Mode::relative)
    b.anchors = r3l::make_anchor_set(
        spec(v), seed, r3l::NetDims::anchor_count,
        [&](const r3l::Observation& o) {
          return r3l::encode_frame(b.params, o);
        },
        0.999f);
  return b;
}

}  // namespace

TEST_CASE("action replay of a spec against itself gives identical frames") {
  ParallelCorpus corpus = r3l::collect_parallel(
      spec(Visual::green), spec(Visual::green), 7, 40,
      CollectionMethod::action_replay);
  REQUIRE(corpus.size() == 40);
  for (std::size_t i = 0; i < corpus.size(); ++i)
    CHECK(corpus.frames_u[i] == corpus.frames_v[i]);
}

TEST_CASE("pixel transform keeps non-background masks identical") {
  ParallelCorpus corpus = r3l::collect_parallel(
      spec(Visual::green), spec(Visual::red), 7, 30,
      CollectionMethod::pixel_transform);
  REQUIRE(corpus.size() == 30);
  for (std::size_t f = 0; f < corpus.size(); ++f) {
    const auto& u = corpus.frames_u[f].pixels;
    const auto& v = corpus.frames_v[f].pixels;
    for (std::size_t p = 0; p < u.size(); p += 3) {
      bool ub = u[p] == 16 && u[p + 1] == 144 && u[p + 2] == 16;
      bool vb = v[p] == 144 && v[p + 1] == 16 && v[p + 2] == 16;
      REQUIRE(ub == vb);
      if (!ub) {
        REQUIRE(u[p] == v[p]);
        REQUIRE(u[p + 1] == v[p + 1]);
        REQUIRE(u[p + 2] == v[p + 2]);
      }
    }
  }
}

TEST_CASE("empty corpora are valid") {
  ParallelCorpus corpus = r3l::collect_parallel(
      spec(Visual::green), spec(Visual::blue), 7, 0,
      CollectionMethod::action_replay);
  CHECK(corpus.size() == 0);
  CHECK(corpus.actions.empty());
}

TEST_CASE("pixel transform refuses visuals without a defined map") {
  CHECK_THROWS_WITH_AS(
      (void)r3l::collect_parallel(spec(Visual::far), spec(Visual::red), 7, 10,
                                  CollectionMethod::pixel_transform),
      doctest::Contains("pixel map"), r3l::Error);
}

TEST_CASE("action replay refuses mismatched tasks") {
  CHECK_THROWS_WITH_AS(
      (void)r3l::collect_parallel(spec(Visual::green, Task::standard),
                                  spec(Visual::green, Task::slow), 7, 10,
                                  CollectionMethod::action_replay),
      doctest::Contains("task"), r3l::Error);
}

TEST_CASE("corpus files round-trip") {
  ParallelCorpus corpus = r3l::collect_parallel(
      spec(Visual::green), spec(Visual::blue), 9, 12,
      CollectionMethod::action_replay);
  auto path = std::filesystem::temp_directory_path() / "r3l_corpus_test.r3lc";
  r3l::save_corpus(path.string(), corpus);
  ParallelCorpus back = r3l::load_corpus(path.string());
  CHECK(back.spec_u == corpus.spec_u);
  CHECK(back.spec_v == corpus.spec_v);
  CHECK(back.method == corpus.method);
  CHECK(back.actions == corpus.actions);
  REQUIRE(back.size() == corpus.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back.frames_u[i].pixels == corpus.frames_u[i].pixels);
    CHECK(back.frames_v[i].pixels == corpus.frames_v[i].pixels);
  }
  std::filesystem::remove(path);
}

TEST_CASE("relative self-similarity has a unit diagonal") {
  ParallelCorpus corpus = r3l::collect_parallel(
      spec(Visual::green), spec(Visual::green), 3, 16,
      CollectionMethod::action_replay);
  PolicyBundle b = bundle_for(Mode::relative, Visual::green, 3);
  MatX<float> sim = r3l::similarity_matrix(corpus, b, b, Mode::relative);
  REQUIRE(sim.rows() == 16);
  REQUIRE(sim.cols() == 16);
  for (int i = 0; i < 16; ++i)
    CHECK(sim(i, i) == doctest::Approx(1.0f).epsilon(1e-5));
  // bounded entries and symmetry for the self-corpus
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      CHECK(sim(i, j) >= -1.0f - 1e-6f);
      CHECK(sim(i, j) <= 1.0f + 1e-6f);
      CHECK(std::fabs(sim(i, j) - sim(j, i)) <= 1e-6f);
    }
}

TEST_CASE("similarity rejects bundles that do not match the corpus visuals") {
  ParallelCorpus corpus = r3l::collect_parallel(
      spec(Visual::green), spec(Visual::red), 3, 8,
      CollectionMethod::action_replay);
  PolicyBundle wrong = bundle_for(Mode::absolute, Visual::blue, 3);
  PolicyBundle right = bundle_for(Mode::absolute, Visual::red, 3);
  CHECK_THROWS_AS(
      (void)r3l::similarity_matrix(corpus, wrong, right, Mode::absolute),
      r3l::Error);
}

TEST_CASE("relative similarity requires anchors") {
  ParallelCorpus corpus = r3l::collect_parallel(
      spec(Visual::green), spec(Visual::green), 3, 8,
      CollectionMethod::action_replay);
  PolicyBundle no_anchors = bundle_for(Mode::absolute, Visual::green, 3);
  try {
    (void)r3l::similarity_matrix(corpus, no_anchors, no_anchors,
                                 Mode::relative);
    FAIL("expected a missing-anchors error");
  } catch (const r3l::Error& e) {
    CHECK(e.code() == r3l::ErrorCode::missing_anchors);
  }
}

TEST_CASE("diagonal gap statistic") {
  MatX<float> m(3, 3);
  m << 1.0f, 0.2f, 0.4f,
       0.0f, 0.8f, 0.2f,
       0.2f, 0.0f, 0.6f;
  auto gap = r3l::diagonal_gap(m);
  CHECK(gap.diag_mean == doctest::Approx(0.8));
  CHECK(gap.offdiag_mean == doctest::Approx(1.0 / 6.0));
  CHECK(gap.gap == doctest::Approx(0.8 - 1.0 / 6.0));
}

TEST_CASE("heatmap export maps [-1,1] to bytes and sizes correctly") {
  auto dir = std::filesystem::temp_directory_path() / "r3l_heatmap_test";
  std::filesystem::create_directories(dir);

  SUBCASE("identity-like matrix has a bright diagonal") {
    MatX<float> m = MatX<float>::Constant(8, 8, -0.5f);
    for (int i = 0; i < 8; ++i) m(i, i) = 1.0f;
    std::string path = (dir / "diag.pgm").string();
    r3l::export_heatmap(m, path);
    auto img = r3l::read_pgm(path);
    REQUIRE(img.width == 8);
    REQUIRE(img.height == 8);
    for (int i = 0; i < 8; ++i) {
      CHECK(img.pixels[static_cast<std::size_t>(i * 8 + i)] == 255);
      if (i > 0)
        CHECK(img.pixels[static_cast<std::size_t>(i * 8)] ==
              static_cast<std::uint8_t>(std::round(0.5f * 127.5f)));
    }
  }

  SUBCASE("constant matrix is uniform") {
    MatX<float> m = MatX<float>::Constant(5, 7, 0.0f);
    std::string path = (dir / "flat.pgm").string();
    r3l::export_heatmap(m, path);
    auto img = r3l::read_pgm(path);
    for (auto b : img.pixels) CHECK(b == 128);
  }

  SUBCASE("800x800 matrix writes header + 640000 payload bytes") {
    MatX<float> m = MatX<float>::Zero(800, 800);
    std::string path = (dir / "big.pgm").string();
    r3l::export_heatmap(m, path);
    auto size = std::filesystem::file_size(path);
    CHECK(size == 15 + 640000);  // "P5\n800 800\n255\n"
  }

  std::filesystem::remove_all(dir);
}

TEST_CASE("2-d projection recovers centered 2-d data up to rotation and sign") {
  r3l::Pcg32 rng(12);
  std::vector<Eigen::VectorXf> pts;
  for (int i = 0; i < 40; ++i) {
    Eigen::VectorXf v(2);
    v << static_cast<float>(3.0 * rng.next_gaussian()),
        static_cast<float>(0.5 * rng.next_gaussian());
    pts.push_back(v);
  }
  auto proj = r3l::project_2d(pts);
  // distances are preserved under the orthogonal change of basis
  for (int a = 0; a < 10; ++a)
    for (int b = a + 1; b < 10; ++b) {
      float dx0 = pts[a][0] - pts[b][0], dy0 = pts[a][1] - pts[b][1];
      float dx1 = proj[a][0] - proj[b][0], dy1 = proj[a][1] - proj[b][1];
      CHECK(std::sqrt(dx0 * dx0 + dy0 * dy0) ==
            doctest::Approx(std::sqrt(dx1 * dx1 + dy1 * dy1)).epsilon(1e-3));
    }
}

TEST_CASE("identical vectors project to the origin") {
  Eigen::VectorXf v(4);
  v << 1, 2, 3, 4;
  std::vector<Eigen::VectorXf> pts(5, v);
  auto proj = r3l::project_2d(pts);
  for (const auto& p : proj) {
    CHECK(p[0] == 0.0f);
    CHECK(p[1] == 0.0f);
  }
}

TEST_CASE("3 vectors in 3-d match the closed-form eigensolver oracle") {
  std::vector<Eigen::VectorXf> pts;
  Eigen::VectorXf a(3), b(3), c(3);
  a << 1.0f, 0.5f, -0.25f;
  b << -0.5f, 1.25f, 0.75f;
  c << 0.25f, -1.0f, 1.5f;
  pts = {a, b, c};

  // oracle: mean-center, covariance, closed-form symmetric 3x3 eigensolve
  double mean[3] = {0, 0, 0};
  for (const auto& v : pts)
    for (int i = 0; i < 3; ++i) mean[i] += v[i] / 3.0;
  double x[3][3];
  for (int r = 0; r < 3; ++r)
    for (int i = 0; i < 3; ++i) x[r][i] = pts[static_cast<std::size_t>(r)][i] - mean[i];
  double cov[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      cov[i][j] = 0;
      for (int r = 0; r < 3; ++r) cov[i][j] += x[r][i] * x[r][j] / 3.0;
    }
  auto eig = oracle::symmetric_eigen_3x3(cov);
  // apply the library's sign convention to the oracle vectors
  for (int e = 0; e < 2; ++e) {
    int imax = 0;
    for (int i = 1; i < 3; ++i)
      if (std::fabs(eig.vectors[e][i]) > std::fabs(eig.vectors[e][imax]))
        imax = i;
    if (eig.vectors[e][imax] < 0)
      for (int i = 0; i < 3; ++i) eig.vectors[e][i] = -eig.vectors[e][i];
  }

  auto proj = r3l::project_2d(pts);
  for (int r = 0; r < 3; ++r) {
    double want0 = 0, want1 = 0;
    for (int i = 0; i < 3; ++i) {
      want0 += x[r][i] * eig.vectors[0][i];
      want1 += x[r][i] * eig.vectors[1][i];
    }
    CHECK(proj[static_cast<std::size_t>(r)][0] ==
          doctest::Approx(want0).epsilon(1e-5));
    CHECK(proj[static_cast<std::size_t>(r)][1] ==
          doctest::Approx(want1).epsilon(1e-5));
  }
}

TEST_CASE("projection csv lists one labeled point per row") {
  std::vector<std::array<float, 2>> points = {{1.0f, 2.0f}, {-0.5f, 0.25f}};
  std::vector<std::string> labels = {"green/standard", "red/standard"};
  auto path = std::filesystem::temp_directory_path() / "r3l_proj_test.csv";
  r3l::write_projection_csv(path.string(), points, labels);
  std::ifstream in(path.string());
  std::string line;
  std::getline(in, line);
  CHECK(line == "x,y,spec_label");
  std::getline(in, line);
  CHECK(line == "1,2,green/standard");
  std::filesystem::remove(path);
}
