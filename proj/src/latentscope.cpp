#include "r3l/latentscope.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "r3l/common.hpp"
#include "r3l/image.hpp"
#include "r3l/relrep.hpp"

namespace r3l {

std::string to_string(CollectionMethod m) {
  return m == CollectionMethod::action_replay ? "action_replay"
                                              : "pixel_transform";
}

CollectionMethod collection_method_from_string(const std::string& s) {
  if (s == "action_replay") return CollectionMethod::action_replay;
  if (s == "pixel_transform") return CollectionMethod::pixel_transform;
  fail("unknown collection method '", s,
       "' (action_replay|pixel_transform)");
}

namespace {

bool solid_color(Visual v) {
  return v == Visual::green || v == Visual::red || v == Visual::blue ||
         v == Visual::yellow;
}

std::array<std::uint8_t, 3> palette(Visual v) {
  switch (v) {
    case Visual::green: return {16, 144, 16};
    case Visual::red: return {144, 16, 16};
    case Visual::blue: return {16, 16, 144};
    case Visual::yellow: return {144, 144, 16};
    case Visual::far: return {16, 144, 16};
  }
  fail("unknown visual");
}

Observation recolor(const Observation& src, Visual from, Visual to) {
  auto a = palette(from);
  auto b = palette(to);
  Observation out = src;
  for (std::size_t p = 0; p + 2 < out.pixels.size(); p += 3) {
    if (out.pixels[p] == a[0] && out.pixels[p + 1] == a[1] &&
        out.pixels[p + 2] == a[2]) {
      out.pixels[p] = b[0];
      out.pixels[p + 1] = b[1];
      out.pixels[p + 2] = b[2];
    }
  }
  return out;
}

// Scripted drive on spec_u yielding at least n_frames frames; deterministic
// retry like the anchor collector.
std::pair<std::vector<int>, std::uint32_t> record_drive(
    const VariationSpec& spec, std::uint32_t seed, int n_frames) {
  for (std::uint32_t attempt = 0; attempt < 16; ++attempt) {
    std::uint32_t s = seed + attempt * 7919u;
    GridRacer env(spec, s);
    Pcg32 rng(mix_seed(seed, 0x636f7270) + attempt);
    env.reset();
    std::vector<int> actions;
    while (static_cast<int>(actions.size()) + 1 < n_frames && !env.done()) {
      int a = track_following_action(env, rng, 0.2f);
      env.step(a);
      actions.push_back(a);
    }
    if (static_cast<int>(actions.size()) + 1 >= n_frames)
      return {std::move(actions), s};
  }
  fail("corpus collection kept terminating early on ", to_string(spec));
}

MatX<float> representation_rows(const ParallelCorpus& corpus,
                                const std::vector<Observation>& frames,
                                const PolicyBundle& bundle, Mode space) {
  std::vector<const Observation*> ptrs;
  for (const auto& f : frames) ptrs.push_back(&f);
  MatX<float> latents = encode_frames(bundle.params, ptrs);
  if (space == Mode::absolute) return latents;
  if (!bundle.anchors)
    fail_as(ErrorCode::missing_anchors,
            "relative similarity requested for a bundle without anchors");
  (void)corpus;
  return project_rows(latents, *bundle.anchors);
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) fail("'", path, "': truncated");
  return v;
}

}  // namespace

ParallelCorpus collect_parallel(const VariationSpec& spec_u,
                                const VariationSpec& spec_v,
                                std::uint32_t seed, int n_frames,
                                CollectionMethod method) {
  if (n_frames < 0) fail("collect_parallel: negative frame count");
  ParallelCorpus corpus;
  corpus.spec_u = spec_u;
  corpus.spec_v = spec_v;
  corpus.method = method;
  corpus.seed = seed;
  if (n_frames == 0) return corpus;

  if (method == CollectionMethod::action_replay) {
    if (spec_u.task != spec_v.task)
      fail("action_replay needs matching tasks, got ", to_string(spec_u),
           " vs ", to_string(spec_v));
    auto [actions, used_seed] = record_drive(spec_u, seed, n_frames);
    corpus.actions = actions;
    ReplayResult ru = replay(spec_u, used_seed, actions);
    ReplayResult rv = replay(spec_v, used_seed, actions);
    if (ru.frames.size() != rv.frames.size())
      fail("parallel replays diverged in length (", ru.frames.size(), " vs ",
           rv.frames.size(), "); tasks are not aligned");
    corpus.frames_u.assign(ru.frames.begin(),
                           ru.frames.begin() + n_frames);
    corpus.frames_v.assign(rv.frames.begin(),
                           rv.frames.begin() + n_frames);
  } else {
    if (!solid_color(spec_u.visual) || !solid_color(spec_v.visual))
      fail("no pixel map defined between ", to_string(spec_u.visual), " and ",
           to_string(spec_v.visual),
           "; pixel_transform covers the solid-color visuals only");
    auto [actions, used_seed] = record_drive(spec_u, seed, n_frames);
    corpus.actions = actions;
    ReplayResult ru = replay(spec_u, used_seed, actions);
    corpus.frames_u.assign(ru.frames.begin(), ru.frames.begin() + n_frames);
    corpus.frames_v.reserve(corpus.frames_u.size());
    for (const auto& f : corpus.frames_u)
      corpus.frames_v.push_back(recolor(f, spec_u.visual, spec_v.visual));
  }
  return corpus;
}

void save_corpus(const std::string& path, const ParallelCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open '", path, "' for writing");
  out.write("R3LC", 4);
  std::uint8_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 1);
  std::uint8_t hdr[5] = {static_cast<std::uint8_t>(corpus.spec_u.visual),
                         static_cast<std::uint8_t>(corpus.spec_u.task),
                         static_cast<std::uint8_t>(corpus.spec_v.visual),
                         static_cast<std::uint8_t>(corpus.spec_v.task),
                         static_cast<std::uint8_t>(corpus.method)};
  out.write(reinterpret_cast<const char*>(hdr), 5);
  write_u32(out, corpus.seed);
  write_u32(out, static_cast<std::uint32_t>(corpus.size()));
  write_u32(out, static_cast<std::uint32_t>(corpus.actions.size()));
  int h = corpus.size() ? corpus.frames_u[0].height : 0;
  int w = corpus.size() ? corpus.frames_u[0].width : 0;
  int c = corpus.size() ? corpus.frames_u[0].channels : 0;
  write_u32(out, static_cast<std::uint32_t>(h));
  write_u32(out, static_cast<std::uint32_t>(w));
  write_u32(out, static_cast<std::uint32_t>(c));
  for (int a : corpus.actions) {
    std::uint8_t b = static_cast<std::uint8_t>(a);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  for (const auto& side : {&corpus.frames_u, &corpus.frames_v})
    for (const auto& f : *side)
      out.write(reinterpret_cast<const char*>(f.pixels.data()),
                static_cast<std::streamsize>(f.pixels.size()));
  if (!out) fail("short write to '", path, "'");
}

ParallelCorpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '", path, "'");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "R3LC", 4) != 0)
    fail("'", path, "': bad magic, not a corpus file");
  std::uint8_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 1);
  if (version != 1)
    fail("'", path, "': unsupported corpus version ", int(version));
  std::uint8_t hdr[5];
  in.read(reinterpret_cast<char*>(hdr), 5);
  if (!in) fail("'", path, "': truncated header");
  ParallelCorpus corpus;
  corpus.spec_u = {static_cast<Visual>(hdr[0]), static_cast<Task>(hdr[1])};
  corpus.spec_v = {static_cast<Visual>(hdr[2]), static_cast<Task>(hdr[3])};
  corpus.method = static_cast<CollectionMethod>(hdr[4]);
  corpus.seed = read_u32(in, path);
  std::uint32_t n = read_u32(in, path);
  std::uint32_t na = read_u32(in, path);
  std::uint32_t h = read_u32(in, path);
  std::uint32_t w = read_u32(in, path);
  std::uint32_t c = read_u32(in, path);
  corpus.actions.resize(na);
  for (auto& a : corpus.actions) {
    std::uint8_t b = 0;
    in.read(reinterpret_cast<char*>(&b), 1);
    a = b;
  }
  for (auto* side : {&corpus.frames_u, &corpus.frames_v}) {
    side->resize(n);
    for (auto& f : *side) {
      f.height = static_cast<int>(h);
      f.width = static_cast<int>(w);
      f.channels = static_cast<int>(c);
      f.pixels.resize(static_cast<std::size_t>(h) * w * c);
      in.read(reinterpret_cast<char*>(f.pixels.data()),
              static_cast<std::streamsize>(f.pixels.size()));
    }
  }
  if (!in) fail("'", path, "': truncated corpus payload");
  return corpus;
}

MatX<float> similarity_matrix(const ParallelCorpus& corpus,
                              const PolicyBundle& bundle_u,
                              const PolicyBundle& bundle_v, Mode space) {
  if (corpus.frames_u.size() != corpus.frames_v.size())
    fail("similarity_matrix: corpus sides differ in length");
  if (bundle_u.spec.visual != corpus.spec_u.visual ||
      bundle_v.spec.visual != corpus.spec_v.visual)
    fail("similarity_matrix: bundle visuals (", to_string(bundle_u.spec.visual),
         ",", to_string(bundle_v.spec.visual), ") do not match corpus (",
         to_string(corpus.spec_u.visual), ",", to_string(corpus.spec_v.visual),
         ")");
  MatX<float> ru = representation_rows(corpus, corpus.frames_u, bundle_u, space);
  MatX<float> rv = representation_rows(corpus, corpus.frames_v, bundle_v, space);
  if (ru.cols() != rv.cols())
    fail("similarity_matrix: representation widths differ (", ru.cols(),
         " vs ", rv.cols(), ")");
  for (auto* m : {&ru, &rv}) {
    for (Eigen::Index i = 0; i < m->rows(); ++i) {
      float n = m->row(i).norm();
      if (n > 0.0f)
        m->row(i) /= n;
      else
        m->row(i).setZero();
    }
  }
  MatX<float> out(ru.rows(), rv.rows());
  out.noalias() = ru * rv.transpose();
  return out;
}

GapStats diagonal_gap(const MatX<float>& m) {
  if (m.rows() != m.cols() || m.rows() < 2)
    fail("diagonal_gap: need a square matrix of order >= 2, got ", m.rows(),
         "x", m.cols());
  GapStats g;
  double diag = 0, off = 0;
  Eigen::Index n = m.rows();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      (i == j ? diag : off) += m(i, j);
  g.diag_mean = diag / static_cast<double>(n);
  g.offdiag_mean = off / static_cast<double>(n * n - n);
  g.gap = g.diag_mean - g.offdiag_mean;
  return g;
}

void export_heatmap(const MatX<float>& matrix, const std::string& path) {
  Eigen::MatrixXf col = matrix;  // write_pgm_signed takes col-major
  write_pgm_signed(path, col);
}

std::vector<std::array<float, 2>> project_2d(
    const std::vector<Eigen::VectorXf>& vectors) {
  if (vectors.size() < 3)
    fail("project_2d: need at least 3 vectors, got ", vectors.size());
  Eigen::Index m = vectors[0].size();
  for (const auto& v : vectors)
    if (v.size() != m) fail("project_2d: vectors disagree on width");
  Eigen::Index n = static_cast<Eigen::Index>(vectors.size());
  Eigen::MatrixXd x(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    x.row(i) = vectors[static_cast<std::size_t>(i)].cast<double>().transpose();
  Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;

  std::vector<std::array<float, 2>> points(static_cast<std::size_t>(n),
                                           {0.0f, 0.0f});
  double total_var = x.squaredNorm();
  if (total_var < 1e-12) return points;  // zero variance: everything at origin

  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) fail("project_2d: eigensolver failed");
  // eigenvalues ascend; components are the last two columns
  for (int comp = 0; comp < 2; ++comp) {
    Eigen::Index col = m - 1 - comp;
    if (col < 0) break;
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0) v = -v;
    Eigen::VectorXd proj = x * v;
    for (Eigen::Index i = 0; i < n; ++i)
      points[static_cast<std::size_t>(i)][static_cast<std::size_t>(comp)] =
          static_cast<float>(proj[i]);
  }
  return points;
}

void write_projection_csv(const std::string& path,
                          const std::vector<std::array<float, 2>>& points,
                          const std::vector<std::string>& labels) {
  if (points.size() != labels.size())
    fail("projection csv: ", points.size(), " points vs ", labels.size(),
         " labels");
  std::ofstream out(path);
  if (!out) fail("cannot open '", path, "' for writing");
  out << "x,y,spec_label\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,", points[i][0], points[i][1]);
    out << buf << labels[i] << "\n";
  }
  if (!out) fail("short write to '", path, "'");
}

}  // namespace r3l
