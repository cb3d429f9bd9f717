#include "r3l/relrep.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "r3l/common.hpp"

namespace r3l {

RelativeEmbedding project(const Eigen::VectorXf& latent,
                          const AnchorSet& anchors) {
  if (latent.size() != anchors.latent_width())
    fail("project: latent width ", latent.size(), " does not match anchors (",
         anchors.latent_width(), ")");
  RelativeEmbedding out;
  out.values.resize(anchors.count());
  float xn = latent.norm();
  if (xn == 0.0f) {
    out.values.setZero();
    anchors.degenerate_count += anchors.count();
    return out;
  }
  for (int k = 0; k < anchors.count(); ++k) {
    float an = anchors.embedded.row(k).norm();
    if (an == 0.0f) {
      out.values[k] = 0.0f;
      ++anchors.degenerate_count;
    } else {
      out.values[k] = anchors.embedded.row(k).dot(latent.transpose()) / (xn * an);
    }
  }
  return out;
}

MatX<float> project_rows(const MatX<float>& latents, const AnchorSet& anchors) {
  if (latents.cols() != anchors.latent_width())
    fail("project_rows: latent width ", latents.cols(),
         " does not match anchors (", anchors.latent_width(), ")");
  MatX<float> out(latents.rows(), anchors.count());
  Eigen::VectorXf an = anchors.embedded.rowwise().norm();
  out.noalias() = latents * anchors.embedded.transpose();
  for (Eigen::Index i = 0; i < latents.rows(); ++i) {
    float xn = latents.row(i).norm();
    if (xn == 0.0f) {
      out.row(i).setZero();
      anchors.degenerate_count += anchors.count();
      continue;
    }
    for (Eigen::Index k = 0; k < out.cols(); ++k) {
      if (an[k] == 0.0f) {
        out(i, k) = 0.0f;
        ++anchors.degenerate_count;
      } else {
        out(i, k) /= xn * an[k];
      }
    }
  }
  return out;
}

void ema_update(AnchorSet& anchors, const MatX<float>& fresh, bool ema_on_old) {
  if (fresh.rows() != anchors.embedded.rows() ||
      fresh.cols() != anchors.embedded.cols())
    fail("ema_update: fresh shape ", fresh.rows(), "x", fresh.cols(),
         " does not match anchors ", anchors.embedded.rows(), "x",
         anchors.embedded.cols());
  float w_new = ema_on_old ? 1.0f - anchors.alpha : anchors.alpha;
  for (Eigen::Index r = 0; r < fresh.rows(); ++r) {
    if (!fresh.row(r).allFinite()) {
      ++anchors.skipped_update_rows;
      continue;
    }
    anchors.embedded.row(r) =
        w_new * fresh.row(r) + (1.0f - w_new) * anchors.embedded.row(r);
  }
}

Eigen::VectorXf embed_stack(const std::vector<Observation>& frames,
                            const FrameEncoder& encoder,
                            const AnchorSet& anchors, int expected_stack) {
  if (static_cast<int>(frames.size()) != expected_stack)
    fail("embed_stack: expected ", expected_stack, " frames, got ",
         frames.size());
  int d = anchors.count();
  Eigen::VectorXf out(static_cast<Eigen::Index>(d) * expected_stack);
  for (int i = 0; i < expected_stack; ++i) {
    RelativeEmbedding z =
        project(encoder(frames[static_cast<std::size_t>(i)]), anchors);
    out.segment(static_cast<Eigen::Index>(i) * d, d) = z.values;
  }
  return out;
}

std::vector<Observation> collect_anchor_frames(const VariationSpec& spec,
                                               std::uint32_t seed, int count,
                                               int rollout_len, float eps) {
  if (count < 2) fail("anchor collection needs at least 2 anchors");
  // Retry with a derived seed if an episode ends before enough frames are
  // gathered; the whole procedure stays deterministic in (spec, seed).
  for (std::uint32_t attempt = 0; attempt < 16; ++attempt) {
    std::uint32_t s = seed + attempt * 7919u;
    GridRacer env(spec, s);
    Pcg32 policy_rng(mix_seed(seed, 0x616e6368) + attempt);
    std::vector<Observation> frames;
    frames.push_back(env.reset());
    while (static_cast<int>(frames.size()) < rollout_len && !env.done()) {
      int a = track_following_action(env, policy_rng, eps);
      frames.push_back(env.step(a).obs);
    }
    if (static_cast<int>(frames.size()) < rollout_len) continue;
    std::vector<Observation> picked;
    for (int i = 0; i < count; ++i) {
      std::size_t idx = static_cast<std::size_t>(
          (static_cast<std::int64_t>(i) * rollout_len) / count);
      picked.push_back(frames[idx]);
    }
    return picked;
  }
  fail("anchor collection kept terminating early on ", to_string(spec));
}

AnchorSet make_anchor_set(const VariationSpec& spec, std::uint32_t seed,
                          int count, const FrameEncoder& encoder, float alpha) {
  AnchorSet set;
  set.raw = collect_anchor_frames(spec, seed, count);
  set.alpha = alpha;
  Eigen::VectorXf first = encoder(set.raw[0]);
  set.embedded.resize(count, first.size());
  set.embedded.row(0) = first.transpose();
  for (int i = 1; i < count; ++i)
    set.embedded.row(i) = encoder(set.raw[static_cast<std::size_t>(i)]).transpose();
  set.provenance = cat("method=scripted_rollout;spec=", to_string(spec),
                       ";seed=", seed, ";frames=200;subsample=", count,
                       ";eps=0.2");
  return set;
}

namespace {

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

void save_anchor_set(const std::string& path, const AnchorSet& anchors) {
  if (anchors.raw.size() != static_cast<std::size_t>(anchors.count()))
    fail("anchor set has ", anchors.raw.size(), " raw frames but ",
         anchors.count(), " embeddings");
  if (!anchors.embedded.allFinite())
    fail("anchor set has non-finite embeddings");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open '", path, "' for writing");
  out.write("R3LA", 4);
  std::uint8_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 1);
  const Observation& f0 = anchors.raw[0];
  write_u32(out, static_cast<std::uint32_t>(anchors.count()));
  write_u32(out, static_cast<std::uint32_t>(anchors.latent_width()));
  write_u32(out, static_cast<std::uint32_t>(f0.height));
  write_u32(out, static_cast<std::uint32_t>(f0.width));
  write_u32(out, static_cast<std::uint32_t>(f0.channels));
  write_u32(out, static_cast<std::uint32_t>(anchors.provenance.size()));
  out.write(anchors.provenance.data(),
            static_cast<std::streamsize>(anchors.provenance.size()));
  for (const auto& obs : anchors.raw) {
    if (obs.height != f0.height || obs.width != f0.width ||
        obs.channels != f0.channels)
      fail("anchor frames disagree on shape");
    out.write(reinterpret_cast<const char*>(obs.pixels.data()),
              static_cast<std::streamsize>(obs.pixels.size()));
  }
  for (int r = 0; r < anchors.count(); ++r)
    out.write(reinterpret_cast<const char*>(anchors.embedded.row(r).data()),
              static_cast<std::streamsize>(anchors.latent_width() * 4));
  if (!out) fail("short write to '", path, "'");
}

AnchorSet load_anchor_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '", path, "'");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "R3LA", 4) != 0)
    fail("'", path, "': bad magic, not an anchor file");
  std::uint8_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 1);
  if (version != 1)
    fail("'", path, "': unsupported anchor version ", int(version));
  AnchorSet set;
  std::uint32_t d = read_u32(in, path);
  std::uint32_t m = read_u32(in, path);
  std::uint32_t h = read_u32(in, path);
  std::uint32_t w = read_u32(in, path);
  std::uint32_t c = read_u32(in, path);
  std::uint32_t plen = read_u32(in, path);
  if (d < 2) fail("'", path, "': anchor count ", d, " below minimum 2");
  set.provenance.resize(plen);
  in.read(set.provenance.data(), plen);
  set.raw.resize(d);
  for (auto& obs : set.raw) {
    obs.height = static_cast<int>(h);
    obs.width = static_cast<int>(w);
    obs.channels = static_cast<int>(c);
    obs.pixels.resize(static_cast<std::size_t>(h) * w * c);
    in.read(reinterpret_cast<char*>(obs.pixels.data()),
            static_cast<std::streamsize>(obs.pixels.size()));
  }
  set.embedded.resize(d, m);
  for (std::uint32_t r = 0; r < d; ++r)
    in.read(reinterpret_cast<char*>(set.embedded.row(r).data()),
            static_cast<std::streamsize>(m) * 4);
  if (!in) fail("'", path, "': truncated anchor payload");
  if (!set.embedded.allFinite())
    fail("'", path, "': non-finite anchor embeddings");
  return set;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '", path, "'");
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

}  // namespace r3l
