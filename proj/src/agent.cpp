#include "r3l/agent.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "r3l/common.hpp"
#include "r3l/ops.hpp"

namespace r3l {

std::string to_string(Mode m) {
  return m == Mode::absolute ? "absolute" : "relative";
}

Mode mode_from_string(const std::string& s) {
  if (s == "absolute") return Mode::absolute;
  if (s == "relative") return Mode::relative;
  fail("unknown mode '", s, "' (absolute|relative)");
}

int NetDims::conv_flat_size() {
  int s = GridRacer::kFrame;
  s = (s - conv1_k) / conv1_s + 1;
  s = (s - conv2_k) / conv2_s + 1;
  s = (s - conv3_k) / conv3_s + 1;
  return conv3_out * s * s;
}

int NetDims::controller_input(Mode mode) {
  return frame_stack *
         (mode == Mode::relative ? anchor_count : latent_width);
}

PolicyBundle init_policy(Mode mode, const VariationSpec& spec,
                         std::uint32_t seed) {
  PolicyBundle b;
  b.mode = mode;
  b.spec = spec;
  b.seed = seed;
  b.action_count = spec.task == Task::no_idle ? 4 : 5;

  Pcg32 rng(mix_seed(seed, 0x696e6974));
  const double root2 = std::sqrt(2.0);
  auto& p = b.params;
  p.add("enc.conv1.w", orthogonal_init<float>(
                           {NetDims::conv1_out, 3, NetDims::conv1_k,
                            NetDims::conv1_k},
                           root2, rng));
  p.add("enc.conv1.b", Tensor::zeros({NetDims::conv1_out}));
  p.add("enc.conv2.w", orthogonal_init<float>(
                           {NetDims::conv2_out, NetDims::conv1_out,
                            NetDims::conv2_k, NetDims::conv2_k},
                           root2, rng));
  p.add("enc.conv2.b", Tensor::zeros({NetDims::conv2_out}));
  p.add("enc.conv3.w", orthogonal_init<float>(
                           {NetDims::conv3_out, NetDims::conv2_out,
                            NetDims::conv3_k, NetDims::conv3_k},
                           root2, rng));
  p.add("enc.conv3.b", Tensor::zeros({NetDims::conv3_out}));
  p.add("enc.fc.w", orthogonal_init<float>(
                        {NetDims::latent_width, NetDims::conv_flat_size()},
                        root2, rng));
  p.add("enc.fc.b", Tensor::zeros({NetDims::latent_width}));

  int cin = NetDims::controller_input(mode);
  p.add("ctrl.fc1.w",
        orthogonal_init<float>({NetDims::hidden1, cin}, root2, rng));
  p.add("ctrl.fc1.b", Tensor::zeros({NetDims::hidden1}));
  p.add("ctrl.fc2.w", orthogonal_init<float>(
                          {NetDims::hidden2, NetDims::hidden1}, root2, rng));
  p.add("ctrl.fc2.b", Tensor::zeros({NetDims::hidden2}));
  // small policy head, unit value head: the usual PPO initialization
  p.add("ctrl.pi.w", orthogonal_init<float>(
                         {b.action_count, NetDims::hidden2}, 0.01, rng));
  p.add("ctrl.pi.b", Tensor::zeros({b.action_count}));
  p.add("ctrl.v.w",
        orthogonal_init<float>({1, NetDims::hidden2}, 1.0, rng));
  p.add("ctrl.v.b", Tensor::zeros({1}));
  return b;
}

Tensor frames_to_tensor(const std::vector<const Observation*>& frames) {
  int n = static_cast<int>(frames.size());
  if (n == 0) fail("frames_to_tensor: empty batch");
  int h = frames[0]->height, w = frames[0]->width, c = frames[0]->channels;
  Tensor x = Tensor::zeros({n, c, h, w});
  constexpr float inv = 1.0f / 255.0f;
  for (int i = 0; i < n; ++i) {
    const Observation& obs = *frames[static_cast<std::size_t>(i)];
    if (obs.height != h || obs.width != w || obs.channels != c)
      fail("frames_to_tensor: frame ", i, " shape differs");
    const std::uint8_t* px = obs.pixels.data();
    float* base = x.ptr() + static_cast<std::int64_t>(i) * c * h * w;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int ch = 0; ch < c; ++ch)
          base[(static_cast<std::int64_t>(ch) * h + y) * w + xx] =
              inv * px[(static_cast<std::int64_t>(y) * w + xx) * c + ch];
  }
  return x;
}

MatX<float> encode_frames(const ParamStore& params,
                          const std::vector<const Observation*>& frames) {
  Tensor x = frames_to_tensor(frames);
  auto& p = const_cast<ParamStore&>(params);
  Tensor h1 = relu_forward(conv2d_forward(x, p.param("enc.conv1.w"),
                                          &p.param("enc.conv1.b"),
                                          NetDims::conv1_s));
  Tensor h2 = relu_forward(conv2d_forward(h1, p.param("enc.conv2.w"),
                                          &p.param("enc.conv2.b"),
                                          NetDims::conv2_s));
  Tensor h3 = relu_forward(conv2d_forward(h2, p.param("enc.conv3.w"),
                                          &p.param("enc.conv3.b"),
                                          NetDims::conv3_s));
  int n = static_cast<int>(frames.size());
  h3.shape = {n, NetDims::conv_flat_size()};
  Tensor latent =
      dense_forward(h3, p.param("enc.fc.w"), &p.param("enc.fc.b"));
  MatX<float> out(n, NetDims::latent_width);
  out = latent.mat(n, NetDims::latent_width);
  return out;
}

Eigen::VectorXf encode_frame(const ParamStore& params, const Observation& obs) {
  MatX<float> m = encode_frames(params, {&obs});
  return m.row(0).transpose();
}

ControllerOut controller_forward(const ParamStore& params,
                                 const Eigen::VectorXf& input) {
  auto& p = const_cast<ParamStore&>(params);
  int cin = static_cast<int>(input.size());
  Tensor x = Tensor::zeros({1, cin});
  x.mat(1, cin).row(0) = input.transpose();
  Tensor h1 =
      relu_forward(dense_forward(x, p.param("ctrl.fc1.w"), &p.param("ctrl.fc1.b")));
  Tensor h2 =
      relu_forward(dense_forward(h1, p.param("ctrl.fc2.w"), &p.param("ctrl.fc2.b")));
  Tensor logits =
      dense_forward(h2, p.param("ctrl.pi.w"), &p.param("ctrl.pi.b"));
  Tensor value = dense_forward(h2, p.param("ctrl.v.w"), &p.param("ctrl.v.b"));
  ControllerOut out;
  out.logits = logits.data;
  out.value = value.data[0];
  if (!out.logits.allFinite())
    fail("controller produced non-finite logits");
  return out;
}

ControllerBatchOut controller_forward_batch(const ParamStore& params,
                                            const MatX<float>& inputs) {
  auto& p = const_cast<ParamStore&>(params);
  int n = static_cast<int>(inputs.rows());
  int cin = static_cast<int>(inputs.cols());
  Tensor x = Tensor::zeros({n, cin});
  x.mat(n, cin) = inputs;
  Tensor h1 =
      relu_forward(dense_forward(x, p.param("ctrl.fc1.w"), &p.param("ctrl.fc1.b")));
  Tensor h2 =
      relu_forward(dense_forward(h1, p.param("ctrl.fc2.w"), &p.param("ctrl.fc2.b")));
  Tensor logits =
      dense_forward(h2, p.param("ctrl.pi.w"), &p.param("ctrl.pi.b"));
  Tensor value = dense_forward(h2, p.param("ctrl.v.w"), &p.param("ctrl.v.b"));
  ControllerBatchOut out;
  out.logits = logits.mat(n, logits.dim(1));
  out.values = value.data;
  return out;
}

Eigen::VectorXf frame_block(const PolicyBundle& bundle, const Observation& obs) {
  Eigen::VectorXf latent = encode_frame(bundle.params, obs);
  if (bundle.mode == Mode::absolute) return latent;
  if (!bundle.anchors)
    fail_as(ErrorCode::missing_anchors,
            "relative bundle is missing its anchor set");
  return project(latent, *bundle.anchors).values;
}

EpisodeResult run_episode_greedy(const PolicyBundle& bundle, GridRacer& env) {
  EpisodeResult out;
  Observation obs = env.reset();
  Eigen::VectorXf block = frame_block(bundle, obs);
  int bw = static_cast<int>(block.size());
  std::vector<Eigen::VectorXf> blocks(NetDims::frame_stack, block);
  Eigen::VectorXf input(static_cast<Eigen::Index>(bw) * NetDims::frame_stack);
  while (!env.done()) {
    for (int i = 0; i < NetDims::frame_stack; ++i)
      input.segment(static_cast<Eigen::Index>(i) * bw, bw) =
          blocks[static_cast<std::size_t>(i)];
    ControllerOut ctrl = controller_forward(bundle.params, input);
    Eigen::Index best = 0;
    ctrl.logits.maxCoeff(&best);
    StepResult r = env.step(static_cast<int>(best));
    out.total_reward += r.reward;
    out.actions.push_back(static_cast<int>(best));
    ++out.steps;
    if (r.done) break;
    blocks.erase(blocks.begin());
    blocks.push_back(frame_block(bundle, r.obs));
  }
  return out;
}

Eigen::VectorXf controller_input_for(const PolicyBundle& bundle,
                                     const std::vector<Observation>& stack) {
  if (static_cast<int>(stack.size()) != NetDims::frame_stack)
    fail("act: expected a stack of ", NetDims::frame_stack, " frames, got ",
         stack.size());
  if (bundle.mode == Mode::relative) {
    if (!bundle.anchors)
      fail_as(ErrorCode::missing_anchors,
              "relative bundle is missing its anchor set");
    return embed_stack(
        stack,
        [&](const Observation& o) { return encode_frame(bundle.params, o); },
        *bundle.anchors, NetDims::frame_stack);
  }
  std::vector<const Observation*> ptrs;
  for (const auto& o : stack) ptrs.push_back(&o);
  MatX<float> latents = encode_frames(bundle.params, ptrs);
  Eigen::VectorXf out(latents.rows() * latents.cols());
  for (Eigen::Index i = 0; i < latents.rows(); ++i)
    out.segment(i * latents.cols(), latents.cols()) = latents.row(i).transpose();
  return out;
}

ActResult act(const PolicyBundle& bundle, const std::vector<Observation>& stack,
              bool sample, Pcg32& rng) {
  Eigen::VectorXf input = controller_input_for(bundle, stack);
  ControllerOut ctrl = controller_forward(bundle.params, input);

  // log-softmax over logits
  float mx = ctrl.logits.maxCoeff();
  Eigen::VectorXf shifted = ctrl.logits.array() - mx;
  float lse = std::log(shifted.array().exp().sum());
  Eigen::VectorXf logp = shifted.array() - lse;

  ActResult out;
  out.value = ctrl.value;
  if (sample) {
    Eigen::VectorXf probs = logp.array().exp();
    float u = rng.next_float();
    float acc = 0.0f;
    int chosen = static_cast<int>(probs.size()) - 1;
    for (int i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) {
        chosen = i;
        break;
      }
    }
    out.action = chosen;
  } else {
    Eigen::Index best = 0;
    ctrl.logits.maxCoeff(&best);  // first maximum, so ties pick lowest index
    out.action = static_cast<int>(best);
  }
  out.log_prob = logp[out.action];
  return out;
}

namespace {

void write_line(std::ofstream& out, const std::string& line) {
  std::uint32_t len = static_cast<std::uint32_t>(line.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
}

std::string meta_get(const std::map<std::string, std::string>& meta,
                     const std::string& key, const std::string& path) {
  auto it = meta.find(key);
  if (it == meta.end()) fail("'", path, "': missing metadata key '", key, "'");
  return it->second;
}

}  // namespace

std::string anchor_sidecar_path(const std::string& checkpoint_path) {
  std::filesystem::path p(checkpoint_path);
  p.replace_extension(".r3la");
  return p.string();
}

void save_bundle(const PolicyBundle& bundle, const std::string& path) {
  for (const auto& name : bundle.params.order)
    if (!bundle.params.param(name).all_finite())
      fail("refusing to save non-finite parameter '", name, "'");

  std::map<std::string, std::string> meta = bundle.metadata;
  meta["mode"] = to_string(bundle.mode);
  meta["visual"] = to_string(bundle.spec.visual);
  meta["task"] = to_string(bundle.spec.task);
  meta["seed"] = std::to_string(bundle.seed);
  meta["action_count"] = std::to_string(bundle.action_count);
  meta["frame_stack"] = std::to_string(NetDims::frame_stack);
  meta["latent_width"] = std::to_string(NetDims::latent_width);
  if (bundle.mode == Mode::relative) {
    if (!bundle.anchors)
      fail_as(ErrorCode::missing_anchors,
              "relative bundle has no anchor set to save");
    std::string anchor_path = anchor_sidecar_path(path);
    save_anchor_set(anchor_path, *bundle.anchors);
    meta["anchor_count"] = std::to_string(bundle.anchors->count());
    meta["anchor_file"] =
        std::filesystem::path(anchor_path).filename().string();
    meta["anchor_hash"] = hex64(file_hash(anchor_path));
    meta["anchor_alpha"] = cat(bundle.anchors->alpha);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open '", path, "' for writing");
  out.write("R3LP", 4);
  std::uint8_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 1);
  std::uint32_t lines = static_cast<std::uint32_t>(meta.size());
  out.write(reinterpret_cast<const char*>(&lines), 4);
  for (const auto& [k, v] : meta) write_line(out, k + "=" + v);
  for (const auto& name : bundle.params.order) {
    const Tensor& t = bundle.params.param(name);
    out.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.size()) * 4);
  }
  if (!out) fail("short write to '", path, "'");
}

PolicyBundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '", path, "'");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "R3LP", 4) != 0)
    fail("'", path, "': bad magic, not a policy checkpoint");
  std::uint8_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 1);
  if (version != 1)
    fail("'", path, "': unsupported checkpoint version ", int(version));
  std::uint32_t lines = 0;
  in.read(reinterpret_cast<char*>(&lines), 4);
  if (!in) fail("'", path, "': truncated header");
  std::map<std::string, std::string> meta;
  for (std::uint32_t i = 0; i < lines; ++i) {
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    if (!in || len > (1u << 20)) fail("'", path, "': corrupt metadata block");
    std::string line(len, '\0');
    in.read(line.data(), len);
    if (!in) fail("'", path, "': truncated metadata");
    auto eq = line.find('=');
    if (eq == std::string::npos)
      fail("'", path, "': metadata line without '='");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }

  VariationSpec spec;
  spec.visual = visual_from_string(meta_get(meta, "visual", path));
  spec.task = task_from_string(meta_get(meta, "task", path));
  Mode mode = mode_from_string(meta_get(meta, "mode", path));
  std::uint32_t seed = static_cast<std::uint32_t>(
      std::stoul(meta_get(meta, "seed", path)));

  PolicyBundle b = init_policy(mode, spec, seed);
  b.metadata = meta;
  for (const auto& name : b.params.order) {
    Tensor& t = b.params.param(name);
    in.read(reinterpret_cast<char*>(t.ptr()),
            static_cast<std::streamsize>(t.size()) * 4);
    if (in.gcount() != static_cast<std::streamsize>(t.size() * 4))
      fail("'", path, "': truncated parameter block at '", name, "'");
    if (!t.all_finite())
      fail("'", path, "': non-finite values in parameter '", name, "'");
  }
  char extra = 0;
  if (in.read(&extra, 1) && in.gcount() == 1)
    fail("'", path, "': trailing bytes after parameter block");
  in.clear();

  if (mode == Mode::relative) {
    std::string anchor_file = meta_get(meta, "anchor_file", path);
    std::string anchor_path =
        (std::filesystem::path(path).parent_path() / anchor_file).string();
    std::string expected = meta_get(meta, "anchor_hash", path);
    std::string actual = hex64(file_hash(anchor_path));
    if (expected != actual)
      fail("'", anchor_path, "': anchor hash mismatch, expected ", expected,
           ", actual ", actual);
    b.anchors = load_anchor_set(anchor_path);
    if (b.anchors->count() != NetDims::anchor_count)
      fail("'", anchor_path, "': anchor count ", b.anchors->count(),
           " does not match the controller input (", NetDims::anchor_count,
           ")");
    auto it = meta.find("anchor_alpha");
    if (it != meta.end()) b.anchors->alpha = std::stof(it->second);
  }
  return b;
}

}  // namespace r3l
