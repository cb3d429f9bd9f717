#include "r3l/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "r3l/common.hpp"
#include "r3l/ops.hpp"
#include "r3l/tape.hpp"

namespace r3l {

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail_as(ErrorCode::bad_config_key, "config key '", key,
          "' wants a boolean, got '", v, "'");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string num_str(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (total_steps < 0) fail("total_steps must be >= 0");
  if (n_envs < 1) fail("n_envs must be positive");
  if (rollout_len < 1) fail("rollout_len must be positive");
  if (epochs < 1) fail("epochs must be positive");
  if (minibatch_size < 1) fail("minibatch_size must be positive");
  int batch = n_envs * rollout_len;
  if (batch % minibatch_size != 0)
    fail("minibatch_size ", minibatch_size, " must divide the batch size ",
         batch);
  if (!(gamma > 0.0f && gamma <= 1.0f)) fail("gamma must be in (0,1]");
  if (!(gae_lambda > 0.0f && gae_lambda <= 1.0f))
    fail("gae_lambda must be in (0,1]");
  if (!(clip_eps > 0.0f && clip_eps < 1.0f)) fail("clip_eps must be in (0,1)");
  if (!(alpha > 0.0f && alpha <= 1.0f)) fail("alpha must be in (0,1]");
  if (lr <= 0.0f) fail("lr must be positive");
  if (grad_clip <= 0.0f) fail("grad_clip must be positive");
  if (entropy_coef < 0.0f || value_coef < 0.0f)
    fail("loss coefficients must be non-negative");
  if (eval_interval < 1) fail("eval_interval must be positive");
  if (eval_episodes < 1) fail("eval_episodes must be positive");
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os << "total_steps=" << total_steps << "\n";
  os << "n_envs=" << n_envs << "\n";
  os << "rollout_len=" << rollout_len << "\n";
  os << "epochs=" << epochs << "\n";
  os << "minibatch_size=" << minibatch_size << "\n";
  os << "gamma=" << num_str(gamma) << "\n";
  os << "gae_lambda=" << num_str(gae_lambda) << "\n";
  os << "clip_eps=" << num_str(clip_eps) << "\n";
  os << "entropy_coef=" << num_str(entropy_coef) << "\n";
  os << "value_coef=" << num_str(value_coef) << "\n";
  os << "lr=" << num_str(lr) << "\n";
  os << "grad_clip=" << num_str(grad_clip) << "\n";
  os << "alpha=" << num_str(alpha) << "\n";
  os << "ema_on_old=" << bool_str(ema_on_old) << "\n";
  os << "ema_every_env_step=" << bool_str(ema_every_env_step) << "\n";
  os << "norm_adv=" << bool_str(norm_adv) << "\n";
  os << "mode=" << to_string(mode) << "\n";
  os << "visual=" << to_string(spec.visual) << "\n";
  os << "task=" << to_string(spec.task) << "\n";
  os << "seed=" << seed << "\n";
  os << "eval_interval=" << eval_interval << "\n";
  os << "eval_episodes=" << eval_episodes << "\n";
  return os.str();
}

TrainConfig TrainConfig::parse_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    if (line[start] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      fail_as(ErrorCode::bad_config_key, "config line ", lineno,
              " is not key=value: '", line, "'");
    std::string key = line.substr(start, eq - start);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t'))
      key.pop_back();
    std::size_t vstart = value.find_first_not_of(" \t");
    value = vstart == std::string::npos ? "" : value.substr(vstart);

    try {
      if (key == "total_steps") cfg.total_steps = std::stoll(value);
      else if (key == "n_envs") cfg.n_envs = std::stoi(value);
      else if (key == "rollout_len") cfg.rollout_len = std::stoi(value);
      else if (key == "epochs") cfg.epochs = std::stoi(value);
      else if (key == "minibatch_size") cfg.minibatch_size = std::stoi(value);
      else if (key == "gamma") cfg.gamma = std::stof(value);
      else if (key == "gae_lambda") cfg.gae_lambda = std::stof(value);
      else if (key == "clip_eps") cfg.clip_eps = std::stof(value);
      else if (key == "entropy_coef") cfg.entropy_coef = std::stof(value);
      else if (key == "value_coef") cfg.value_coef = std::stof(value);
      else if (key == "lr") cfg.lr = std::stof(value);
      else if (key == "grad_clip") cfg.grad_clip = std::stof(value);
      else if (key == "alpha") cfg.alpha = std::stof(value);
      else if (key == "ema_on_old") cfg.ema_on_old = parse_bool(key, value);
      else if (key == "ema_every_env_step")
        cfg.ema_every_env_step = parse_bool(key, value);
      else if (key == "norm_adv") cfg.norm_adv = parse_bool(key, value);
      else if (key == "mode") cfg.mode = mode_from_string(value);
      else if (key == "visual") cfg.spec.visual = visual_from_string(value);
      else if (key == "task") cfg.spec.task = task_from_string(value);
      else if (key == "seed")
        cfg.seed = static_cast<std::uint32_t>(std::stoul(value));
      else if (key == "eval_interval") cfg.eval_interval = std::stoll(value);
      else if (key == "eval_episodes") cfg.eval_episodes = std::stoi(value);
      else
        fail_as(ErrorCode::bad_config_key, "unknown config key '", key, "'");
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail_as(ErrorCode::bad_config_key, "config key '", key,
              "' has an unparsable value '", value, "'");
    }
  }
  return cfg;
}

TrainConfig TrainConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config '", path, "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

void MetricsTable::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail("cannot open '", path, "' for writing");
  out << "step,eval_return_mean,eval_return_std,loss_policy,loss_value,"
         "entropy,approx_kl,anchor_drift\n";
  for (const auto& r : rows) {
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(r.step), r.eval_return_mean,
                  r.eval_return_std, r.loss_policy, r.loss_value, r.entropy,
                  r.approx_kl, r.anchor_drift);
    out << buf;
  }
  if (!out) fail("short write to '", path, "'");
}

MetricsTable MetricsTable::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open '", path, "'");
  MetricsTable table;
  std::string line;
  if (!std::getline(in, line)) fail("'", path, "': empty metrics file");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricsRow r;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &step,
                    &r.eval_return_mean, &r.eval_return_std, &r.loss_policy,
                    &r.loss_value, &r.entropy, &r.approx_kl,
                    &r.anchor_drift) != 8)
      fail("'", path, "': malformed metrics row '", line, "'");
    r.step = step;
    table.rows.push_back(r);
  }
  return table;
}

std::vector<std::uint32_t> eval_track_seeds(std::uint32_t seed, int episodes) {
  std::vector<std::uint32_t> seeds;
  for (int j = 0; j < episodes; ++j)
    seeds.push_back(static_cast<std::uint32_t>(
        mix_seed(seed ^ 0x65766131u, static_cast<std::uint64_t>(j))));
  return seeds;
}

EvalStats evaluate_greedy(const PolicyBundle& bundle, const VariationSpec& spec,
                          const std::vector<std::uint32_t>& track_seeds,
                          bool multicolor) {
  EvalStats stats;
  for (std::uint32_t s : track_seeds) {
    GridRacer env(spec, s);
    if (multicolor)
      env.set_visual_cycle({Visual::green, Visual::red, Visual::blue});
    EpisodeResult ep = run_episode_greedy(bundle, env);
    stats.returns.push_back(ep.total_reward);
  }
  double sum = 0;
  for (double r : stats.returns) sum += r;
  stats.mean = stats.returns.empty() ? 0 : sum / stats.returns.size();
  double sq = 0;
  for (double r : stats.returns) sq += (r - stats.mean) * (r - stats.mean);
  stats.stddev =
      stats.returns.empty() ? 0 : std::sqrt(sq / stats.returns.size());
  return stats;
}

namespace {

// Per-iteration training state shared by the rollout and update phases.
struct Workspace {
  std::vector<GridRacer> envs;
  std::vector<std::array<int, 4>> stack_states;
  // one cached latent row per pooled frame, plus its controller block
  MatX<float> latents;        // pool x m
  MatX<float> blocks;         // pool x block_width
  int block_width = 0;
};

void record_config_metadata(PolicyBundle& bundle, const TrainConfig& cfg) {
  std::istringstream in(cfg.serialize());
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    bundle.metadata["hp_" + line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (cfg.multicolor) bundle.metadata["multicolor"] = "green,red,blue";
}

// Encodes pool frames [from, to) and refreshes their blocks.
void encode_pool_range(Workspace& ws, const RolloutBuffer& buffer,
                       const PolicyBundle& bundle, int from, int to) {
  if (to <= from) return;
  std::vector<const Observation*> ptrs;
  for (int i = from; i < to; ++i) ptrs.push_back(&buffer.frame(i));
  MatX<float> enc = encode_frames(bundle.params, ptrs);
  if (ws.latents.rows() < to) {
    MatX<float> grown(buffer.pool_size(), NetDims::latent_width);
    grown.topRows(ws.latents.rows()) = ws.latents;
    ws.latents = std::move(grown);
    MatX<float> grown_b(buffer.pool_size(), ws.block_width);
    grown_b.topRows(ws.blocks.rows()) = ws.blocks;
    ws.blocks = std::move(grown_b);
  }
  ws.latents.middleRows(from, to - from) = enc;
  if (bundle.mode == Mode::relative) {
    ws.blocks.middleRows(from, to - from) =
        project_rows(enc, *bundle.anchors);
  } else {
    ws.blocks.middleRows(from, to - from) = enc;
  }
}

void reproject_all_blocks(Workspace& ws, const RolloutBuffer& buffer,
                          const PolicyBundle& bundle) {
  if (bundle.mode != Mode::relative) return;
  ws.blocks.topRows(buffer.pool_size()) = project_rows(
      ws.latents.topRows(buffer.pool_size()), *bundle.anchors);
}

MatX<float> embed_raw_anchors(const PolicyBundle& bundle) {
  std::vector<const Observation*> ptrs;
  for (const auto& obs : bundle.anchors->raw) ptrs.push_back(&obs);
  return encode_frames(bundle.params, ptrs);
}

struct LossStats {
  double policy = 0, value = 0, entropy = 0, kl = 0, drift = 0;
  long updates = 0, ema_updates = 0;
  void reset() { *this = LossStats{}; }
};

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result;
  PolicyBundle& bundle = result.bundle;
  bundle = init_policy(cfg.mode, cfg.spec, cfg.seed);
  record_config_metadata(bundle, cfg);

  if (cfg.mode == Mode::relative) {
    bundle.anchors = make_anchor_set(
        cfg.spec, cfg.seed, NetDims::anchor_count,
        [&](const Observation& o) { return encode_frame(bundle.params, o); },
        cfg.alpha);
    std::uint64_t sum = 0xcbf29ce484222325ull;
    for (const auto& obs : bundle.anchors->raw)
      sum = fnv1a64(obs.pixels.data(), obs.pixels.size(), sum);
    result.raw_anchor_checksum_before = sum;
  }

  AdamState adam;
  adam.lr = cfg.lr;
  adam.init(bundle.params);

  const int batch = cfg.n_envs * cfg.rollout_len;
  const std::int64_t iterations =
      cfg.total_steps == 0 ? 0 : (cfg.total_steps + batch - 1) / batch;
  std::vector<std::int64_t> marks;
  for (std::int64_t k = 1; k * cfg.eval_interval <= cfg.total_steps; ++k)
    marks.push_back(k * cfg.eval_interval);

  Workspace ws;
  ws.block_width = cfg.mode == Mode::relative ? NetDims::anchor_count
                                              : NetDims::latent_width;
  RolloutBuffer buffer(cfg.n_envs, cfg.rollout_len, NetDims::frame_stack);
  for (int i = 0; i < cfg.n_envs; ++i) {
    ws.envs.emplace_back(cfg.spec, static_cast<std::uint32_t>(mix_seed(
                                       cfg.seed, 0xe000u + static_cast<std::uint64_t>(i))));
    if (cfg.multicolor)
      ws.envs.back().set_visual_cycle(
          {Visual::green, Visual::red, Visual::blue});
    int id = buffer.add_frame(ws.envs.back().reset());
    ws.stack_states.push_back({id, id, id, id});
  }
  ws.latents = MatX<float>::Zero(buffer.pool_size(), NetDims::latent_width);
  ws.blocks = MatX<float>::Zero(buffer.pool_size(), ws.block_width);
  encode_pool_range(ws, buffer, bundle, 0, buffer.pool_size());

  Pcg32 action_rng(mix_seed(cfg.seed, 0xac7104));
  Pcg32 shuffle_rng(mix_seed(cfg.seed, 0x5bff1e));
  auto eval_seeds = eval_track_seeds(cfg.seed, cfg.eval_episodes);

  LossStats stats;
  auto push_metrics_row = [&](std::int64_t step) {
    EvalStats ev =
        evaluate_greedy(bundle, cfg.spec, eval_seeds, cfg.multicolor);
    MetricsRow row;
    row.step = step;
    row.eval_return_mean = ev.mean;
    row.eval_return_std = ev.stddev;
    if (stats.updates > 0) {
      row.loss_policy = stats.policy / stats.updates;
      row.loss_value = stats.value / stats.updates;
      row.entropy = stats.entropy / stats.updates;
      row.approx_kl = stats.kl / stats.updates;
    }
    if (stats.ema_updates > 0) row.anchor_drift = stats.drift / stats.ema_updates;
    result.metrics.rows.push_back(row);
    stats.reset();
  };
  push_metrics_row(0);

  ParamStore last_good = bundle.params;
  MatX<float> last_good_anchors;
  if (bundle.anchors) last_good_anchors = bundle.anchors->embedded;

  std::int64_t global_step = 0;
  std::size_t next_mark = 0;
  std::vector<int> flat_order(static_cast<std::size_t>(batch));
  const bool trace = std::getenv("R3L_TRACE") != nullptr;
  double trace_grad_sum = 0;
  long trace_grad_count = 0;
  double trace_pi_grad = 0, trace_v_grad = 0, trace_enc_grad = 0;
  std::vector<long> trace_actions(8, 0);

  for (std::int64_t iter = 1; iter <= iterations; ++iter) {
    buffer.begin_iteration(ws.stack_states);
    // Refresh the carried-over frames: weights (and anchors) moved last
    // update, so their cached blocks are stale.
    ws.latents.conservativeResize(buffer.pool_size(), Eigen::NoChange);
    ws.blocks.conservativeResize(buffer.pool_size(), Eigen::NoChange);
    encode_pool_range(ws, buffer, bundle, 0, buffer.pool_size());

    MatX<float> fresh_for_env_ema;
    if (cfg.mode == Mode::relative && cfg.ema_every_env_step)
      fresh_for_env_ema = embed_raw_anchors(bundle);

    // -- rollout --
    for (int t = 0; t < cfg.rollout_len; ++t) {
      MatX<float> inputs(cfg.n_envs, ws.block_width * NetDims::frame_stack);
      for (int i = 0; i < cfg.n_envs; ++i)
        for (int s = 0; s < NetDims::frame_stack; ++s)
          inputs.block(i, s * ws.block_width, 1, ws.block_width) =
              ws.blocks.row(ws.stack_states[static_cast<std::size_t>(i)]
                                           [static_cast<std::size_t>(s)]);
      ControllerBatchOut out = controller_forward_batch(bundle.params, inputs);

      int first_new = buffer.pool_size();
      for (int i = 0; i < cfg.n_envs; ++i) {
        // categorical sample from the logits row
        Eigen::VectorXf row = out.logits.row(i).transpose();
        float mx = row.maxCoeff();
        Eigen::VectorXf probs = (row.array() - mx).exp();
        probs /= probs.sum();
        float u = action_rng.next_float();
        int action = static_cast<int>(probs.size()) - 1;
        float acc = 0.0f;
        for (int a = 0; a < probs.size(); ++a) {
          acc += probs[a];
          if (u < acc) {
            action = a;
            break;
          }
        }
        float logp = std::log(std::max(probs[action], 1e-30f));
        if (trace) ++trace_actions[static_cast<std::size_t>(action)];

        GridRacer& env = ws.envs[static_cast<std::size_t>(i)];
        StepResult sr = env.step(action);
        buffer.record(t, i, ws.stack_states[static_cast<std::size_t>(i)],
                      action, logp, out.values[i], sr.reward, sr.done);
        if (sr.done) {
          int id = buffer.add_frame(env.reset());
          ws.stack_states[static_cast<std::size_t>(i)] = {id, id, id, id};
        } else {
          int id = buffer.add_frame(std::move(sr.obs));
          auto& st = ws.stack_states[static_cast<std::size_t>(i)];
          st = {st[1], st[2], st[3], id};
        }
      }
      encode_pool_range(ws, buffer, bundle, first_new, buffer.pool_size());
      global_step += cfg.n_envs;

      if (cfg.mode == Mode::relative && cfg.ema_every_env_step) {
        MatX<float> before = bundle.anchors->embedded;
        ema_update(*bundle.anchors, fresh_for_env_ema, cfg.ema_on_old);
        stats.drift += (bundle.anchors->embedded - before).norm();
        ++stats.ema_updates;
        reproject_all_blocks(ws, buffer, bundle);
      }
    }

    // -- bootstrap + GAE --
    {
      MatX<float> inputs(cfg.n_envs, ws.block_width * NetDims::frame_stack);
      for (int i = 0; i < cfg.n_envs; ++i)
        for (int s = 0; s < NetDims::frame_stack; ++s)
          inputs.block(i, s * ws.block_width, 1, ws.block_width) =
              ws.blocks.row(ws.stack_states[static_cast<std::size_t>(i)]
                                           [static_cast<std::size_t>(s)]);
      ControllerBatchOut out = controller_forward_batch(bundle.params, inputs);
      buffer.fill_advantages(out.values, cfg.gamma, cfg.gae_lambda);
    }

    // -- PPO update --
    for (int j = 0; j < batch; ++j) flat_order[static_cast<std::size_t>(j)] = j;
    bool aborted = false;
    for (int epoch = 0; epoch < cfg.epochs && !aborted; ++epoch) {
      for (int j = batch - 1; j > 0; --j) {
        int k = static_cast<int>(
            shuffle_rng.next_below(static_cast<std::uint32_t>(j + 1)));
        std::swap(flat_order[static_cast<std::size_t>(j)],
                  flat_order[static_cast<std::size_t>(k)]);
      }
      for (int start = 0; start < batch && !aborted;
           start += cfg.minibatch_size) {
        int mb = cfg.minibatch_size;
        // unique frames of this minibatch, first-seen order
        std::unordered_map<int, int> local;
        std::vector<int> uniq;
        std::vector<std::vector<int>> stack_idx(static_cast<std::size_t>(mb));
        std::vector<int> actions(static_cast<std::size_t>(mb));
        Tensor old_logprob = Tensor::zeros({mb});
        Tensor old_value = Tensor::zeros({mb});
        Eigen::VectorXf adv(mb);
        Tensor returns_t = Tensor::zeros({mb});
        for (int b = 0; b < mb; ++b) {
          int flat = flat_order[static_cast<std::size_t>(start + b)];
          for (int s = 0; s < NetDims::frame_stack; ++s) {
            int id = buffer.stack_of(flat)[static_cast<std::size_t>(s)];
            auto it = local.find(id);
            if (it == local.end()) {
              it = local.emplace(id, static_cast<int>(uniq.size())).first;
              uniq.push_back(id);
            }
            stack_idx[static_cast<std::size_t>(b)].push_back(it->second);
          }
          actions[static_cast<std::size_t>(b)] = buffer.action_of(flat);
          old_logprob.data[b] = buffer.log_prob_of(flat);
          old_value.data[b] = buffer.value_of(flat);
          adv[b] = buffer.advantage_of(flat);
          returns_t.data[b] = buffer.return_of(flat);
        }
        if (cfg.norm_adv) normalize_advantages(adv);

        std::vector<const Observation*> ptrs;
        for (int id : uniq) ptrs.push_back(&buffer.frame(id));
        Tensor frames = frames_to_tensor(ptrs);

        Tape tape;
        int x = tape.leaf(std::move(frames));
        int h1 = tape.relu(tape.conv2d(x, tape.param(bundle.params, "enc.conv1.w"),
                                       tape.param(bundle.params, "enc.conv1.b"),
                                       NetDims::conv1_s));
        int h2 = tape.relu(tape.conv2d(h1, tape.param(bundle.params, "enc.conv2.w"),
                                       tape.param(bundle.params, "enc.conv2.b"),
                                       NetDims::conv2_s));
        int h3 = tape.relu(tape.conv2d(h2, tape.param(bundle.params, "enc.conv3.w"),
                                       tape.param(bundle.params, "enc.conv3.b"),
                                       NetDims::conv3_s));
        int flat_conv = tape.reshape(
            h3, {static_cast<int>(uniq.size()), NetDims::conv_flat_size()});
        int latent = tape.dense(flat_conv, tape.param(bundle.params, "enc.fc.w"),
                                tape.param(bundle.params, "enc.fc.b"));
        int base = latent;
        if (cfg.mode == Mode::relative) {
          Tensor anchors_t = Tensor::zeros(
              {NetDims::anchor_count, NetDims::latent_width});
          anchors_t.mat(NetDims::anchor_count, NetDims::latent_width) =
              bundle.anchors->embedded;
          base = tape.cosine_rows(latent, std::move(anchors_t));
        }
        int ctrl_in = tape.gather_rows_concat(base, stack_idx);
        int c1 = tape.relu(tape.dense(ctrl_in,
                                      tape.param(bundle.params, "ctrl.fc1.w"),
                                      tape.param(bundle.params, "ctrl.fc1.b")));
        int c2 = tape.relu(tape.dense(c1, tape.param(bundle.params, "ctrl.fc2.w"),
                                      tape.param(bundle.params, "ctrl.fc2.b")));
        int logits = tape.dense(c2, tape.param(bundle.params, "ctrl.pi.w"),
                                tape.param(bundle.params, "ctrl.pi.b"));
        int value = tape.reshape(
            tape.dense(c2, tape.param(bundle.params, "ctrl.v.w"),
                       tape.param(bundle.params, "ctrl.v.b")),
            {mb});

        int new_logprob = tape.categorical_log_prob(logits, actions);
        int logratio = tape.sub(new_logprob, tape.leaf(old_logprob));
        int ratio = tape.exp_op(logratio);

        Tensor neg_adv = Tensor::zeros({mb});
        neg_adv.data = -adv;
        int neg_adv_leaf = tape.leaf(std::move(neg_adv));
        int pg1 = tape.mul(neg_adv_leaf, ratio);
        int pg2 = tape.mul(neg_adv_leaf,
                           tape.clamp(ratio, 1.0f - cfg.clip_eps,
                                      1.0f + cfg.clip_eps));
        int pg_loss = tape.mean(tape.max_op(pg1, pg2));

        int ret_leaf = tape.leaf(returns_t);
        int v_err = tape.square(tape.sub(value, ret_leaf));
        int old_v_leaf = tape.leaf(old_value);
        int v_clipped = tape.add(
            old_v_leaf, tape.clamp(tape.sub(value, old_v_leaf), -cfg.clip_eps,
                                   cfg.clip_eps));
        int v_err_clipped = tape.square(tape.sub(v_clipped, ret_leaf));
        int v_loss =
            tape.scale(tape.mean(tape.max_op(v_err, v_err_clipped)), 0.5f);

        int entropy = tape.mean(tape.categorical_entropy(logits));
        int loss = tape.add(
            tape.sub(pg_loss, tape.scale(entropy, cfg.entropy_coef)),
            tape.scale(v_loss, cfg.value_coef));

        if (!tape.value(loss).all_finite()) {
          bundle.params = last_good;
          if (bundle.anchors) bundle.anchors->embedded = last_good_anchors;
          result.nan_aborted = true;
          aborted = true;
          break;
        }

        if (epoch == 0 && start == 0) {
          const Tensor& r = tape.value(ratio);
          for (std::int64_t b = 0; b < r.size(); ++b)
            result.max_initial_ratio_dev =
                std::max(result.max_initial_ratio_dev,
                         std::fabs(static_cast<double>(r.data[b]) - 1.0));
        }

        // approx KL: mean((ratio - 1) - logratio)
        {
          const Tensor& r = tape.value(ratio);
          const Tensor& lr_t = tape.value(logratio);
          double kl = 0;
          for (std::int64_t b = 0; b < r.size(); ++b)
            kl += (r.data[b] - 1.0) - lr_t.data[b];
          stats.kl += kl / static_cast<double>(r.size());
        }
        stats.policy += tape.value(pg_loss).data[0];
        stats.value += tape.value(v_loss).data[0];
        stats.entropy += tape.value(entropy).data[0];
        ++stats.updates;

        bundle.params.zero_grads();
        tape.backward(loss, bundle.params);
        if (trace) {
          trace_pi_grad += bundle.params.grad("ctrl.pi.w").data.norm();
          trace_v_grad += bundle.params.grad("ctrl.v.w").data.norm();
          trace_enc_grad += bundle.params.grad("enc.fc.w").data.norm();
        }
        float grad_norm = clip_grad_norm(bundle.params, cfg.grad_clip);
        trace_grad_sum += grad_norm;
        ++trace_grad_count;
        adam_step(bundle.params, adam);

        if (cfg.mode == Mode::relative && !cfg.ema_every_env_step) {
          MatX<float> fresh = embed_raw_anchors(bundle);
          MatX<float> before = bundle.anchors->embedded;
          ema_update(*bundle.anchors, fresh, cfg.ema_on_old);
          stats.drift += (bundle.anchors->embedded - before).norm();
          ++stats.ema_updates;
        }
      }
    }
    if (result.nan_aborted) break;

    if (trace) {
      double batch_reward = buffer.rewards().sum();
      long n = trace_grad_count ? trace_grad_count : 1;
      std::fprintf(stderr,
                   "iter %lld step %lld batch_reward %8.1f grad %6.2f "
                   "(pi %6.3f v %7.2f enc %7.2f) actions",
                   static_cast<long long>(iter),
                   static_cast<long long>(global_step), batch_reward,
                   trace_grad_sum / n, trace_pi_grad / n, trace_v_grad / n,
                   trace_enc_grad / n);
      for (int a = 0; a < 5; ++a)
        std::fprintf(stderr, " %ld", trace_actions[static_cast<std::size_t>(a)]);
      std::fprintf(stderr, "\n");
      trace_grad_sum = trace_pi_grad = trace_v_grad = trace_enc_grad = 0;
      trace_grad_count = 0;
      std::fill(trace_actions.begin(), trace_actions.end(), 0);
    }

    last_good = bundle.params;
    if (bundle.anchors) last_good_anchors = bundle.anchors->embedded;

    while (next_mark < marks.size() &&
           marks[next_mark] <= global_step) {
      push_metrics_row(marks[next_mark]);
      ++next_mark;
    }
  }

  if (bundle.anchors) {
    std::uint64_t sum = 0xcbf29ce484222325ull;
    for (const auto& obs : bundle.anchors->raw)
      sum = fnv1a64(obs.pixels.data(), obs.pixels.size(), sum);
    result.raw_anchor_checksum_after = sum;
  }
  return result;
}

TrainResult train_multicolor(TrainConfig cfg) {
  cfg.multicolor = true;
  return train(cfg);
}

SweepResult alpha_sweep(const TrainConfig& base,
                        const std::vector<double>& alphas,
                        bool both_conventions) {
  for (double a : alphas)
    if (!(a > 0.0 && a <= 1.0)) fail("sweep alpha ", a, " outside (0,1]");
  SweepResult sweep;
  std::vector<bool> conventions =
      both_conventions ? std::vector<bool>{false, true}
                       : std::vector<bool>{base.ema_on_old};
  for (bool on_old : conventions) {
    for (double a : alphas) {
      TrainConfig cfg = base;
      cfg.alpha = static_cast<float>(a);
      cfg.ema_on_old = on_old;
      TrainResult r = train(cfg);
      SweepRun run;
      run.alpha = a;
      run.ema_on_old = on_old;
      run.metrics = std::move(r.metrics);
      sweep.runs.push_back(std::move(run));
    }
  }
  bool first = true;
  for (const auto& run : sweep.runs) {
    double final_eval = run.metrics.rows.empty()
                            ? 0
                            : run.metrics.rows.back().eval_return_mean;
    if (first || final_eval > sweep.best_final_eval) {
      sweep.best_final_eval = final_eval;
      sweep.best_alpha = run.alpha;
      sweep.best_ema_on_old = run.ema_on_old;
      first = false;
    }
  }
  return sweep;
}

void write_combined_curves(const SweepResult& sweep, const std::string& path) {
  if (sweep.runs.empty()) fail("combined curves: no sweep runs");
  std::ofstream out(path);
  if (!out) fail("cannot open '", path, "' for writing");
  out << "step";
  for (const auto& run : sweep.runs) {
    std::string label =
        cat("alpha=", num_str(run.alpha), run.ema_on_old ? ";ema_on_old" : "");
    out << ",eval_mean[" << label << "],eval_std[" << label << "]";
  }
  out << "\n";
  std::size_t rows = sweep.runs[0].metrics.rows.size();
  for (const auto& run : sweep.runs)
    if (run.metrics.rows.size() != rows)
      fail("combined curves: sweep runs disagree on row count");
  for (std::size_t i = 0; i < rows; ++i) {
    out << sweep.runs[0].metrics.rows[i].step;
    for (const auto& run : sweep.runs) {
      char buf[80];
      std::snprintf(buf, sizeof(buf), ",%.9g,%.9g",
                    run.metrics.rows[i].eval_return_mean,
                    run.metrics.rows[i].eval_return_std);
      out << buf;
    }
    out << "\n";
  }
  // summary row: the best final evaluation mean across runs
  out << "# best_alpha=" << num_str(sweep.best_alpha)
      << " ema_on_old=" << bool_str(sweep.best_ema_on_old)
      << " final_eval_mean=" << num_str(sweep.best_final_eval) << "\n";
  if (!out) fail("short write to '", path, "'");
}

}  // namespace r3l
