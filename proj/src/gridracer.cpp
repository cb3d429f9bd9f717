#include "r3l/gridracer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "r3l/common.hpp"
#include "r3l/image.hpp"

namespace r3l {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kControlPoints = 12;
#ifndef R3L_TRACK_HALF_WIDTH
#define R3L_TRACK_HALF_WIDTH 6.5f
#endif
#ifndef R3L_RADIUS_BASE
#define R3L_RADIUS_BASE 26.0f
#endif
#ifndef R3L_FAR_DILATE
#define R3L_FAR_DILATE 3
#endif
constexpr float kTrackHalfWidth = R3L_TRACK_HALF_WIDTH;
constexpr float kAccel = 0.25f;
constexpr float kBrake = 0.25f;

// world cell classes
constexpr std::uint8_t kBg = 0;
constexpr std::uint8_t kTrack = 1;
constexpr std::uint8_t kMarker = 2;

struct Rgb {
  std::uint8_t r, g, b;
};

Rgb background_color(Visual v) {
  switch (v) {
    case Visual::green: return {16, 144, 16};
    case Visual::red: return {144, 16, 16};
    case Visual::blue: return {16, 16, 144};
    case Visual::far: return {16, 144, 16};  // zoomed-out view keeps green
    case Visual::yellow: return {144, 144, 16};
  }
  fail("unknown visual");
}

constexpr Rgb kTrackColor = {108, 108, 108};
constexpr Rgb kMarkerColor = {150, 150, 150};
constexpr Rgb kBorderColor = {12, 12, 12};
constexpr Rgb kCarBody = {255, 255, 255};
constexpr Rgb kCarNose = {0, 0, 0};

float dir_x(int heading) {
  return static_cast<float>(std::cos(2.0 * kPi * heading / 16.0));
}
float dir_y(int heading) {
  return static_cast<float>(std::sin(2.0 * kPi * heading / 16.0));
}

void put_px(Observation& obs, int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= obs.width || y >= obs.height) return;
  std::size_t i = (static_cast<std::size_t>(y) * obs.width + x) * 3;
  obs.pixels[i] = c.r;
  obs.pixels[i + 1] = c.g;
  obs.pixels[i + 2] = c.b;
}

}  // namespace

std::string to_string(Visual v) {
  switch (v) {
    case Visual::green: return "green";
    case Visual::red: return "red";
    case Visual::blue: return "blue";
    case Visual::far: return "far";
    case Visual::yellow: return "yellow";
  }
  fail("unknown visual");
}

std::string to_string(Task t) {
  switch (t) {
    case Task::standard: return "standard";
    case Task::slow: return "slow";
    case Task::scrambled: return "scrambled";
    case Task::no_idle: return "no_idle";
  }
  fail("unknown task");
}

std::string to_string(const VariationSpec& spec) {
  return to_string(spec.visual) + "/" + to_string(spec.task);
}

Visual visual_from_string(const std::string& s) {
  if (s == "green") return Visual::green;
  if (s == "red") return Visual::red;
  if (s == "blue") return Visual::blue;
  if (s == "far") return Visual::far;
  if (s == "yellow") return Visual::yellow;
  fail("unknown visual '", s, "' (green|red|blue|far|yellow)");
}

Task task_from_string(const std::string& s) {
  if (s == "standard") return Task::standard;
  if (s == "slow") return Task::slow;
  if (s == "scrambled") return Task::scrambled;
  if (s == "no_idle") return Task::no_idle;
  fail("unknown task '", s, "' (standard|slow|scrambled|no_idle)");
}

std::uint64_t Observation::checksum() const {
  return fnv1a64(pixels.data(), pixels.size());
}

GridRacer::GridRacer(VariationSpec spec, std::uint32_t seed)
    : spec_(spec),
      visual_(spec.visual),
      track_rng_(mix_seed(seed, 0x7261636b)),
      cycle_rng_(mix_seed(seed, 0x636f6c6f)) {}

void GridRacer::set_visual_cycle(std::vector<Visual> cycle) {
  if (cycle.empty()) fail("visual cycle must not be empty");
  visual_cycle_ = std::move(cycle);
}

std::pair<float, float> GridRacer::centerline_point(double phi) const {
  double seg = phi / (2.0 * kPi / kControlPoints);
  int i = static_cast<int>(std::floor(seg)) % kControlPoints;
  if (i < 0) i += kControlPoints;
  double t = seg - std::floor(seg);
  double ts = 0.5 * (1.0 - std::cos(kPi * t));
  double r = radii_[static_cast<std::size_t>(i)] * (1.0 - ts) +
             radii_[static_cast<std::size_t>((i + 1) % kControlPoints)] * ts;
  return {static_cast<float>(kWorld / 2 + r * std::cos(phi)),
          static_cast<float>(kWorld / 2 + r * std::sin(phi))};
}

double GridRacer::car_angle() const {
  return std::atan2(y_ - kWorld / 2, x_ - kWorld / 2);
}

void GridRacer::build_track() {
  // Smooth star-shaped loop: random control radii, two smoothing passes,
  // cosine interpolation between control points.
  for (auto& r : radii_) r = R3L_RADIUS_BASE + 10.0f * track_rng_.next_float();
  for (int pass = 0; pass < 2; ++pass) {
    std::array<float, kControlPoints> s{};
    for (int i = 0; i < kControlPoints; ++i) {
      int prev = (i + kControlPoints - 1) % kControlPoints;
      int next = (i + 1) % kControlPoints;
      s[static_cast<std::size_t>(i)] =
          0.25f * radii_[static_cast<std::size_t>(prev)] +
          0.5f * radii_[static_cast<std::size_t>(i)] +
          0.25f * radii_[static_cast<std::size_t>(next)];
    }
    radii_ = s;
  }

  auto point_at = [&](double phi) { return centerline_point(phi); };

  world_.assign(kWorld * kWorld, kBg);
  const int samples = 1024;
  const float hw2 = kTrackHalfWidth * kTrackHalfWidth;
  constexpr int stamp = static_cast<int>(kTrackHalfWidth) + 1;
  for (int j = 0; j < samples; ++j) {
    auto [px, py] = point_at(2.0 * kPi * j / samples);
    int cx = static_cast<int>(std::floor(px + 0.5f));
    int cy = static_cast<int>(std::floor(py + 0.5f));
    for (int dy = -stamp; dy <= stamp; ++dy) {
      for (int dx = -stamp; dx <= stamp; ++dx) {
        float ddx = static_cast<float>(cx + dx) - px;
        float ddy = static_cast<float>(cy + dy) - py;
        if (ddx * ddx + ddy * ddy > hw2) continue;
        int wx = cx + dx, wy = cy + dy;
        if (wx < 0 || wy < 0 || wx >= kWorld || wy >= kWorld) continue;
        world_[static_cast<std::size_t>(wy) * kWorld + wx] = kTrack;
      }
    }
  }

  checkpoints_.clear();
  for (int k = 0; k < kCheckpoints; ++k)
    checkpoints_.push_back(point_at(2.0 * kPi * (k + 0.5) / kCheckpoints));

  // A marker block every fourth sector gives the encoder stable landmarks.
  for (int k = 0; k < kCheckpoints; k += 4) {
    auto [px, py] = checkpoints_[static_cast<std::size_t>(k)];
    int cx = static_cast<int>(std::floor(px + 0.5f));
    int cy = static_cast<int>(std::floor(py + 0.5f));
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        int wx = cx + dx, wy = cy + dy;
        if (wx < 0 || wy < 0 || wx >= kWorld || wy >= kWorld) continue;
        world_[static_cast<std::size_t>(wy) * kWorld + wx] = kMarker;
      }
  }

  // Zoomed-out rendering uses a thickened copy so the loop stays clearly
  // visible after downsampling.
  world_far_.assign(kWorld * kWorld, kBg);
  constexpr int kFarDilate = R3L_FAR_DILATE;
  auto any_class = [&](int x, int y, int radius, std::uint8_t cls) {
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        int wx = x + dx, wy = y + dy;
        if (wx < 0 || wy < 0 || wx >= kWorld || wy >= kWorld) continue;
        std::uint8_t c = world_[static_cast<std::size_t>(wy) * kWorld + wx];
        if (cls == kTrack ? c != kBg : c == cls) return true;
      }
    return false;
  };
  for (int y = 0; y < kWorld; ++y) {
    for (int x = 0; x < kWorld; ++x) {
      std::uint8_t cls = kBg;
      if (any_class(x, y, 1, kMarker))
        cls = kMarker;
      else if (any_class(x, y, kFarDilate, kTrack))
        cls = kTrack;
      world_far_[static_cast<std::size_t>(y) * kWorld + x] = cls;
    }
  }

  // The whole field is drivable run-off; only the world border is out of
  // bounds. Kept as a mask so the corridor could be narrowed again.
  drivable_.assign(world_.size(), 1);

  // Start pose: at checkpoint 0, heading along the loop tangent.
  auto [ax, ay] = point_at(0.02);
  auto [bx, by] = point_at(-0.02);
  double ang = std::atan2(ay - by, ax - bx);
  int h = static_cast<int>(std::lround(ang / (kPi / 8.0)));
  heading_ = ((h % 16) + 16) % 16;
}

void GridRacer::place_car() {
  x_ = checkpoints_[0].first;
  y_ = checkpoints_[0].second;
  speed_ = 0.0f;
  visited_.assign(checkpoints_.size(), false);
  visited_[static_cast<std::size_t>(checkpoint_sector(x_, y_))] = true;
  lap_completed_ = false;
  step_count_ = 0;
  frame_index_ = 0;
  done_ = false;
}

int GridRacer::visited_checkpoints() const {
  int n = 0;
  for (bool v : visited_)
    if (v) ++n;
  return n;
}

int GridRacer::checkpoint_sector(float x, float y) const {
  double ang = std::atan2(static_cast<double>(y) - kWorld / 2,
                          static_cast<double>(x) - kWorld / 2);
  if (ang < 0) ang += 2.0 * kPi;
  int idx = static_cast<int>(ang / (2.0 * kPi) * kCheckpoints);
  return std::min(idx, kCheckpoints - 1);
}

bool GridRacer::on_road(float x, float y) const {
  int px = static_cast<int>(std::floor(x + 0.5f));
  int py = static_cast<int>(std::floor(y + 0.5f));
  if (px < 0 || py < 0 || px >= kWorld || py >= kWorld) return false;
  return world_[static_cast<std::size_t>(py) * kWorld + px] != kBg;
}

Observation GridRacer::reset() {
  if (!visual_cycle_.empty())
    visual_ = visual_cycle_[cycle_rng_.next_below(
        static_cast<std::uint32_t>(visual_cycle_.size()))];
  else
    visual_ = spec_.visual;
  build_track();
  place_car();
  return render();
}

std::pair<float, float> GridRacer::checkpoint_pos(int index) const {
  return checkpoints_[static_cast<std::size_t>(index % kCheckpoints)];
}

// "On track" for the termination contract means inside the drivable
// corridor: the road plus its run-off apron. Leaving it (or the world) ends
// the episode.
bool GridRacer::on_track(float x, float y) const {
  int px = static_cast<int>(std::floor(x + 0.5f));
  int py = static_cast<int>(std::floor(y + 0.5f));
  if (px < 0 || py < 0 || px >= kWorld || py >= kWorld) return false;
  return drivable_[static_cast<std::size_t>(py) * kWorld + px] != 0;
}

StepResult GridRacer::step(int action) {
  if (done_) fail("step called on a finished episode; reset first");
  if (action < 0 || action >= action_count())
    fail("action ", action, " out of range [0,", action_count(), ")");

  int effective = action;
  if (spec_.task == Task::scrambled)
    effective = kScrambledPermutation[static_cast<std::size_t>(action)];

  switch (effective) {
    case 0: heading_ = (heading_ + 15) % 16; break;
    case 1: heading_ = (heading_ + 1) % 16; break;
    case 2: speed_ = std::min(speed_ + kAccel, kMaxSpeed); break;
    case 3: speed_ = std::max(speed_ - kBrake, 0.0f); break;
    case 4: break;
    default: fail("unmapped action ", effective);
  }
  x_ += speed_ * dir_x(heading_);
  y_ += speed_ * dir_y(heading_);
  ++step_count_;
  ++frame_index_;

  // First visit of a road sector pays the bonus; covering every sector
  // completes the lap and ends the episode.
  float reward = 0.0f;
  if (on_road(x_, y_)) {
    std::size_t sector = static_cast<std::size_t>(checkpoint_sector(x_, y_));
    if (!visited_[sector]) {
      visited_[sector] = true;
      reward += kCheckpointBonus;
      if (visited_checkpoints() == kCheckpoints) lap_completed_ = true;
    }
  }
  if (spec_.task != Task::slow) reward -= kStepPenalty;

  if (!on_track(x_, y_)) {
    reward -= kCrashPenalty;
    done_ = true;
  } else if (spec_.task == Task::slow && speed_ > kSpeedLimit) {
    reward -= kCrashPenalty;
    done_ = true;
  } else if (lap_completed_ || step_count_ >= episode_cap()) {
    done_ = true;
  }

  StepResult out;
  out.obs = render();
  out.reward = reward;
  out.done = done_;
  return out;
}

Observation GridRacer::render() const {
  Observation obs;
  obs.height = kFrame;
  obs.width = kFrame;
  obs.channels = 3;
  obs.frame_index = frame_index_;
  obs.pixels.resize(static_cast<std::size_t>(kFrame) * kFrame * 3);

  Rgb bg = background_color(visual_);
  bool far = visual_ == Visual::far;
  int base_x = 0, base_y = 0;
  if (!far) {
    base_x = static_cast<int>(std::floor(x_ + 0.5f)) - kFrame / 2;
    base_y = static_cast<int>(std::floor(y_ + 0.5f)) - kFrame / 2;
  }
  // The zoomed-out view covers the central region that always contains the
  // whole loop, at half resolution.
  constexpr int far_origin = kWorld / 2 - kFrame;
  const std::vector<std::uint8_t>& grid = far ? world_far_ : world_;
  for (int fy = 0; fy < kFrame; ++fy) {
    for (int fx = 0; fx < kFrame; ++fx) {
      int wx = far ? far_origin + fx * 2 : base_x + fx;
      int wy = far ? far_origin + fy * 2 : base_y + fy;
      Rgb c;
      if (wx < 0 || wy < 0 || wx >= kWorld || wy >= kWorld) {
        c = kBorderColor;
      } else {
        switch (grid[static_cast<std::size_t>(wy) * kWorld + wx]) {
          case kTrack: c = kTrackColor; break;
          case kMarker: c = kMarkerColor; break;
          default: c = bg;
        }
      }
      put_px(obs, fx, fy, c);
    }
  }

  // Car drawn in frame coordinates so it stays visible in both views.
  int fcx, fcy;
  if (far) {
    fcx = static_cast<int>(std::floor((x_ - far_origin) / 2.0f + 0.5f));
    fcy = static_cast<int>(std::floor((y_ - far_origin) / 2.0f + 0.5f));
  } else {
    fcx = kFrame / 2;
    fcy = kFrame / 2;
  }
  put_px(obs, fcx, fcy, kCarBody);
  put_px(obs, fcx + 1, fcy, kCarBody);
  put_px(obs, fcx, fcy + 1, kCarBody);
  put_px(obs, fcx + 1, fcy + 1, kCarBody);
  int nx = fcx + static_cast<int>(std::lround(2.2f * dir_x(heading_)));
  int ny = fcy + static_cast<int>(std::lround(2.2f * dir_y(heading_)));
  put_px(obs, nx, ny, kCarNose);
  return obs;
}

ReplayResult replay(const VariationSpec& spec, std::uint32_t seed,
                    const std::vector<int>& actions) {
  GridRacer env(spec, seed);
  ReplayResult out;
  out.frames.push_back(env.reset());
  for (int a : actions) {
    StepResult r = env.step(a);
    out.frames.push_back(std::move(r.obs));
    out.rewards.push_back(r.reward);
    out.dones.push_back(r.done);
    if (r.done) {
      out.truncated = out.rewards.size() < actions.size();
      break;
    }
  }
  return out;
}

int track_following_action(const GridRacer& env, Pcg32& rng, float eps) {
  int n = env.action_count();
  int intended;
  if (rng.next_float() < eps) {
    intended = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(n)));
  } else {
    // Chase a point a little ahead on the centerline; this both follows the
    // curve and pulls the car back when it drifts off line.
    auto [tx, ty] = env.centerline_point(env.car_angle() + 0.22);
    double ang = std::atan2(ty - env.pos_y(), tx - env.pos_x());
    int want = static_cast<int>(std::lround(ang / (kPi / 8.0)));
    want = ((want % 16) + 16) % 16;
    int diff = (want - env.heading() + 16) % 16;
    float target =
        env.spec().task == Task::slow ? 1.0f : 0.6f * GridRacer::kMaxSpeed;
    if (diff != 0) {
      intended = diff <= 8 ? 1 : 0;
    } else if (env.speed() < target) {
      intended = 2;
    } else if (env.spec().task == Task::no_idle) {
      intended = 3;
    } else {
      intended = 4;
    }
  }
  // The permutation is self-inverse, so pre-mapping the intended action makes
  // the environment apply the intended effect.
  if (env.spec().task == Task::scrambled)
    intended = kScrambledPermutation[static_cast<std::size_t>(intended)];
  return intended;
}

void save_rollout_record(const std::string& path, const RolloutRecord& rec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open '", path, "' for writing");
  out.write("R3LR", 4);
  std::uint8_t version = 1;
  std::uint8_t visual = static_cast<std::uint8_t>(rec.spec.visual);
  std::uint8_t task = static_cast<std::uint8_t>(rec.spec.task);
  out.write(reinterpret_cast<const char*>(&version), 1);
  out.write(reinterpret_cast<const char*>(&visual), 1);
  out.write(reinterpret_cast<const char*>(&task), 1);
  std::uint32_t seed = rec.seed;
  std::uint32_t count = static_cast<std::uint32_t>(rec.actions.size());
  out.write(reinterpret_cast<const char*>(&seed), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (int a : rec.actions) {
    std::uint8_t b = static_cast<std::uint8_t>(a);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) fail("short write to '", path, "'");
}

RolloutRecord load_rollout_record(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '", path, "'");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "R3LR", 4) != 0)
    fail("'", path, "': bad magic, not a rollout record");
  std::uint8_t version = 0, visual = 0, task = 0;
  in.read(reinterpret_cast<char*>(&version), 1);
  in.read(reinterpret_cast<char*>(&visual), 1);
  in.read(reinterpret_cast<char*>(&task), 1);
  if (version != 1) fail("'", path, "': unsupported record version ", int(version));
  RolloutRecord rec;
  rec.spec.visual = static_cast<Visual>(visual);
  rec.spec.task = static_cast<Task>(task);
  std::uint32_t seed = 0, count = 0;
  in.read(reinterpret_cast<char*>(&seed), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in) fail("'", path, "': truncated header");
  rec.seed = seed;
  rec.actions.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint8_t b = 0;
    in.read(reinterpret_cast<char*>(&b), 1);
    rec.actions[i] = b;
  }
  if (!in) fail("'", path, "': truncated action payload");
  return rec;
}

void dump_frame_ppm(const std::string& path, const Observation& obs) {
  write_ppm(path, obs.width, obs.height, obs.pixels.data());
}

}  // namespace r3l
