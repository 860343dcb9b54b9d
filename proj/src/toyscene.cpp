#include "geoquery/toyscene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Geometry>

#include "geoquery/random.hpp"

namespace geoquery {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double lattice(std::uint64_t seed, int octave, std::int64_t ix, std::int64_t iy, int channel) {
  std::uint64_t h = splitmix(seed ^ (static_cast<std::uint64_t>(octave) << 56) ^ (static_cast<std::uint64_t>(channel) << 48));
  h = splitmix(h ^ static_cast<std::uint64_t>(ix));
  h = splitmix(h ^ static_cast<std::uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Surface colours stay inside this band so that floaters and dropouts are out of gamut.
constexpr double kNoiseSigma = 0.02;  // at severity 1
constexpr double kTextureFloor = 0.15;
constexpr double kTextureCeil = 0.85;

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double value_noise(std::uint64_t seed, double x, double y, double frequency, int octaves, int channel) {
  double total = 0.0, norm = 0.0, amp = 1.0, f = frequency;
  for (int o = 0; o < octaves; ++o) {
    const double gx = x * f, gy = y * f;
    const double fx = std::floor(gx), fy = std::floor(gy);
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
    const double tx = fade(gx - fx), ty = fade(gy - fy);
    const double a = lattice(seed, o, ix, iy, channel), b = lattice(seed, o, ix + 1, iy, channel);
    const double c = lattice(seed, o, ix, iy + 1, channel), d = lattice(seed, o, ix + 1, iy + 1, channel);
    const double top = a + (b - a) * tx, bottom = c + (d - c) * tx;
    total += amp * (top + (bottom - top) * ty);
    norm += amp;
    amp *= 0.5;
    f *= 2.0;
  }
  return total / norm;
}

Color random_color(Rng& rng) { return {rng.uniform(0.1, 0.95), rng.uniform(0.1, 0.95), rng.uniform(0.1, 0.95)}; }

}  // namespace

Color Texture::evaluate(double x, double y) const {
  const double mix = value_noise(seed, x, y, frequency, octaves, 0);
  const double shade = value_noise(seed, x, y, frequency * 1.7, octaves, 1);
  const double two_pi = 2.0 * std::numbers::pi;
  const double checker =
      0.5 + 0.5 * std::tanh(2.5 * std::sin(two_pi * checker_frequency * x) * std::sin(two_pi * checker_frequency * y));
  Color out;
  for (int c = 0; c < 3; ++c) {
    double v = primary[c] + (secondary[c] - primary[c]) * mix;
    v *= 0.7 + 0.6 * (shade - 0.5);
    v *= (1.0 - checker_mix) + checker_mix * (0.4 + 1.2 * checker);
    out[c] = kTextureFloor + (kTextureCeil - kTextureFloor) * std::clamp(v, 0.0, 1.0);
  }
  return out;
}

void PlaneScene::validate() const {
  for (std::size_t i = 0; i < planes.size(); ++i) {
    if (!(planes[i].depth > 0.0)) throw ParameterError("scene: plane depths must be positive");
    for (std::size_t j = 0; j < i; ++j)
      if (planes[i].depth == planes[j].depth) throw ParameterError("scene: plane depths must be distinct");
  }
}

RenderedView render(const PlaneScene& scene, const CameraModel& camera) {
  scene.validate();
  const auto& K = camera.intrinsics;
  K.validate();
  camera.pose.validate();
  RenderedView view{FeatureMap(K.height, K.width, 3), DepthRaster(K.height, K.width), camera};
  const Eigen::Matrix3d Rt = camera.pose.rotation.transpose();
  const Eigen::Vector3d origin = -(Rt * camera.pose.translation);
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      const Eigen::Vector3d dir = Rt * Eigen::Vector3d((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
      double best = std::numeric_limits<double>::infinity();
      const TexturedPlane* hit = nullptr;
      if (dir.z() != 0.0) {
        for (const auto& plane : scene.planes) {
          const double lambda = (plane.depth - origin.z()) / dir.z();
          if (!(lambda > 0.0) || lambda >= best) continue;
          const double px = origin.x() + lambda * dir.x(), py = origin.y() + lambda * dir.y();
          if (px < plane.x_min || px > plane.x_max || py < plane.y_min || py > plane.y_max) continue;
          best = lambda;
          hit = &plane;
        }
      }
      auto dst = view.image.pixel(y, x);
      if (!hit) {
        for (int c = 0; c < 3; ++c) dst[c] = static_cast<float>(scene.background[c]);
        continue;
      }
      // Camera-frame z equals the ray parameter because the camera ray has unit z.
      const Color col = hit->texture.evaluate(origin.x() + best * dir.x(), origin.y() + best * dir.y());
      for (int c = 0; c < 3; ++c) dst[c] = static_cast<float>(col[c]);
      view.depth.at(y, x) = best;
    }
  return view;
}

FeatureMap error_map(const FeatureMap& a, const FeatureMap& b) {
  if (!a.same_shape(b)) throw ShapeError("error_map: shape mismatch");
  FeatureMap e(a.height(), a.width(), 1);
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    float m = 0.0f;
    const auto pa = a.pixel(p), pb = b.pixel(p);
    for (int c = 0; c < a.channels(); ++c) m = std::max(m, std::abs(pa[c] - pb[c]));
    e.pixel(p)[0] = m * 255.0f;
  }
  return e;
}

namespace {

struct Floater {
  double cx, cy, ra, rb, angle, opacity;
  Color color;
};
struct Dropout {
  double x0, y0, x1, y1;
};
struct WarpBump {
  double cx, cy, sigma, dx, dy;
};

constexpr int kMaxFloaters = 6;
constexpr int kMaxDropouts = 3;
constexpr int kMaxWarps = 3;

int active_count(double severity, int max_count) {
  if (severity <= 0.0) return 0;
  return std::clamp(static_cast<int>(std::ceil(severity * max_count - 1e-9)), 1, max_count);
}

}  // namespace

Corruption corrupt(const RenderedView& view, std::uint64_t seed, double severity, Color background) {
  if (!(severity >= 0.0 && severity <= 1.0)) throw ParameterError("corrupt: severity must lie in [0, 1]");
  const FeatureMap& clean = view.image;
  const int H = clean.height(), W = clean.width(), C = clean.channels();
  const double size = std::min(H, W);

  // Every artifact is drawn regardless of severity so that the streams stay aligned.
  Rng rng(seed);
  std::vector<WarpBump> warps(kMaxWarps);
  for (auto& w : warps) {
    const double amp = rng.uniform(2.0, 5.0), dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    w = {rng.uniform(0, W), rng.uniform(0, H), rng.uniform(0.08, 0.18) * size, amp * std::cos(dir), amp * std::sin(dir)};
  }
  std::vector<Dropout> drops(kMaxDropouts);
  for (auto& d : drops) {
    const double w = rng.uniform(0.1, 0.25) * W, h = rng.uniform(0.1, 0.25) * H;
    const double x0 = rng.uniform(-0.05 * W, W - 0.95 * w), y0 = rng.uniform(-0.05 * H, H - 0.95 * h);
    d = {x0, y0, x0 + w, y0 + h};
  }
  std::vector<Floater> floaters(kMaxFloaters);
  for (auto& f : floaters) {
    Color col = random_color(rng);
    const int hi = rng.uniform_int(0, 2);
    col[hi] = rng.uniform(0.95, 1.0);
    col[(hi + 1) % 3] = rng.uniform(0.0, 0.05);
    f = {rng.uniform(0, W), rng.uniform(0, H), rng.uniform(0.04, 0.12) * size, rng.uniform(0.04, 0.12) * size,
         rng.uniform(0.0, std::numbers::pi), rng.uniform(0.7, 0.95), col};
  }
  Rng noise_rng = rng.fork(0xA11CE);

  const int n_warp = active_count(severity, kMaxWarps);
  const int n_drop = active_count(severity, kMaxDropouts);
  const int n_float = active_count(severity, kMaxFloaters);

  FeatureMap out = clean;
  if (n_warp > 0) {
    const FeatureMap64 src = clean.cast<double>();
    std::vector<double> buf(C);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double dx = 0.0, dy = 0.0;
        for (int i = 0; i < n_warp; ++i) {
          const auto& w = warps[i];
          const double r2 = (x - w.cx) * (x - w.cx) + (y - w.cy) * (y - w.cy);
          const double g = std::exp(-r2 / (2.0 * w.sigma * w.sigma));
          dx += g * w.dx;
          dy += g * w.dy;
        }
        const double su = std::clamp(x + dx, 0.0, W - 1.0), sv = std::clamp(y + dy, 0.0, H - 1.0);
        sample_point(src, su, sv, std::span<double>(buf));
        for (int c = 0; c < C; ++c) out(y, x, c) = static_cast<float>(buf[c]);
      }
  }
  for (int i = 0; i < n_drop; ++i) {
    const auto& d = drops[i];
    for (int y = std::max(0, int(std::ceil(d.y0))); y < std::min(H, int(std::ceil(d.y1))); ++y)
      for (int x = std::max(0, int(std::ceil(d.x0))); x < std::min(W, int(std::ceil(d.x1))); ++x)
        for (int c = 0; c < C; ++c) out(y, x, c) = static_cast<float>(background[c % 3]);
  }
  for (int i = 0; i < n_float; ++i) {
    const auto& f = floaters[i];
    const double ca = std::cos(f.angle), sa = std::sin(f.angle);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double lx = ((x - f.cx) * ca + (y - f.cy) * sa) / f.ra;
        const double ly = (-(x - f.cx) * sa + (y - f.cy) * ca) / f.rb;
        const double r = std::sqrt(lx * lx + ly * ly);
        const double alpha = f.opacity * std::clamp((1.0 - r) / 0.15, 0.0, 1.0);
        if (alpha <= 0.0) continue;
        for (int c = 0; c < C; ++c)
          out(y, x, c) = static_cast<float>((1.0 - alpha) * out(y, x, c) + alpha * f.color[c % 3]);
      }
  }
  const double sigma = kNoiseSigma * severity;
  if (sigma > 0.0)
    for (float& v : out.values()) v = static_cast<float>(std::clamp(v + sigma * noise_rng.normal(), 0.0, 1.0));

  return {out, error_map(out, clean)};
}

PlaneScene random_scene(std::uint64_t seed) {
  Rng rng(seed);
  PlaneScene scene;
  scene.background = {rng.uniform(0.0, 0.05), rng.uniform(0.0, 0.05), rng.uniform(0.0, 0.05)};

  auto make_texture = [&](double freq_lo, double freq_hi) {
    Texture t;
    t.seed = rng.next();
    t.frequency = rng.uniform(freq_lo, freq_hi);
    t.octaves = 3;
    t.checker_mix = rng.uniform(0.0, 0.5);
    t.checker_frequency = rng.uniform(0.3, 0.8);
    t.primary = random_color(rng);
    t.secondary = random_color(rng);
    return t;
  };

  TexturedPlane backdrop;
  backdrop.depth = rng.uniform(7.0, 9.0);
  backdrop.x_min = backdrop.y_min = -20.0;
  backdrop.x_max = backdrop.y_max = 20.0;
  backdrop.texture = make_texture(0.4, 0.9);
  scene.planes.push_back(backdrop);

  const int count = rng.uniform_int(1, 3);
  for (int i = 0; i < count; ++i) {
    TexturedPlane p;
    // Spread depths over disjoint bands so they stay distinct.
    p.depth = 2.5 + (3.5 / count) * (i + rng.uniform(0.1, 0.9));
    const double half_view = 0.5 * p.depth;
    const double cx = rng.uniform(-0.6, 0.6) * half_view, cy = rng.uniform(-0.6, 0.6) * half_view;
    const double hw = rng.uniform(0.25, 0.6) * half_view, hh = rng.uniform(0.25, 0.6) * half_view;
    p.x_min = cx - hw;
    p.x_max = cx + hw;
    p.y_min = cy - hh;
    p.y_max = cy + hh;
    p.texture = make_texture(1.0, 2.5);
    scene.planes.push_back(p);
  }
  return scene;
}

CameraPose random_target_pose(std::uint64_t seed) {
  Rng rng(seed);
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const Eigen::Vector3d center(sign * rng.uniform(0.15, 0.35), rng.uniform(-0.1, 0.1), rng.uniform(-0.15, 0.15));
  const double deg = std::numbers::pi / 180.0;
  const double yaw = rng.uniform(-2.0, 2.0) * deg, pitch = rng.uniform(-1.5, 1.5) * deg;
  const Eigen::Matrix3d cam_to_world =
      (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) * Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX())).toRotationMatrix();
  CameraPose pose;
  pose.rotation = cam_to_world.transpose();
  pose.translation = -(pose.rotation * center);
  return pose;
}

PlaneFixture plane_fixture(int size) {
  PlaneFixture f;
  TexturedPlane plane;
  plane.depth = f.depth;
  plane.x_min = plane.y_min = -20.0;
  plane.x_max = plane.y_max = 20.0;
  plane.texture.seed = 0xF1C7;
  plane.texture.frequency = 0.6;
  plane.texture.octaves = 2;
  plane.texture.checker_mix = 0.2;
  plane.texture.checker_frequency = 0.4;
  f.scene.planes.push_back(plane);
  f.baseline = 0.1 * f.depth;
  const CameraIntrinsics K = default_intrinsics(size);
  CameraPose target;
  target.translation = Eigen::Vector3d(-f.baseline, 0.0, 0.0);
  f.reference = render(f.scene, {K, CameraPose::identity()});
  f.target = render(f.scene, {K, target});
  return f;
}

CameraIntrinsics default_intrinsics(int size) {
  const double c = 0.5 * (size - 1);
  return {double(size), double(size), c, c, size, size};
}

}  // namespace geoquery
