#include "geoquery/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "geoquery/error.hpp"

namespace geoquery {

DepthRaster::DepthRaster(FeatureMap64 values) : values_(std::move(values)) {
  if (values_.channels() != 1) throw ShapeError("depth raster: expected a single channel");
}

bool DepthRaster::valid(int y, int x) const {
  const double d = at(y, x);
  return std::isfinite(d) && d > 0.0;
}

double CorrespondenceField::coverage() const {
  if (mask.empty()) return 0.0;
  std::size_t n = 0;
  for (auto m : mask) n += m != 0;
  return static_cast<double>(n) / static_cast<double>(mask.size());
}

CorrespondenceField CorrespondenceField::identity(int h, int w, int scale) {
  CorrespondenceField f(h, w, scale);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) f.set(y, x, x, y);
  return f;
}

namespace {

// Accumulates one source texel; the caller guarantees finite inputs.
void splat_one(SplatAccumulator& acc, std::span<const double> value, double tu, double tv, double importance) {
  const int H = acc.weight_sum.height();
  const int W = acc.weight_sum.width();
  if (!(tu > -1.0 && tv > -1.0 && tu < W && tv < H)) return;
  const double fu = std::floor(tu), fv = std::floor(tv);
  const int x0 = static_cast<int>(fu), y0 = static_cast<int>(fv);
  const double ax = tu - fu, ay = tv - fv;
  const double w[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const int C = acc.value_sum.channels();
  for (int k = 0; k < 4; ++k) {
    if (xs[k] < 0 || ys[k] < 0 || xs[k] >= W || ys[k] >= H || w[k] == 0.0) continue;
    const double wk = w[k] * importance;
    auto dst = acc.value_sum.pixel(ys[k], xs[k]);
    for (int c = 0; c < C; ++c) dst[c] += wk * value[c];
    acc.weight_sum(ys[k], xs[k], 0) += wk;
    acc.coverage(ys[k], xs[k], 0) += w[k];
  }
}

SplatAccumulator make_accumulator(int h, int w, int channels) {
  return {FeatureMap64(h, w, channels), FeatureMap64(h, w, 1), FeatureMap64(h, w, 1)};
}

}  // namespace

SplatAccumulator forward_splat(const FeatureMap64& values, const FeatureMap64& target_pixels,
                               const FeatureMap64& target_depths, double sharpness, int out_height, int out_width,
                               double depth_offset) {
  if (!(sharpness > 0.0) || !std::isfinite(sharpness)) throw ParameterError("forward_splat: sharpness must be positive");
  if (target_pixels.channels() != 2 || target_depths.channels() != 1 ||
      target_pixels.pixel_count() != values.pixel_count() || target_depths.pixel_count() != values.pixel_count())
    throw ShapeError("forward_splat: source rasters disagree in shape");
  if (!all_finite(values.values())) throw InvalidInputError("forward_splat: non-finite value raster");
  SplatAccumulator acc = make_accumulator(out_height, out_width, values.channels());
  for (std::size_t p = 0; p < values.pixel_count(); ++p) {
    const double z = target_depths.pixel(p)[0];
    if (!std::isfinite(z) || z <= 0.0) continue;
    const auto t = target_pixels.pixel(p);
    if (!std::isfinite(t[0]) || !std::isfinite(t[1])) continue;
    splat_one(acc, values.pixel(p), t[0], t[1], std::exp(-sharpness * (z - depth_offset)));
  }
  return acc;
}

SplatAccumulator forward_splat(const FeatureMap64& values, const FeatureMap64& target_pixels,
                               const FeatureMap64& target_depths, double sharpness) {
  return forward_splat(values, target_pixels, target_depths, sharpness, values.height(), values.width());
}

CorrespondenceField build_field(const DepthRaster& depth_ref, const CameraIntrinsics& K_ref,
                                const CameraIntrinsics& K_tgt, const CameraPose& T_ref, const CameraPose& T_tgt,
                                const FieldOptions& options) {
  K_ref.validate();
  K_tgt.validate();
  T_ref.validate();
  T_tgt.validate();
  if (depth_ref.height() != K_ref.height || depth_ref.width() != K_ref.width)
    throw ShapeError("build_field: depth raster does not match reference intrinsics");

  const int H = depth_ref.height(), W = depth_ref.width();
  const CameraPose rel = relative_transform(T_ref, T_tgt);

  // Reproject every valid reference pixel.
  FeatureMap64 tgt_pixels(H, W, 2), tgt_depths(H, W, 1), ref_coords(H, W, 2);
  std::vector<double> visible_depths;
  visible_depths.reserve(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!depth_ref.valid(y, x)) continue;
      const auto proj = reproject({double(x), double(y)}, depth_ref.at(y, x), K_ref, K_tgt, rel);
      if (!proj) continue;
      // The splatted value is the displacement back to the reference pixel;
      // adding it to the receiving pixel keeps constant-flow regions exact up
      // to the frame edge, where an absolute-coordinate average is biased.
      ref_coords(y, x, 0) = x - proj->pixel.u;
      ref_coords(y, x, 1) = y - proj->pixel.v;
      tgt_pixels(y, x, 0) = proj->pixel.u;
      tgt_pixels(y, x, 1) = proj->pixel.v;
      tgt_depths(y, x, 0) = proj->depth;
      visible_depths.push_back(proj->depth);
    }

  CorrespondenceField field(K_tgt.height, K_tgt.width, 1);
  if (visible_depths.empty()) return field;

  double sharpness = options.sharpness;
  const double nearest = *std::min_element(visible_depths.begin(), visible_depths.end());
  if (!(sharpness > 0.0)) {
    auto mid = visible_depths.begin() + visible_depths.size() / 2;
    std::nth_element(visible_depths.begin(), mid, visible_depths.end());
    sharpness = 10.0 / *mid;
  }

  // Offsetting by the nearest depth keeps the largest importance at 1.
  SplatAccumulator acc;
  const int threads = std::max(1, std::min(options.threads, H));
  if (threads == 1) {
    acc = forward_splat(ref_coords, tgt_pixels, tgt_depths, sharpness, K_tgt.height, K_tgt.width, nearest);
  } else {
    std::vector<SplatAccumulator> partial(threads);
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        const int y0 = H * t / threads, y1 = H * (t + 1) / threads;
        SplatAccumulator local = make_accumulator(K_tgt.height, K_tgt.width, 2);
        for (int y = y0; y < y1; ++y)
          for (int x = 0; x < W; ++x) {
            const double z = tgt_depths(y, x, 0);
            if (!(z > 0.0)) continue;
            splat_one(local, ref_coords.pixel(y, x), tgt_pixels(y, x, 0), tgt_pixels(y, x, 1),
                      std::exp(-sharpness * (z - nearest)));
          }
        partial[t] = std::move(local);
      });
    }
    for (auto& th : pool) th.join();
    acc = std::move(partial[0]);
    for (int t = 1; t < threads; ++t) {
      add_inplace(acc.value_sum, partial[t].value_sum);
      add_inplace(acc.weight_sum, partial[t].weight_sum);
      add_inplace(acc.coverage, partial[t].coverage);
    }
  }

  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x) {
      const double wsum = acc.weight_sum(y, x, 0);
      if (!(acc.coverage(y, x, 0) > options.valid_epsilon) || !(wsum > std::numeric_limits<double>::min())) continue;
      const double u = x + acc.value_sum(y, x, 0) / wsum, v = y + acc.value_sum(y, x, 1) / wsum;
      if (u < 0.0 || v < 0.0 || u > W - 1 || v > H - 1) continue;  // outside the bilinear support of the reference
      field.set(y, x, u, v);
    }
  return field;
}

CorrespondenceField downsample_field(const CorrespondenceField& field, int factor) {
  if (factor < 1) throw ParameterError("downsample_field: factor must be positive");
  if (factor == 1) return field;
  if (field.scale != 1) throw ParameterError("downsample_field: input must be at full resolution");
  if (field.height % factor || field.width % factor)
    throw ShapeError("downsample_field: factor does not divide field dimensions");
  CorrespondenceField out(field.height / factor, field.width / factor, factor);
  const int need = (factor * factor + 1) / 2;
  for (int by = 0; by < out.height; ++by)
    for (int bx = 0; bx < out.width; ++bx) {
      double su = 0.0, sv = 0.0;
      int n = 0;
      for (int y = by * factor; y < (by + 1) * factor; ++y)
        for (int x = bx * factor; x < (bx + 1) * factor; ++x) {
          if (!field.valid(y, x)) continue;
          su += field.u(y, x);
          sv += field.v(y, x);
          ++n;
        }
      if (n < need) continue;
      // Full-resolution coordinate -> coarse grid with centers at l*j + (l-1)/2.
      out.set(by, bx, (su / n + 0.5) / factor - 0.5, (sv / n + 0.5) / factor - 0.5);
    }
  return out;
}

FeatureMap warp_image(const FeatureMap& image, const CorrespondenceField& field) {
  if (field.scale != 1) throw ShapeError("warp_image: field must be at scale 1");
  const FeatureMap64 src = image.cast<double>();
  FeatureMap out(field.height, field.width, image.channels());
  std::vector<double> buf(image.channels());
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x) {
      if (!field.valid(y, x)) continue;
      sample_point(src, field.u(y, x), field.v(y, x), std::span<double>(buf));
      auto dst = out.pixel(y, x);
      for (int c = 0; c < image.channels(); ++c) dst[c] = static_cast<float>(buf[c]);
    }
  return out;
}

}  // namespace geoquery
