#pragma once

#include <cstdint>
#include <vector>

#include "geoquery/camera.hpp"
#include "geoquery/feature_map.hpp"

namespace geoquery {

/// Metric depth, one value per pixel. Non-finite or non-positive entries are invalid.
class DepthRaster {
 public:
  DepthRaster() = default;
  DepthRaster(int height, int width, double fill = 0.0) : values_(height, width, 1, fill) {}
  explicit DepthRaster(FeatureMap64 values);

  int height() const { return values_.height(); }
  int width() const { return values_.width(); }
  double& at(int y, int x) { return values_(y, x, 0); }
  double at(int y, int x) const { return values_(y, x, 0); }
  bool valid(int y, int x) const;

  const FeatureMap64& values() const { return values_; }

 private:
  FeatureMap64 values_;
};

/// Per-target-pixel reference coordinates plus a binary validity mask.
///
/// At scale l the coordinates index the reference grid downsampled by l,
/// using the same pixel-center convention. Coordinates under mask = 0 carry
/// no meaning (they are stored as zero).
struct CorrespondenceField {
  int height = 0;
  int width = 0;
  int scale = 1;
  std::vector<double> coords;  // H * W * 2, (u, v) interleaved
  std::vector<std::uint8_t> mask;

  CorrespondenceField() = default;
  CorrespondenceField(int h, int w, int s = 1)
      : height(h), width(w), scale(s), coords(static_cast<std::size_t>(h) * w * 2), mask(static_cast<std::size_t>(h) * w) {}

  std::size_t pixel(int y, int x) const { return static_cast<std::size_t>(y) * width + x; }
  bool valid(int y, int x) const { return mask[pixel(y, x)] != 0; }
  double u(int y, int x) const { return coords[2 * pixel(y, x)]; }
  double v(int y, int x) const { return coords[2 * pixel(y, x) + 1]; }
  void set(int y, int x, double u, double v) {
    coords[2 * pixel(y, x)] = u;
    coords[2 * pixel(y, x) + 1] = v;
    mask[pixel(y, x)] = 1;
  }

  /// Fraction of pixels with mask = 1.
  double coverage() const;

  /// Identity mapping with full validity.
  static CorrespondenceField identity(int h, int w, int scale = 1);

  bool operator==(const CorrespondenceField&) const = default;
};

struct SplatAccumulator {
  FeatureMap64 value_sum;   // H x W x C, importance-weighted
  FeatureMap64 weight_sum;  // H x W x 1, importance-weighted
  FeatureMap64 coverage;    // H x W x 1, plain bilinear weight (all-ones channel)
};

/// Scatters each source texel bilinearly onto the four target pixels around
/// its target coordinate, with importance exp(-sharpness * (z - depth_offset))
/// so that nearer surfaces dominate after normalization. Source texels with
/// target depth <= 0 (or non-finite) are skipped.
SplatAccumulator forward_splat(const FeatureMap64& values, const FeatureMap64& target_pixels,
                               const FeatureMap64& target_depths, double sharpness, int out_height, int out_width,
                               double depth_offset = 0.0);

/// Same-size convenience overload.
SplatAccumulator forward_splat(const FeatureMap64& values, const FeatureMap64& target_pixels,
                               const FeatureMap64& target_depths, double sharpness);

struct FieldOptions {
  double sharpness = 0.0;  // <= 0: 10 / median target depth
  double valid_epsilon = 1e-4;
  int threads = 1;         // > 1 splits reference rows; not bit-identical to single-threaded
};

/// Dense target->reference correspondence at full resolution (scale 1).
///
/// Reference pixels are reprojected and their displacements splatted into the
/// target; a target pixel is valid when its plain splat coverage exceeds
/// valid_epsilon and the resulting coordinate lies inside the reference pixel grid.
CorrespondenceField build_field(const DepthRaster& depth_ref, const CameraIntrinsics& K_ref,
                                const CameraIntrinsics& K_tgt, const CameraPose& T_ref, const CameraPose& T_tgt,
                                const FieldOptions& options = {});

/// Block-averages valid coordinates into the grid downsampled by `factor`.
/// An output cell is valid when at least ceil(factor^2 / 2) inputs are.
CorrespondenceField downsample_field(const CorrespondenceField& field, int factor);

/// Bilinearly warps `image` (reference view) through the field; mask = 0 pixels
/// become zero. The output takes the field's size; the field must be at scale 1.
FeatureMap warp_image(const FeatureMap& image, const CorrespondenceField& field);

}  // namespace geoquery
