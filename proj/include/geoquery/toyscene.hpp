#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "geoquery/camera.hpp"
#include "geoquery/correspondence.hpp"
#include "geoquery/feature_map.hpp"

namespace geoquery {

using Color = std::array<double, 3>;

/// Band-limited procedural texture: multi-octave value noise blended with a soft checker.
struct Texture {
  std::uint64_t seed = 0;
  double frequency = 1.0;  // lattice cells per meter at the first octave
  int octaves = 3;
  double checker_mix = 0.3;
  double checker_frequency = 0.5;  // checker periods per meter
  Color primary{0.8, 0.3, 0.2};
  Color secondary{0.2, 0.5, 0.8};

  Color evaluate(double x, double y) const;
};

/// Fronto-parallel rectangle z = depth in world coordinates.
struct TexturedPlane {
  double depth = 5.0;
  double x_min = -1.0, x_max = 1.0;
  double y_min = -1.0, y_max = 1.0;
  Texture texture;
};

struct PlaneScene {
  std::vector<TexturedPlane> planes;
  Color background{0.0, 0.0, 0.0};

  /// Throws ParameterError unless depths are positive and pairwise distinct.
  void validate() const;
};

struct RenderedView {
  FeatureMap image;  // H x W x 3 in [0, 1]
  DepthRaster depth;  // camera-frame z, 0 where no plane is hit
  CameraModel camera;
};

/// Ray casting with a z-buffer; textures are evaluated exactly at each hit point.
RenderedView render(const PlaneScene& scene, const CameraModel& camera);

struct Corruption {
  FeatureMap image;      // H x W x 3
  FeatureMap error_map;  // H x W x 1, max-channel |corrupted - clean| on the 0..255 scale
};

/// Render-artifact surrogate: smooth local warps, rectangular dropouts to
/// `background`, elliptical floaters of foreign colour and additive noise.
/// Artifacts are drawn from `seed` in a fixed order; severity in [0, 1]
/// selects how many are active and scales the noise, so severity 0 is the
/// identity and higher severities add artifacts on top of lower ones.
Corruption corrupt(const RenderedView& view, std::uint64_t seed, double severity, Color background = {0.0, 0.0, 0.0});

/// Error map between two images, same convention as Corruption::error_map.
FeatureMap error_map(const FeatureMap& a, const FeatureMap& b);

/// Random layered scene: a textured backdrop plus 1-3 foreground planes.
PlaneScene random_scene(std::uint64_t seed);

/// Random target pose relative to an identity reference: lateral baseline and small rotation.
CameraPose random_target_pose(std::uint64_t seed);

/// Textured fronto-parallel plane seen by two cameras that differ by a pure
/// x-translation of 10% of the plane depth (a disparity of 10% of the width).
struct PlaneFixture {
  PlaneScene scene;
  double depth = 4.0;
  double baseline = 0.4;  // target camera centre sits at (+baseline, 0, 0)
  RenderedView reference;
  RenderedView target;
};

PlaneFixture plane_fixture(int size = 64);

/// Square pinhole intrinsics with a ~53 degree field of view.
CameraIntrinsics default_intrinsics(int size);

}  // namespace geoquery
