#pragma once

#include <optional>

#include <Eigen/Core>

namespace geoquery {

/// Pinhole intrinsics. Pixel (u, v) = (column, row) and integer coordinates
/// sit at pixel centers, so the image spans [-0.5, width - 0.5].
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws ParameterError if focal lengths or principal point are out of range.
  void validate() const;
};

/// Rigid world->camera transform: p_cam = rotation * p_world + translation.
struct CameraPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static CameraPose identity() { return {}; }
  static CameraPose from_matrix(const Eigen::Matrix4d& m);
  Eigen::Matrix4d matrix() const;

  CameraPose inverse() const;
  /// (*this) o other: applies `other` first.
  CameraPose compose(const CameraPose& other) const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  /// Throws ParameterError unless rotation is orthonormal with det +1 (tol 1e-6).
  void validate() const;
};

struct CameraModel {
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

using Point3 = Eigen::Vector3d;

struct Pixel2 {
  double u = 0.0;
  double v = 0.0;
};

struct Projection {
  Pixel2 pixel;
  double depth = 0.0;
};

Point3 unproject(Pixel2 pixel, double depth, const CameraIntrinsics& K);

/// Throws BehindCameraError when p.z <= 0.
Projection project(const Point3& p, const CameraIntrinsics& K);

/// d(u, v, depth) / d(x, y, z) at p. Throws BehindCameraError when p.z <= 0.
Eigen::Matrix3d project_jacobian(const Point3& p, const CameraIntrinsics& K);

/// d(x, y, z) / d(u, v, depth).
Eigen::Matrix3d unproject_jacobian(Pixel2 pixel, double depth, const CameraIntrinsics& K);

/// Transform mapping reference-camera coordinates into target-camera coordinates.
CameraPose relative_transform(const CameraPose& ref, const CameraPose& tgt);

/// Returns std::nullopt when the point lands at or behind the target camera plane.
std::optional<Projection> reproject(Pixel2 pixel_ref, double depth_ref, const CameraIntrinsics& K_ref,
                                    const CameraIntrinsics& K_tgt, const CameraPose& T_ref,
                                    const CameraPose& T_tgt);

/// Same as above with a precomputed relative transform.
std::optional<Projection> reproject(Pixel2 pixel_ref, double depth_ref, const CameraIntrinsics& K_ref,
                                    const CameraIntrinsics& K_tgt, const CameraPose& ref_to_tgt);

/// d(u_t, v_t, depth_t) / d(u_r, v_r, depth_r); std::nullopt where reproject is invisible.
std::optional<Eigen::Matrix3d> reproject_jacobian(Pixel2 pixel_ref, double depth_ref, const CameraIntrinsics& K_ref,
                                                  const CameraIntrinsics& K_tgt, const CameraPose& ref_to_tgt);

}  // namespace geoquery
