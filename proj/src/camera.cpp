#include "geoquery/camera.hpp"

#include <cmath>
#include <string>

#include <Eigen/LU>

#include "geoquery/error.hpp"

namespace geoquery {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ParameterError("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ParameterError("intrinsics: image size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
    throw ParameterError("intrinsics: principal point outside the image");
}

CameraPose CameraPose::from_matrix(const Eigen::Matrix4d& m) {
  CameraPose pose;
  pose.rotation = m.block<3, 3>(0, 0);
  pose.translation = m.block<3, 1>(0, 3);
  return pose;
}

Eigen::Matrix4d CameraPose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = rotation;
  m.block<3, 1>(0, 3) = translation;
  return m;
}

CameraPose CameraPose::inverse() const {
  CameraPose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

CameraPose CameraPose::compose(const CameraPose& other) const {
  CameraPose out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

void CameraPose::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) throw ParameterError("pose: non-finite entries");
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (ortho > 1e-6 || std::abs(det - 1.0) > 1e-6)
    throw ParameterError("pose: rotation is not orthonormal with determinant +1");
}

Point3 unproject(Pixel2 pixel, double depth, const CameraIntrinsics& K) {
  if (!std::isfinite(depth) || depth <= 0.0)
    throw InvalidDepthError("unproject: depth must be positive and finite, got " + std::to_string(depth));
  return {(pixel.u - K.cx) * depth / K.fx, (pixel.v - K.cy) * depth / K.fy, depth};
}

Projection project(const Point3& p, const CameraIntrinsics& K) {
  if (!(p.z() > 0.0)) throw BehindCameraError("project: point is not in front of the camera");
  return {{K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy}, p.z()};
}

Eigen::Matrix3d project_jacobian(const Point3& p, const CameraIntrinsics& K) {
  if (!(p.z() > 0.0)) throw BehindCameraError("project_jacobian: point is not in front of the camera");
  const double iz = 1.0 / p.z();
  Eigen::Matrix3d J;
  J << K.fx * iz, 0.0, -K.fx * p.x() * iz * iz,
       0.0, K.fy * iz, -K.fy * p.y() * iz * iz,
       0.0, 0.0, 1.0;
  return J;
}

Eigen::Matrix3d unproject_jacobian(Pixel2 pixel, double depth, const CameraIntrinsics& K) {
  if (!std::isfinite(depth) || depth <= 0.0)
    throw InvalidDepthError("unproject_jacobian: depth must be positive and finite, got " + std::to_string(depth));
  Eigen::Matrix3d J;
  J << depth / K.fx, 0.0, (pixel.u - K.cx) / K.fx,
       0.0, depth / K.fy, (pixel.v - K.cy) / K.fy,
       0.0, 0.0, 1.0;
  return J;
}

CameraPose relative_transform(const CameraPose& ref, const CameraPose& tgt) {
  return tgt.compose(ref.inverse());
}

std::optional<Projection> reproject(Pixel2 pixel_ref, double depth_ref, const CameraIntrinsics& K_ref,
                                    const CameraIntrinsics& K_tgt, const CameraPose& ref_to_tgt) {
  const Point3 x_ref = unproject(pixel_ref, depth_ref, K_ref);
  const Point3 x_tgt = ref_to_tgt.apply(x_ref);
  if (!(x_tgt.z() > 0.0)) return std::nullopt;
  return project(x_tgt, K_tgt);
}

std::optional<Projection> reproject(Pixel2 pixel_ref, double depth_ref, const CameraIntrinsics& K_ref,
                                    const CameraIntrinsics& K_tgt, const CameraPose& T_ref,
                                    const CameraPose& T_tgt) {
  return reproject(pixel_ref, depth_ref, K_ref, K_tgt, relative_transform(T_ref, T_tgt));
}

std::optional<Eigen::Matrix3d> reproject_jacobian(Pixel2 pixel_ref, double depth_ref, const CameraIntrinsics& K_ref,
                                                  const CameraIntrinsics& K_tgt, const CameraPose& ref_to_tgt) {
  const Point3 x_tgt = ref_to_tgt.apply(unproject(pixel_ref, depth_ref, K_ref));
  if (!(x_tgt.z() > 0.0)) return std::nullopt;
  return project_jacobian(x_tgt, K_tgt) * ref_to_tgt.rotation * unproject_jacobian(pixel_ref, depth_ref, K_ref);
}

}  // namespace geoquery
