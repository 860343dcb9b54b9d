#pragma once

#include <string>

#include "geoquery/camera.hpp"
#include "geoquery/correspondence.hpp"
#include "geoquery/feature_map.hpp"

namespace geoquery {

// File formats. All binary payloads are little-endian IEEE-754 float32.
//
//   GQFM   "GQFM <H> <W> <d>\n" then H*W*d floats in (y, x, c) order
//   GQCF   "GQCF <H> <W> <scale>\n" then H*W*2 floats (u, v; zero where invalid)
//          then H*W mask bytes (0 or 1)
//   PPM    binary P6 with maxval 255
//   pose   16 whitespace-separated numbers, the row-major 4x4 world-to-camera matrix
//   intrinsics  "fx fy cx cy width height"
//
// Readers throw FormatError on malformed content and InvalidInputError when a
// file cannot be opened.

void write_feature_map(const std::string& path, const FeatureMap& map);
FeatureMap read_feature_map(const std::string& path);

void write_field(const std::string& path, const CorrespondenceField& field);
CorrespondenceField read_field(const std::string& path);

/// Values are clamped to [0, 1] and rounded to the nearest 8-bit level.
void write_ppm(const std::string& path, const FeatureMap& image);
FeatureMap read_ppm(const std::string& path);

void write_pose(const std::string& path, const CameraPose& pose);
CameraPose read_pose(const std::string& path);

void write_intrinsics(const std::string& path, const CameraIntrinsics& K);
CameraIntrinsics read_intrinsics(const std::string& path);

/// Depth rasters travel as single-channel GQFM files.
DepthRaster read_depth(const std::string& path);
void write_depth(const std::string& path, const DepthRaster& depth);

}  // namespace geoquery
