#include "geoquery/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace geoquery {

namespace {

constexpr long long kMaxDim = 1 << 15;
constexpr long long kMaxElements = 1LL << 28;

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInputError("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInputError("cannot open '" + path + "' for writing");
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw InvalidInputError("failed writing '" + path + "'");
}

// Parses "<MAGIC> a b c\n" and leaves the stream at the first payload byte.
std::array<long long, 3> read_header(std::istream& in, const std::string& magic, const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": missing header");
  std::istringstream hs(line);
  std::string tag;
  std::array<long long, 3> v{};
  if (!(hs >> tag) || tag != magic) throw FormatError(path + ": expected " + magic + " header");
  for (auto& x : v)
    if (!(hs >> x)) throw FormatError(path + ": truncated " + magic + " header");
  std::string extra;
  if (hs >> extra) throw FormatError(path + ": trailing data in " + magic + " header");
  return v;
}

void put_f32(std::ostream& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                         static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
  out.write(bytes, 4);
}

void read_f32(std::istream& in, std::span<float> dst, const std::string& path) {
  std::vector<unsigned char> raw(dst.size() * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError(path + ": truncated payload");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const std::uint32_t bits = raw[4 * i] | (raw[4 * i + 1] << 8) | (raw[4 * i + 2] << 16) |
                               (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
    dst[i] = std::bit_cast<float>(bits);
  }
}

void expect_eof(std::istream& in, const std::string& path) {
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes after payload");
}

void check_dims(long long h, long long w, long long c, const std::string& path) {
  if (h < 0 || w < 0 || c < 1 || h > kMaxDim || w > kMaxDim || c > kMaxDim || h * w * c > kMaxElements)
    throw FormatError(path + ": implausible dimensions");
}

std::vector<double> read_numbers(const std::string& path, std::size_t count) {
  auto in = open_in(path);
  std::vector<double> v;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw FormatError(path + ": not a number: '" + tok + "'");
    }
    if (used != tok.size() || !std::isfinite(x)) throw FormatError(path + ": not a finite number: '" + tok + "'");
    v.push_back(x);
  }
  if (v.size() != count)
    throw FormatError(path + ": expected " + std::to_string(count) + " numbers, found " + std::to_string(v.size()));
  return v;
}

}  // namespace

void write_feature_map(const std::string& path, const FeatureMap& map) {
  auto out = open_out(path);
  out << "GQFM " << map.height() << ' ' << map.width() << ' ' << map.channels() << '\n';
  for (float v : map.values()) put_f32(out, v);
  finish(out, path);
}

FeatureMap read_feature_map(const std::string& path) {
  auto in = open_in(path);
  const auto [h, w, c] = read_header(in, "GQFM", path);
  check_dims(h, w, c, path);
  FeatureMap map(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  read_f32(in, map.values(), path);
  expect_eof(in, path);
  return map;
}

void write_field(const std::string& path, const CorrespondenceField& field) {
  auto out = open_out(path);
  out << "GQCF " << field.height << ' ' << field.width << ' ' << field.scale << '\n';
  const std::size_t n = static_cast<std::size_t>(field.height) * field.width;
  for (std::size_t p = 0; p < n; ++p) {
    const bool ok = field.mask[p] != 0;
    put_f32(out, ok ? static_cast<float>(field.coords[2 * p]) : 0.0f);
    put_f32(out, ok ? static_cast<float>(field.coords[2 * p + 1]) : 0.0f);
  }
  for (std::size_t p = 0; p < n; ++p) out.put(field.mask[p] ? 1 : 0);
  finish(out, path);
}

CorrespondenceField read_field(const std::string& path) {
  auto in = open_in(path);
  const auto [h, w, scale] = read_header(in, "GQCF", path);
  check_dims(h, w, 2, path);
  if (scale < 1 || scale > 1024) throw FormatError(path + ": invalid scale");
  CorrespondenceField field(static_cast<int>(h), static_cast<int>(w), static_cast<int>(scale));
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<float> coords(2 * n);
  read_f32(in, coords, path);
  in.read(reinterpret_cast<char*>(field.mask.data()), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) throw FormatError(path + ": truncated mask");
  expect_eof(in, path);
  for (std::size_t p = 0; p < n; ++p) {
    if (field.mask[p] > 1) throw FormatError(path + ": mask bytes must be 0 or 1");
    if (!std::isfinite(coords[2 * p]) || !std::isfinite(coords[2 * p + 1])) throw FormatError(path + ": non-finite coordinate");
    field.coords[2 * p] = field.mask[p] ? coords[2 * p] : 0.0;
    field.coords[2 * p + 1] = field.mask[p] ? coords[2 * p + 1] : 0.0;
  }
  return field;
}

void write_ppm(const std::string& path, const FeatureMap& image) {
  if (image.channels() != 3) throw ShapeError("write_ppm: image must have 3 channels");
  auto out = open_out(path);
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  for (float v : image.values()) {
    const float c = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
  }
  finish(out, path);
}

FeatureMap read_ppm(const std::string& path) {
  auto in = open_in(path);
  auto token = [&]() {
    std::string t;
    for (;;) {
      int ch = in.get();
      if (ch == EOF) break;
      if (ch == '#' && t.empty()) {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(ch)) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(static_cast<char>(ch));
    }
    return t;
  };
  if (token() != "P6") throw FormatError(path + ": not a binary PPM (P6)");
  long long dims[3];
  for (auto& d : dims) {
    const std::string t = token();
    try {
      std::size_t used = 0;
      d = std::stoll(t, &used);
      if (used != t.size()) throw FormatError("");
    } catch (const std::exception&) {
      throw FormatError(path + ": bad PPM header field '" + t + "'");
    }
  }
  if (dims[2] != 255) throw FormatError(path + ": only maxval 255 is supported");
  check_dims(dims[1], dims[0], 3, path);
  FeatureMap img(static_cast<int>(dims[1]), static_cast<int>(dims[0]), 3);
  std::vector<unsigned char> raw(img.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError(path + ": truncated pixel data");
  expect_eof(in, path);
  for (std::size_t i = 0; i < raw.size(); ++i) img.values()[i] = raw[i] / 255.0f;
  return img;
}

void write_pose(const std::string& path, const CameraPose& pose) {
  auto out = open_out(path);
  const Eigen::Matrix4d m = pose.matrix();
  out << std::setprecision(17);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out << (c ? " " : "") << m(r, c);
    out << '\n';
  }
  finish(out, path);
}

CameraPose read_pose(const std::string& path) {
  const auto v = read_numbers(path, 16);
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v[4 * r + c];
  try {
    CameraPose pose = CameraPose::from_matrix(m);
    pose.validate();
    return pose;
  } catch (const Error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_intrinsics(const std::string& path, const CameraIntrinsics& K) {
  auto out = open_out(path);
  out << std::setprecision(17) << K.fx << ' ' << K.fy << ' ' << K.cx << ' ' << K.cy << ' ' << K.width << ' '
      << K.height << '\n';
  finish(out, path);
}

CameraIntrinsics read_intrinsics(const std::string& path) {
  const auto v = read_numbers(path, 6);
  if (v[4] != std::floor(v[4]) || v[5] != std::floor(v[5])) throw FormatError(path + ": width and height must be integers");
  if (v[4] < 1 || v[5] < 1 || v[4] > kMaxDim || v[5] > kMaxDim) throw FormatError(path + ": implausible image size");
  CameraIntrinsics K{v[0], v[1], v[2], v[3], static_cast<int>(v[4]), static_cast<int>(v[5])};
  try {
    K.validate();
  } catch (const Error& e) {
    throw FormatError(path + ": " + e.what());
  }
  return K;
}

DepthRaster read_depth(const std::string& path) {
  const FeatureMap m = read_feature_map(path);
  if (m.channels() != 1) throw FormatError(path + ": depth raster must have one channel");
  return DepthRaster(m.cast<double>());
}

void write_depth(const std::string& path, const DepthRaster& depth) {
  write_feature_map(path, depth.values().cast<float>());
}

}  // namespace geoquery
