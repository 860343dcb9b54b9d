#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "geoquery/error.hpp"

namespace geoquery {

/// Dense H x W x C raster, row-major with channels innermost.
///
/// Used for features, images, depth and gradients alike. Zero-sized maps are
/// allowed (an empty reference view in global attention, for example).
template <typename T>
class BasicFeatureMap {
 public:
  using value_type = T;

  BasicFeatureMap() = default;
  BasicFeatureMap(int height, int width, int channels, T fill = T(0))
      : height_(height), width_(width), channels_(channels) {
    if (height < 0 || width < 0 || channels <= 0) throw ShapeError("feature map: invalid dimensions");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const BasicFeatureMap& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }
  T& operator()(int y, int x, int c) { return data_[index(y, x, c)]; }
  const T& operator()(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<T> pixel(int y, int x) { return {data_.data() + index(y, x), static_cast<std::size_t>(channels_)}; }
  std::span<const T> pixel(int y, int x) const {
    return {data_.data() + index(y, x), static_cast<std::size_t>(channels_)};
  }
  /// Pixel by flat row-major position.
  std::span<T> pixel(std::size_t p) { return {data_.data() + p * channels_, static_cast<std::size_t>(channels_)}; }
  std::span<const T> pixel(std::size_t p) const {
    return {data_.data() + p * channels_, static_cast<std::size_t>(channels_)};
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  BasicFeatureMap<U> cast() const {
    BasicFeatureMap<U> out(height_, width_, channels_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.values()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const BasicFeatureMap& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

using FeatureMap = BasicFeatureMap<float>;
using FeatureMap64 = BasicFeatureMap<double>;

template <typename T>
struct Coord2 {
  T u = 0;
  T v = 0;
};

/// Affine map y = matrix * x + bias, matrix stored out x in row-major.
template <typename T>
struct LinearWeights {
  int out = 0;
  int in = 0;
  std::vector<T> matrix;
  std::vector<T> bias;

  LinearWeights() = default;
  LinearWeights(int out_dim, int in_dim) : out(out_dim), in(in_dim), matrix(static_cast<std::size_t>(out_dim) * in_dim), bias(out_dim) {}

  static LinearWeights identity(int dim);
  static LinearWeights zeros(int out_dim, int in_dim) { return LinearWeights(out_dim, in_dim); }

  T& at(int o, int i) { return matrix[static_cast<std::size_t>(o) * in + i]; }
  T at(int o, int i) const { return matrix[static_cast<std::size_t>(o) * in + i]; }

  /// Throws ShapeError when storage does not match the declared shape.
  void validate() const;

  std::vector<std::span<T>> tensors() { return {matrix, bias}; }
  std::vector<std::span<const T>> tensors() const { return {matrix, bias}; }

  template <typename U>
  LinearWeights<U> cast() const {
    LinearWeights<U> w(out, in);
    for (std::size_t i = 0; i < matrix.size(); ++i) w.matrix[i] = static_cast<U>(matrix[i]);
    for (std::size_t i = 0; i < bias.size(); ++i) w.bias[i] = static_cast<U>(bias[i]);
    return w;
  }

  bool operator==(const LinearWeights&) const = default;
};

/// Two affine layers with a rectifier in between.
template <typename T>
struct MlpWeights {
  LinearWeights<T> first;
  LinearWeights<T> second;

  void validate() const;
  std::vector<std::span<T>> tensors() { return {first.matrix, first.bias, second.matrix, second.bias}; }
  std::vector<std::span<const T>> tensors() const {
    return {first.matrix, first.bias, second.matrix, second.bias};
  }
  template <typename U>
  MlpWeights<U> cast() const {
    return {first.template cast<U>(), second.template cast<U>()};
  }
  bool operator==(const MlpWeights&) const = default;
};

// ---------------------------------------------------------------------------
// Bilinear sampling (pixel-center convention, zero padding)

template <typename T>
void sample_point(const BasicFeatureMap<T>& map, T u, T v, std::span<T> out);

/// Backward of sample_point. Accumulates into grad_map; returns d/du, d/dv.
template <typename T>
Coord2<T> sample_point_backward(const BasicFeatureMap<T>& map, T u, T v, std::span<const T> upstream,
                                BasicFeatureMap<T>* grad_map);

/// N samples -> 1 x N x d map.
template <typename T>
BasicFeatureMap<T> bilinear_sample(const BasicFeatureMap<T>& map, std::span<const Coord2<T>> coords);

template <typename T>
struct SampleGradients {
  BasicFeatureMap<T> grad_map;
  std::vector<Coord2<T>> grad_coords;
};

/// upstream is 1 x N x d, matching the forward output.
template <typename T>
SampleGradients<T> bilinear_sample_grad(const BasicFeatureMap<T>& map, std::span<const Coord2<T>> coords,
                                        const BasicFeatureMap<T>& upstream);

// ---------------------------------------------------------------------------
// Dense layers

template <typename T>
void linear_vec(const LinearWeights<T>& w, std::span<const T> x, std::span<T> y);

/// grad_w accumulates; grad_x (if non-empty) is overwritten.
template <typename T>
void linear_vec_backward(const LinearWeights<T>& w, std::span<const T> x, std::span<const T> grad_y,
                         LinearWeights<T>* grad_w, std::span<T> grad_x);

template <typename T>
BasicFeatureMap<T> linear_apply(const BasicFeatureMap<T>& map, const LinearWeights<T>& w);

template <typename T>
struct LinearGradients {
  BasicFeatureMap<T> grad_input;
  LinearWeights<T> grad_weights;
};

template <typename T>
LinearGradients<T> linear_grad(const BasicFeatureMap<T>& map, const LinearWeights<T>& w,
                               const BasicFeatureMap<T>& upstream);

template <typename T>
std::vector<T> softmax(std::span<const T> logits);

template <typename T>
std::vector<T> softmax_grad(std::span<const T> probs, std::span<const T> upstream);

template <typename T>
T sigmoid(T x);

template <typename T>
struct MlpCache {
  std::vector<T> hidden_pre;
  std::vector<T> hidden;
};

template <typename T>
std::vector<T> mlp_apply(const MlpWeights<T>& w, std::span<const T> x, MlpCache<T>* cache = nullptr);

/// grad_w accumulates; returns dL/dx.
template <typename T>
std::vector<T> mlp_backward(const MlpWeights<T>& w, std::span<const T> x, const MlpCache<T>& cache,
                            std::span<const T> grad_out, MlpWeights<T>* grad_w);

/// Affine map of each pixel's zero-padded patch x patch neighbourhood,
/// vectorized in (dy, dx, channel) order. Requires w.in == patch^2 * channels.
template <typename T>
BasicFeatureMap<T> patch_linear(const BasicFeatureMap<T>& map, const LinearWeights<T>& w, int patch);

template <typename T>
LinearGradients<T> patch_linear_grad(const BasicFeatureMap<T>& map, const LinearWeights<T>& w, int patch,
                                     const BasicFeatureMap<T>& upstream);

// ---------------------------------------------------------------------------
// Resampling and elementwise helpers

template <typename T>
BasicFeatureMap<T> avg_pool(const BasicFeatureMap<T>& map, int factor);
template <typename T>
BasicFeatureMap<T> avg_pool_grad(const BasicFeatureMap<T>& upstream, int factor);

/// Bilinear upsampling by an integer factor, clamp-to-edge borders.
template <typename T>
BasicFeatureMap<T> upsample(const BasicFeatureMap<T>& map, int factor);
template <typename T>
BasicFeatureMap<T> upsample_grad(const BasicFeatureMap<T>& upstream, int factor);

template <typename T>
BasicFeatureMap<T> relu(const BasicFeatureMap<T>& map);
/// Gates upstream by (pre_activation > 0).
template <typename T>
BasicFeatureMap<T> relu_grad(const BasicFeatureMap<T>& pre_activation, const BasicFeatureMap<T>& upstream);

template <typename T>
BasicFeatureMap<T> concat_channels(const BasicFeatureMap<T>& a, const BasicFeatureMap<T>& b);
/// Splits channels [0, first) and [first, C).
template <typename T>
std::pair<BasicFeatureMap<T>, BasicFeatureMap<T>> split_channels(const BasicFeatureMap<T>& map, int first);

template <typename T>
void add_inplace(BasicFeatureMap<T>& dst, const BasicFeatureMap<T>& src);

template <typename T>
bool all_finite(std::span<const T> values);

}  // namespace geoquery
