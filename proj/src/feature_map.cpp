#include "geoquery/feature_map.hpp"

#include <cmath>
#include <limits>

namespace geoquery {

template <typename T>
LinearWeights<T> LinearWeights<T>::identity(int dim) {
  LinearWeights w(dim, dim);
  for (int i = 0; i < dim; ++i) w.at(i, i) = T(1);
  return w;
}

template <typename T>
void LinearWeights<T>::validate() const {
  if (out <= 0 || in <= 0 || matrix.size() != static_cast<std::size_t>(out) * in || bias.size() != static_cast<std::size_t>(out))
    throw ShapeError("linear weights: storage does not match " + std::to_string(out) + "x" + std::to_string(in));
}

template <typename T>
void MlpWeights<T>::validate() const {
  first.validate();
  second.validate();
  if (second.in != first.out) throw ShapeError("mlp: layer widths do not chain");
}

namespace {

template <typename T>
struct Taps {
  int x0, y0;
  T wx, wy;  // weight of the +1 neighbour along each axis
};

template <typename T>
Taps<T> taps_for(T u, T v) {
  const T fu = std::floor(u);
  const T fv = std::floor(v);
  return {static_cast<int>(fu), static_cast<int>(fv), u - fu, v - fv};
}

template <typename T>
bool inside(const BasicFeatureMap<T>& m, int x, int y) {
  return x >= 0 && y >= 0 && x < m.width() && y < m.height();
}

}  // namespace

template <typename T>
void sample_point(const BasicFeatureMap<T>& map, T u, T v, std::span<T> out) {
  std::fill(out.begin(), out.end(), T(0));
  // Far outside: also keeps the int conversion below well-defined.
  if (!(u > T(-1) && v > T(-1) && u < T(map.width()) && v < T(map.height()))) return;
  const auto t = taps_for(u, v);
  const int C = map.channels();
  const T w[4] = {(1 - t.wx) * (1 - t.wy), t.wx * (1 - t.wy), (1 - t.wx) * t.wy, t.wx * t.wy};
  const int xs[4] = {t.x0, t.x0 + 1, t.x0, t.x0 + 1};
  const int ys[4] = {t.y0, t.y0, t.y0 + 1, t.y0 + 1};
  for (int k = 0; k < 4; ++k) {
    if (!inside(map, xs[k], ys[k])) continue;
    const T* src = map.data() + map.index(ys[k], xs[k]);
    for (int c = 0; c < C; ++c) out[c] += w[k] * src[c];
  }
}

template <typename T>
Coord2<T> sample_point_backward(const BasicFeatureMap<T>& map, T u, T v, std::span<const T> upstream,
                                BasicFeatureMap<T>* grad_map) {
  Coord2<T> g{};
  if (!(u > T(-1) && v > T(-1) && u < T(map.width()) && v < T(map.height()))) return g;
  const auto t = taps_for(u, v);
  const int C = map.channels();
  const T w[4] = {(1 - t.wx) * (1 - t.wy), t.wx * (1 - t.wy), (1 - t.wx) * t.wy, t.wx * t.wy};
  // d w_k / du and d w_k / dv
  const T du[4] = {-(1 - t.wy), (1 - t.wy), -t.wy, t.wy};
  const T dv[4] = {-(1 - t.wx), -t.wx, (1 - t.wx), t.wx};
  const int xs[4] = {t.x0, t.x0 + 1, t.x0, t.x0 + 1};
  const int ys[4] = {t.y0, t.y0, t.y0 + 1, t.y0 + 1};
  for (int k = 0; k < 4; ++k) {
    if (!inside(map, xs[k], ys[k])) continue;
    const std::size_t base = map.index(ys[k], xs[k]);
    const T* src = map.data() + base;
    T dot = 0;
    for (int c = 0; c < C; ++c) dot += upstream[c] * src[c];
    g.u += du[k] * dot;
    g.v += dv[k] * dot;
    if (grad_map) {
      T* dst = grad_map->data() + base;
      for (int c = 0; c < C; ++c) dst[c] += w[k] * upstream[c];
    }
  }
  return g;
}

template <typename T>
BasicFeatureMap<T> bilinear_sample(const BasicFeatureMap<T>& map, std::span<const Coord2<T>> coords) {
  BasicFeatureMap<T> out(1, static_cast<int>(coords.size()), map.channels());
  for (std::size_t i = 0; i < coords.size(); ++i) sample_point(map, coords[i].u, coords[i].v, out.pixel(i));
  return out;
}

template <typename T>
SampleGradients<T> bilinear_sample_grad(const BasicFeatureMap<T>& map, std::span<const Coord2<T>> coords,
                                        const BasicFeatureMap<T>& upstream) {
  if (upstream.pixel_count() != coords.size() || upstream.channels() != map.channels())
    throw ShapeError("bilinear_sample_grad: upstream shape mismatch");
  SampleGradients<T> g{BasicFeatureMap<T>(map.height(), map.width(), map.channels()),
                       std::vector<Coord2<T>>(coords.size())};
  for (std::size_t i = 0; i < coords.size(); ++i)
    g.grad_coords[i] = sample_point_backward(map, coords[i].u, coords[i].v, upstream.pixel(i), &g.grad_map);
  return g;
}

template <typename T>
void linear_vec(const LinearWeights<T>& w, std::span<const T> x, std::span<T> y) {
  for (int o = 0; o < w.out; ++o) {
    const T* row = w.matrix.data() + static_cast<std::size_t>(o) * w.in;
    T acc = w.bias[o];
    for (int i = 0; i < w.in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

template <typename T>
void linear_vec_backward(const LinearWeights<T>& w, std::span<const T> x, std::span<const T> grad_y,
                         LinearWeights<T>* grad_w, std::span<T> grad_x) {
  if (!grad_x.empty()) std::fill(grad_x.begin(), grad_x.end(), T(0));
  for (int o = 0; o < w.out; ++o) {
    const T g = grad_y[o];
    if (g == T(0)) continue;
    const T* row = w.matrix.data() + static_cast<std::size_t>(o) * w.in;
    if (grad_w) {
      T* grow = grad_w->matrix.data() + static_cast<std::size_t>(o) * w.in;
      for (int i = 0; i < w.in; ++i) grow[i] += g * x[i];
      grad_w->bias[o] += g;
    }
    if (!grad_x.empty())
      for (int i = 0; i < w.in; ++i) grad_x[i] += row[i] * g;
  }
}

namespace {

// in x out copy of the weights so the inner loop runs over outputs without a reduction.
template <typename T>
std::vector<T> transposed(const LinearWeights<T>& w) {
  std::vector<T> t(w.matrix.size());
  for (int o = 0; o < w.out; ++o)
    for (int i = 0; i < w.in; ++i) t[static_cast<std::size_t>(i) * w.out + o] = w.matrix[static_cast<std::size_t>(o) * w.in + i];
  return t;
}

// Same summation order as linear_vec.
template <typename T>
void linear_vec_t(const std::vector<T>& wt, const std::vector<T>& bias, int in, int out, const T* x, T* y) {
  for (int o = 0; o < out; ++o) y[o] = bias[o];
  for (int i = 0; i < in; ++i) {
    const T xi = x[i];
    const T* row = wt.data() + static_cast<std::size_t>(i) * out;
    for (int o = 0; o < out; ++o) y[o] += row[o] * xi;
  }
}

}  // namespace

template <typename T>
BasicFeatureMap<T> linear_apply(const BasicFeatureMap<T>& map, const LinearWeights<T>& w) {
  w.validate();
  if (map.channels() != w.in) throw ShapeError("linear_apply: channel mismatch");
  BasicFeatureMap<T> out(map.height(), map.width(), w.out);
  const auto wt = transposed(w);
  for (std::size_t p = 0; p < map.pixel_count(); ++p)
    linear_vec_t(wt, w.bias, w.in, w.out, map.pixel(p).data(), out.pixel(p).data());
  return out;
}

template <typename T>
LinearGradients<T> linear_grad(const BasicFeatureMap<T>& map, const LinearWeights<T>& w,
                               const BasicFeatureMap<T>& upstream) {
  if (map.channels() != w.in || upstream.channels() != w.out || upstream.pixel_count() != map.pixel_count())
    throw ShapeError("linear_grad: shape mismatch");
  LinearGradients<T> g{BasicFeatureMap<T>(map.height(), map.width(), map.channels()), LinearWeights<T>(w.out, w.in)};
  for (std::size_t p = 0; p < map.pixel_count(); ++p)
    linear_vec_backward(w, map.pixel(p), upstream.pixel(p), &g.grad_weights, g.grad_input.pixel(p));
  return g;
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> out(logits.size());
  if (logits.empty()) return out;
  T peak = logits[0];
  for (T l : logits) peak = std::max(peak, l);
  T total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (T& o : out) o /= total;
  return out;
}

template <typename T>
std::vector<T> softmax_grad(std::span<const T> probs, std::span<const T> upstream) {
  T inner = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) inner += probs[i] * upstream[i];
  std::vector<T> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (upstream[i] - inner);
  return g;
}

template <typename T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
std::vector<T> mlp_apply(const MlpWeights<T>& w, std::span<const T> x, MlpCache<T>* cache) {
  if (static_cast<int>(x.size()) != w.first.in) throw ShapeError("mlp_apply: input width mismatch");
  std::vector<T> pre(w.first.out);
  linear_vec(w.first, x, std::span<T>(pre));
  std::vector<T> hidden(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) hidden[i] = pre[i] > T(0) ? pre[i] : T(0);
  std::vector<T> out(w.second.out);
  linear_vec(w.second, std::span<const T>(hidden), std::span<T>(out));
  if (cache) {
    cache->hidden_pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

template <typename T>
std::vector<T> mlp_backward(const MlpWeights<T>& w, std::span<const T> x, const MlpCache<T>& cache,
                            std::span<const T> grad_out, MlpWeights<T>* grad_w) {
  std::vector<T> grad_hidden(w.first.out);
  linear_vec_backward(w.second, std::span<const T>(cache.hidden), grad_out, grad_w ? &grad_w->second : nullptr,
                      std::span<T>(grad_hidden));
  for (std::size_t i = 0; i < grad_hidden.size(); ++i)
    if (!(cache.hidden_pre[i] > T(0))) grad_hidden[i] = 0;
  std::vector<T> grad_x(x.size());
  linear_vec_backward(w.first, x, std::span<const T>(grad_hidden), grad_w ? &grad_w->first : nullptr,
                      std::span<T>(grad_x));
  return grad_x;
}

namespace {

template <typename T>
void gather_patch(const BasicFeatureMap<T>& map, int y, int x, int patch, std::span<T> buf) {
  const int C = map.channels();
  const int r = patch / 2;
  std::size_t k = 0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const int yy = y + dy, xx = x + dx;
      if (inside(map, xx, yy)) {
        const T* src = map.data() + map.index(yy, xx);
        for (int c = 0; c < C; ++c) buf[k + c] = src[c];
      } else {
        for (int c = 0; c < C; ++c) buf[k + c] = 0;
      }
      k += C;
    }
  }
}

template <typename T>
void check_patch(const BasicFeatureMap<T>& map, const LinearWeights<T>& w, int patch) {
  w.validate();
  if (patch < 1 || patch % 2 == 0) throw ShapeError("patch_linear: patch size must be odd");
  if (w.in != patch * patch * map.channels()) throw ShapeError("patch_linear: weight input width mismatch");
}

}  // namespace

template <typename T>
BasicFeatureMap<T> patch_linear(const BasicFeatureMap<T>& map, const LinearWeights<T>& w, int patch) {
  check_patch(map, w, patch);
  BasicFeatureMap<T> out(map.height(), map.width(), w.out);
  std::vector<T> buf(w.in);
  const auto wt = transposed(w);
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x) {
      gather_patch(map, y, x, patch, std::span<T>(buf));
      linear_vec_t(wt, w.bias, w.in, w.out, buf.data(), out.pixel(y, x).data());
    }
  return out;
}

template <typename T>
LinearGradients<T> patch_linear_grad(const BasicFeatureMap<T>& map, const LinearWeights<T>& w, int patch,
                                     const BasicFeatureMap<T>& upstream) {
  check_patch(map, w, patch);
  if (upstream.height() != map.height() || upstream.width() != map.width() || upstream.channels() != w.out)
    throw ShapeError("patch_linear_grad: upstream shape mismatch");
  LinearGradients<T> g{BasicFeatureMap<T>(map.height(), map.width(), map.channels()), LinearWeights<T>(w.out, w.in)};
  std::vector<T> buf(w.in), grad_buf(w.in);
  const int C = map.channels();
  const int r = patch / 2;
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x) {
      gather_patch(map, y, x, patch, std::span<T>(buf));
      linear_vec_backward(w, std::span<const T>(buf), upstream.pixel(y, x), &g.grad_weights, std::span<T>(grad_buf));
      std::size_t k = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx, k += C) {
          const int yy = y + dy, xx = x + dx;
          if (!inside(map, xx, yy)) continue;
          T* dst = g.grad_input.data() + map.index(yy, xx);
          for (int c = 0; c < C; ++c) dst[c] += grad_buf[k + c];
        }
    }
  return g;
}

template <typename T>
BasicFeatureMap<T> avg_pool(const BasicFeatureMap<T>& map, int factor) {
  if (factor < 1 || map.height() % factor || map.width() % factor) throw ShapeError("avg_pool: factor must divide size");
  const int C = map.channels();
  BasicFeatureMap<T> out(map.height() / factor, map.width() / factor, C);
  const T scale = T(1) / T(factor * factor);
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x) {
      auto dst = out.pixel(y / factor, x / factor);
      auto src = map.pixel(y, x);
      for (int c = 0; c < C; ++c) dst[c] += src[c] * scale;
    }
  return out;
}

template <typename T>
BasicFeatureMap<T> avg_pool_grad(const BasicFeatureMap<T>& upstream, int factor) {
  const int C = upstream.channels();
  BasicFeatureMap<T> g(upstream.height() * factor, upstream.width() * factor, C);
  const T scale = T(1) / T(factor * factor);
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) {
      auto src = upstream.pixel(y / factor, x / factor);
      auto dst = g.pixel(y, x);
      for (int c = 0; c < C; ++c) dst[c] = src[c] * scale;
    }
  return g;
}

namespace {

template <typename T>
struct AxisTap {
  int lo, hi;
  T w_hi;
};

// Source taps for output index i when upsampling n -> n * factor.
template <typename T>
std::vector<AxisTap<T>> upsample_taps(int n, int factor) {
  std::vector<AxisTap<T>> taps(static_cast<std::size_t>(n) * factor);
  for (int i = 0; i < n * factor; ++i) {
    T s = (T(i) + T(0.5)) / T(factor) - T(0.5);
    s = std::clamp(s, T(0), T(n - 1));
    const int lo = static_cast<int>(std::floor(s));
    const int hi = std::min(lo + 1, n - 1);
    taps[i] = {lo, hi, s - T(lo)};
  }
  return taps;
}

}  // namespace

template <typename T>
BasicFeatureMap<T> upsample(const BasicFeatureMap<T>& map, int factor) {
  if (factor < 1) throw ShapeError("upsample: factor must be positive");
  const int C = map.channels();
  BasicFeatureMap<T> out(map.height() * factor, map.width() * factor, C);
  const auto ty = upsample_taps<T>(map.height(), factor);
  const auto tx = upsample_taps<T>(map.width(), factor);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      const auto& a = ty[y];
      const auto& b = tx[x];
      const T w00 = (1 - a.w_hi) * (1 - b.w_hi), w01 = (1 - a.w_hi) * b.w_hi;
      const T w10 = a.w_hi * (1 - b.w_hi), w11 = a.w_hi * b.w_hi;
      auto p00 = map.pixel(a.lo, b.lo), p01 = map.pixel(a.lo, b.hi);
      auto p10 = map.pixel(a.hi, b.lo), p11 = map.pixel(a.hi, b.hi);
      auto dst = out.pixel(y, x);
      for (int c = 0; c < C; ++c) dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
    }
  return out;
}

template <typename T>
BasicFeatureMap<T> upsample_grad(const BasicFeatureMap<T>& upstream, int factor) {
  if (factor < 1 || upstream.height() % factor || upstream.width() % factor)
    throw ShapeError("upsample_grad: factor must divide size");
  const int C = upstream.channels();
  BasicFeatureMap<T> g(upstream.height() / factor, upstream.width() / factor, C);
  const auto ty = upsample_taps<T>(g.height(), factor);
  const auto tx = upsample_taps<T>(g.width(), factor);
  for (int y = 0; y < upstream.height(); ++y)
    for (int x = 0; x < upstream.width(); ++x) {
      const auto& a = ty[y];
      const auto& b = tx[x];
      const T w00 = (1 - a.w_hi) * (1 - b.w_hi), w01 = (1 - a.w_hi) * b.w_hi;
      const T w10 = a.w_hi * (1 - b.w_hi), w11 = a.w_hi * b.w_hi;
      auto src = upstream.pixel(y, x);
      auto p00 = g.pixel(a.lo, b.lo), p01 = g.pixel(a.lo, b.hi);
      auto p10 = g.pixel(a.hi, b.lo), p11 = g.pixel(a.hi, b.hi);
      for (int c = 0; c < C; ++c) {
        p00[c] += w00 * src[c];
        p01[c] += w01 * src[c];
        p10[c] += w10 * src[c];
        p11[c] += w11 * src[c];
      }
    }
  return g;
}

template <typename T>
BasicFeatureMap<T> relu(const BasicFeatureMap<T>& map) {
  BasicFeatureMap<T> out = map;
  for (T& v : out.values()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
BasicFeatureMap<T> relu_grad(const BasicFeatureMap<T>& pre_activation, const BasicFeatureMap<T>& upstream) {
  if (!pre_activation.same_shape(upstream)) throw ShapeError("relu_grad: shape mismatch");
  BasicFeatureMap<T> g = upstream;
  auto pre = pre_activation.values();
  auto out = g.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(pre[i] > T(0))) out[i] = 0;
  return g;
}

template <typename T>
BasicFeatureMap<T> concat_channels(const BasicFeatureMap<T>& a, const BasicFeatureMap<T>& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw ShapeError("concat_channels: spatial mismatch");
  const int ca = a.channels(), cb = b.channels();
  BasicFeatureMap<T> out(a.height(), a.width(), ca + cb);
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    auto dst = out.pixel(p);
    std::copy_n(a.pixel(p).data(), ca, dst.data());
    std::copy_n(b.pixel(p).data(), cb, dst.data() + ca);
  }
  return out;
}

template <typename T>
std::pair<BasicFeatureMap<T>, BasicFeatureMap<T>> split_channels(const BasicFeatureMap<T>& map, int first) {
  if (first <= 0 || first >= map.channels()) throw ShapeError("split_channels: split point out of range");
  const int rest = map.channels() - first;
  BasicFeatureMap<T> a(map.height(), map.width(), first), b(map.height(), map.width(), rest);
  for (std::size_t p = 0; p < map.pixel_count(); ++p) {
    auto src = map.pixel(p);
    std::copy_n(src.data(), first, a.pixel(p).data());
    std::copy_n(src.data() + first, rest, b.pixel(p).data());
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
void add_inplace(BasicFeatureMap<T>& dst, const BasicFeatureMap<T>& src) {
  if (!dst.same_shape(src)) throw ShapeError("add_inplace: shape mismatch");
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

#define GEOQUERY_INSTANTIATE(T)                                                                                    \
  template struct LinearWeights<T>;                                                                                \
  template struct MlpWeights<T>;                                                                                   \
  template void sample_point(const BasicFeatureMap<T>&, T, T, std::span<T>);                                      \
  template Coord2<T> sample_point_backward(const BasicFeatureMap<T>&, T, T, std::span<const T>,                    \
                                           BasicFeatureMap<T>*);                                                   \
  template BasicFeatureMap<T> bilinear_sample(const BasicFeatureMap<T>&, std::span<const Coord2<T>>);              \
  template SampleGradients<T> bilinear_sample_grad(const BasicFeatureMap<T>&, std::span<const Coord2<T>>,          \
                                                   const BasicFeatureMap<T>&);                                     \
  template void linear_vec(const LinearWeights<T>&, std::span<const T>, std::span<T>);                             \
  template void linear_vec_backward(const LinearWeights<T>&, std::span<const T>, std::span<const T>,              \
                                    LinearWeights<T>*, std::span<T>);                                              \
  template BasicFeatureMap<T> linear_apply(const BasicFeatureMap<T>&, const LinearWeights<T>&);                    \
  template LinearGradients<T> linear_grad(const BasicFeatureMap<T>&, const LinearWeights<T>&,                       \
                                          const BasicFeatureMap<T>&);                                              \
  template std::vector<T> softmax(std::span<const T>);                                                             \
  template std::vector<T> softmax_grad(std::span<const T>, std::span<const T>);                                   \
  template T sigmoid(T);                                                                                           \
  template std::vector<T> mlp_apply(const MlpWeights<T>&, std::span<const T>, MlpCache<T>*);                       \
  template std::vector<T> mlp_backward(const MlpWeights<T>&, std::span<const T>, const MlpCache<T>&,               \
                                       std::span<const T>, MlpWeights<T>*);                                        \
  template BasicFeatureMap<T> patch_linear(const BasicFeatureMap<T>&, const LinearWeights<T>&, int);               \
  template LinearGradients<T> patch_linear_grad(const BasicFeatureMap<T>&, const LinearWeights<T>&, int,            \
                                                const BasicFeatureMap<T>&);                                        \
  template BasicFeatureMap<T> avg_pool(const BasicFeatureMap<T>&, int);                                            \
  template BasicFeatureMap<T> avg_pool_grad(const BasicFeatureMap<T>&, int);                                       \
  template BasicFeatureMap<T> upsample(const BasicFeatureMap<T>&, int);                                            \
  template BasicFeatureMap<T> upsample_grad(const BasicFeatureMap<T>&, int);                                       \
  template BasicFeatureMap<T> relu(const BasicFeatureMap<T>&);                                                     \
  template BasicFeatureMap<T> relu_grad(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&);                     \
  template BasicFeatureMap<T> concat_channels(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&);               \
  template std::pair<BasicFeatureMap<T>, BasicFeatureMap<T>> split_channels(const BasicFeatureMap<T>&, int);       \
  template void add_inplace(BasicFeatureMap<T>&, const BasicFeatureMap<T>&);                                       \
  template bool all_finite(std::span<const T>);

GEOQUERY_INSTANTIATE(float)
GEOQUERY_INSTANTIATE(double)

#undef GEOQUERY_INSTANTIATE

}  // namespace geoquery
