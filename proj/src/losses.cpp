#include "geoquery/losses.hpp"

#include <cmath>

#include "geoquery/random.hpp"

namespace geoquery {

void LossWeights::validate() const {
  if (!(recon >= 0.0) || !(lpips >= 0.0) || !(gram >= 0.0)) throw ParameterError("loss weights must be non-negative");
  for (double b : beta)
    if (!(b >= 0.0)) throw ParameterError("layer weights must be non-negative");
}

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::make(std::uint64_t seed, std::vector<int> widths) {
  if (widths.size() < 2) throw ParameterError("feature extractor needs at least one layer");
  FeatureExtractor e;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    LinearWeights<T> w(widths[l + 1], e.patch * e.patch * widths[l]);
    const double scale = std::sqrt(2.0 / w.in);
    for (T& m : w.matrix) m = static_cast<T>(scale * rng.normal());
    for (T& b : w.bias) b = static_cast<T>(0.05 * rng.normal());
    e.layers.push_back(std::move(w));
  }
  return e;
}

template <typename T>
typename FeatureExtractor<T>::Trace FeatureExtractor<T>::forward(const BasicFeatureMap<T>& image) const {
  Trace t;
  BasicFeatureMap<T> x = image;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    bool pool = false;
    if (l > 0) {
      pool = x.height() % 2 == 0 && x.width() % 2 == 0 && x.height() > 1 && x.width() > 1;
      if (pool) x = avg_pool(x, 2);
    }
    t.pooled.push_back(pool);
    t.inputs.push_back(x);
    t.pre.push_back(patch_linear(x, layers[l], patch));
    t.activations.push_back(relu(t.pre.back()));
    x = t.activations.back();
  }
  return t;
}

template <typename T>
BasicFeatureMap<T> FeatureExtractor<T>::backward(const Trace& trace,
                                                 const std::vector<BasicFeatureMap<T>>& grad_activations) const {
  BasicFeatureMap<T> carry;  // gradient w.r.t. activations of the current layer from deeper layers
  for (std::size_t l = layers.size(); l-- > 0;) {
    BasicFeatureMap<T> grad_act = carry;
    if (l < grad_activations.size() && !grad_activations[l].empty()) {
      if (grad_act.empty())
        grad_act = grad_activations[l];
      else
        add_inplace(grad_act, grad_activations[l]);
    }
    if (grad_act.empty()) grad_act = BasicFeatureMap<T>(trace.pre[l].height(), trace.pre[l].width(), trace.pre[l].channels());
    const auto gp = relu_grad(trace.pre[l], grad_act);
    auto gin = patch_linear_grad(trace.inputs[l], layers[l], patch, gp).grad_input;
    carry = trace.pooled[l] ? avg_pool_grad(gin, 2) : std::move(gin);
  }
  return carry;
}

template <typename T>
LossTerm<T> recon_loss(const BasicFeatureMap<T>& pred, const BasicFeatureMap<T>& gt) {
  if (!pred.same_shape(gt)) throw ShapeError("recon_loss: shape mismatch");
  LossTerm<T> out{T(0), BasicFeatureMap<T>(pred.height(), pred.width(), pred.channels())};
  const auto p = pred.values();
  const auto g = gt.values();
  auto grad = out.grad.values();
  const T n = static_cast<T>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T diff = p[i] - g[i];
    out.value += diff * diff;
    grad[i] = T(2) * diff / n;
  }
  out.value /= n;
  return out;
}

template <typename T>
std::vector<T> gram_matrix(const BasicFeatureMap<T>& phi) {
  const int d = phi.channels();
  std::vector<T> g(static_cast<std::size_t>(d) * d);
  for (std::size_t p = 0; p < phi.pixel_count(); ++p) {
    const auto f = phi.pixel(p);
    for (int a = 0; a < d; ++a)
      for (int b = a; b < d; ++b) g[a * d + b] += f[a] * f[b];
  }
  const T norm = phi.pixel_count() ? T(1) / static_cast<T>(phi.pixel_count()) : T(0);
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      g[a * d + b] *= norm;
      g[b * d + a] = g[a * d + b];
    }
  return g;
}

namespace {

// Returns (loss, per-layer activation gradients) for the Gram term.
template <typename T>
T gram_from_traces(const typename FeatureExtractor<T>::Trace& tp, const typename FeatureExtractor<T>::Trace& tg,
                   const std::vector<double>& beta, std::vector<BasicFeatureMap<T>>* grads) {
  const std::size_t L = tp.activations.size();
  if (beta.size() != L) throw ShapeError("gram_loss: expected one beta per extractor layer");
  T total = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& phi = tp.activations[l];
    const auto gp = gram_matrix(phi);
    const auto gg = gram_matrix(tg.activations[l]);
    T norm2 = 0;
    std::vector<T> diff(gp.size());
    for (std::size_t i = 0; i < gp.size(); ++i) {
      diff[i] = gp[i] - gg[i];
      norm2 += diff[i] * diff[i];
    }
    const T norm = std::sqrt(norm2);
    total += static_cast<T>(beta[l]) * norm;
    if (!grads) continue;
    BasicFeatureMap<T> g(phi.height(), phi.width(), phi.channels());
    if (norm > T(0) && beta[l] != 0.0) {
      // dL/dphi = 2 phi D / (||D|| HW) for symmetric D.
      const int d = phi.channels();
      const T coef = static_cast<T>(beta[l]) * T(2) / (norm * static_cast<T>(phi.pixel_count()) * static_cast<T>(L));
      for (std::size_t p = 0; p < phi.pixel_count(); ++p) {
        const auto f = phi.pixel(p);
        auto dst = g.pixel(p);
        for (int b = 0; b < d; ++b) {
          T acc = 0;
          for (int a = 0; a < d; ++a) acc += f[a] * diff[a * d + b];
          dst[b] = coef * acc;
        }
      }
    }
    (*grads)[l] = std::move(g);
  }
  return total / static_cast<T>(L);
}

template <typename T>
T perceptual_from_traces(const typename FeatureExtractor<T>::Trace& tp, const typename FeatureExtractor<T>::Trace& tg,
                         std::vector<BasicFeatureMap<T>>* grads) {
  const std::size_t L = tp.activations.size();
  T total = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const auto a = tp.activations[l].values();
    const auto b = tg.activations[l].values();
    const T n = static_cast<T>(a.size());
    BasicFeatureMap<T> g(tp.activations[l].height(), tp.activations[l].width(), tp.activations[l].channels());
    auto gv = g.values();
    T sum = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const T diff = a[i] - b[i];
      sum += diff * diff;
      gv[i] = T(2) * diff / (n * static_cast<T>(L));
    }
    total += sum / n;
    if (grads) (*grads)[l] = std::move(g);
  }
  return total / static_cast<T>(L);
}

template <typename T>
void check_images(const BasicFeatureMap<T>& pred, const BasicFeatureMap<T>& gt, const FeatureExtractor<T>& e) {
  if (!pred.same_shape(gt)) throw ShapeError("loss: prediction and target shapes differ");
  if (e.layers.empty() || e.layers.front().in != e.patch * e.patch * pred.channels())
    throw ShapeError("loss: extractor does not accept this channel count");
}

}  // namespace

template <typename T>
LossTerm<T> gram_loss(const BasicFeatureMap<T>& pred, const BasicFeatureMap<T>& gt,
                      const FeatureExtractor<T>& extractor, const std::vector<double>& beta) {
  check_images(pred, gt, extractor);
  const auto tp = extractor.forward(pred);
  const auto tg = extractor.forward(gt);
  std::vector<BasicFeatureMap<T>> grads(extractor.depth());
  LossTerm<T> out;
  out.value = gram_from_traces<T>(tp, tg, beta, &grads);
  out.grad = extractor.backward(tp, grads);
  return out;
}

template <typename T>
LossTerm<T> perceptual_loss(const BasicFeatureMap<T>& pred, const BasicFeatureMap<T>& gt,
                            const FeatureExtractor<T>& extractor) {
  check_images(pred, gt, extractor);
  const auto tp = extractor.forward(pred);
  const auto tg = extractor.forward(gt);
  std::vector<BasicFeatureMap<T>> grads(extractor.depth());
  LossTerm<T> out;
  out.value = perceptual_from_traces<T>(tp, tg, &grads);
  out.grad = extractor.backward(tp, grads);
  return out;
}

template <typename T>
LossBreakdown<T> total_loss(const BasicFeatureMap<T>& pred, const BasicFeatureMap<T>& gt, const LossWeights& weights,
                            const FeatureExtractor<T>& extractor) {
  weights.validate();
  LossBreakdown<T> out;
  auto recon = recon_loss(pred, gt);
  out.recon = recon.value;
  out.grad = BasicFeatureMap<T>(pred.height(), pred.width(), pred.channels());
  if (weights.recon != 0.0)
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad.values()[i] = static_cast<T>(weights.recon) * recon.grad.values()[i];

  if (weights.lpips != 0.0 || weights.gram != 0.0) {
    check_images(pred, gt, extractor);
    const auto tp = extractor.forward(pred);
    const auto tg = extractor.forward(gt);
    std::vector<BasicFeatureMap<T>> gram_grads(extractor.depth()), lp_grads(extractor.depth());
    out.gram = gram_from_traces<T>(tp, tg, weights.beta, &gram_grads);
    out.lpips = perceptual_from_traces<T>(tp, tg, &lp_grads);
    std::vector<BasicFeatureMap<T>> combined(extractor.depth());
    for (std::size_t l = 0; l < combined.size(); ++l) {
      combined[l] = BasicFeatureMap<T>(lp_grads[l].height(), lp_grads[l].width(), lp_grads[l].channels());
      auto dst = combined[l].values();
      const auto a = lp_grads[l].values();
      const auto b = gram_grads[l].values();
      for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = static_cast<T>(weights.lpips) * a[i] + static_cast<T>(weights.gram) * b[i];
    }
    add_inplace(out.grad, extractor.backward(tp, combined));
  }
  out.total = static_cast<T>(weights.recon) * out.recon + static_cast<T>(weights.lpips) * out.lpips +
              static_cast<T>(weights.gram) * out.gram;
  return out;
}

#define GEOQUERY_INSTANTIATE(T)                                                                                 \
  template struct FeatureExtractor<T>;                                                                          \
  template LossTerm<T> recon_loss(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&);                        \
  template std::vector<T> gram_matrix(const BasicFeatureMap<T>&);                                               \
  template LossTerm<T> gram_loss(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&,                          \
                                 const FeatureExtractor<T>&, const std::vector<double>&);                       \
  template LossTerm<T> perceptual_loss(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&,                    \
                                       const FeatureExtractor<T>&);                                             \
  template LossBreakdown<T> total_loss(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&, const LossWeights&, \
                                       const FeatureExtractor<T>&);

GEOQUERY_INSTANTIATE(float)
GEOQUERY_INSTANTIATE(double)

#undef GEOQUERY_INSTANTIATE

}  // namespace geoquery
