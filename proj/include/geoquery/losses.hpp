#pragma once

#include <cstdint>
#include <vector>

#include "geoquery/feature_map.hpp"

namespace geoquery {

struct LossWeights {
  double recon = 1.0;
  double lpips = 0.5;  // weight of the fixed-extractor perceptual stand-in
  double gram = 0.5;
  std::vector<double> beta{1.0, 1.0};  // per extractor layer

  /// Throws ParameterError on negative entries.
  void validate() const;
};

/// Fixed random-weight convolutional stand-in for a pretrained perceptual network.
///
/// Layer l computes relu(patch_linear(x_l)) with 3x3 patches; x_0 is the
/// image and x_{l+1} is the 2x average-pooled activation of layer l (pooling is
/// skipped when the size is odd).
template <typename T>
struct FeatureExtractor {
  std::vector<LinearWeights<T>> layers;
  int patch = 3;

  static FeatureExtractor make(std::uint64_t seed, std::vector<int> widths = {3, 8, 8});
  std::size_t depth() const { return layers.size(); }

  struct Trace {
    std::vector<BasicFeatureMap<T>> inputs;
    std::vector<BasicFeatureMap<T>> pre;
    std::vector<BasicFeatureMap<T>> activations;
    std::vector<bool> pooled;
  };

  Trace forward(const BasicFeatureMap<T>& image) const;
  /// grad_activations[l] may be empty (no gradient from that layer).
  BasicFeatureMap<T> backward(const Trace& trace, const std::vector<BasicFeatureMap<T>>& grad_activations) const;

  template <typename U>
  FeatureExtractor<U> cast() const {
    FeatureExtractor<U> e;
    e.patch = patch;
    for (const auto& l : layers) e.layers.push_back(l.template cast<U>());
    return e;
  }
};

template <typename T>
struct LossTerm {
  T value = 0;
  BasicFeatureMap<T> grad;  // d value / d pred
};

/// Mean squared error over all elements.
template <typename T>
LossTerm<T> recon_loss(const BasicFeatureMap<T>& pred, const BasicFeatureMap<T>& gt);

/// Channel Gram matrix (d x d, row-major) normalized by H * W.
template <typename T>
std::vector<T> gram_matrix(const BasicFeatureMap<T>& phi);

/// (1/L) sum_l beta_l * ||G_l(pred) - G_l(gt)||_F.
template <typename T>
LossTerm<T> gram_loss(const BasicFeatureMap<T>& pred, const BasicFeatureMap<T>& gt,
                      const FeatureExtractor<T>& extractor, const std::vector<double>& beta);

/// (1/L) sum_l mean((phi_l(pred) - phi_l(gt))^2).
template <typename T>
LossTerm<T> perceptual_loss(const BasicFeatureMap<T>& pred, const BasicFeatureMap<T>& gt,
                            const FeatureExtractor<T>& extractor);

template <typename T>
struct LossBreakdown {
  T total = 0;
  T recon = 0;
  T lpips = 0;
  T gram = 0;
  BasicFeatureMap<T> grad;
};

template <typename T>
LossBreakdown<T> total_loss(const BasicFeatureMap<T>& pred, const BasicFeatureMap<T>& gt, const LossWeights& weights,
                            const FeatureExtractor<T>& extractor);

}  // namespace geoquery
