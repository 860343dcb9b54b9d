#pragma once

#include <vector>

#include "geoquery/correspondence.hpp"
#include "geoquery/feature_map.hpp"

namespace geoquery {

enum class QuerySource { proxy, rendering };

/// adaptive: learned sigmoid-MLP gate; fixed: constant blend where mask = 1.
enum class FusionMode { adaptive, fixed };

template <typename T>
struct GcaParams {
  LinearWeights<T> query;  // d -> d, applied to the proxy (or rendered) feature
  LinearWeights<T> key;    // d -> d
  LinearWeights<T> value;  // d -> d
  MlpWeights<T> gate;      // 2d -> d -> 1
  int window = 3;          // k, odd

  int channels() const { return query.in; }
  /// Throws ParameterError for an even or non-positive window, ShapeError for inconsistent weights.
  void validate() const;

  std::vector<std::span<T>> tensors();
  std::vector<std::span<const T>> tensors() const;

  /// Zero-valued parameters with the same shapes.
  GcaParams zeros_like() const;

  template <typename U>
  GcaParams<U> cast() const {
    return {query.template cast<U>(), key.template cast<U>(), value.template cast<U>(), gate.template cast<U>(),
            window};
  }
  bool operator==(const GcaParams&) const = default;
};

template <typename T>
struct GcaOptions {
  QuerySource query = QuerySource::proxy;
  FusionMode fusion = FusionMode::adaptive;
  T fixed_gate = T(0.5);
};

template <typename T>
struct GcaOutput {
  BasicFeatureMap<T> fused;      // H x W x d
  BasicFeatureMap<T> geo;        // H x W x d, zero where mask = 0
  BasicFeatureMap<T> gate;       // H x W x 1, zero where mask = 0
  BasicFeatureMap<T> attention;  // H x W x k^2, offsets in row-major (dy, dx) order
};

/// Values cached by gca_forward for gca_backward.
template <typename T>
struct GcaState {
  bool ready = false;
  GcaParams<T> params;
  GcaOptions<T> options;
  BasicFeatureMap<T> target;
  BasicFeatureMap<T> reference;
  std::vector<Coord2<T>> coords;
  std::vector<std::uint8_t> mask;
  BasicFeatureMap<T> proxy;
  BasicFeatureMap<T> queries;
  BasicFeatureMap<T> keys;    // W_K F_r
  BasicFeatureMap<T> values;  // W_V F_r
  BasicFeatureMap<T> hidden_pre;
  GcaOutput<T> output;
};

template <typename T>
struct GcaGradients {
  BasicFeatureMap<T> target;
  BasicFeatureMap<T> reference;
  GcaParams<T> params;
};

/// Proxy features: mask * bilinear_sample(F_r, coords), zero where mask = 0.
/// The field must have the same height and width as the target feature grid.
template <typename T>
BasicFeatureMap<T> proxy_query(const BasicFeatureMap<T>& reference, const CorrespondenceField& field);

/// Geometry-guided cross-view attention with gated fusion.
template <typename T>
GcaOutput<T> gca_forward(const BasicFeatureMap<T>& target, const BasicFeatureMap<T>& reference,
                         const CorrespondenceField& field, const GcaParams<T>& params,
                         const GcaOptions<T>& options = {}, GcaState<T>* state = nullptr);

/// Gradients w.r.t. both feature inputs and all parameters. The field is a
/// fixed input and receives no gradient. Throws MissingStateError if `state`
/// was not filled by gca_forward.
template <typename T>
GcaGradients<T> gca_backward(const GcaState<T>& state, const BasicFeatureMap<T>& grad_fused);

template <typename T>
struct AttentionParams {
  LinearWeights<T> query;
  LinearWeights<T> key;
  LinearWeights<T> value;

  int channels() const { return query.in; }
  void validate() const;
  std::vector<std::span<T>> tensors() { return {query.matrix, query.bias, key.matrix, key.bias, value.matrix, value.bias}; }
  std::vector<std::span<const T>> tensors() const {
    return {query.matrix, query.bias, key.matrix, key.bias, value.matrix, value.bias};
  }
  AttentionParams zeros_like() const {
    return {LinearWeights<T>(query.out, query.in), LinearWeights<T>(key.out, key.in),
            LinearWeights<T>(value.out, value.in)};
  }
  template <typename U>
  AttentionParams<U> cast() const {
    return {query.template cast<U>(), key.template cast<U>(), value.template cast<U>()};
  }
  bool operator==(const AttentionParams&) const = default;
};

template <typename T>
struct GlobalAttentionState {
  bool ready = false;
  AttentionParams<T> params;
  BasicFeatureMap<T> target;
  BasicFeatureMap<T> reference;
  BasicFeatureMap<T> queries;  // 1 x N x d
  BasicFeatureMap<T> keys;     // 1 x (N + M) x d
  BasicFeatureMap<T> values;   // 1 x (N + M) x d
  std::vector<T> attention;    // N x (N + M)
};

template <typename T>
struct GlobalAttentionGradients {
  BasicFeatureMap<T> target;
  BasicFeatureMap<T> reference;
  AttentionParams<T> params;
};

/// Single-head scaled dot-product attention over the concatenated target and
/// reference tokens; returns the outputs at the target tokens (H x W x d).
/// `reference` may be empty.
template <typename T>
BasicFeatureMap<T> global_attention(const BasicFeatureMap<T>& target, const BasicFeatureMap<T>& reference,
                                    const AttentionParams<T>& params, GlobalAttentionState<T>* state = nullptr);

template <typename T>
GlobalAttentionGradients<T> global_attention_backward(const GlobalAttentionState<T>& state,
                                                      const BasicFeatureMap<T>& grad_out);

}  // namespace geoquery
