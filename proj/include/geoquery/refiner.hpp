#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geoquery/correspondence.hpp"
#include "geoquery/feature_map.hpp"
#include "geoquery/gca.hpp"

namespace geoquery {

enum class Variant { none, global, gca_render, gca_render_af, gca_proxy, gca_proxy_af };

std::string to_string(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(const std::string& name);
std::vector<Variant> all_variants();

bool uses_self_attention(Variant v);
bool uses_gca(Variant v);

template <typename T>
GcaOptions<T> gca_options(Variant v) {
  GcaOptions<T> o;
  o.query = (v == Variant::gca_render || v == Variant::gca_render_af) ? QuerySource::rendering : QuerySource::proxy;
  o.fusion = (v == Variant::gca_render_af || v == Variant::gca_proxy_af) ? FusionMode::adaptive : FusionMode::fixed;
  return o;
}

constexpr int kFeatureScale = 4;
constexpr int kFeatureChannels = 16;
constexpr int kFuseWidth = 24;
constexpr int kFusePatch = 1;

template <typename T>
struct RefinerParams {
  LinearWeights<T> enc1;  // 3x3, 3 -> 12 at 1/2 resolution
  LinearWeights<T> enc2;  // 3x3, 12 -> 16 at 1/4 resolution
  AttentionParams<T> attention;
  GcaParams<T> gca;
  LinearWeights<T> dec1;  // 3x3, 16 -> 16 at 1/4 resolution
  LinearWeights<T> fuse;  // 1x1, 16 + 3 -> kFuseWidth at full resolution
  LinearWeights<T> head;  // 1x1, kFuseWidth -> 3 residual channels + 1 mixing logit, zero at initialization

  std::vector<std::span<T>> tensors();
  std::vector<std::span<const T>> tensors() const;
  RefinerParams zeros_like() const;
  std::size_t parameter_count() const;

  template <typename U>
  RefinerParams<U> cast() const {
    return {enc1.template cast<U>(), enc2.template cast<U>(), attention.template cast<U>(), gca.template cast<U>(),
            dec1.template cast<U>(), fuse.template cast<U>(), head.template cast<U>()};
  }
  bool operator==(const RefinerParams&) const = default;
};

template <typename T>
struct RefinerTrace {
  BasicFeatureMap<T> corrupted, reference;
  CorrespondenceField field;  // at feature resolution

  struct Encoder {
    BasicFeatureMap<T> half, pre1, act1, quarter, features;
  } target_enc, reference_enc;

  GlobalAttentionState<T> attention;
  BasicFeatureMap<T> stage_in;  // f_t, or f_t + SA(f_t, f_r)
  GcaState<T> gca;
  BasicFeatureMap<T> attended;
  BasicFeatureMap<T> dec_pre, dec_act, upsampled, concat, fuse_pre, fuse_act, head_out, output;
};

template <typename T>
class BasicRefiner {
 public:
  Variant variant = Variant::gca_proxy_af;
  RefinerParams<T> params;

  static BasicRefiner make(Variant variant, int window, std::uint64_t seed);

  /// Unclamped output `corrupted + sigmoid(z) * residual`. `field` is at image resolution.
  BasicFeatureMap<T> forward(const BasicFeatureMap<T>& corrupted, const BasicFeatureMap<T>& reference,
                             const CorrespondenceField& field, RefinerTrace<T>* trace = nullptr) const;

  RefinerParams<T> backward(const RefinerTrace<T>& trace, const BasicFeatureMap<T>& grad_output) const;

  template <typename U>
  BasicRefiner<U> cast() const {
    BasicRefiner<U> r;
    r.variant = variant;
    r.params = params.template cast<U>();
    return r;
  }
};

using ToyRefiner = BasicRefiner<float>;

/// One deterministic forward pass with the output clamped to [0, 1].
FeatureMap refine(const ToyRefiner& model, const FeatureMap& corrupted, const FeatureMap& reference,
                  const CorrespondenceField& field);

}  // namespace geoquery
