#include "geoquery/refiner.hpp"

#include <algorithm>
#include <cmath>

#include "geoquery/random.hpp"

namespace geoquery {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::none: return "none";
    case Variant::global: return "global";
    case Variant::gca_render: return "gca_render";
    case Variant::gca_render_af: return "gca_render_af";
    case Variant::gca_proxy: return "gca_proxy";
    case Variant::gca_proxy_af: return "gca_proxy_af";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : all_variants())
    if (to_string(v) == name) return v;
  throw ConfigError("unknown variant '" + name + "'");
}

std::vector<Variant> all_variants() {
  return {Variant::none, Variant::global, Variant::gca_render, Variant::gca_render_af, Variant::gca_proxy,
          Variant::gca_proxy_af};
}

bool uses_self_attention(Variant v) { return v != Variant::none; }
bool uses_gca(Variant v) { return v != Variant::none && v != Variant::global; }

template <typename T>
std::vector<std::span<T>> RefinerParams<T>::tensors() {
  std::vector<std::span<T>> out;
  auto add = [&](std::vector<std::span<T>> v) { out.insert(out.end(), v.begin(), v.end()); };
  add(enc1.tensors());
  add(enc2.tensors());
  add(attention.tensors());
  add(gca.tensors());
  add(dec1.tensors());
  add(fuse.tensors());
  add(head.tensors());
  return out;
}

template <typename T>
std::vector<std::span<const T>> RefinerParams<T>::tensors() const {
  std::vector<std::span<const T>> out;
  auto add = [&](std::vector<std::span<const T>> v) { out.insert(out.end(), v.begin(), v.end()); };
  add(enc1.tensors());
  add(enc2.tensors());
  add(attention.tensors());
  add(gca.tensors());
  add(dec1.tensors());
  add(fuse.tensors());
  add(head.tensors());
  return out;
}

template <typename T>
RefinerParams<T> RefinerParams<T>::zeros_like() const {
  auto z = [](const LinearWeights<T>& w) { return LinearWeights<T>(w.out, w.in); };
  return {z(enc1), z(enc2), attention.zeros_like(), gca.zeros_like(), z(dec1), z(fuse), z(head)};
}

template <typename T>
std::size_t RefinerParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

namespace {

template <typename T>
LinearWeights<T> he_normal(Rng& rng, int out, int in, double gain = 1.0) {
  LinearWeights<T> w(out, in);
  const double scale = gain * std::sqrt(2.0 / in);
  for (T& m : w.matrix) m = static_cast<T>(scale * rng.normal());
  return w;
}

template <typename T>
void accumulate(LinearWeights<T>& dst, const LinearWeights<T>& src) {
  for (std::size_t i = 0; i < dst.matrix.size(); ++i) dst.matrix[i] += src.matrix[i];
  for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += src.bias[i];
}

template <typename T>
void encode(const RefinerParams<T>& p, const BasicFeatureMap<T>& image, typename RefinerTrace<T>::Encoder& e) {
  e.half = avg_pool(image, 2);
  e.pre1 = patch_linear(e.half, p.enc1, 3);
  e.act1 = relu(e.pre1);
  e.quarter = avg_pool(e.act1, 2);
  e.features = patch_linear(e.quarter, p.enc2, 3);
}

template <typename T>
void encode_backward(const RefinerParams<T>& p, const typename RefinerTrace<T>::Encoder& e,
                     const BasicFeatureMap<T>& grad_features, RefinerParams<T>& g) {
  auto l2 = patch_linear_grad(e.quarter, p.enc2, 3, grad_features);
  accumulate(g.enc2, l2.grad_weights);
  const auto g_act = avg_pool_grad(l2.grad_input, 2);
  const auto l1 = patch_linear_grad(e.half, p.enc1, 3, relu_grad(e.pre1, g_act));
  accumulate(g.enc1, l1.grad_weights);
}

}  // namespace

template <typename T>
BasicRefiner<T> BasicRefiner<T>::make(Variant variant, int window, std::uint64_t seed) {
  constexpr int d = kFeatureChannels;
  Rng rng(seed);
  BasicRefiner r;
  r.variant = variant;
  auto& p = r.params;
  p.enc1 = he_normal<T>(rng, 12, 27);
  p.enc2 = he_normal<T>(rng, d, 108);

  // Self-attention starts silent (zero values) so each variant begins at the same function.
  const double qk = 1.0 / std::sqrt(static_cast<double>(d));
  p.attention.query = LinearWeights<T>(d, d);
  p.attention.key = LinearWeights<T>(d, d);
  for (T& m : p.attention.query.matrix) m = static_cast<T>(qk * rng.normal());
  for (T& m : p.attention.key.matrix) m = static_cast<T>(qk * rng.normal());
  p.attention.value = LinearWeights<T>(d, d);

  // Scaled identity sharpens the initial window softmax toward the best
  // feature match instead of a near-uniform blend.
  p.gca.query = LinearWeights<T>::identity(d);
  p.gca.key = LinearWeights<T>::identity(d);
  for (T& m : p.gca.query.matrix) m *= T(3);
  for (T& m : p.gca.key.matrix) m *= T(3);
  p.gca.value = LinearWeights<T>::identity(d);
  p.gca.gate.first = LinearWeights<T>(d, 2 * d);
  for (T& m : p.gca.gate.first.matrix) m = static_cast<T>(0.1 * rng.normal());
  p.gca.gate.second = LinearWeights<T>(1, d);  // sigmoid(0) = 0.5: adaptive fusion starts as the fixed blend
  p.gca.window = window;
  p.gca.validate();

  p.dec1 = he_normal<T>(rng, d, 9 * d);
  p.fuse = he_normal<T>(rng, kFuseWidth, kFusePatch * kFusePatch * (d + 3));
  p.head = LinearWeights<T>(4, kFuseWidth);
  return r;
}

template <typename T>
BasicFeatureMap<T> BasicRefiner<T>::forward(const BasicFeatureMap<T>& corrupted, const BasicFeatureMap<T>& reference,
                                            const CorrespondenceField& field, RefinerTrace<T>* trace) const {
  if (corrupted.channels() != 3 || !corrupted.same_shape(reference))
    throw ShapeError("refine: corrupted and reference images must both be H x W x 3");
  const int H = corrupted.height(), W = corrupted.width();
  if (H % kFeatureScale || W % kFeatureScale || H == 0 || W == 0)
    throw ShapeError("refine: image size must be a positive multiple of the feature scale");
  if (field.height != H || field.width != W || field.scale != 1)
    throw ShapeError("refine: field must be at image resolution");

  RefinerTrace<T> local;
  RefinerTrace<T>& t = trace ? *trace : local;
  const auto& p = params;
  t.corrupted = corrupted;
  t.reference = reference;
  encode(p, corrupted, t.target_enc);
  encode(p, reference, t.reference_enc);
  const auto& ft = t.target_enc.features;
  const auto& fr = t.reference_enc.features;

  t.stage_in = ft;
  if (uses_self_attention(variant)) {
    t.attention = {};
    add_inplace(t.stage_in, global_attention(ft, fr, p.attention, &t.attention));
  }
  if (uses_gca(variant)) {
    t.field = downsample_field(field, kFeatureScale);
    t.gca = {};
    t.attended = gca_forward(t.stage_in, fr, t.field, p.gca, gca_options<T>(variant), &t.gca).fused;
  } else {
    t.attended = t.stage_in;
  }

  t.dec_pre = patch_linear(t.attended, p.dec1, 3);
  t.dec_act = relu(t.dec_pre);
  t.upsampled = upsample(t.dec_act, kFeatureScale);
  t.concat = concat_channels(t.upsampled, corrupted);
  t.fuse_pre = patch_linear(t.concat, p.fuse, kFusePatch);
  t.fuse_act = relu(t.fuse_pre);
  t.head_out = linear_apply(t.fuse_act, p.head);
  t.output = corrupted;
  for (std::size_t q = 0; q < t.output.pixel_count(); ++q) {
    const auto h = t.head_out.pixel(q);
    const T mix = sigmoid(h[3]);
    auto o = t.output.pixel(q);
    for (int c = 0; c < 3; ++c) o[c] += mix * h[c];
  }
  return t.output;
}

template <typename T>
RefinerParams<T> BasicRefiner<T>::backward(const RefinerTrace<T>& t, const BasicFeatureMap<T>& grad_output) const {
  if (!grad_output.same_shape(t.output)) throw ShapeError("refine backward: upstream shape mismatch");
  const auto& p = params;
  RefinerParams<T> g = p.zeros_like();

  BasicFeatureMap<T> g_head(t.head_out.height(), t.head_out.width(), 4);
  for (std::size_t q = 0; q < g_head.pixel_count(); ++q) {
    const auto h = t.head_out.pixel(q);
    const auto up = grad_output.pixel(q);
    auto gh = g_head.pixel(q);
    const T mix = sigmoid(h[3]);
    T inner = 0;
    for (int c = 0; c < 3; ++c) {
      gh[c] = mix * up[c];
      inner += h[c] * up[c];
    }
    gh[3] = mix * (T(1) - mix) * inner;
  }
  auto head = linear_grad(t.fuse_act, p.head, g_head);
  g.head = std::move(head.grad_weights);
  auto fuse = patch_linear_grad(t.concat, p.fuse, kFusePatch, relu_grad(t.fuse_pre, head.grad_input));
  g.fuse = std::move(fuse.grad_weights);
  const auto g_up = split_channels(fuse.grad_input, kFeatureChannels).first;
  const auto g_dec = relu_grad(t.dec_pre, upsample_grad(g_up, kFeatureScale));
  auto dec = patch_linear_grad(t.attended, p.dec1, 3, g_dec);
  g.dec1 = std::move(dec.grad_weights);

  BasicFeatureMap<T> g_stage = std::move(dec.grad_input);
  BasicFeatureMap<T> g_fr(t.reference_enc.features.height(), t.reference_enc.features.width(), kFeatureChannels);
  if (uses_gca(variant)) {
    auto gg = gca_backward(t.gca, g_stage);
    g_stage = std::move(gg.target);
    add_inplace(g_fr, gg.reference);
    g.gca = std::move(gg.params);
  }
  BasicFeatureMap<T> g_ft = g_stage;
  if (uses_self_attention(variant)) {
    auto ga = global_attention_backward(t.attention, g_stage);
    add_inplace(g_ft, ga.target);
    add_inplace(g_fr, ga.reference);
    g.attention = std::move(ga.params);
  }
  encode_backward(p, t.target_enc, g_ft, g);
  encode_backward(p, t.reference_enc, g_fr, g);
  return g;
}

FeatureMap refine(const ToyRefiner& model, const FeatureMap& corrupted, const FeatureMap& reference,
                  const CorrespondenceField& field) {
  FeatureMap out = model.forward(corrupted, reference, field);
  for (float& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

template struct RefinerParams<float>;
template struct RefinerParams<double>;
template class BasicRefiner<float>;
template class BasicRefiner<double>;

}  // namespace geoquery
