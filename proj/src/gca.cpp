#include "geoquery/gca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace geoquery {

template <typename T>
void GcaParams<T>::validate() const {
  if (window < 1 || window % 2 == 0) throw ParameterError("gca: window size must be odd and positive");
  query.validate();
  key.validate();
  value.validate();
  gate.validate();
  const int d = query.in;
  if (query.out != d || key.in != d || key.out != d || value.in != d || value.out != d)
    throw ShapeError("gca: projections must be d x d");
  if (gate.first.in != 2 * d || gate.second.out != 1) throw ShapeError("gca: gate MLP must map 2d -> 1");
}

template <typename T>
std::vector<std::span<T>> GcaParams<T>::tensors() {
  std::vector<std::span<T>> out;
  for (auto* w : {&query, &key, &value}) {
    out.push_back(w->matrix);
    out.push_back(w->bias);
  }
  for (auto s : gate.tensors()) out.push_back(s);
  return out;
}

template <typename T>
std::vector<std::span<const T>> GcaParams<T>::tensors() const {
  std::vector<std::span<const T>> out;
  for (const auto* w : {&query, &key, &value}) {
    out.push_back(w->matrix);
    out.push_back(w->bias);
  }
  for (auto s : gate.tensors()) out.push_back(s);
  return out;
}

template <typename T>
GcaParams<T> GcaParams<T>::zeros_like() const {
  return {LinearWeights<T>(query.out, query.in),
          LinearWeights<T>(key.out, key.in),
          LinearWeights<T>(value.out, value.in),
          {LinearWeights<T>(gate.first.out, gate.first.in), LinearWeights<T>(gate.second.out, gate.second.in)},
          window};
}

template <typename T>
void AttentionParams<T>::validate() const {
  query.validate();
  key.validate();
  value.validate();
  const int d = query.in;
  if (query.out != d || key.in != d || key.out != d || value.in != d || value.out != d)
    throw ShapeError("attention: projections must be d x d");
}

namespace {

template <typename T>
std::vector<Coord2<T>> field_coords(const CorrespondenceField& field) {
  std::vector<Coord2<T>> c(static_cast<std::size_t>(field.height) * field.width);
  for (std::size_t p = 0; p < c.size(); ++p)
    if (field.mask[p]) c[p] = {static_cast<T>(field.coords[2 * p]), static_cast<T>(field.coords[2 * p + 1])};
  return c;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

template <typename T>
BasicFeatureMap<T> proxy_query(const BasicFeatureMap<T>& reference, const CorrespondenceField& field) {
  if (field.coords.size() != 2 * field.mask.size() || field.mask.size() != static_cast<std::size_t>(field.height) * field.width)
    throw ShapeError("proxy_query: malformed field");
  BasicFeatureMap<T> out(field.height, field.width, reference.channels());
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x) {
      if (!field.valid(y, x)) continue;
      sample_point(reference, static_cast<T>(field.u(y, x)), static_cast<T>(field.v(y, x)), out.pixel(y, x));
    }
  return out;
}

template <typename T>
GcaOutput<T> gca_forward(const BasicFeatureMap<T>& target, const BasicFeatureMap<T>& reference,
                         const CorrespondenceField& field, const GcaParams<T>& params, const GcaOptions<T>& options,
                         GcaState<T>* state) {
  params.validate();
  const int d = params.channels();
  if (target.channels() != d || reference.channels() != d) throw ShapeError("gca_forward: channel mismatch");
  if (target.height() != reference.height() || target.width() != reference.width())
    throw ShapeError("gca_forward: target and reference resolutions differ");
  if (field.height != target.height() || field.width != target.width())
    throw ShapeError("gca_forward: field does not match the feature grid");

  const int H = target.height(), W = target.width();
  const int k = params.window, r = k / 2, taps = k * k;
  const T inv_sqrt_d = T(1) / std::sqrt(T(d));

  GcaOutput<T> out{target, BasicFeatureMap<T>(H, W, d), BasicFeatureMap<T>(H, W, 1), BasicFeatureMap<T>(H, W, taps)};
  const BasicFeatureMap<T> proxy = proxy_query(reference, field);
  const BasicFeatureMap<T> keys = linear_apply(reference, params.key);
  const BasicFeatureMap<T> values = linear_apply(reference, params.value);
  const auto coords = field_coords<T>(field);
  BasicFeatureMap<T> queries(H, W, d);
  BasicFeatureMap<T> hidden_pre(H, W, params.gate.first.out);

  std::vector<T> logits(taps), kv(d), gate_in(2 * d);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * W + x;
      if (!field.mask[p]) continue;
      const auto src = options.query == QuerySource::proxy ? proxy.pixel(p) : target.pixel(p);
      auto q = queries.pixel(p);
      linear_vec(params.query, src, q);

      const T cu = coords[p].u, cv = coords[p].v;
      for (int t = 0; t < taps; ++t) {
        sample_point(keys, cu + T(t % k - r), cv + T(t / k - r), std::span<T>(kv));
        logits[t] = dot<T>(q, kv) * inv_sqrt_d;
      }
      const auto att = softmax<T>(logits);
      auto geo = out.geo.pixel(p);
      for (int t = 0; t < taps; ++t) {
        out.attention(y, x, t) = att[t];
        sample_point(values, cu + T(t % k - r), cv + T(t / k - r), std::span<T>(kv));
        for (int c = 0; c < d; ++c) geo[c] += att[t] * kv[c];
      }

      T w = options.fixed_gate;
      if (options.fusion == FusionMode::adaptive) {
        const auto ft = target.pixel(p);
        std::copy(ft.begin(), ft.end(), gate_in.begin());
        std::copy(geo.begin(), geo.end(), gate_in.begin() + d);
        MlpCache<T> cache;
        const auto z = mlp_apply(params.gate, std::span<const T>(gate_in), &cache);
        w = sigmoid(z[0]);
        std::copy(cache.hidden_pre.begin(), cache.hidden_pre.end(), hidden_pre.pixel(p).begin());
      }
      out.gate(y, x, 0) = w;
      auto fused = out.fused.pixel(p);
      const auto ft = target.pixel(p);
      for (int c = 0; c < d; ++c) fused[c] = (T(1) - w) * ft[c] + w * geo[c];
    }

  if (state) {
    state->ready = true;
    state->params = params;
    state->options = options;
    state->target = target;
    state->reference = reference;
    state->coords = coords;
    state->mask = field.mask;
    state->proxy = proxy;
    state->queries = std::move(queries);
    state->keys = keys;
    state->values = values;
    state->hidden_pre = std::move(hidden_pre);
    state->output = out;
  }
  return out;
}

template <typename T>
GcaGradients<T> gca_backward(const GcaState<T>& s, const BasicFeatureMap<T>& grad_fused) {
  if (!s.ready) throw MissingStateError("gca_backward: forward state was not recorded");
  if (!grad_fused.same_shape(s.target)) throw ShapeError("gca_backward: upstream shape mismatch");

  const int H = s.target.height(), W = s.target.width();
  const int d = s.params.channels();
  const int k = s.params.window, r = k / 2, taps = k * k;
  const T inv_sqrt_d = T(1) / std::sqrt(T(d));

  GcaGradients<T> g{BasicFeatureMap<T>(H, W, d), BasicFeatureMap<T>(s.reference.height(), s.reference.width(), d),
                    s.params.zeros_like()};
  BasicFeatureMap<T> grad_keys(s.keys.height(), s.keys.width(), d);
  BasicFeatureMap<T> grad_values(s.values.height(), s.values.width(), d);

  std::vector<T> grad_geo(d), gate_in(2 * d), kv(d), grad_att(taps), grad_q(d), grad_src(d), scaled(d);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * W + x;
      const auto up = grad_fused.pixel(p);
      auto gt = g.target.pixel(p);
      if (!s.mask[p]) {
        for (int c = 0; c < d; ++c) gt[c] += up[c];
        continue;
      }
      const auto ft = s.target.pixel(p);
      const auto geo = s.output.geo.pixel(p);
      const T w = s.output.gate(y, x, 0);

      T grad_w = 0;
      for (int c = 0; c < d; ++c) {
        gt[c] += (T(1) - w) * up[c];
        grad_geo[c] = w * up[c];
        grad_w += up[c] * (geo[c] - ft[c]);
      }

      if (s.options.fusion == FusionMode::adaptive) {
        std::copy(ft.begin(), ft.end(), gate_in.begin());
        std::copy(geo.begin(), geo.end(), gate_in.begin() + d);
        MlpCache<T> cache;
        const auto hp = s.hidden_pre.pixel(p);
        cache.hidden_pre.assign(hp.begin(), hp.end());
        cache.hidden.resize(hp.size());
        for (std::size_t i = 0; i < hp.size(); ++i) cache.hidden[i] = hp[i] > T(0) ? hp[i] : T(0);
        const T grad_z = grad_w * w * (T(1) - w);
        const auto grad_in = mlp_backward(s.params.gate, std::span<const T>(gate_in), cache,
                                          std::span<const T>(&grad_z, 1), &g.params.gate);
        for (int c = 0; c < d; ++c) {
          gt[c] += grad_in[c];
          grad_geo[c] += grad_in[d + c];
        }
      }

      // Attention: geo = sum_t a_t v_t, a = softmax(<q, k_t> / sqrt(d)).
      const T cu = s.coords[p].u, cv = s.coords[p].v;
      const auto att = s.output.attention.pixel(p);
      for (int t = 0; t < taps; ++t) {
        const T u = cu + T(t % k - r), v = cv + T(t / k - r);
        sample_point(s.values, u, v, std::span<T>(kv));
        grad_att[t] = dot<T>(std::span<const T>(grad_geo), std::span<const T>(kv));
        for (int c = 0; c < d; ++c) scaled[c] = att[t] * grad_geo[c];
        sample_point_backward(s.values, u, v, std::span<const T>(scaled), &grad_values);
      }
      const auto grad_logit = softmax_grad<T>(att, std::span<const T>(grad_att));

      const auto q = s.queries.pixel(p);
      std::fill(grad_q.begin(), grad_q.end(), T(0));
      for (int t = 0; t < taps; ++t) {
        const T u = cu + T(t % k - r), v = cv + T(t / k - r);
        const T gl = grad_logit[t] * inv_sqrt_d;
        sample_point(s.keys, u, v, std::span<T>(kv));
        for (int c = 0; c < d; ++c) {
          grad_q[c] += gl * kv[c];
          scaled[c] = gl * q[c];
        }
        sample_point_backward(s.keys, u, v, std::span<const T>(scaled), &grad_keys);
      }

      const bool proxy = s.options.query == QuerySource::proxy;
      const auto src = proxy ? s.proxy.pixel(p) : s.target.pixel(p);
      linear_vec_backward(s.params.query, src, std::span<const T>(grad_q), &g.params.query, std::span<T>(grad_src));
      if (proxy) {
        sample_point_backward(s.reference, cu, cv, std::span<const T>(grad_src), &g.reference);
      } else {
        for (int c = 0; c < d; ++c) gt[c] += grad_src[c];
      }
    }

  const auto gk = linear_grad(s.reference, s.params.key, grad_keys);
  const auto gv = linear_grad(s.reference, s.params.value, grad_values);
  add_inplace(g.reference, gk.grad_input);
  add_inplace(g.reference, gv.grad_input);
  g.params.key = gk.grad_weights;
  g.params.value = gv.grad_weights;
  return g;
}

template <typename T>
BasicFeatureMap<T> global_attention(const BasicFeatureMap<T>& target, const BasicFeatureMap<T>& reference,
                                    const AttentionParams<T>& params, GlobalAttentionState<T>* state) {
  params.validate();
  const int d = params.channels();
  if (target.channels() != d || (!reference.empty() && reference.channels() != d))
    throw ShapeError("global_attention: channel mismatch");
  const std::size_t N = target.pixel_count();
  const std::size_t M = reference.empty() ? 0 : reference.pixel_count();
  const std::size_t total = N + M;
  const T inv_sqrt_d = T(1) / std::sqrt(T(d));

  BasicFeatureMap<T> queries(1, static_cast<int>(N), d);
  BasicFeatureMap<T> keys(1, static_cast<int>(total), d), values(1, static_cast<int>(total), d);
  for (std::size_t i = 0; i < total; ++i) {
    const auto tok = i < N ? target.pixel(i) : reference.pixel(i - N);
    if (i < N) linear_vec(params.query, tok, queries.pixel(i));
    linear_vec(params.key, tok, keys.pixel(i));
    linear_vec(params.value, tok, values.pixel(i));
  }

  // Channel-major keys: logits accumulate across channels with the token index innermost.
  std::vector<T> keys_t(static_cast<std::size_t>(d) * total);
  for (std::size_t j = 0; j < total; ++j)
    for (int c = 0; c < d; ++c) keys_t[c * total + j] = keys.data()[j * d + c];

  BasicFeatureMap<T> out(target.height(), target.width(), d);
  if (state) state->attention.assign(N * total, T(0));
  std::vector<T> row(total);
  const T* vp = values.data();
  for (std::size_t i = 0; i < N; ++i) {
    const T* q = queries.data() + i * d;
    std::fill(row.begin(), row.end(), T(0));
    for (int c = 0; c < d; ++c) {
      const T qc = q[c] * inv_sqrt_d;
      const T* kc = keys_t.data() + c * total;
      for (std::size_t j = 0; j < total; ++j) row[j] += qc * kc[j];
    }
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < total; ++j) peak = std::max(peak, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < total; ++j) {
      row[j] = std::exp(row[j] - peak);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    T* o = out.data() + i * d;
    for (std::size_t j = 0; j < total; ++j) {
      const T a = row[j] * inv;
      row[j] = a;
      const T* vj = vp + j * d;
      for (int c = 0; c < d; ++c) o[c] += a * vj[c];
    }
    if (state) std::copy(row.begin(), row.end(), state->attention.begin() + i * total);
  }

  if (state) {
    state->ready = true;
    state->params = params;
    state->target = target;
    state->reference = reference;
    state->queries = std::move(queries);
    state->keys = std::move(keys);
    state->values = std::move(values);
  }
  return out;
}

template <typename T>
GlobalAttentionGradients<T> global_attention_backward(const GlobalAttentionState<T>& s,
                                                      const BasicFeatureMap<T>& grad_out) {
  if (!s.ready) throw MissingStateError("global_attention_backward: forward state was not recorded");
  if (!grad_out.same_shape(s.target)) throw ShapeError("global_attention_backward: upstream shape mismatch");
  const int d = s.params.channels();
  const std::size_t N = s.target.pixel_count();
  const std::size_t total = s.keys.pixel_count();
  const T inv_sqrt_d = T(1) / std::sqrt(T(d));

  BasicFeatureMap<T> grad_q(1, static_cast<int>(N), d);
  BasicFeatureMap<T> grad_k(1, static_cast<int>(total), d), grad_v(1, static_cast<int>(total), d);
  std::vector<T> values_t(static_cast<std::size_t>(d) * total);
  for (std::size_t j = 0; j < total; ++j)
    for (int c = 0; c < d; ++c) values_t[c * total + j] = s.values.data()[j * d + c];

  std::vector<T> grad_a(total);
  for (std::size_t i = 0; i < N; ++i) {
    const T* a = s.attention.data() + i * total;
    const auto go = grad_out.pixel(i);
    std::fill(grad_a.begin(), grad_a.end(), T(0));
    for (int c = 0; c < d; ++c) {
      const T gc = go[c];
      const T* vc = values_t.data() + c * total;
      for (std::size_t j = 0; j < total; ++j) grad_a[j] += gc * vc[j];
    }
    T inner = 0;
    for (std::size_t j = 0; j < total; ++j) {
      inner += a[j] * grad_a[j];
      T* gvj = grad_v.data() + j * d;
      for (int c = 0; c < d; ++c) gvj[c] += a[j] * go[c];
    }
    const T* q = s.queries.data() + i * d;
    T* gq = grad_q.data() + i * d;
    for (std::size_t j = 0; j < total; ++j) {
      const T gl = a[j] * (grad_a[j] - inner) * inv_sqrt_d;
      const T* kj = s.keys.data() + j * d;
      T* gkj = grad_k.data() + j * d;
      for (int c = 0; c < d; ++c) {
        gq[c] += gl * kj[c];
        gkj[c] += gl * q[c];
      }
    }
  }

  GlobalAttentionGradients<T> g{BasicFeatureMap<T>(s.target.height(), s.target.width(), d),
                                s.reference.empty() ? BasicFeatureMap<T>()
                                                    : BasicFeatureMap<T>(s.reference.height(), s.reference.width(), d),
                                s.params.zeros_like()};
  std::vector<T> tmp(d);
  for (std::size_t i = 0; i < total; ++i) {
    const bool is_target = i < N;
    const auto tok = is_target ? s.target.pixel(i) : s.reference.pixel(i - N);
    auto dst = is_target ? g.target.pixel(i) : g.reference.pixel(i - N);
    if (is_target) {
      linear_vec_backward(s.params.query, tok, std::span<const T>(grad_q.pixel(i)), &g.params.query, std::span<T>(tmp));
      for (int c = 0; c < d; ++c) dst[c] += tmp[c];
    }
    linear_vec_backward(s.params.key, tok, std::span<const T>(grad_k.pixel(i)), &g.params.key, std::span<T>(tmp));
    for (int c = 0; c < d; ++c) dst[c] += tmp[c];
    linear_vec_backward(s.params.value, tok, std::span<const T>(grad_v.pixel(i)), &g.params.value, std::span<T>(tmp));
    for (int c = 0; c < d; ++c) dst[c] += tmp[c];
  }
  return g;
}

#define GEOQUERY_INSTANTIATE(T)                                                                                   \
  template struct GcaParams<T>;                                                                                   \
  template struct AttentionParams<T>;                                                                             \
  template BasicFeatureMap<T> proxy_query(const BasicFeatureMap<T>&, const CorrespondenceField&);                 \
  template GcaOutput<T> gca_forward(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&,                         \
                                    const CorrespondenceField&, const GcaParams<T>&, const GcaOptions<T>&,        \
                                    GcaState<T>*);                                                                \
  template GcaGradients<T> gca_backward(const GcaState<T>&, const BasicFeatureMap<T>&);                           \
  template BasicFeatureMap<T> global_attention(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&,              \
                                               const AttentionParams<T>&, GlobalAttentionState<T>*);              \
  template GlobalAttentionGradients<T> global_attention_backward(const GlobalAttentionState<T>&,                  \
                                                                 const BasicFeatureMap<T>&);

GEOQUERY_INSTANTIATE(float)
GEOQUERY_INSTANTIATE(double)

#undef GEOQUERY_INSTANTIATE

}  // namespace geoquery
