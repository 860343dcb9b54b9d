#include "geoquery/pipeline.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "geoquery/random.hpp"

namespace geoquery {

void TrainConfig::validate() const {
  if (steps < 0) throw ParameterError("steps must be non-negative");
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  if (batch < 1) throw ParameterError("batch must be at least 1");
  if (!(severity >= 0.0 && severity <= 1.0)) throw ParameterError("severity must lie in [0, 1]");
  if (window < 1 || window % 2 == 0) throw ParameterError("window must be odd and positive");
  if (!(clip_norm > 0.0)) throw ParameterError("clip_norm must be positive");
  if (image_size < kFeatureScale * 2 || image_size % kFeatureScale) throw ParameterError("image_size must be a multiple of 4, at least 8");
  if (eval_pairs < 1) throw ParameterError("eval_pairs must be at least 1");
  if (!(tau >= 0.0)) throw ParameterError("tau must be non-negative");
  weights.validate();
}

TrainingSample make_sample(std::uint64_t seed, int size, double severity) {
  Rng rng(seed);
  const PlaneScene scene = random_scene(rng.next());
  const CameraPose pose = random_target_pose(rng.next());
  const std::uint64_t corruption_seed = rng.next();
  const CameraIntrinsics K = default_intrinsics(size);
  TrainingSample s{render(scene, {K, CameraPose::identity()}), render(scene, {K, pose}), {}, {}};
  s.corruption = corrupt(s.target, corruption_seed, severity, scene.background);
  s.field = build_field(s.reference.depth, K, K, CameraPose::identity(), pose);
  return s;
}

std::uint64_t sample_seed(std::uint64_t run_seed, int step, int b) {
  Rng rng(run_seed ^ 0xD1B54A32D192ED03ull);
  Rng stream = rng.fork(static_cast<std::uint64_t>(step) * 1024 + static_cast<std::uint64_t>(b) + 1);
  return stream.next();
}

std::uint64_t model_seed(std::uint64_t run_seed) { return run_seed ^ 0x6A09E667F3BCC908ull; }

std::vector<TrainingSample> make_eval_set(const TrainConfig& config) {
  std::vector<TrainingSample> out;
  Rng rng(config.eval_seed);
  for (int i = 0; i < config.eval_pairs; ++i) out.push_back(make_sample(rng.next(), config.image_size, config.severity));
  return out;
}

namespace {

double mse_to_db(double sum, std::size_t count) {
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  const double mse = sum / static_cast<double>(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace

double psnr(const FeatureMap& pred, const FeatureMap& gt) {
  if (!pred.same_shape(gt)) throw ShapeError("psnr: shape mismatch");
  if (pred.size() == 0) throw ShapeError("psnr: empty image");
  double sum = 0.0;
  const auto a = pred.values(), b = gt.values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sum += d * d;
  }
  return mse_to_db(sum, a.size());
}

RegionPsnr region_psnr(const FeatureMap& pred, const FeatureMap& gt, const FeatureMap& error_map, double tau) {
  if (!pred.same_shape(gt)) throw ShapeError("region_psnr: prediction and target shapes differ");
  if (error_map.height() != pred.height() || error_map.width() != pred.width() || error_map.channels() != 1)
    throw ShapeError("region_psnr: error map must be H x W x 1");
  double sums[2] = {0.0, 0.0};
  std::size_t counts[2] = {0, 0};
  for (std::size_t p = 0; p < pred.pixel_count(); ++p) {
    const int side = error_map.pixel(p)[0] > tau ? 1 : 0;
    const auto a = pred.pixel(p), b = gt.pixel(p);
    for (int c = 0; c < pred.channels(); ++c) {
      const double d = static_cast<double>(a[c]) - b[c];
      sums[side] += d * d;
    }
    counts[side] += static_cast<std::size_t>(pred.channels());
  }
  return {mse_to_db(sums[0], counts[0]), mse_to_db(sums[1], counts[1])};
}

namespace {

struct Mean {
  double sum = 0.0;
  int n = 0;
  void add(double v) {
    if (std::isnan(v)) return;
    sum += v;
    ++n;
  }
  double value() const { return n ? sum / n : std::numeric_limits<double>::quiet_NaN(); }
};

template <typename Predict>
EvalMetrics evaluate_with(const std::vector<TrainingSample>& samples, double tau, Predict predict) {
  Mean all, low, high;
  for (const auto& s : samples) {
    const FeatureMap pred = predict(s);
    all.add(psnr(pred, s.target.image));
    const auto r = region_psnr(pred, s.target.image, s.corruption.error_map, tau);
    low.add(r.low);
    high.add(r.high);
  }
  return {all.value(), low.value(), high.value()};
}

}  // namespace

EvalMetrics evaluate(const ToyRefiner& model, const std::vector<TrainingSample>& samples, double tau) {
  return evaluate_with(samples, tau, [&](const TrainingSample& s) {
    return refine(model, s.corruption.image, s.reference.image, s.field);
  });
}

EvalMetrics evaluate_baseline(const std::vector<TrainingSample>& samples, double tau) {
  return evaluate_with(samples, tau, [](const TrainingSample& s) { return s.corruption.image; });
}

const FeatureExtractor<float>& loss_extractor() {
  static const FeatureExtractor<float> extractor = FeatureExtractor<float>::make(0x1F0CA1);
  return extractor;
}

TrainResult train(const TrainConfig& config, std::ostream* log) { return train(config, make_eval_set(config), log); }

TrainResult train(const TrainConfig& config, const std::vector<TrainingSample>& eval_set, std::ostream* log) {
  config.validate();
  const auto& extractor = loss_extractor();
  if (config.weights.beta.size() != extractor.depth())
    throw ParameterError("weights.beta needs one entry per extractor layer (" + std::to_string(extractor.depth()) + ")");

  TrainResult result{ToyRefiner::make(config.variant, config.window, model_seed(config.seed)), {}};
  auto& m = result.metrics;
  m.variant = config.variant;
  m.seed = config.seed;
  m.window = config.window;
  m.steps = config.steps;
  auto& model = result.model;

  const auto start = std::chrono::steady_clock::now();
  RefinerTrace<float> trace;
  std::vector<std::vector<double>> adam_m, adam_v;
  for (int step = 0; step < config.steps; ++step) {
    RefinerParams<float> grad = model.params.zeros_like();
    LossBreakdown<double> loss;
    for (int b = 0; b < config.batch; ++b) {
      const TrainingSample s = make_sample(sample_seed(config.seed, step, b), config.image_size, config.severity);
      const FeatureMap out = model.forward(s.corruption.image, s.reference.image, s.field, &trace);
      const auto l = total_loss(out, s.target.image, config.weights, extractor);
      loss.total += l.total;
      loss.recon += l.recon;
      loss.lpips += l.lpips;
      loss.gram += l.gram;
      const auto g = model.backward(trace, l.grad);
      auto dst = grad.tensors();
      const auto src = g.tensors();
      for (std::size_t t = 0; t < dst.size(); ++t)
        for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] += src[t][i];
    }
    const double inv_batch = 1.0 / config.batch;
    loss.total *= inv_batch;
    loss.recon *= inv_batch;
    loss.lpips *= inv_batch;
    loss.gram *= inv_batch;
    if (!std::isfinite(loss.total)) throw TrainingFailure(step, "non-finite loss");

    double norm2 = 0.0;
    for (auto t : grad.tensors())
      for (float& v : t) {
        v = static_cast<float>(v * inv_batch);
        norm2 += static_cast<double>(v) * v;
      }
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw TrainingFailure(step, "non-finite gradient");
    const double lr = config.schedule == Schedule::cosine
                          ? 0.5 * config.learning_rate * (1.0 + std::cos(std::numbers::pi * step / config.steps))
                          : config.learning_rate;
    const double scale = lr * (norm > config.clip_norm ? config.clip_norm / norm : 1.0);
    auto params = model.params.tensors();
    const auto grads = grad.tensors();
    if (config.optimizer == Optimizer::adam && adam_m.empty()) {
      for (auto t : params) {
        adam_m.emplace_back(t.size(), 0.0);
        adam_v.emplace_back(t.size(), 0.0);
      }
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
      if (config.optimizer == Optimizer::adam) {
        const double clip = norm > config.clip_norm ? config.clip_norm / norm : 1.0;
        const double b1 = 0.9, b2 = 0.999;
        const double c1 = 1.0 - std::pow(b1, step + 1), c2 = 1.0 - std::pow(b2, step + 1);
        for (std::size_t i = 0; i < params[t].size(); ++i) {
          const double g = clip * grads[t][i];
          adam_m[t][i] = b1 * adam_m[t][i] + (1 - b1) * g;
          adam_v[t][i] = b2 * adam_v[t][i] + (1 - b2) * g * g;
          params[t][i] = static_cast<float>(params[t][i] - lr * (adam_m[t][i] / c1) /
                                                               (std::sqrt(adam_v[t][i] / c2) + 1e-8));
        }
      } else {
        for (std::size_t i = 0; i < params[t].size(); ++i)
          params[t][i] = static_cast<float>(params[t][i] - scale * grads[t][i]);
      }
      if (!all_finite(std::span<const float>(params[t]))) throw TrainingFailure(step, "non-finite parameters");
    }

    m.loss_curve.push_back(loss.total);
    if (log) {
      nlohmann::json j = {{"step", step},        {"loss", loss.total}, {"recon", loss.recon},
                          {"lpips", loss.lpips}, {"gram", loss.gram},  {"grad_norm", norm}};
      *log << j.dump() << '\n';
    }
  }
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  m.seconds_per_step = config.steps ? m.seconds / config.steps : 0.0;
  m.model = evaluate(model, eval_set, config.tau);
  m.baseline = evaluate_baseline(eval_set, config.tau);
  return result;
}

std::vector<MetricsRecord> ablate(const TrainConfig& base, const std::vector<AblationRun>& runs,
                                  const std::vector<std::uint64_t>& seeds, std::ostream* progress) {
  base.validate();
  const auto eval_set = make_eval_set(base);
  std::vector<MetricsRecord> rows;
  for (const auto& run : runs)
    for (std::uint64_t seed : seeds) {
      TrainConfig c = base;
      c.variant = run.variant;
      c.window = run.window;
      c.seed = seed;
      MetricsRecord row;
      try {
        row = train(c, eval_set).metrics;
      } catch (const Error& e) {
        row.variant = run.variant;
        row.window = run.window;
        row.seed = seed;
        row.steps = c.steps;
        row.failed = true;
        row.failure = e.what();
        const double nan = std::numeric_limits<double>::quiet_NaN();
        row.model = {nan, nan, nan};
        row.baseline = evaluate_baseline(eval_set, c.tau);
      }
      if (progress) {
        write_csv_row(*progress, row);
        progress->flush();
      }
      rows.push_back(std::move(row));
    }
  return rows;
}

namespace {

struct Stat {
  std::vector<double> v;
  void add(double x) {
    if (std::isfinite(x)) v.push_back(x);
  }
  std::pair<double, double> mean_std() const {
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    double s = 0.0;
    for (double x : v) s += x;
    const double mean = s / v.size();
    double q = 0.0;
    for (double x : v) q += (x - mean) * (x - mean);
    return {mean, v.size() > 1 ? std::sqrt(q / (v.size() - 1)) : 0.0};
  }
};

}  // namespace

std::vector<VariantSummary> summarize(const std::vector<MetricsRecord>& rows) {
  std::vector<VariantSummary> out;
  std::vector<std::array<Stat, 3>> stats;
  for (const auto& r : rows) {
    std::size_t i = 0;
    while (i < out.size() && !(out[i].variant == r.variant && out[i].window == r.window)) ++i;
    if (i == out.size()) {
      out.push_back({r.variant, r.window});
      stats.emplace_back();
    }
    ++out[i].runs;
    if (r.failed) {
      ++out[i].failures;
      continue;
    }
    stats[i][0].add(r.model.psnr);
    stats[i][1].add(r.model.low_psnr);
    stats[i][2].add(r.model.high_psnr);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::tie(out[i].mean_psnr, out[i].std_psnr) = stats[i][0].mean_std();
    std::tie(out[i].mean_low, out[i].std_low) = stats[i][1].mean_std();
    std::tie(out[i].mean_high, out[i].std_high) = stats[i][2].mean_std();
  }
  return out;
}

std::string format_db(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << value;
  return s.str();
}

void write_csv_header(std::ostream& out) { out << "variant,seed,k,psnr,low_psnr,high_psnr,steps,seconds\n"; }

void write_csv_row(std::ostream& out, const MetricsRecord& r) {
  std::ostringstream secs;
  secs << std::fixed << std::setprecision(3) << r.seconds;
  out << to_string(r.variant) << ',' << r.seed << ',' << r.window << ',' << format_db(r.model.psnr) << ','
      << format_db(r.model.low_psnr) << ',' << format_db(r.model.high_psnr) << ',' << r.steps << ',' << secs.str()
      << '\n';
}

}  // namespace geoquery
