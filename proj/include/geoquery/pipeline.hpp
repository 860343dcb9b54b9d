#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "geoquery/losses.hpp"
#include "geoquery/refiner.hpp"
#include "geoquery/toyscene.hpp"

namespace geoquery {

enum class Optimizer { gd, adam };

/// constant: fixed learning rate; cosine: half-cosine decay to zero over the run.
enum class Schedule { constant, cosine };

struct TrainConfig {
  std::uint64_t seed = 1;
  int steps = 2000;
  double learning_rate = 3e-3;
  int batch = 1;
  double severity = 0.6;
  int window = 3;
  Variant variant = Variant::gca_proxy_af;
  LossWeights weights{1.0, 0.0, 0.0};  // reconstruction only; see README
  double clip_norm = 1.0;
  int image_size = 64;
  int eval_pairs = 8;
  std::uint64_t eval_seed = 0x5EEDE7A1;
  double tau = 30.0;
  Optimizer optimizer = Optimizer::adam;
  Schedule schedule = Schedule::constant;

  /// Throws ParameterError on out-of-range fields.
  void validate() const;
};

/// One reference/target pair of a random scene with the target corrupted.
struct TrainingSample {
  RenderedView reference;
  RenderedView target;
  Corruption corruption;
  CorrespondenceField field;  // target -> reference at image resolution
};

TrainingSample make_sample(std::uint64_t seed, int size, double severity);

/// Seed of the b-th sample of training step `step`; shared by every variant.
std::uint64_t sample_seed(std::uint64_t run_seed, int step, int b);

/// Seed of the initial model weights of a run.
std::uint64_t model_seed(std::uint64_t run_seed);

std::vector<TrainingSample> make_eval_set(const TrainConfig& config);

/// 10 log10(1 / MSE) for [0, 1] images; +inf when identical.
double psnr(const FeatureMap& pred, const FeatureMap& gt);

struct RegionPsnr {
  double low;   // pixels with error <= tau; NaN when that set is empty
  double high;  // pixels with error > tau; NaN when that set is empty
};

RegionPsnr region_psnr(const FeatureMap& pred, const FeatureMap& gt, const FeatureMap& error_map, double tau = 30.0);

struct EvalMetrics {
  double psnr = 0.0;
  double low_psnr = 0.0;
  double high_psnr = 0.0;
};

struct MetricsRecord {
  Variant variant = Variant::gca_proxy_af;
  std::uint64_t seed = 0;
  int window = 3;
  int steps = 0;
  EvalMetrics model;
  EvalMetrics baseline;  // the corrupted input itself
  std::vector<double> loss_curve;
  double seconds = 0.0;
  double seconds_per_step = 0.0;
  bool failed = false;
  std::string failure;
};

/// Per-image metrics averaged over the set; empty regions are skipped.
EvalMetrics evaluate(const ToyRefiner& model, const std::vector<TrainingSample>& samples, double tau = 30.0);
EvalMetrics evaluate_baseline(const std::vector<TrainingSample>& samples, double tau = 30.0);

/// The fixed random extractor used by the perceptual and Gram terms.
const FeatureExtractor<float>& loss_extractor();

struct TrainResult {
  ToyRefiner model;
  MetricsRecord metrics;
};

/// Deterministic gradient descent with global-norm clipping. Throws
/// TrainingFailure when the loss or the parameters stop being finite.
/// When `log` is given, one JSON object per step is written to it.
TrainResult train(const TrainConfig& config, std::ostream* log = nullptr);

/// Same as train() but evaluates on a precomputed held-out set.
TrainResult train(const TrainConfig& config, const std::vector<TrainingSample>& eval_set, std::ostream* log = nullptr);

struct AblationRun {
  Variant variant;
  int window;
};

/// Trains every run for every seed on identical data streams. Failures are
/// recorded in the row instead of being thrown.
std::vector<MetricsRecord> ablate(const TrainConfig& base, const std::vector<AblationRun>& runs,
                                  const std::vector<std::uint64_t>& seeds, std::ostream* progress = nullptr);

struct VariantSummary {
  Variant variant;
  int window;
  int runs = 0;
  int failures = 0;
  double mean_psnr = 0, std_psnr = 0;
  double mean_low = 0, std_low = 0;
  double mean_high = 0, std_high = 0;
};

/// Groups rows by (variant, window) in first-seen order.
std::vector<VariantSummary> summarize(const std::vector<MetricsRecord>& rows);

void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const MetricsRecord& row);
/// Formats a dB value: "inf" for +infinity, "nan" for an undefined region.
std::string format_db(double value);

}  // namespace geoquery
