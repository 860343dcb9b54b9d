#include "geoquery/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "geoquery/config.hpp"
#include "geoquery/correspondence.hpp"
#include "geoquery/error.hpp"
#include "geoquery/gradcheck_suite.hpp"
#include "geoquery/io.hpp"
#include "geoquery/pipeline.hpp"
#include "geoquery/toyscene.hpp"

namespace geoquery {

namespace {

namespace fs = std::filesystem;

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInputError("cannot open '" + path.string() + "' for writing");
  return out;
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InvalidInputError("cannot create output directory '" + dir + "': " + ec.message());
  return fs::path(dir);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) items.push_back(item);
  return items;
}

// PSNR over mask = 1 pixels only.
double masked_psnr(const FeatureMap& a, const FeatureMap& b, const CorrespondenceField& field) {
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      if (!field.valid(y, x)) continue;
      for (int c = 0; c < a.channels(); ++c) {
        const double d = static_cast<double>(a(y, x, c)) - b(y, x, c);
        sum += d * d;
      }
      count += a.channels();
    }
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  if (sum == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(count / sum);
}

struct CorrespondArgs {
  std::string depth, intrinsics_ref, intrinsics_tgt, pose_ref, pose_tgt, out;
  int scale = 1;
  int threads = 1;
  double sharpness = 0.0;
};

int cmd_correspond(const CorrespondArgs& a, std::ostream& out) {
  const DepthRaster depth = read_depth(a.depth);
  const CameraIntrinsics K_ref = read_intrinsics(a.intrinsics_ref);
  const CameraIntrinsics K_tgt = read_intrinsics(a.intrinsics_tgt);
  const CameraPose T_ref = read_pose(a.pose_ref);
  const CameraPose T_tgt = read_pose(a.pose_tgt);
  if (depth.height() != K_ref.height || depth.width() != K_ref.width)
    throw ShapeError("depth raster is " + std::to_string(depth.height()) + "x" + std::to_string(depth.width()) +
                     " but the reference intrinsics describe " + std::to_string(K_ref.height) + "x" +
                     std::to_string(K_ref.width));
  if (a.scale < 1) throw ParameterError("--scale must be positive");
  if (K_tgt.height % a.scale || K_tgt.width % a.scale)
    throw ShapeError("target size is not divisible by --scale");
  FieldOptions options;
  options.threads = a.threads;
  options.sharpness = a.sharpness;
  CorrespondenceField field = build_field(depth, K_ref, K_tgt, T_ref, T_tgt, options);
  if (a.scale > 1) field = downsample_field(field, a.scale);
  write_field(a.out, field);
  out << "coverage " << std::fixed << std::setprecision(6) << field.coverage() << '\n';
  return kExitOk;
}

struct WarpArgs {
  std::string image, field, out, compare;
};

int cmd_warp(const WarpArgs& a, std::ostream& out) {
  const FeatureMap image = read_ppm(a.image);
  const CorrespondenceField field = read_field(a.field);
  if (field.scale != 1) throw ShapeError("warp needs a field at scale 1, got scale " + std::to_string(field.scale));
  if (field.height != image.height() || field.width != image.width())
    throw ShapeError("field size does not match the image size");
  const FeatureMap warped = warp_image(image, field);
  write_ppm(a.out, warped);
  if (!a.compare.empty()) {
    const FeatureMap target = read_ppm(a.compare);
    if (!target.same_shape(warped)) throw ShapeError("--compare image size does not match the field");
    // Compare what the output file holds, after 8-bit quantization.
    const FeatureMap written = read_ppm(a.out);
    out << "psnr_masked " << format_db(masked_psnr(written, target, field)) << '\n';
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  int seeds = 20;
  std::string broken;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  SuiteOptions options;
  options.seed = a.seed;
  options.seeds = a.seeds;
  options.broken_op = a.broken;
  const auto report = run_gradcheck_suite(options);
  bool ok = true;
  for (const auto& r : report) {
    out << std::left << std::setw(18) << r.name << " seeds " << r.seeds << "  entries " << std::setw(7) << r.checked
        << " max_rel_err " << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat << "  "
        << (r.passed ? "ok" : "FAIL") << '\n';
    ok = ok && r.passed;
  }
  out << (ok ? "all operations passed" : "gradient check failed") << '\n';
  return ok ? kExitOk : kExitGradcheck;
}

TrainConfig config_from(const std::string& path, const std::vector<std::string>& overrides) {
  TrainConfig base;
  if (!path.empty()) base = load_config(path);
  std::string text;
  for (const auto& o : overrides) text += o + '\n';
  return apply_config(parse_key_values(text, "--set"), base);
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
};

int cmd_toy_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const TrainConfig config = config_from(a.config, a.overrides);
  const fs::path dir = prepare_dir(a.out_dir);
  auto log = open_output(dir / "train.jsonl");
  TrainResult result;
  try {
    result = train(config, &log);
  } catch (const TrainingFailure& e) {
    err << "error: " << e.what() << '\n';
    return kExitDiverged;
  }
  auto csv = open_output(dir / "metrics.csv");
  write_csv_header(csv);
  write_csv_row(csv, result.metrics);
  const auto& m = result.metrics;
  out << to_string(m.variant) << " k=" << m.window << " steps=" << m.steps << "  psnr " << format_db(m.model.psnr)
      << " (corrupted " << format_db(m.baseline.psnr) << ")  low " << format_db(m.model.low_psnr) << " ("
      << format_db(m.baseline.low_psnr) << ")  high " << format_db(m.model.high_psnr) << " ("
      << format_db(m.baseline.high_psnr) << ")\n";
  return kExitOk;
}

struct AblateArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string variants = "gca_proxy_af,gca_proxy,gca_render,global";
  std::string windows;
  int seeds = 5;
  std::uint64_t first_seed = 1;
  std::string out_dir = ".";
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const TrainConfig base = config_from(a.config, a.overrides);
  if (a.seeds < 3) throw ConfigError("--seeds must be at least 3");
  std::vector<int> windows;
  for (const auto& w : split_list(a.windows)) {
    try {
      std::size_t used = 0;
      windows.push_back(std::stoi(w, &used));
      if (used != w.size()) throw std::invalid_argument(w);
    } catch (const std::exception&) {
      throw ConfigError("--windows: not an integer: '" + w + "'");
    }
    if (windows.back() < 1 || windows.back() % 2 == 0) throw ConfigError("--windows: entries must be odd and positive");
  }
  if (windows.empty()) windows.push_back(base.window);
  std::vector<AblationRun> runs;
  for (const auto& name : split_list(a.variants))
    for (int w : windows) runs.push_back({parse_variant(name), w});
  if (runs.empty()) throw ConfigError("--variants is empty");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < a.seeds; ++i) seeds.push_back(a.first_seed + i);

  const fs::path dir = prepare_dir(a.out_dir);
  auto csv = open_output(dir / "ablation.csv");
  write_csv_header(csv);
  const auto rows = ablate(base, runs, seeds, &csv);

  auto summary = open_output(dir / "summary.txt");
  std::ostringstream text;
  const EvalMetrics corrupted = rows.front().baseline;
  text << "corrupted input: psnr " << format_db(corrupted.psnr) << "  low " << format_db(corrupted.low_psnr)
       << "  high " << format_db(corrupted.high_psnr) << '\n';
  for (const auto& s : summarize(rows)) {
    text << std::left << std::setw(14) << to_string(s.variant) << " k=" << s.window << "  psnr "
         << format_db(s.mean_psnr) << " +- " << format_db(s.std_psnr) << "  low " << format_db(s.mean_low) << " +- "
         << format_db(s.std_low) << "  high " << format_db(s.mean_high) << " +- " << format_db(s.std_high);
    if (s.failures) text << "  failures " << s.failures << '/' << s.runs;
    text << '\n';
  }
  summary << text.str();
  out << text.str();
  for (const auto& r : rows)
    if (r.failed) return kExitDiverged;
  return kExitOk;
}

struct RegionArgs {
  std::string pred, gt, render;
  double tau = 30.0;
};

int cmd_eval_region(const RegionArgs& a, std::ostream& out) {
  const FeatureMap pred = read_ppm(a.pred);
  const FeatureMap gt = read_ppm(a.gt);
  const FeatureMap rendered = read_ppm(a.render);
  if (!pred.same_shape(gt) || !rendered.same_shape(gt)) throw ShapeError("--pred, --gt and --render must have the same size");
  if (!(a.tau >= 0.0)) throw ParameterError("--tau must be non-negative");
  const RegionPsnr r = region_psnr(pred, gt, error_map(rendered, gt), a.tau);
  out << "psnr,low_psnr,high_psnr\n"
      << format_db(psnr(pred, gt)) << ',' << format_db(r.low) << ',' << format_db(r.high) << '\n';
  return kExitOk;
}

struct FixtureArgs {
  std::string out_dir = ".";
  int size = 64;
};

int cmd_fixture(const FixtureArgs& a, std::ostream& out) {
  if (a.size < 8) throw ParameterError("--size must be at least 8");
  const PlaneFixture f = plane_fixture(a.size);
  const fs::path dir = prepare_dir(a.out_dir);
  write_ppm((dir / "reference.ppm").string(), f.reference.image);
  write_ppm((dir / "target.ppm").string(), f.target.image);
  write_depth((dir / "reference_depth.gqfm").string(), f.reference.depth);
  write_intrinsics((dir / "intrinsics.txt").string(), f.reference.camera.intrinsics);
  write_pose((dir / "pose_ref.txt").string(), f.reference.camera.pose);
  write_pose((dir / "pose_tgt.txt").string(), f.target.camera.pose);
  out << "plane at depth " << f.depth << ", baseline " << f.baseline << ", disparity "
      << f.reference.camera.intrinsics.fx * f.baseline / f.depth << " px\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Geometry-guided cross-view attention toolkit"};
  app.require_subcommand(1);

  CorrespondArgs ca;
  auto* correspond = app.add_subcommand("correspond", "Build the target->reference correspondence field");
  correspond->add_option("--depth", ca.depth, "Reference depth raster (GQFM)")->required();
  correspond->add_option("--intrinsics-ref", ca.intrinsics_ref, "Reference intrinsics")->required();
  correspond->add_option("--intrinsics-tgt", ca.intrinsics_tgt, "Target intrinsics")->required();
  correspond->add_option("--pose-ref", ca.pose_ref, "Reference world-to-camera pose")->required();
  correspond->add_option("--pose-tgt", ca.pose_tgt, "Target world-to-camera pose")->required();
  correspond->add_option("--out", ca.out, "Output field (GQCF)")->required();
  correspond->add_option("--scale", ca.scale, "Downsampling factor of the written field");
  correspond->add_option("--sharpness", ca.sharpness, "Splat depth sharpness (default: 10 / median depth)");
  correspond->add_option("--threads", ca.threads, "Row-parallel splatting; results are not bit-identical to 1 thread");

  WarpArgs wa;
  auto* warp = app.add_subcommand("warp", "Warp a reference image through a field");
  warp->add_option("--image", wa.image, "Reference image (PPM)")->required();
  warp->add_option("--field", wa.field, "Field at scale 1 (GQCF)")->required();
  warp->add_option("--out", wa.out, "Output image (PPM)")->required();
  warp->add_option("--compare", wa.compare, "Target image; prints PSNR over mask = 1 pixels");

  GradcheckArgs ga;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
  gradcheck->add_option("--seed", ga.seed, "Base seed");
  gradcheck->add_option("--seeds", ga.seeds, "Random instances per operation");
  gradcheck->add_option("--break", ga.broken, "Corrupt one operation's gradient (negative control)");

  TrainArgs ta;
  auto* toy_train = app.add_subcommand("toy-train", "Train the toy refiner and evaluate it");
  toy_train->add_option("--config", ta.config, "key = value config file");
  toy_train->add_option("--set", ta.overrides, "Extra key=value entries applied after the file");
  toy_train->add_option("--out-dir", ta.out_dir, "Directory for metrics.csv and train.jsonl");

  AblateArgs aa;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train several variants over several seeds");
  ablate_cmd->add_option("--config", aa.config, "key = value config file");
  ablate_cmd->add_option("--set", aa.overrides, "Extra key=value entries applied after the file");
  ablate_cmd->add_option("--variants", aa.variants, "Comma-separated variant names");
  ablate_cmd->add_option("--windows", aa.windows, "Comma-separated window sizes (window sweep)");
  ablate_cmd->add_option("--seeds", aa.seeds, "Number of seeds (at least 3)");
  ablate_cmd->add_option("--first-seed", aa.first_seed, "First training seed");
  ablate_cmd->add_option("--out-dir", aa.out_dir, "Directory for ablation.csv and summary.txt");

  RegionArgs ra;
  auto* region = app.add_subcommand("eval-region", "PSNR over low- and high-error regions");
  region->add_option("--pred", ra.pred, "Prediction (PPM)")->required();
  region->add_option("--gt", ra.gt, "Ground truth (PPM)")->required();
  region->add_option("--render", ra.render, "Rendering whose error defines the regions (PPM)")->required();
  region->add_option("--tau", ra.tau, "Error threshold on the 0-255 scale");

  FixtureArgs fa;
  auto* fixture = app.add_subcommand("fixture", "Write the textured-plane fixture scene");
  fixture->add_option("--out-dir", fa.out_dir, "Output directory");
  fixture->add_option("--size", fa.size, "Image size in pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitBadInput;
  }

  try {
    if (*correspond) return cmd_correspond(ca, out);
    if (*warp) return cmd_warp(wa, out);
    if (*gradcheck) return cmd_gradcheck(ga, out);
    if (*toy_train) return cmd_toy_train(ta, out, err);
    if (*ablate_cmd) return cmd_ablate(aa, out);
    if (*region) return cmd_eval_region(ra, out);
    if (*fixture) return cmd_fixture(fa, out);
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kExitShapeMismatch;
  } catch (const TrainingFailure& e) {
    err << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
  return kExitBadInput;
}

}  // namespace geoquery
