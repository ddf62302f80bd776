#include "cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "carunet/checkpoint.hpp"
#include "carunet/data.hpp"
#include "carunet/image_io.hpp"
#include "carunet/metrics.hpp"
#include "carunet/run_config.hpp"
#include "carunet/selfcheck.hpp"
#include "carunet/train.hpp"

namespace carunet::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string preset;
  std::string config_path;
  std::string dataset;
  std::string root;
  std::string output;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--preset", c.preset, "Start from a preset: drive, chase, stare, smoke");
  cmd->add_option("--config", c.config_path, "Config file applied on top of the preset");
  cmd->add_option("--set", c.overrides, "Override one value, section.key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "Seed for model init, training and synthetic data");
  cmd->add_option("--dataset", c.dataset, "drive, chase, stare or synthetic");
  cmd->add_option("--root", c.root, "Dataset directory holding images/ and masks/ (default data/<dataset>)");
  cmd->add_option("--output", c.output, "Output directory");
  cmd->add_option("--threads", c.threads, "OpenMP threads for the kernels (0 keeps the runtime default)");
}

struct Resolved {
  RunConfig config;
  bool model_given = false;  // architecture came from a preset, file or override
};

Resolved resolve(const Common& c) {
  Resolved r;
  if (!c.preset.empty()) {
    r.config = preset(c.preset);
    r.model_given = true;
  }
  if (!c.config_path.empty()) {
    r.config = load_config(c.config_path, r.config);
    r.model_given = true;
  }
  if (!c.dataset.empty()) apply_override(r.config, "data.dataset=" + c.dataset);
  if (!c.root.empty()) r.config.data.root = c.root;
  for (const std::string& o : c.overrides) {
    apply_override(r.config, o);
    if (o.rfind("model.", 0) == 0) r.model_given = true;
  }
  if (c.seed) r.config.model.seed = r.config.train.seed = r.config.data.seed = *c.seed;
  if (!c.output.empty()) r.config.output_dir = c.output;
  if (c.threads > 0) omp_set_num_threads(c.threads);
  return r;
}

struct Split {
  std::vector<FundusSample> train;
  std::vector<FundusSample> test;
};

Split load_split(const RunConfig& c) {
  if (c.data.kind == DatasetKind::synthetic && c.data.root.empty()) {
    Rng rng(c.data.seed);
    std::vector<FundusSample> samples = make_synthetic(c.data.synthetic_count, c.data.synthetic_size, rng);
    return {samples, samples};
  }
  const fs::path root =
      c.data.root.empty() ? fs::path("data") / std::string(to_string(c.data.kind)) : fs::path(c.data.root);
  const Dataset ds = load_dataset(root, c.data.kind, c.data.seed, c.data.fold);
  return {ds.select(ds.plan.train), ds.select(ds.plan.test)};
}

std::size_t pool_target(const RunConfig& c, const std::vector<FundusSample>& samples) {
  std::size_t t = padded_size(c.data.kind);
  for (const FundusSample& s : samples) t = std::max({t, s.original_size.height, s.original_size.width});
  return round_up(t, c.model.size_multiple());
}

CarUnet load_network(const fs::path& checkpoint, const Resolved& r) {
  if (!r.model_given) return load_weights(checkpoint);
  const std::vector<std::string> diff = architecture_diff(r.config.model, read_checkpoint_config(checkpoint));
  if (!diff.empty()) {
    std::string msg = "checkpoint " + checkpoint.string() + " does not match the configured architecture:";
    for (const std::string& d : diff) msg += "\n  " + d;
    fail(ErrorKind::shape, msg);
  }
  CarUnet net = CarUnet::build(r.config.model);
  load_weights_into(net, checkpoint);
  return net;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) fail(ErrorKind::data, "cannot write " + path.string());
}

void check_threshold(double t) {
  if (!(t >= 0.0 && t <= 1.0)) fail(ErrorKind::usage, "threshold must lie in [0, 1]");
}

std::vector<std::uint8_t> binary_mask(const Tensor& probability, double threshold) {
  std::vector<std::uint8_t> px(probability.numel());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = probability.data()[i] > threshold ? 255 : 0;
  return px;
}

void write_maps(const fs::path& dir, const std::string& id, const Tensor& probability, double threshold) {
  const std::size_t h = probability.dim(1), w = probability.dim(2);
  write_png_gray16(dir / (id + "_prob.png"), w, h, to_uint16(probability));
  write_png_gray8(dir / (id + "_mask.png"), w, h, binary_mask(probability, threshold));
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

int cmd_train(const Common& common, bool quiet, std::ostream& out) {
  const Resolved r = resolve(common);
  const RunConfig& cfg = r.config;
  const Split split = load_split(cfg);
  const std::size_t target = pool_target(cfg, split.train);
  const TrainingPool pool = make_training_pool(split.train, target, cfg.train.augment_copies,
                                               cfg.train.validation_fraction, cfg.train.seed);
  CarUnet net = CarUnet::build(cfg.model);

  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_text(dir / "config.txt", serialize(cfg));

  out << "train: " << split.train.size() << " images, pool " << pool.train.size() << " at " << target << "x"
      << target << ", " << net.parameter_count() << " parameters\n";
  const TrainResult result = train(net, pool, cfg.train, [&](const EpochRecord& e) {
    if (quiet) return;
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu  steps %zu  train_loss %.6f  val_loss %.6f  val_auc %.6f\n", e.epoch,
                  e.steps, e.train_loss, e.val_loss, e.val_auc);
    out << line << std::flush;
  });
  save_weights(net, dir / "checkpoint.bin");
  write_text(dir / "history.csv", format_history(result.history));

  const MetricsReport fit = evaluate_model(net, split.train, EvalOptions{0.5, padded_size(cfg.data.kind), true});
  out << "best epoch " << result.best_epoch << " (val AUC " << fmt("%.6f", result.best_val_auc) << ") after "
      << result.steps << " steps\n";
  out << "training set: Dice " << fmt("%.4f", dice(fit.counts)) << "  AUC " << fmt("%.4f", fit.auc) << '\n';
  out << "wrote " << (dir / "checkpoint.bin").string() << ", " << (dir / "history.csv").string() << ", "
      << (dir / "config.txt").string() << '\n';
  return ok;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& predictions, double threshold,
             std::ostream& out) {
  check_threshold(threshold);
  if (checkpoint.empty() == predictions.empty()) {
    fail(ErrorKind::usage, "eval needs exactly one of --checkpoint or --predictions");
  }
  const Resolved r = resolve(common);
  const Split split = load_split(r.config);

  std::vector<ScoredImage> scored;
  MetricsReport report;
  if (!predictions.empty()) {
    for (const FundusSample& s : split.test) {
      const fs::path path = fs::path(predictions) / (s.id + "_prob.png");
      if (!fs::exists(path)) fail(ErrorKind::data, s.id + ": no probability map at " + path.string());
      const Image img = read_image(path);
      if (img.channels != 1 || img.max_value != 65535) {
        fail(ErrorKind::data, path.string() + ": expected a 16-bit grayscale probability map");
      }
      if (img.height != s.original_size.height || img.width != s.original_size.width) {
        fail(ErrorKind::shape, path.string() + ": map is " + std::to_string(img.width) + "x" +
                                   std::to_string(img.height) + ", image is " + std::to_string(s.original_size.width) +
                                   "x" + std::to_string(s.original_size.height));
      }
      scored.push_back({s.id, from_uint16(img.pixels, img.height, img.width), s.mask});
    }
    report = score_predictions(scored, threshold);
  } else {
    CarUnet net = load_network(checkpoint, r);
    report = evaluate_model(net, split.test, EvalOptions{threshold, padded_size(r.config.data.kind), true}, &scored);
  }

  const fs::path dir = r.config.output_dir;
  fs::create_directories(dir / "predictions");
  for (const ScoredImage& s : scored) write_maps(dir / "predictions", s.id, s.probability, threshold);
  const std::string table = format_table(report);
  write_text(dir / "metrics.txt", table);
  write_text(dir / "metrics.kv", format_structured(report));
  out << table;
  out << "wrote " << (dir / "metrics.txt").string() << ", " << (dir / "metrics.kv").string() << ", "
      << scored.size() << " masks under " << (dir / "predictions").string() << '\n';
  return ok;
}

int cmd_predict(const Common& common, const std::string& checkpoint, const std::string& input, double threshold,
                std::ostream& out) {
  check_threshold(threshold);
  const Resolved r = resolve(common);
  const Image img = read_image(input);
  FundusSample sample;
  sample.id = fs::path(input).stem().string();
  sample.image = image_to_tensor(img);
  sample.mask = Tensor(Shape{1, img.height, img.width});
  sample.original_size = Extent{img.height, img.width};
  CarUnet net = load_network(checkpoint, r);
  const Tensor probability = quantize16(predict_probability(net, sample, padded_size(r.config.data.kind)));

  const fs::path dir = r.config.output_dir;
  fs::create_directories(dir);
  write_maps(dir, sample.id, probability, threshold);
  out << "wrote " << (dir / (sample.id + "_prob.png")).string() << " and " << (dir / (sample.id + "_mask.png")).string()
      << " (" << img.width << "x" << img.height << ")\n";
  return ok;
}

int cmd_make_synthetic(std::size_t count, std::size_t size, std::uint64_t seed, const std::string& output,
                       std::ostream& out) {
  if (count == 0) fail(ErrorKind::usage, "count must be at least 1");
  Rng rng(seed);
  const std::vector<FundusSample> samples = make_synthetic(count, size, rng);
  const fs::path dir = output;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  for (const FundusSample& s : samples) {
    const std::size_t plane = size * size;
    std::vector<std::uint8_t> rgb(3 * plane), mask(plane);
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        rgb[3 * p + c] = static_cast<std::uint8_t>(std::lround(255.0 * s.image.data()[c * plane + p]));
      }
      mask[p] = s.mask.data()[p] > 0 ? 255 : 0;
    }
    write_png_rgb8(dir / "images" / (s.id + ".png"), size, size, rgb);
    write_png_gray8(dir / "masks" / (s.id + ".png"), size, size, mask);
  }
  out << "wrote " << count << " synthetic " << size << "x" << size << " images to " << dir.string() << '\n';
  return ok;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return usage;
    case ErrorKind::data:
    case ErrorKind::shape: return data;
    case ErrorKind::numeric:
    case ErrorKind::state: return numeric;
  }
  return numeric;
}

std::string one_line(std::string text) {
  std::string outs;
  bool space = false;
  for (char ch : text) {
    if (ch == '\n') {
      if (!outs.empty() && outs.back() != ':') outs += ";";
      space = true;
      continue;
    }
    if (space && ch == ' ') continue;
    if (space) outs += ' ';
    space = false;
    outs += ch;
  }
  return outs;
}

int report(std::ostream& err, std::string_view category, const std::string& detail, int code) {
  err << "error: " << category << ": " << one_line(detail) << '\n';
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CAR-UNet retinal vessel segmentation", "carunet"};
  app.require_subcommand(1);

  Common common;
  bool quiet = false;
  std::string checkpoint, predictions, input;
  double threshold = 0.5;
  SelfcheckOptions self;
  std::size_t count = 20, size = 64;
  std::uint64_t synth_seed = 0;
  std::string synth_out;

  CLI::App* train_cmd = app.add_subcommand("train", "Train a network and write checkpoint, history and config");
  add_common(train_cmd, common);
  train_cmd->add_flag("--quiet", quiet, "Do not print per-epoch lines");

  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a checkpoint (or saved probability maps) on the test split");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint written by train");
  eval_cmd->add_option("--predictions", predictions, "Directory of <id>_prob.png maps to score instead");
  eval_cmd->add_option("--threshold", threshold, "Vessel threshold on the probability")->capture_default_str();

  CLI::App* predict_cmd = app.add_subcommand("predict", "Segment one image");
  add_common(predict_cmd, common);
  predict_cmd->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  predict_cmd->add_option("--input", input, "PNG, PPM or PGM image")->required();
  predict_cmd->add_option("--threshold", threshold, "Vessel threshold on the probability")->capture_default_str();

  CLI::App* self_cmd = app.add_subcommand("selfcheck", "Run gradient checks, oracles and statistical tests");
  self_cmd->add_option("--seeds", self.seeds, "Random seeds per gradient check")->capture_default_str();
  self_cmd->add_option("--seed", self.seed, "Seed for the oracle cases")->capture_default_str();

  CLI::App* synth_cmd = app.add_subcommand("make-synthetic", "Write a synthetic dataset (images/ and masks/)");
  synth_cmd->add_option("--count", count, "Number of images")->capture_default_str();
  synth_cmd->add_option("--size", size, "Width and height in pixels")->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--output", synth_out, "Destination directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return report(err, "usage", e.what(), usage);
  }

  try {
    if (*train_cmd) return cmd_train(common, quiet, out);
    if (*eval_cmd) return cmd_eval(common, checkpoint, predictions, threshold, out);
    if (*predict_cmd) return cmd_predict(common, checkpoint, input, threshold, out);
    if (*self_cmd) return run_selfcheck(out, self) == 0 ? ok : numeric;
    if (*synth_cmd) return cmd_make_synthetic(count, size, synth_seed, synth_out, out);
  } catch (const Error& e) {
    return report(err, to_string(e.kind()), e.what(), exit_code(e.kind()));
  } catch (const fs::filesystem_error& e) {
    return report(err, "data", e.what(), data);
  } catch (const std::exception& e) {
    return report(err, "state", e.what(), numeric);
  }
  return usage;
}

}  // namespace carunet::cli
