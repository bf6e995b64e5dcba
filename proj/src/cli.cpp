#include "catnet/cli.hpp"

#include <CLI11.hpp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "catnet/augment.hpp"
#include "catnet/dataset.hpp"
#include "catnet/errors.hpp"
#include "catnet/gradcam.hpp"
#include "catnet/image.hpp"
#include "catnet/metrics.hpp"
#include "catnet/model.hpp"
#include "catnet/plots.hpp"
#include "catnet/training.hpp"

namespace catnet {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  f.flush();
  if (!f) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// Ordered key=value capture of the resolved configuration. Every command
// writes one next to its artifacts; feeding it back through --config replays
// the run.
class RunMeta {
 public:
  explicit RunMeta(std::string command) : command_(std::move(command)) {}

  void add(const std::string& key, const std::string& value) {
    rows_.emplace_back(key, value);
  }
  void add(const std::string& key, const char* value) { add(key, std::string(value)); }
  void add(const std::string& key, double value) { add(key, fmt(value)); }
  void add(const std::string& key, int value) { add(key, std::to_string(value)); }
  void add(const std::string& key, std::uint64_t value) { add(key, std::to_string(value)); }
  void add(const std::string& key, bool value) { add(key, value ? "true" : "false"); }

  void add_augment(const AugmentationConfig& aug) {
    add("rotation-max", aug.rotation_max);
    add("zoom-max", aug.zoom_max);
    add("contrast-lo", aug.contrast_lo);
    add("contrast-hi", aug.contrast_hi);
    add("brightness-lo", aug.brightness_lo);
    add("brightness-hi", aug.brightness_hi);
    add("saturation-lo", aug.saturation_lo);
    add("saturation-hi", aug.saturation_hi);
  }

  void write(const std::string& out_dir) const {
    std::string text = "# replay with: catnet " + command_ + " --config run-meta.txt\n";
    text += "[" + command_ + "]\n";
    for (const auto& [key, value] : rows_) {
      text += key;
      text += '=';
      text += value;
      text += '\n';
    }
    write_text(fs::path(out_dir) / "run-meta.txt", text);
  }

 private:
  std::string command_;
  std::vector<std::pair<std::string, std::string>> rows_;
};

int label_index(const std::string& label) {
  const auto& t7 = taxonomy7();
  for (std::size_t i = 0; i < t7.size(); ++i) {
    if (t7[i] == label) return static_cast<int>(i);
  }
  throw TaxonomyError("unknown label: " + label);
}

fs::path resolve_against(const fs::path& base_dir, const std::string& path) {
  fs::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

// Decodes every record of one split; relative image paths resolve against the
// manifest's directory.
std::vector<Sample> load_split(const DatasetManifest& manifest, const std::string& manifest_path,
                               const std::string& split, const ModelConfig& cfg) {
  const fs::path dir = fs::path(manifest_path).parent_path();
  std::vector<Sample> out;
  for (std::size_t idx : manifest.subset(split)) {
    const ManifestRecord& rec = manifest.records[idx];
    Sample s;
    s.image = decode_image(resolve_against(dir, rec.path).string());
    if (s.image.shape() != Shape{cfg.in_channels, cfg.in_height, cfg.in_width}) {
      throw ShapeError("image " + rec.path + " does not match the model input geometry");
    }
    s.label = label_index(rec.label);
    out.push_back(std::move(s));
  }
  return out;
}

std::string file_stem(const std::string& path) { return fs::path(path).stem().string(); }

std::vector<std::string> output_class_names(const ModelConfig& cfg) {
  if (cfg.num_classes == static_cast<int>(taxonomy7().size())) return taxonomy7();
  std::vector<std::string> names;
  for (int i = 0; i < cfg.num_classes; ++i) names.push_back("class" + std::to_string(i));
  return names;
}

void add_augment_options(CLI::App* cmd, AugmentationConfig& aug) {
  cmd->add_option("--rotation-max", aug.rotation_max,
                  "Max rotation, as a fraction of a full turn");
  cmd->add_option("--zoom-max", aug.zoom_max, "Max zoom deviation from 1");
  cmd->add_option("--contrast-lo", aug.contrast_lo, "Contrast factor lower bound");
  cmd->add_option("--contrast-hi", aug.contrast_hi, "Contrast factor upper bound");
  cmd->add_option("--brightness-lo", aug.brightness_lo, "Brightness factor lower bound");
  cmd->add_option("--brightness-hi", aug.brightness_hi, "Brightness factor upper bound");
  cmd->add_option("--saturation-lo", aug.saturation_lo, "Saturation factor lower bound");
  cmd->add_option("--saturation-hi", aug.saturation_hi, "Saturation factor upper bound");
}

struct SplitArgs {
  std::string manifest;
  std::string out = ".";
  std::uint64_t seed = 0;
  int test_per_group = 100;
  double val_fraction = 0.2;
};

void run_split(const SplitArgs& a) {
  DatasetManifest manifest = load_manifest(a.manifest);
  DatasetManifest assigned = assign_splits(manifest, a.test_per_group, a.val_fraction, a.seed);
  save_manifest(assigned, a.manifest);
  ensure_dir(a.out);
  RunMeta meta("split");
  meta.add("manifest", a.manifest);
  meta.add("out", a.out);
  meta.add("seed", a.seed);
  meta.add("test-per-group", a.test_per_group);
  meta.add("val-fraction", a.val_fraction);
  meta.write(a.out);
  std::printf("split: %zu train / %zu val / %zu test -> %s\n",
              assigned.subset("train").size(), assigned.subset("val").size(),
              assigned.subset("test").size(), a.manifest.c_str());
}

struct TrainArgs {
  std::string manifest;
  std::string out = ".";
  std::string checkpoint;
  std::string model_config;
  std::uint64_t seed = 0;
  int epochs = 10;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::string class_weighting = "inverse-frequency";
  bool no_augment = false;
  AugmentationConfig aug;
};

void run_train(const TrainArgs& a) {
  ModelConfig mc =
      a.model_config.empty() ? ModelConfig::desk_default() : ModelConfig::from_text(read_text(a.model_config));
  mc.seed = a.seed;

  DatasetManifest manifest = load_manifest(a.manifest);
  std::vector<Sample> train_set = load_split(manifest, a.manifest, "train", mc);
  std::vector<Sample> val_set = load_split(manifest, a.manifest, "val", mc);
  if (train_set.empty()) throw EmptyDatasetError("manifest has no train records");
  if (val_set.empty()) throw EmptyDatasetError("manifest has no val records");

  ensure_dir(a.out);
  const std::string checkpoint =
      a.checkpoint.empty() ? (fs::path(a.out) / "model.catn").string() : a.checkpoint;
  ensure_dir(fs::path(checkpoint).parent_path().string());

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.lr = a.lr;
  tc.momentum = a.momentum;
  tc.weight_decay = a.weight_decay;
  tc.seed = a.seed;
  tc.checkpoint_path = checkpoint;
  tc.inverse_frequency = a.class_weighting == "inverse-frequency";
  tc.augment_train = !a.no_augment;
  tc.augmentation = a.aug;
  tc.augmentation.seed = a.seed;

  Model model = build_model(mc);
  FitResult result = fit(model, train_set, val_set, tc);
  write_text(fs::path(a.out) / "training-log.csv", training_log_csv(result.log));

  RunMeta meta("train");
  meta.add("manifest", a.manifest);
  meta.add("out", a.out);
  meta.add("checkpoint", checkpoint);
  if (!a.model_config.empty()) meta.add("model-config", a.model_config);
  meta.add("seed", a.seed);
  meta.add("epochs", a.epochs);
  meta.add("batch-size", a.batch_size);
  meta.add("lr", a.lr);
  meta.add("momentum", a.momentum);
  meta.add("weight-decay", a.weight_decay);
  meta.add("class-weighting", a.class_weighting);
  meta.add("no-augment", a.no_augment);
  meta.add_augment(tc.augmentation);
  meta.write(a.out);

  std::printf("train: best epoch %d, val loss %s, checkpoint %s\n", result.best_epoch,
              fmt(result.best_val_loss).c_str(), checkpoint.c_str());
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out = ".";
  std::string split = "test";
  int batch_size = 32;
  bool map3 = false;
  bool plots = false;
};

void run_eval(const EvalArgs& a) {
  Model model = load_checkpoint(a.checkpoint);
  if (model.config().num_classes != static_cast<int>(taxonomy7().size())) {
    throw ConfigError("eval needs a checkpoint trained on the 7-class taxonomy");
  }
  DatasetManifest manifest = load_manifest(a.manifest);
  std::vector<Sample> samples = load_split(manifest, a.manifest, a.split, model.config());
  if (samples.empty()) throw EmptyDatasetError("no records carry split " + a.split);

  Evaluation eval = evaluate(model, samples, taxonomy7(), a.map3, a.batch_size);

  ensure_dir(a.out);
  const fs::path out(a.out);
  write_text(out / "report.csv", report_csv(eval.report));
  write_text(out / "confusion.csv", confusion_csv(eval.confusion));
  for (const PRCurve& curve : eval.curves) {
    write_text(out / ("pr-" + curve.class_name + ".csv"), curve_csv(curve));
  }
  if (a.plots) {
    for (const PRCurve& curve : eval.curves) {
      write_png((out / ("pr-" + curve.class_name + ".png")).string(), pr_curve_plot(curve));
    }
    write_png((out / "confusion.png").string(), confusion_plot(eval.confusion));
  }

  RunMeta meta("eval");
  meta.add("checkpoint", a.checkpoint);
  meta.add("manifest", a.manifest);
  meta.add("out", a.out);
  meta.add("split", a.split);
  meta.add("batch-size", a.batch_size);
  meta.add("map3", a.map3);
  meta.add("plots", a.plots);
  meta.write(a.out);

  std::printf("eval: %zu samples, weighted precision %s recall %s ap %s\n", samples.size(),
              fmt(eval.report.weighted.precision).c_str(), fmt(eval.report.weighted.recall).c_str(),
              fmt(eval.report.weighted.ap).c_str());
}

struct PredictArgs {
  std::string checkpoint;
  std::string out = ".";
  std::vector<std::string> images;
};

void run_predict(const PredictArgs& a) {
  Model model = load_checkpoint(a.checkpoint);
  const std::vector<std::string> classes = output_class_names(model.config());
  const ModelConfig& cfg = model.config();

  std::string csv = "path";
  for (const std::string& name : classes) csv += "," + name;
  csv += '\n';
  for (const std::string& path : a.images) {
    Tensor image = decode_image(path);
    if (image.shape() != Shape{cfg.in_channels, cfg.in_height, cfg.in_width}) {
      throw ShapeError("image " + path + " does not match the model input geometry");
    }
    csv += path;
    for (double p : model.predict_proba(image)) csv += "," + fmt(p);
    csv += '\n';
  }

  ensure_dir(a.out);
  write_text(fs::path(a.out) / "predictions.csv", csv);
  std::fputs(csv.c_str(), stdout);

  RunMeta meta("predict");
  meta.add("checkpoint", a.checkpoint);
  meta.add("out", a.out);
  for (const std::string& path : a.images) meta.add("image", path);
  meta.write(a.out);
}

struct GradcamArgs {
  std::string checkpoint;
  std::string out = ".";
  std::vector<std::string> images;
  int target = -1;
};

void run_gradcam(const GradcamArgs& a) {
  Model model = load_checkpoint(a.checkpoint);
  const ModelConfig& cfg = model.config();
  ensure_dir(a.out);
  for (const std::string& path : a.images) {
    Tensor image = decode_image(path);
    if (image.shape() != Shape{cfg.in_channels, cfg.in_height, cfg.in_width}) {
      throw ShapeError("image " + path + " does not match the model input geometry");
    }
    int target = a.target;
    if (target < 0) {
      const std::vector<double> probs = model.predict_proba(image);
      target = 0;
      for (std::size_t k = 1; k < probs.size(); ++k) {
        if (probs[k] > probs[static_cast<std::size_t>(target)]) target = static_cast<int>(k);
      }
    }
    GradCamMap map = compute_gradcam(model, image, target);
    const std::string stem = file_stem(path);
    const fs::path png = fs::path(a.out) / (stem + "-gradcam.png");
    render_overlay(map, image, png.string());
    write_text(fs::path(a.out) / (stem + "-gradcam.csv"), heatmap_csv(map));
    std::printf("gradcam: %s class %d (%s) -> %s\n", path.c_str(), map.target_class,
                map.source_layer.c_str(), png.string().c_str());
  }

  RunMeta meta("gradcam");
  meta.add("checkpoint", a.checkpoint);
  meta.add("out", a.out);
  for (const std::string& path : a.images) meta.add("image", path);
  meta.add("class", a.target);
  meta.write(a.out);
}

struct PreviewArgs {
  std::string image;
  std::string out = ".";
  int count = 5;
  std::uint64_t seed = 0;
  AugmentationConfig aug;
};

void run_preview(const PreviewArgs& a) {
  if (a.count < 1) throw ConfigError("preview count must be at least 1");
  AugmentationConfig aug = a.aug;
  aug.seed = a.seed;
  aug.validate();
  Tensor image = decode_image(a.image);
  ensure_dir(a.out);
  const std::string stem = file_stem(a.image);
  for (int i = 0; i < a.count; ++i) {
    Tensor variant = augment(image, aug, static_cast<std::uint64_t>(i));
    const fs::path png = fs::path(a.out) / (stem + "-aug-" + std::to_string(i) + ".png");
    write_png(png.string(), to_image_u8(variant));
  }

  RunMeta meta("augment-preview");
  meta.add("image", a.image);
  meta.add("out", a.out);
  meta.add("count", a.count);
  meta.add("seed", a.seed);
  meta.add_augment(aug);
  meta.write(a.out);
  std::printf("augment-preview: %d variants of %s -> %s\n", a.count, a.image.c_str(),
              a.out.c_str());
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"catnet: hybrid conv/attention skin-lesion classifier"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "",
                 "key=value file with a [command] section; explicit flags win");
  app.allow_config_extras(false);

  SplitArgs sp;
  CLI::App* split = app.add_subcommand("split", "Assign split tags and rewrite the manifest");
  split->add_option("--manifest", sp.manifest, "Dataset manifest CSV")->required();
  split->add_option("--out", sp.out, "Directory for run-meta.txt");
  split->add_option("--seed", sp.seed, "Split seed");
  split->add_option("--test-per-group", sp.test_per_group, "Test records per coarse group");
  split->add_option("--val-fraction", sp.val_fraction, "Fraction of the remainder for validation");
  split->callback([&sp] { run_split(sp); });

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "Fit a model and write log + checkpoint");
  train->add_option("--manifest", tr.manifest, "Dataset manifest CSV")->required();
  train->add_option("--out", tr.out, "Output directory");
  train->add_option("--checkpoint", tr.checkpoint, "Checkpoint path (default <out>/model.catn)");
  train->add_option("--model-config", tr.model_config,
                    "Model architecture text file; defaults to the desk architecture");
  train->add_option("--seed", tr.seed, "Master seed for init, shuffling, augmentation");
  train->add_option("--epochs", tr.epochs, "Training epochs");
  train->add_option("--batch-size", tr.batch_size, "Batch size");
  train->add_option("--lr", tr.lr, "Learning rate");
  train->add_option("--momentum", tr.momentum, "SGD momentum");
  train->add_option("--weight-decay", tr.weight_decay, "L2 weight decay");
  train->add_option("--class-weighting", tr.class_weighting, "Loss class weighting")
      ->check(CLI::IsMember({"inverse-frequency", "none"}));
  train->add_flag("--no-augment", tr.no_augment, "Disable training-set augmentation");
  add_augment_options(train, tr.aug);
  train->callback([&tr] { run_train(tr); });

  EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write metric CSVs");
  eval->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  eval->add_option("--manifest", ev.manifest, "Dataset manifest CSV")->required();
  eval->add_option("--out", ev.out, "Output directory");
  eval->add_option("--split", ev.split, "Split to evaluate")
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--batch-size", ev.batch_size, "Inference batch size");
  eval->add_flag("--map3", ev.map3, "Collapse to the 3-class protocol");
  eval->add_flag("--plots", ev.plots, "Also write PNG plots");
  eval->callback([&ev] { run_eval(ev); });

  PredictArgs pd;
  CLI::App* predict = app.add_subcommand("predict", "Per-image class probabilities");
  predict->add_option("--checkpoint", pd.checkpoint, "Model checkpoint")->required();
  predict->add_option("--out", pd.out, "Output directory");
  predict->add_option("--image", pd.images, "Image file (repeatable)")->required();
  predict->callback([&pd] { run_predict(pd); });

  GradcamArgs gc;
  CLI::App* gradcam = app.add_subcommand("gradcam", "Relevance overlay PNG per image");
  gradcam->add_option("--checkpoint", gc.checkpoint, "Model checkpoint")->required();
  gradcam->add_option("--out", gc.out, "Output directory");
  gradcam->add_option("--image", gc.images, "Image file (repeatable)")->required();
  gradcam->add_option("--class", gc.target, "Target class index; default: predicted class");
  gradcam->callback([&gc] { run_gradcam(gc); });

  PreviewArgs pv;
  CLI::App* preview = app.add_subcommand("augment-preview", "Write augmented variants of one image");
  preview->add_option("--image", pv.image, "Image file")->required();
  preview->add_option("--out", pv.out, "Output directory");
  preview->add_option("-n,--count", pv.count, "Number of variants");
  preview->add_option("--seed", pv.seed, "Augmentation seed");
  add_augment_options(preview, pv.aug);
  preview->callback([&pv] { run_preview(pv); });

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("catnet");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const RuntimeFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}

}  // namespace catnet
