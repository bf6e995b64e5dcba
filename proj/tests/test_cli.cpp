#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "catnet/cli.hpp"
#include "catnet/image.hpp"
#include "catnet/metrics.hpp"
#include "catnet/model.hpp"

using namespace catnet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

long long count_lines(const std::string& text) {
  long long n = 0;
  for (char c : text) {
    if (c == '\n') ++n;
  }
  return n;
}

void make_image(const std::string& path, int tint) {
  ImageU8 img;
  img.width = 8;
  img.height = 8;
  img.rgb.resize(3 * 64);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.rgb[static_cast<std::size_t>(3 * (y * 8 + x) + c)] =
            static_cast<std::uint8_t>((x * 31 + y * 7 + c * 13 + tint * 41) % 256);
      }
    }
  }
  write_ppm(path, img);
}

// Workspace with a manifest of per-class images, split tags unassigned.
std::string make_corpus(const std::string& dir, int per_class) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string csv = "path,label,source,split\n";
  int tint = 0;
  for (const std::string& label : taxonomy7()) {
    for (int i = 0; i < per_class; ++i) {
      std::string name = label + "-" + std::to_string(i) + ".ppm";
      make_image(dir + "/" + name, tint++);
      csv += name + "," + label + ",consensus,unassigned\n";
    }
  }
  std::string manifest = dir + "/manifest.csv";
  spit(manifest, csv);
  return manifest;
}

std::string tiny_model_text() {
  ModelConfig cfg;
  cfg.in_channels = 3;
  cfg.in_height = 8;
  cfg.in_width = 8;
  cfg.num_classes = 7;
  cfg.stages = {
      {StageKind::ConvStem, 1, 4, 1},
      {StageKind::Mbconv, 1, 6, 2},
      {StageKind::Transformer, 1, 6, 1},
  };
  return cfg.to_text();
}

int cli(std::vector<std::string> args) { return run_cli(args); }

}  // namespace

TEST_CASE("usage and help exit codes") {
  CHECK(cli({}) == 1);
  CHECK(cli({"frobnicate"}) == 1);
  CHECK(cli({"train"}) == 1);
  CHECK(cli({"split", "--manifest", "m.csv", "--bogus"}) == 1);
  CHECK(cli({"--help"}) == 0);
  CHECK(cli({"eval", "--help"}) == 0);
}

TEST_CASE("split rewrites deterministically and replays from run-meta") {
  const std::string dir = "cli-split";
  const std::string manifest = make_corpus(dir, 6);

  REQUIRE(cli({"split", "--manifest", manifest, "--test-per-group", "1", "--val-fraction",
               "0.25", "--seed", "9", "--out", dir}) == 0);
  const std::string first = slurp(manifest);
  CHECK(first.find("unassigned") == std::string::npos);
  CHECK(first.find(",test\n") != std::string::npos);

  REQUIRE(cli({"split", "--manifest", manifest, "--test-per-group", "1", "--val-fraction",
               "0.25", "--seed", "9", "--out", dir}) == 0);
  CHECK(slurp(manifest) == first);

  const std::string meta = slurp(dir + "/run-meta.txt");
  CHECK(meta.find("seed=9") != std::string::npos);
  CHECK(meta.find("test-per-group=1") != std::string::npos);
  CHECK(meta.find("val-fraction=0.25") != std::string::npos);

  REQUIRE(cli({"split", "--manifest", manifest, "--test-per-group", "1", "--val-fraction",
               "0.25", "--seed", "10", "--out", dir + "/alt"}) == 0);
  CHECK(slurp(manifest) != first);

  REQUIRE(cli({"split", "--config", dir + "/run-meta.txt"}) == 0);
  CHECK(slurp(manifest) == first);

  fs::remove_all(dir);
}

TEST_CASE("train, eval, predict, gradcam end to end") {
  const std::string dir = "cli-e2e";
  const std::string manifest = make_corpus(dir, 3);
  spit(dir + "/model.txt", tiny_model_text());

  REQUIRE(cli({"split", "--manifest", manifest, "--test-per-group", "1", "--val-fraction",
               "0.25", "--seed", "5", "--out", dir}) == 0);

  std::vector<std::string> train_args = {
      "train", "--manifest", manifest,          "--out",    dir + "/run1",
      "--model-config",      dir + "/model.txt", "--seed",  "3",
      "--epochs",            "2",               "--batch-size", "4",
      "--lr",                "0.01"};
  REQUIRE(cli(train_args) == 0);
  const std::string log1 = slurp(dir + "/run1/training-log.csv");
  CHECK(count_lines(log1) == 3);
  CHECK(log1.rfind("epoch,train_loss,val_loss,val_precision_weighted,val_recall_weighted\n",
                   0) == 0);
  CHECK(fs::exists(dir + "/run1/run-meta.txt"));

  Model reloaded = load_checkpoint(dir + "/run1/model.catn");
  CHECK(reloaded.config().num_classes == 7);
  CHECK(reloaded.config().in_height == 8);

  train_args[4] = dir + "/run2";
  REQUIRE(cli(train_args) == 0);
  CHECK(slurp(dir + "/run2/training-log.csv") == log1);
  CHECK(slurp(dir + "/run2/model.catn") == slurp(dir + "/run1/model.catn"));

  const std::string ckpt = dir + "/run1/model.catn";
  REQUIRE(cli({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--out", dir + "/eval1"}) ==
          0);
  const std::string report = slurp(dir + "/eval1/report.csv");
  CHECK(count_lines(report) == 10);
  CHECK(count_lines(slurp(dir + "/eval1/confusion.csv")) == 8);
  for (const std::string& cls : taxonomy7()) {
    CHECK(fs::exists(dir + "/eval1/pr-" + cls + ".csv"));
  }

  REQUIRE(cli({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--out", dir + "/eval2"}) ==
          0);
  CHECK(slurp(dir + "/eval2/report.csv") == report);

  REQUIRE(cli({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--out", dir + "/eval3",
               "--map3"}) == 0);
  CHECK(count_lines(slurp(dir + "/eval3/confusion.csv")) == 4);
  CHECK(count_lines(slurp(dir + "/eval3/report.csv")) == 6);
  CHECK(fs::exists(dir + "/eval3/pr-melanoma.csv"));

  REQUIRE(cli({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--out", dir + "/evalp",
               "--plots"}) == 0);
  CHECK(fs::exists(dir + "/evalp/confusion.png"));
  ImageU8 heat = read_image_rgb8(dir + "/evalp/confusion.png");
  CHECK(heat.width == 7 * 32);
  CHECK(fs::exists(dir + "/evalp/pr-melanoma.png"));

  const std::string img = dir + "/melanoma-0.ppm";
  REQUIRE(cli({"predict", "--checkpoint", ckpt, "--image", img, "--out", dir + "/pred"}) == 0);
  const std::string pred = slurp(dir + "/pred/predictions.csv");
  REQUIRE(count_lines(pred) == 2);
  CHECK(pred.rfind("path,actinic-keratosis,", 0) == 0);
  {
    std::istringstream rows(pred);
    std::string header, row;
    std::getline(rows, header);
    std::getline(rows, row);
    std::istringstream cells(row);
    std::string cell;
    std::getline(cells, cell, ',');
    CHECK(cell == img);
    double total = 0.0;
    while (std::getline(cells, cell, ',')) total += std::stod(cell);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }

  REQUIRE(cli({"gradcam", "--checkpoint", ckpt, "--image", img, "--out", dir + "/cam"}) == 0);
  CHECK(fs::exists(dir + "/cam/melanoma-0-gradcam.png"));
  ImageU8 overlay = read_image_rgb8(dir + "/cam/melanoma-0-gradcam.png");
  CHECK(overlay.width == 8);
  CHECK(overlay.height == 8);
  const std::string cam_csv = slurp(dir + "/cam/melanoma-0-gradcam.csv");
  CHECK(cam_csv.rfind("row,col,value\n", 0) == 0);
  CHECK(count_lines(cam_csv) == 1 + 4 * 4);

  REQUIRE(cli({"gradcam", "--checkpoint", ckpt, "--image", img, "--out", dir + "/cam2",
               "--class", "3"}) == 0);
  CHECK(cli({"gradcam", "--checkpoint", ckpt, "--image", img, "--out", dir + "/cam3", "--class",
             "99"}) == 1);

  fs::remove_all(dir);
}

TEST_CASE("exit codes separate validation from runtime failures") {
  const std::string dir = "cli-codes";
  fs::remove_all(dir);
  fs::create_directories(dir);

  CHECK(cli({"predict", "--checkpoint", dir + "/missing.catn", "--image", "x.ppm", "--out",
             dir}) == 2);

  make_image(dir + "/img.ppm", 1);
  spit(dir + "/model.txt", tiny_model_text());
  spit(dir + "/manifest.csv",
       "path,label,source,split\n"
       "img.ppm,melanoma,consensus,train\n"
       "gone.ppm,nevus,consensus,val\n");
  CHECK(cli({"train", "--manifest", dir + "/manifest.csv", "--out", dir, "--epochs", "1",
             "--model-config", dir + "/model.txt"}) == 2);

  ModelConfig three;
  three.in_channels = 3;
  three.in_height = 8;
  three.in_width = 8;
  three.num_classes = 3;
  three.stages = {{StageKind::ConvStem, 1, 4, 1}, {StageKind::Mbconv, 1, 4, 1}};
  Model mini = build_model(three);
  save_checkpoint(mini, dir + "/three.catn");
  CHECK(cli({"eval", "--checkpoint", dir + "/three.catn", "--manifest", dir + "/manifest.csv",
             "--out", dir}) == 1);

  CHECK(cli({"train", "--manifest", dir + "/manifest.csv", "--out", dir, "--class-weighting",
             "sometimes"}) == 1);

  spit(dir + "/small.csv",
       "path,label,source,split\n"
       "img.ppm,melanoma,consensus,unassigned\n");
  CHECK(cli({"split", "--manifest", dir + "/small.csv", "--test-per-group", "5", "--out", dir}) ==
        1);

  fs::remove_all(dir);
}

TEST_CASE("augment-preview is deterministic and replayable") {
  const std::string dir = "cli-preview";
  fs::remove_all(dir);
  fs::create_directories(dir);
  make_image(dir + "/lesion.ppm", 4);

  REQUIRE(cli({"augment-preview", "--image", dir + "/lesion.ppm", "-n", "3", "--seed", "1",
               "--out", dir + "/p1"}) == 0);
  std::vector<std::string> first;
  for (int i = 0; i < 3; ++i) {
    first.push_back(slurp(dir + "/p1/lesion-aug-" + std::to_string(i) + ".png"));
  }
  CHECK_FALSE(fs::exists(dir + "/p1/lesion-aug-3.png"));

  REQUIRE(cli({"augment-preview", "--image", dir + "/lesion.ppm", "-n", "3", "--seed", "1",
               "--out", dir + "/p1"}) == 0);
  for (int i = 0; i < 3; ++i) {
    CHECK(slurp(dir + "/p1/lesion-aug-" + std::to_string(i) + ".png") ==
          first[static_cast<std::size_t>(i)]);
  }

  REQUIRE(cli({"augment-preview", "--config", dir + "/p1/run-meta.txt"}) == 0);
  for (int i = 0; i < 3; ++i) {
    CHECK(slurp(dir + "/p1/lesion-aug-" + std::to_string(i) + ".png") ==
          first[static_cast<std::size_t>(i)]);
  }

  REQUIRE(cli({"augment-preview", "--image", dir + "/lesion.ppm", "-n", "3", "--seed", "2",
               "--out", dir + "/p2"}) == 0);
  CHECK(slurp(dir + "/p2/lesion-aug-0.png") != first[0]);

  CHECK(cli({"augment-preview", "--image", dir + "/lesion.ppm", "-n", "0", "--out",
             dir + "/p3"}) == 1);

  fs::remove_all(dir);
}
