#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "catnet/gradcheck.hpp"
#include "catnet/training.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace catnet;

namespace {

ModelConfig tiny_config(int classes = 2) {
  ModelConfig cfg;
  cfg.in_channels = 3;
  cfg.in_height = 8;
  cfg.in_width = 8;
  cfg.num_classes = classes;
  cfg.seed = 9;
  cfg.stages = {
      {StageKind::ConvStem, 1, 4, 2},
      {StageKind::Mbconv, 1, 8, 2},
      {StageKind::Transformer, 1, 8, 1},
  };
  return cfg;
}

TrainConfig quiet_config() {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 4;
  cfg.augment_train = false;
  cfg.inverse_frequency = false;
  cfg.augmentation.seed = 4;
  return cfg;
}

}  // namespace

TEST_CASE("inverse frequency weights") {
  const std::vector<double> w = inverse_frequency_weights({10, 30});
  CHECK(w[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(w[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  // Sample-weighted mean is one: the weighting rebalances without rescaling.
  CHECK((10 * w[0] + 30 * w[1]) / 40.0 == doctest::Approx(1.0).epsilon(1e-15));

  const std::vector<double> z = inverse_frequency_weights({5, 0, 5});
  CHECK(z[1] == 0.0);
  CHECK(z[0] == doctest::Approx(10.0 / (3.0 * 5.0)).epsilon(1e-15));

  CHECK_THROWS_AS(inverse_frequency_weights({}), SizeError);
  CHECK_THROWS_AS(inverse_frequency_weights({0, 0}), EmptyDatasetError);
  CHECK_THROWS_AS(inverse_frequency_weights({3, -1}), SizeError);
}

TEST_CASE("cross entropy closed forms") {
  Tensor uniform = Tensor::from_values({1, 2}, {0.0, 0.0});
  CHECK(cross_entropy(uniform, {0}).at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Tensor skewed = Tensor::from_values({1, 2}, {1.0, 0.0});
  CHECK(cross_entropy(skewed, {1}).at(0) ==
        doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-14));

  // Confident and correct: loss collapses toward zero.
  Tensor confident = Tensor::from_values({1, 2}, {30.0, 0.0});
  CHECK(cross_entropy(confident, {0}).at(0) < 1e-12);

  // Batch mean and per-class weights.
  Tensor pair = Tensor::from_values({2, 2}, {0.0, 0.0, 0.0, 0.0});
  CHECK(cross_entropy(pair, {0, 1}).at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy(uniform, {0}, {3.0, 1.0}).at(0) ==
        doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-15));

  // Extreme logits stay finite through log-sum-exp.
  Tensor huge = Tensor::from_values({1, 2}, {1000.0, -1000.0});
  CHECK(std::isfinite(cross_entropy(huge, {1}).at(0)));

  CHECK_THROWS_AS(cross_entropy(uniform, {2}), IndexError);
  CHECK_THROWS_AS(cross_entropy(uniform, {0, 1}), SizeError);
  CHECK_THROWS_AS(cross_entropy(uniform, {0}, {1.0}), SizeError);
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2}), {0}), RankError);
}

TEST_CASE("cross entropy gradient") {
  // Uniform two-way logits, label 0: d = (p - onehot)/B = [-0.5, 0.5].
  Graph g;
  Tensor x = Tensor::from_values({1, 2}, {0.0, 0.0});
  Tensor tracked = g.param(x);
  Tensor loss = cross_entropy(tracked, {0});
  g.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(x.grad()[1] == doctest::Approx(0.5).epsilon(1e-15));

  std::mt19937_64 rg(41);
  for (int trial = 0; trial < 5; ++trial) {
    const int B = 2 + static_cast<int>(rng::below(rg, 3));
    const int K = 2 + static_cast<int>(rng::below(rg, 4));
    std::vector<int> labels;
    std::vector<double> weights;
    for (int i = 0; i < B; ++i) labels.push_back(static_cast<int>(rng::below(rg, K)));
    for (int k = 0; k < K; ++k) weights.push_back(0.5 + rng::uniform01(rg));
    Tensor point = oracle::random_tensor({B, K}, rg, -2.0, 2.0);
    GradCheckResult r = gradient_check(
        [&](Graph&, const Tensor& t) { return cross_entropy(t, labels, weights); }, point);
    CHECK(r.max_rel_err < 1e-5);
  }
}

TEST_CASE("sgd update rule") {
  std::vector<double> p = {1.0};
  std::vector<double> v;
  sgd_update(p, {0.0}, v, 0.1, 0.0, 0.0);
  CHECK(p[0] == 1.0);

  p = {1.0};
  v.clear();
  sgd_update(p, {1.0}, v, 0.1, 0.0, 0.0);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-15));

  // Momentum recurrence: v1=1, p=-0.1; v2=1.9, p=-0.29.
  p = {0.0};
  v.clear();
  sgd_update(p, {1.0}, v, 0.1, 0.9, 0.0);
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-12));
  sgd_update(p, {1.0}, v, 0.1, 0.9, 0.0);
  CHECK(p[0] == doctest::Approx(-0.29).epsilon(1e-12));

  // Weight decay pulls toward zero even with zero gradient.
  p = {2.0};
  v.clear();
  sgd_update(p, {0.0}, v, 0.1, 0.0, 0.5);
  CHECK(p[0] == doctest::Approx(2.0 - 0.1 * 1.0).epsilon(1e-12));

  std::vector<double> bad = {1.0, 2.0};
  std::vector<double> v2;
  CHECK_THROWS_AS(sgd_update(bad, {1.0}, v2, 0.1, 0.0, 0.0), ShapeError);

  // Descent on a quadratic: one small step lowers 0.5*|p|^2.
  std::mt19937_64 g(42);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> q(8), grad(8), vel;
    double before = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      q[i] = rng::uniform(g, -3.0, 3.0);
      grad[i] = q[i];
      before += 0.5 * q[i] * q[i];
    }
    sgd_update(q, grad, vel, 1e-3, 0.0, 0.0);
    double after = 0.0;
    for (double x : q) after += 0.5 * x * x;
    CHECK(after < before);
  }
}

TEST_CASE("optimizer walks model parameters") {
  Model m = build_model(tiny_config());
  Sgd opt(0.05, 0.9, 1e-4);
  CHECK_THROWS_AS(opt.step(m), GraphError);

  std::mt19937_64 g(43);
  Tensor x = oracle::random_tensor({2, 3, 8, 8}, g, 0.0, 1.0);
  Graph graph;
  Tensor logits = m.forward(x, &graph, true).logits;
  const std::vector<double> head_before = m.param("head.weight").values();
  graph.backward(cross_entropy(logits, {0, 1}));
  opt.step(m);
  const std::vector<double>& head_after = m.param("head.weight").values();
  bool moved = false;
  for (std::size_t i = 0; i < head_before.size(); ++i) {
    moved = moved || head_before[i] != head_after[i];
  }
  CHECK(moved);
}

TEST_CASE("initial loss sits near ln K") {
  std::mt19937_64 g(44);
  for (int k : {2, 7}) {
    Model m = build_model(tiny_config(k));
    std::vector<Sample> set = synthetic::quadrant_set(8, 8, 8, g);
    std::vector<double> flat;
    std::vector<int> labels;
    for (auto& s : set) {
      flat.insert(flat.end(), s.image.values().begin(), s.image.values().end());
      labels.push_back(s.label % k);
    }
    Tensor batch = Tensor::from_values({8, 3, 8, 8}, std::move(flat));
    const double loss = cross_entropy(m.forward(batch, nullptr, false).logits, labels).at(0);
    CHECK(loss == doctest::Approx(std::log(static_cast<double>(k))).epsilon(0.2));
  }

  // Likewise on the full default configuration.
  Model desk = build_model(ModelConfig::desk_default());
  std::vector<Sample> set = synthetic::quadrant_set(8, 32, 32, g);
  std::vector<double> flat;
  std::vector<int> labels;
  for (auto& s : set) {
    flat.insert(flat.end(), s.image.values().begin(), s.image.values().end());
    labels.push_back(s.label == 0 ? 2 : 5);
  }
  Tensor batch = Tensor::from_values({8, 3, 32, 32}, std::move(flat));
  const double loss = cross_entropy(desk.forward(batch, nullptr, false).logits, labels).at(0);
  CHECK(loss == doctest::Approx(std::log(7.0)).epsilon(0.2));
}

TEST_CASE("fit bookkeeping and determinism") {
  std::mt19937_64 g(45);
  std::vector<Sample> train = synthetic::quadrant_set(8, 8, 8, g);
  std::vector<Sample> val = synthetic::quadrant_set(4, 8, 8, g);

  TrainConfig cfg = quiet_config();
  Model m = build_model(tiny_config());
  FitResult r = fit(m, train, val, cfg);
  REQUIRE(r.log.size() == 1);
  CHECK(r.log[0].epoch == 1);
  CHECK(r.best_epoch == 1);
  CHECK(r.best_val_loss == r.log[0].val_loss);
  CHECK(std::isfinite(r.log[0].train_loss));
  CHECK(r.log[0].val_precision >= 0.0);
  CHECK(r.log[0].val_precision <= 1.0);

  // Same config, fresh model: identical trajectory.
  cfg.epochs = 3;
  cfg.augment_train = true;
  Model m1 = build_model(tiny_config());
  Model m2 = build_model(tiny_config());
  FitResult r1 = fit(m1, train, val, cfg);
  FitResult r2 = fit(m2, train, val, cfg);
  REQUIRE(r1.log.size() == 3);
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
    CHECK(r1.log[i].val_loss == r2.log[i].val_loss);
  }

  // Input sets are never mutated.
  std::vector<Sample> train_copy = train;
  Model m3 = build_model(tiny_config());
  fit(m3, train, val, cfg);
  for (std::size_t i = 0; i < train.size(); ++i) {
    CHECK(train[i].image.values() == train_copy[i].image.values());
  }

  CHECK_THROWS_AS(fit(m, {}, val, cfg), EmptyDatasetError);
  CHECK_THROWS_AS(fit(m, train, {}, cfg), EmptyDatasetError);
  TrainConfig bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS_AS(fit(m, train, val, bad), ConfigError);
  bad = cfg;
  bad.momentum = 1.0;
  CHECK_THROWS_AS(fit(m, train, val, bad), ConfigError);
  bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(fit(m, train, val, bad), ConfigError);
}

TEST_CASE("fit writes the best checkpoint") {
  std::mt19937_64 g(46);
  std::vector<Sample> train = synthetic::quadrant_set(8, 8, 8, g);
  std::vector<Sample> val = synthetic::quadrant_set(4, 8, 8, g);

  TrainConfig cfg = quiet_config();
  cfg.epochs = 4;
  cfg.checkpoint_path = "test_training_best.bin";
  Model m = build_model(tiny_config());
  FitResult r = fit(m, train, val, cfg);

  double best = r.log[0].val_loss;
  for (const auto& e : r.log) best = std::min(best, e.val_loss);
  CHECK(r.best_val_loss == best);

  CheckpointMeta meta;
  Model loaded = load_checkpoint(cfg.checkpoint_path, &meta);
  CHECK(meta.has_epoch);
  CHECK(meta.epoch == r.best_epoch);
  CHECK(meta.has_loss);
  CHECK(meta.loss == doctest::Approx(r.best_val_loss).epsilon(1e-6));
  std::remove(cfg.checkpoint_path.c_str());
}

TEST_CASE("nan loss aborts with a divergence error") {
  std::mt19937_64 g(47);
  std::vector<Sample> train = synthetic::quadrant_set(8, 8, 8, g);
  std::vector<Sample> val = synthetic::quadrant_set(4, 8, 8, g);

  Model m = build_model(tiny_config());
  m.set_param("head.bias",
              Tensor::full({2}, std::numeric_limits<double>::quiet_NaN()));
  CHECK_THROWS_AS(fit(m, train, val, quiet_config()), DivergenceError);
}

TEST_CASE("training log csv layout") {
  std::vector<EpochLog> log = {{1, 0.5, 0.25, 0.75, 0.875}};
  const std::string csv = training_log_csv(log);
  CHECK(csv.rfind("epoch,train_loss,val_loss,val_precision_weighted,val_recall_weighted\n", 0) ==
        0);
  CHECK(csv.find("\n1,0.5,0.25,0.75,0.875\n") != std::string::npos);
}

TEST_CASE("small overfit run separates the quadrant classes") {
  std::mt19937_64 g(48);
  std::vector<Sample> train = synthetic::quadrant_set(16, 8, 8, g);
  std::vector<Sample> val = synthetic::quadrant_set(4, 8, 8, g);

  TrainConfig cfg = quiet_config();
  cfg.epochs = 60;
  cfg.batch_size = 8;
  cfg.lr = 0.05;
  Model m = build_model(tiny_config());
  fit(m, train, val, cfg);

  Evaluation ev = evaluate(m, train, {"zero", "one"}, false);
  const double accuracy =
      static_cast<double>(ev.confusion.at(0, 0) + ev.confusion.at(1, 1)) /
      static_cast<double>(ev.confusion.total());
  CHECK(accuracy >= 0.9);
}

TEST_CASE("evaluate decomposes into the metrics pipeline") {
  std::mt19937_64 g(49);
  Model m = build_model(tiny_config(3));
  std::vector<Sample> samples;
  for (int i = 0; i < 11; ++i) {
    samples.push_back({oracle::random_tensor({3, 8, 8}, g, 0.0, 1.0),
                       static_cast<int>(rng::below(g, 3))});
  }
  for (int lbl = 0; lbl < 3; ++lbl) samples[static_cast<std::size_t>(lbl)].label = lbl;

  const std::vector<std::string> names = {"x", "y", "z"};
  Evaluation ev = evaluate(m, samples, names, false, 4);

  // Oracle route: per-sample probabilities through the metrics ops by hand.
  std::vector<std::string> truth, pred;
  std::vector<std::vector<double>> scores(3);
  std::vector<std::vector<int>> binary(3);
  for (const auto& s : samples) {
    const std::vector<double> p = m.predict_proba(s.image);
    int arg = 0;
    for (int k = 1; k < 3; ++k) {
      if (p[static_cast<std::size_t>(k)] > p[static_cast<std::size_t>(arg)]) arg = k;
    }
    truth.push_back(names[static_cast<std::size_t>(s.label)]);
    pred.push_back(names[static_cast<std::size_t>(arg)]);
    for (int c = 0; c < 3; ++c) {
      scores[static_cast<std::size_t>(c)].push_back(p[static_cast<std::size_t>(c)]);
      binary[static_cast<std::size_t>(c)].push_back(c == s.label ? 1 : 0);
    }
  }
  ConfusionMatrix want_cm = confusion_matrix(truth, pred, names);
  CHECK(ev.confusion.counts == want_cm.counts);
  for (int c = 0; c < 3; ++c) {
    PrecisionRecall pr = precision_recall(want_cm, c);
    CHECK(ev.report.rows[static_cast<std::size_t>(c)].precision ==
          doctest::Approx(pr.precision).epsilon(1e-12));
    CHECK(ev.report.rows[static_cast<std::size_t>(c)].recall ==
          doctest::Approx(pr.recall).epsilon(1e-12));
    const double want_ap = average_precision(
        pr_curve(scores[static_cast<std::size_t>(c)], binary[static_cast<std::size_t>(c)]));
    CHECK(ev.report.rows[static_cast<std::size_t>(c)].ap ==
          doctest::Approx(want_ap).epsilon(1e-12));
  }

  CHECK_THROWS_AS(evaluate(m, {}, names, false), EmptyDatasetError);
  CHECK_THROWS_AS(evaluate(m, samples, {"x", "y"}, false), SizeError);
}

TEST_CASE("constant predictor degenerates as expected") {
  Model m = build_model(tiny_config(3));
  m.set_param("head.weight", Tensor::zeros({3, 8}));
  m.set_param("head.bias", Tensor::from_values({3}, {0.0, 5.0, 0.0}));

  std::mt19937_64 g(50);
  std::vector<Sample> samples;
  for (int i = 0; i < 9; ++i) {
    samples.push_back({oracle::random_tensor({3, 8, 8}, g, 0.0, 1.0), i % 3});
  }
  Evaluation ev = evaluate(m, samples, {"x", "y", "z"}, false);
  CHECK(ev.report.rows[1].recall == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ev.report.rows[0].recall == 0.0);
  CHECK(ev.report.rows[2].recall == 0.0);
  CHECK(ev.report.rows[1].precision == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("map3 evaluation groups classes and scores") {
  Model m = build_model(tiny_config(7));
  std::mt19937_64 g(51);
  std::vector<Sample> samples;
  for (int i = 0; i < 14; ++i) {
    samples.push_back({oracle::random_tensor({3, 8, 8}, g, 0.0, 1.0), i % 7});
  }
  Evaluation ev = evaluate(m, samples, taxonomy7(), true, 4);
  CHECK(ev.confusion.num_classes() == 3);
  CHECK(ev.confusion.classes == taxonomy3());
  CHECK(ev.confusion.total() == 14);
  REQUIRE(ev.report.rows.size() == 3);
  CHECK(ev.report.rows[0].support == 2);   // melanoma: label 4 twice
  CHECK(ev.report.rows[1].support == 4);   // ak + bcc
  CHECK(ev.report.rows[2].support == 8);   // the benign four

  // Grouped PR scores are summed member probabilities.
  const std::vector<double> p = m.predict_proba(samples[0].image);
  const double benign_score = p[2] + p[3] + p[5] + p[6];
  CHECK(ev.curves[2].class_name == "benign");
  bool found = false;
  for (const auto& pt : ev.curves[2].points) {
    found = found || std::fabs(pt.threshold - benign_score) <= 1e-12;
  }
  CHECK(found);
}
