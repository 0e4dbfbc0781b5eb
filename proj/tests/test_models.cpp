#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oap/dataset.hpp"
#include "oap/diffusion.hpp"
#include "oap/errors.hpp"
#include "oap/models.hpp"
#include "oap/ops.hpp"
#include "oap/rng.hpp"
#include "oap/serialize.hpp"
#include "oap/tape.hpp"
#include "testutil.hpp"

using namespace oap;
using testutil::bitwise_equal;

namespace {

// independent convex baseline: binary logistic regression by plain gradient
// descent in double precision
double logistic_baseline_accuracy(const Dataset& train, const Dataset& test) {
  double w0 = 0, w1 = 0, b = 0;
  int n = train.size();
  for (int epoch = 0; epoch < 400; ++epoch) {
    double g0 = 0, g1 = 0, gb = 0;
    for (int i = 0; i < n; ++i) {
      double x0 = train.inputs.data()[i * 2], x1 = train.inputs.data()[i * 2 + 1];
      double z = w0 * x0 + w1 * x1 + b;
      double p = 1.0 / (1.0 + std::exp(-z));
      double err = p - train.labels[static_cast<size_t>(i)];
      g0 += err * x0;
      g1 += err * x1;
      gb += err;
    }
    w0 -= 2.0 * g0 / n;
    w1 -= 2.0 * g1 / n;
    b -= 2.0 * gb / n;
  }
  int hits = 0;
  for (int i = 0; i < test.size(); ++i) {
    double z = w0 * test.inputs.data()[i * 2] + w1 * test.inputs.data()[i * 2 + 1] + b;
    hits += ((z > 0) == (test.labels[static_cast<size_t>(i)] == 1)) ? 1 : 0;
  }
  return static_cast<double>(hits) / test.size();
}

}  // namespace

TEST_CASE("datasets") {
  SUBCASE("class balance and determinism") {
    Dataset d1 = gen_dataset("shapes16", 31, 9);
    Dataset d2 = gen_dataset("shapes16", 31, 9);
    CHECK(bitwise_equal(d1.inputs, d2.inputs));
    int counts[3] = {0, 0, 0};
    for (int y : d1.labels) ++counts[y];
    for (int c = 0; c < 3; ++c) CHECK(std::abs(counts[c] - 31 / 3) <= 1);
    for (int64_t i = 0; i < d1.inputs.size(); ++i) {
      CHECK(d1.inputs.data()[i] >= 0.0f);
      CHECK(d1.inputs.data()[i] <= 1.0f);
    }
  }
  SUBCASE("unknown kind rejected") {
    CHECK_THROWS_AS(gen_dataset("cifar", 10, 1), Error);
  }
  SUBCASE("splits differ") {
    Dataset tr = gen_dataset("points2d", 16, 3, "train");
    Dataset te = gen_dataset("points2d", 16, 3, "test");
    CHECK(!bitwise_equal(tr.inputs, te.inputs));
  }
}

TEST_CASE("mlp-2d reaches the convex logistic baseline on separable blobs") {
  Dataset train = gen_dataset("points2d", 256, 5, "train");
  Dataset test = gen_dataset("points2d", 256, 5, "test");
  double base = logistic_baseline_accuracy(train, test);
  CHECK(base >= 0.99);  // the blobs are linearly separable

  TrainConfig cfg;
  cfg.steps = 600;
  cfg.batch = 64;
  cfg.seed = 5;
  ClassifierModel m = train_classifier(train, "mlp-2d", cfg);
  CHECK(accuracy(m, test.inputs, test.labels) >= 0.99);
}

TEST_CASE("zero-weight classifier gives uniform logits and chance accuracy") {
  ClassifierModel m = ClassifierModel::make("mlp-2d", 2, 1);
  for (auto& [n, t] : m.params)
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = 0.0f;
  Dataset d = gen_dataset("points2d", 200, 2);
  Tensor logits = m.forward(d.inputs);
  for (int64_t i = 0; i < logits.size(); ++i) CHECK(logits.data()[i] == 0.0f);
  Tensor p = softmax_rows(logits);
  for (int i = 0; i < p.dim(0); ++i) {
    double row = p.data()[i * 2] + p.data()[i * 2 + 1];
    CHECK(std::fabs(row - 1.0) < 1e-5);
  }
  double acc = accuracy(m, d.inputs, d.labels);
  CHECK(acc > 0.3);
  CHECK(acc < 0.7);
}

TEST_CASE("two-moons training reaches 97%") {
  Dataset train = gen_dataset("moons", 400, 11, "train");
  Dataset test = gen_dataset("moons", 400, 11, "test");
  TrainConfig cfg;
  cfg.steps = 2400;
  cfg.batch = 64;
  cfg.seed = 11;
  ClassifierModel m = train_classifier(train, "mlp-2d", cfg);
  CHECK(accuracy(m, test.inputs, test.labels) >= 0.97);
}

TEST_CASE("single-sample memorization") {
  Dataset d = gen_dataset("points2d", 2, 7);
  Dataset one;
  one.kind = d.kind;
  one.classes = 2;
  one.inputs = take_row(d.inputs, 0);
  one.labels = {d.labels[0]};
  TrainConfig cfg;
  cfg.steps = 400;
  cfg.batch = 1;
  cfg.seed = 7;
  ClassifierModel m = train_classifier(one, "mlp-2d", cfg);
  Tape::NoGrad ng;
  Tensor loss = softmax_cross_entropy(m.forward(one.inputs), one.labels);
  CHECK(loss.item() < 1e-3f);
}

TEST_CASE("shuffled labels stay near chance on a held-out split") {
  Dataset train = gen_dataset("points2d", 256, 13, "train");
  Rng rng(99);
  for (auto& y : train.labels) y = rng.uniform_int(2);
  Dataset test = gen_dataset("points2d", 256, 13, "test");
  TrainConfig cfg;
  cfg.steps = 600;
  cfg.batch = 64;
  cfg.seed = 13;
  ClassifierModel m = train_classifier(train, "mlp-2d", cfg);
  double acc = accuracy(m, test.inputs, test.labels);
  CHECK(acc > 0.3);
  CHECK(acc < 0.7);
}

TEST_CASE("cnn-tiny learns shapes16") {
  Dataset train = gen_dataset("shapes16", 384, 21, "train");
  Dataset test = gen_dataset("shapes16", 192, 21, "test");
  TrainConfig cfg;
  cfg.steps = 700;
  cfg.batch = 32;
  cfg.seed = 21;
  ClassifierModel m = train_classifier(train, "cnn-tiny", cfg);
  CHECK(accuracy(m, test.inputs, test.labels) >= 0.90);
}

TEST_CASE("classifier training rejects empty data and bad labels") {
  Dataset d;
  d.classes = 2;
  TrainConfig cfg;
  CHECK_THROWS_AS(train_classifier(d, "mlp-2d", cfg), Error);
}

TEST_CASE("score model basics") {
  DiffusionSchedule sched = DiffusionSchedule::linear(200, 1e-4f, 0.05f, 20);

  SUBCASE("untrained output is finite and shape-correct at t in {0, T/2, T}") {
    ScoreModel m = ScoreModel::make("score-conv", sched.total_steps, 3);
    Tensor x = Tensor::full({2, 1, 16, 16}, 0.5f);
    for (int t : {0, 100, 200}) {
      Tensor out = m.forward(x, t);
      CHECK(out.shape() == x.shape());
      CHECK(!out.scan_nonfinite());
    }
    CHECK_THROWS_AS(m.forward(x, 201), Error);
    CHECK_THROWS_AS(m.forward(x, -1), Error);
  }

  SUBCASE("forward is a pure function of parameters and inputs") {
    ScoreModel m = ScoreModel::make("score-mlp", sched.total_steps, 4);
    Rng rng(8);
    Tensor x = testutil::rand_tensor({5, 2}, rng, 0.0f, 1.0f);
    CHECK(bitwise_equal(m.forward(x, 17), m.forward(x, 17)));
  }
}

TEST_CASE("denoising score matching learns a Gaussian blob") {
  // 2-D Gaussian at (0.4, 0.6), sigma 0.1
  Dataset data;
  data.kind = "points2d";
  data.classes = 2;
  int n = 512;
  data.inputs = Tensor::zeros({n, 2});
  Rng rng(31);
  for (int i = 0; i < n; ++i) {
    data.inputs.data()[i * 2] = 0.4f + 0.1f * static_cast<float>(rng.gaussian());
    data.inputs.data()[i * 2 + 1] = 0.6f + 0.1f * static_cast<float>(rng.gaussian());
  }
  data.labels.assign(static_cast<size_t>(n), 0);

  DiffusionSchedule sched = DiffusionSchedule::linear(200, 1e-4f, 0.05f, 20);
  TrainConfig cfg;
  cfg.steps = 1500;
  cfg.batch = 64;
  cfg.seed = 31;
  testutil::TempDir tmp;
  cfg.curve_csv = tmp.file("score_curve.csv");
  ScoreModel m = train_score_model(data, sched, cfg);

  SUBCASE("predicted noise correlates with injected noise at mid t") {
    int t = 100;
    Rng r(77);
    double dot = 0, na = 0, nb = 0;
    float sa = std::sqrt(sched.alpha_bar[static_cast<size_t>(t)]);
    float sn = std::sqrt(1.0f - sched.alpha_bar[static_cast<size_t>(t)]);
    Tensor xt = Tensor::zeros({256, 2});
    Tensor eps = Tensor::zeros({256, 2});
    for (int i = 0; i < 256; ++i)
      for (int j = 0; j < 2; ++j) {
        float e = static_cast<float>(r.gaussian());
        eps.data()[i * 2 + j] = e;
        xt.data()[i * 2 + j] = sa * data.inputs.data()[(i % 512) * 2 + j] + sn * e;
      }
    Tensor pred = m.forward(xt, t);
    for (int64_t i = 0; i < pred.size(); ++i) {
      dot += static_cast<double>(pred.data()[i]) * eps.data()[i];
      na += static_cast<double>(pred.data()[i]) * pred.data()[i];
      nb += static_cast<double>(eps.data()[i]) * eps.data()[i];
    }
    double cosine = dot / std::max(std::sqrt(na * nb), 1e-12);
    CHECK(cosine > 0.7);
  }

  SUBCASE("learned score approximates the closed-form Gaussian score at large t") {
    int t = 190;
    Tensor mu = Tensor::from({2}, {0.4f, 0.6f});
    ScoreFn oracle = gaussian_oracle_score(mu, 0.01f, sched);
    ScoreFn learned = score_from_model(m, sched);
    Rng r(78);
    Tensor x0 = Tensor::zeros({200, 2});
    for (int i = 0; i < 200; ++i) {
      x0.data()[i * 2] = 0.4f + 0.1f * static_cast<float>(r.gaussian());
      x0.data()[i * 2 + 1] = 0.6f + 0.1f * static_cast<float>(r.gaussian());
    }
    Tensor xt = forward_diffuse(x0, t, sched, r);
    Tensor sl = learned(xt, t);
    Tensor so = oracle(xt, t);
    double rel = 0;
    for (int i = 0; i < 200; ++i) {
      double num = 0, den = 0;
      for (int j = 0; j < 2; ++j) {
        double d = static_cast<double>(sl.data()[i * 2 + j]) - so.data()[i * 2 + j];
        num += d * d;
        den += static_cast<double>(so.data()[i * 2 + j]) * so.data()[i * 2 + j];
      }
      rel += std::sqrt(num) / std::max(std::sqrt(den), 1e-9);
    }
    rel /= 200;
    CHECK(rel < 0.25);
  }

  SUBCASE("training curve drops by at least half") {
    std::ifstream is(cfg.curve_csv);
    std::string line;
    std::getline(is, line);  // header
    double first = -1, last = -1;
    while (std::getline(is, line)) {
      auto comma = line.find(',');
      double v = std::stod(line.substr(comma + 1));
      if (first < 0) first = v;
      last = v;
    }
    CHECK(first > 0);
    CHECK(last < 0.5 * first);
  }
}

TEST_CASE("empty dataset rejected by score training") {
  Dataset d;
  DiffusionSchedule sched = DiffusionSchedule::linear(200, 1e-4f, 0.05f, 20);
  TrainConfig cfg;
  CHECK_THROWS_AS(train_score_model(d, sched, cfg), Error);
}

TEST_CASE("purifier forward stays in range and preserves shape") {
  PurifierModel m = PurifierModel::make("purifier-conv", 17);
  Rng rng(4);
  Tensor x = testutil::rand_tensor({3, 1, 16, 16}, rng, -0.5f, 1.5f);
  Tensor out = m.forward(x);
  CHECK(out.shape() == x.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    CHECK(out.data()[i] >= 0.0f);
    CHECK(out.data()[i] <= 1.0f);
  }
}

TEST_CASE("checkpoint save/load reproduces logits bitwise") {
  testutil::TempDir tmp;
  Dataset d = gen_dataset("shapes16", 12, 19);
  TrainConfig cfg;
  cfg.steps = 30;
  cfg.batch = 8;
  cfg.seed = 19;
  ClassifierModel m = train_classifier(d, "cnn-tiny", cfg);
  Tensor before = m.forward(d.inputs);
  std::string path = tmp.file("cls.ckpt");
  save_checkpoint(path, m.to_checkpoint());
  ClassifierModel l = ClassifierModel::from_checkpoint(load_checkpoint(path));
  Tensor after = l.forward(d.inputs);
  CHECK(bitwise_equal(before, after));

  // wrong-kind rejection
  ScoreModel s = ScoreModel::make("score-mlp", 100, 1);
  std::string spath = tmp.file("score.ckpt");
  save_checkpoint(spath, s.to_checkpoint());
  CHECK_THROWS_AS(ClassifierModel::from_checkpoint(load_checkpoint(spath)), Error);
}
