#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oap/diffusion.hpp"
#include "oap/errors.hpp"
#include "oap/models.hpp"
#include "oap/ops.hpp"
#include "oap/rng.hpp"
#include "oap/tape.hpp"
#include "testutil.hpp"

using namespace oap;
using testutil::bitwise_equal;

namespace {

// purifier with all weights zero except the last residual bias: g(x) = clamp(x + shift)
PurifierModel shift_purifier(float shift_x, float shift_y) {
  PurifierModel m = PurifierModel::make("purifier-mlp", 1, 1, 16, 16, 2);
  for (auto& [n, t] : m.params)
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = 0.0f;
  for (auto& [n, t] : m.params)
    if (n == "dec2.b") {
      t.data()[0] = shift_x;
      t.data()[1] = shift_y;
    }
  return m;
}

}  // namespace

TEST_CASE("schedule construction") {
  DiffusionSchedule s = DiffusionSchedule::linear(1000, 1e-4f, 0.02f, 100);
  CHECK(s.alpha_bar[0] == 1.0f);
  CHECK(s.alpha_bar[1000] < 0.01f);
  for (int t = 1; t <= 1000; ++t)
    CHECK(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t - 1)]);
  // too-shallow ramp: x_T would keep signal
  CHECK_THROWS_AS(DiffusionSchedule::linear(100, 1e-4f, 0.02f, 10), Error);
  CHECK_THROWS_AS(DiffusionSchedule::linear(100, 0.1f, 0.05f, 10), Error);
}

TEST_CASE("forward diffusion") {
  DiffusionSchedule s = DiffusionSchedule::linear(200, 1e-4f, 0.05f, 20);
  Rng rng(1);
  Tensor x0 = Tensor::from({1, 2}, {0.3f, 0.8f});

  SUBCASE("t = 0 is the identity") {
    Tensor xt = forward_diffuse(x0, 0, s, rng);
    CHECK(bitwise_equal(xt, x0));
  }

  SUBCASE("t outside the schedule is rejected") {
    CHECK_THROWS_AS(forward_diffuse(x0, 201, s, rng), Error);
    CHECK_THROWS_AS(forward_diffuse(x0, -1, s, rng), Error);
  }

  SUBCASE("first two moments match the closed form at t = T/2") {
    int t = 100;
    float abar = s.alpha_bar[static_cast<size_t>(t)];
    const int n = 10000;
    double sum[2] = {0, 0}, sum2[2] = {0, 0};
    for (int i = 0; i < n; ++i) {
      Rng r = rng.split(static_cast<uint64_t>(i));
      Tensor xt = forward_diffuse(x0, t, s, r);
      for (int j = 0; j < 2; ++j) {
        sum[j] += xt.data()[j];
        sum2[j] += static_cast<double>(xt.data()[j]) * xt.data()[j];
      }
    }
    for (int j = 0; j < 2; ++j) {
      double m = sum[j] / n;
      double var = sum2[j] / n - m * m;
      double expect_m = std::sqrt(abar) * x0.data()[j];
      double expect_var = 1.0 - abar;
      double se_mean = std::sqrt(expect_var / n);
      double se_var = expect_var * std::sqrt(2.0 / n);
      CHECK(std::fabs(m - expect_m) < 3.0 * se_mean);
      CHECK(std::fabs(var - expect_var) < 3.0 * se_var);
    }
  }

  SUBCASE("marginal consistency of the conditional kernel") {
    // q(x_{t+s} | x_t) composed with q(x_t | x_0) matches q(x_{t+s} | x_0)
    // in the first two moments
    int t = 60, ts = 140;
    float abar_t = s.alpha_bar[static_cast<size_t>(t)];
    float abar_ts = s.alpha_bar[static_cast<size_t>(ts)];
    float ratio = abar_ts / abar_t;
    const int n = 10000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
      Rng r = rng.split(9000 + static_cast<uint64_t>(i));
      Tensor xt = forward_diffuse(x0, t, s, r);
      // conditional leg
      for (int j = 0; j < 2; ++j) {
        float v = std::sqrt(ratio) * xt.data()[j] +
                  std::sqrt(1.0f - ratio) * static_cast<float>(r.gaussian());
        if (j == 0) {
          sum += v;
          sum2 += static_cast<double>(v) * v;
        }
      }
    }
    double m = sum / n;
    double var = sum2 / n - m * m;
    double expect_m = std::sqrt(abar_ts) * x0.data()[0];
    double expect_var = 1.0 - abar_ts;
    CHECK(std::fabs(m - expect_m) < 3.0 * std::sqrt(expect_var / n));
    CHECK(std::fabs(var - expect_var) < 3.0 * expect_var * std::sqrt(2.0 / n));
  }
}

TEST_CASE("reverse step") {
  DiffusionSchedule s = DiffusionSchedule::linear(200, 1e-4f, 0.05f, 20);
  ScoreFn zero_score = [](const Tensor& x, int) { return Tensor::zeros(x.shape()); };
  Tensor xt = Tensor::from({1, 2}, {0.2f, 0.7f});

  SUBCASE("zero score and zero injected noise is a fixed point") {
    Rng rng(3);
    Tensor next = reverse_step(xt, 1, zero_score, s, rng);  // t = 1: no noise
    CHECK(bitwise_equal(next, xt));
  }

  SUBCASE("noise is actually injected for t > 1") {
    Rng r1(10), r2(11);
    Tensor a = reverse_step(xt, 5, zero_score, s, r1);
    Tensor b = reverse_step(xt, 5, zero_score, s, r2);
    CHECK(!bitwise_equal(a, b));
    CHECK(!bitwise_equal(a, xt));
  }

  SUBCASE("t outside [1, T] rejected") {
    Rng rng(3);
    CHECK_THROWS_AS(reverse_step(xt, 0, zero_score, s, rng), Error);
  }

  SUBCASE("non-finite score aborts") {
    Rng rng(3);
    ScoreFn bad = [](const Tensor& x, int) {
      return Tensor::full(x.shape(), std::numeric_limits<float>::quiet_NaN());
    };
    CHECK_THROWS_AS(reverse_step(xt, 5, bad, s, rng), Error);
  }
}

TEST_CASE("oracle-score reverse chain recovers a Gaussian mean from pure noise") {
  // data N(mu, 0.1^2 I); chain runs the full schedule depth
  DiffusionSchedule s = DiffusionSchedule::linear(200, 1e-4f, 0.05f, 200);
  Tensor mu = Tensor::from({2}, {0.4f, 0.6f});
  float data_var = 0.01f;
  ScoreFn oracle = gaussian_oracle_score(mu, data_var, s);

  const int n = 2000;
  Tensor x0 = Tensor::full({n, 2}, 0.0f);
  Rng rng(17);
  Tensor out = diffpure_purify(x0, s, oracle, rng);

  for (int j = 0; j < 2; ++j) {
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
      sum += out.data()[i * 2 + j];
      sum2 += static_cast<double>(out.data()[i * 2 + j]) * out.data()[i * 2 + j];
    }
    double m = sum / n;
    double sd = std::sqrt(std::max(sum2 / n - m * m, 1e-12));
    double se = sd / std::sqrt(static_cast<double>(n));
    INFO("coord ", j, ": mean ", m, " target ", mu.data()[j], " sd ", sd);
    CHECK(std::fabs(m - mu.data()[j]) < 3.0 * se);
  }
}

TEST_CASE("mixture oracle keeps both modes") {
  DiffusionSchedule s = DiffusionSchedule::linear(200, 1e-4f, 0.05f, 200);
  Tensor ma = Tensor::from({2}, {0.3f, 0.3f});
  Tensor mb = Tensor::from({2}, {0.7f, 0.7f});
  ScoreFn oracle = mixture_oracle_score(ma, mb, 0.0025f, s);
  const int n = 600;
  Rng rng(23);
  Tensor out = diffpure_purify(Tensor::full({n, 2}, 0.0f), s, oracle, rng);
  int near_a = 0, near_b = 0;
  for (int i = 0; i < n; ++i) {
    double da = std::hypot(out.data()[i * 2] - 0.3, out.data()[i * 2 + 1] - 0.3);
    double db = std::hypot(out.data()[i * 2] - 0.7, out.data()[i * 2 + 1] - 0.7);
    if (da < 0.15) ++near_a;
    if (db < 0.15) ++near_b;
  }
  CHECK(near_a + near_b > n * 8 / 10);
  CHECK(near_a > n / 5);
  CHECK(near_b > n / 5);
}

TEST_CASE("diffpure purification") {
  DiffusionSchedule s = DiffusionSchedule::linear(200, 1e-4f, 0.05f, 30);
  Tensor mu = Tensor::from({2}, {0.5f, 0.5f});
  ScoreFn oracle = gaussian_oracle_score(mu, 0.01f, s);

  SUBCASE("t_star = 0 is the identity") {
    DiffusionSchedule s0 = s;
    s0.t_star = 0;
    Rng rng(2);
    Tensor x = Tensor::from({2, 2}, {0.1f, 0.9f, 0.4f, 0.2f});
    CHECK(bitwise_equal(diffpure_purify(x, s0, oracle, rng), x));
  }

  SUBCASE("purified adversarial points move toward the clean mean") {
    const int n = 500;
    Rng gen(5);
    Tensor adv = Tensor::zeros({n, 2});
    for (int i = 0; i < n; ++i) {
      // clean sample plus a fixed adversarial-style offset
      adv.data()[i * 2] = 0.5f + 0.1f * static_cast<float>(gen.gaussian()) + 0.12f;
      adv.data()[i * 2 + 1] = 0.5f + 0.1f * static_cast<float>(gen.gaussian()) - 0.12f;
    }
    Rng rng(6);
    Tensor pur = diffpure_purify(adv, s, oracle, rng);
    double d_adv = 0, d_pur = 0;
    for (int i = 0; i < n; ++i) {
      d_adv += std::hypot(adv.data()[i * 2] - 0.5, adv.data()[i * 2 + 1] - 0.5);
      d_pur += std::hypot(pur.data()[i * 2] - 0.5, pur.data()[i * 2 + 1] - 0.5);
    }
    CHECK(d_pur / n < d_adv / n);
  }
}

TEST_CASE("guided purification") {
  DiffusionSchedule s = DiffusionSchedule::linear(200, 1e-4f, 0.05f, 25);
  Tensor mu = Tensor::from({2}, {0.5f, 0.5f});
  ScoreFn oracle = gaussian_oracle_score(mu, 0.01f, s);
  PurifierModel shift = shift_purifier(0.5f, -0.5f);
  Rng base(77);
  Tensor x = Tensor::from({3, 2}, {0.45f, 0.55f, 0.5f, 0.5f, 0.6f, 0.4f});

  SUBCASE("eta = 0 is bitwise identical to plain purification") {
    GuidanceConfig gc;
    gc.enabled = true;
    gc.eta = 0.0f;
    gc.purifier = &shift;
    Rng r1 = base, r2 = base;
    Tensor a = diffpure_purify(x, s, oracle, r1);
    Tensor b = oap_guided_purify(x, s, oracle, gc, r2);
    CHECK(bitwise_equal(a, b));
  }

  SUBCASE("guidance pulls the output in the purifier's direction") {
    GuidanceConfig gc;
    gc.enabled = true;
    gc.eta = 0.05f;
    gc.purifier = &shift;  // pushes +x, -y
    Rng r1 = base, r2 = base;
    Tensor plain = diffpure_purify(x, s, oracle, r1);
    Tensor guided = oap_guided_purify(x, s, oracle, gc, r2);
    double dx = 0, dy = 0;
    for (int i = 0; i < 3; ++i) {
      dx += guided.data()[i * 2] - plain.data()[i * 2];
      dy += guided.data()[i * 2 + 1] - plain.data()[i * 2 + 1];
    }
    CHECK(dx > 0);
    CHECK(dy < 0);
  }

  SUBCASE("output is Lipschitz in eta near zero") {
    GuidanceConfig gc;
    gc.enabled = true;
    gc.purifier = &shift;
    gc.eta = 1e-5f;
    Rng r1 = base, r2 = base;
    Tensor a = diffpure_purify(x, s, oracle, r1);
    Tensor b = oap_guided_purify(x, s, oracle, gc, r2);
    double max_d = 0;
    for (int64_t i = 0; i < a.size(); ++i)
      max_d = std::max(max_d, std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]));
    CHECK(max_d < 1e-3);
  }
}

TEST_CASE("chain vjp matches whole-tape backward and finite differences") {
  DiffusionSchedule s = DiffusionSchedule::linear(200, 1e-4f, 0.05f, 3);
  Tensor mu = Tensor::from({2}, {0.5f, 0.5f});
  ScoreFn oracle = gaussian_oracle_score(mu, 0.01f, s);
  GuidanceConfig gc;
  gc.enabled = true;
  gc.eta = 0.02f;
  PurifierModel shift = shift_purifier(0.3f, -0.2f);
  gc.purifier = &shift;

  Tensor x = Tensor::from({1, 2}, {0.45f, 0.55f});
  Tensor cot = Tensor::from({1, 2}, {1.0f, -0.5f});
  Rng rng(41);

  // checkpointed per-step backward
  Tensor g_chain = purify_chain_vjp(x, cot, s, oracle, gc, rng);

  // whole-chain tape
  Tensor g_tape;
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor xl = tape.leaf(x);
    Tensor out = purify_recorded(xl, s, oracle, gc, rng);
    tape.backward(sum(mul(out, cot)));
    g_tape = x.grad_tensor();
  }
  for (int64_t i = 0; i < g_chain.size(); ++i)
    CHECK(g_chain.data()[i] == doctest::Approx(g_tape.data()[i]).epsilon(1e-4));

  // frozen-noise central differences
  auto eval = [&](const Tensor& xv) {
    Tape::NoGrad ng;
    Rng r = rng;  // frozen draws
    Tensor out = oap_guided_purify(xv, s, oracle, gc, r);
    double acc = 0;
    for (int64_t i = 0; i < out.size(); ++i)
      acc += static_cast<double>(out.data()[i]) * cot.data()[i];
    return acc;
  };
  for (int64_t i = 0; i < x.size(); ++i) {
    Tensor xp = x.clone(), xm = x.clone();
    xp.data()[i] += 1e-3f;
    xm.data()[i] -= 1e-3f;
    double fd = (eval(xp) - eval(xm)) / 2e-3;
    CHECK(std::fabs(fd - g_chain.data()[i]) / std::max(std::fabs(fd), 1e-6) < 1e-2);
  }
}

TEST_CASE("taps") {
  DiffusionSchedule s = DiffusionSchedule::linear(200, 1e-4f, 0.05f, 12);
  Tensor mu = Tensor::from({2}, {0.5f, 0.5f});
  ScoreFn oracle = gaussian_oracle_score(mu, 0.01f, s);
  Tensor x = Tensor::from({1, 2}, {0.42f, 0.58f});
  Rng r1(9), r2(9);
  std::vector<Tensor> taps;
  Tensor with = diffpure_purify(x, s, oracle, r1, &taps);
  Tensor without = diffpure_purify(x, s, oracle, r2);
  CHECK(bitwise_equal(with, without));
  CHECK(taps.size() == 13);  // t* + 1
  CHECK(bitwise_equal(taps.back(), with));
}
