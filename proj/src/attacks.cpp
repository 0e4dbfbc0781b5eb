#include "oap/attacks.hpp"

#include <chrono>
#include <cmath>

#include "oap/dataset.hpp"
#include "oap/errors.hpp"
#include "oap/ops.hpp"
#include "oap/tape.hpp"
#include "oap/threadpool.hpp"

namespace oap {

namespace {

double now_sec() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

bool finite_vec(const std::vector<float>& v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// one PGD move from the current iterate, then ball projection
void pgd_move(Tensor& xa, const Tensor& x0, const Tensor& g, const ThreatModel& tm) {
  float a = tm.step_size();
  if (tm.norm == Norm::linf) {
    for (int64_t i = 0; i < xa.size(); ++i) {
      float gi = g.data()[i];
      float s = gi > 0.0f ? 1.0f : (gi < 0.0f ? -1.0f : 0.0f);
      xa.data()[i] += a * s;
    }
  } else {
    double n2 = 0.0;
    for (int64_t i = 0; i < g.size(); ++i)
      n2 += static_cast<double>(g.data()[i]) * g.data()[i];
    double inv = a / std::max(std::sqrt(n2), 1e-12);
    for (int64_t i = 0; i < xa.size(); ++i)
      xa.data()[i] += static_cast<float>(inv * g.data()[i]);
  }
  project_ball(xa, x0, tm);
}

struct PerImage {
  Tensor adv;
  uint8_t success = 0;
  uint8_t aborted = 0;
  double seconds = 0.0;
  int64_t queries = 0;
};

AttackResult merge(std::vector<PerImage>& rows, const Tensor& x) {
  AttackResult r;
  r.adv = Tensor::zeros(x.shape());
  for (size_t i = 0; i < rows.size(); ++i) {
    set_row(r.adv, static_cast<int>(i), rows[i].adv);
    r.success.push_back(rows[i].success);
    r.aborted.push_back(rows[i].aborted);
    r.seconds.push_back(rows[i].seconds);
    r.queries.push_back(rows[i].queries);
  }
  return r;
}

}  // namespace

void ThreatModel::validate() const {
  if (epsilon < 0.0f) fail_contract("threat model: epsilon must be >= 0");
  if (steps < 1) fail_contract("threat model: steps must be >= 1");
  if (step_size() <= 0.0f) fail_contract("threat model: alpha must be > 0");
  if (lo >= hi) fail_contract("threat model: invalid input bounds");
}

void project_ball(Tensor& xa, const Tensor& x0, const ThreatModel& tm) {
  if (tm.norm == Norm::linf) {
    for (int64_t i = 0; i < xa.size(); ++i) {
      float lo = x0.data()[i] - tm.epsilon;
      float hi = x0.data()[i] + tm.epsilon;
      float v = xa.data()[i];
      v = v < lo ? lo : (v > hi ? hi : v);
      v = v < tm.lo ? tm.lo : (v > tm.hi ? tm.hi : v);
      xa.data()[i] = v;
    }
  } else {
    double n2 = 0.0;
    for (int64_t i = 0; i < xa.size(); ++i) {
      double d = static_cast<double>(xa.data()[i]) - x0.data()[i];
      n2 += d * d;
    }
    double n = std::sqrt(n2);
    if (n > tm.epsilon) {
      double sc = tm.epsilon / n;
      for (int64_t i = 0; i < xa.size(); ++i)
        xa.data()[i] = x0.data()[i] +
                       static_cast<float>(sc * (static_cast<double>(xa.data()[i]) - x0.data()[i]));
    }
    for (int64_t i = 0; i < xa.size(); ++i) {
      float v = xa.data()[i];
      xa.data()[i] = v < tm.lo ? tm.lo : (v > tm.hi ? tm.hi : v);
    }
  }
}

double lp_dist(const Tensor& a, const Tensor& b, Norm norm) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double d = std::fabs(static_cast<double>(a.data()[i]) - b.data()[i]);
    if (norm == Norm::linf)
      acc = std::max(acc, d);
    else
      acc += d * d;
  }
  return norm == Norm::linf ? acc : std::sqrt(acc);
}

Tensor DefensePipeline::defended_output(const Tensor& x, Rng& rng) const {
  std::vector<Tensor> outs = purify_paths(x, rng);
  return classify(outs.back(), rng);
}

// ---------------------------------------------------------------------------

namespace {

Tensor loss_grad_at(const LogitsFn& classify, const Tensor& u, int y, Rng& rng) {
  Tape tape;
  Tape::Scope scope(tape);
  Tensor ul = tape.leaf(u.detached());
  Tensor loss = softmax_cross_entropy(classify(ul, rng), {y});
  tape.backward(loss);
  return ul.grad_tensor();
}

uint8_t eval_success(const LogitsFn& forward, const Tensor& xa, int y, Rng rng) {
  Tape::NoGrad ng;
  Tensor logits = forward(xa, rng);
  return argmax_rows(logits)[0] != y ? 1 : 0;
}

}  // namespace

AttackResult pgd_attack(const LogitsFn& forward, const Tensor& x,
                        const std::vector<int>& y, const ThreatModel& tm,
                        uint64_t seed) {
  tm.validate();
  int n = x.dim(0);
  if (static_cast<int>(y.size()) != n) fail_contract("pgd_attack: label count mismatch");
  std::vector<PerImage> rows(static_cast<size_t>(n));
  Rng root = Rng(seed).split("pgd");

  parallel_for(n, [&](int i) {
    double t0 = now_sec();
    Rng rng_img = root.split(static_cast<uint64_t>(i));
    Tensor x0 = take_row(x, i);
    Tensor xa = x0.clone();
    if (tm.random_start && tm.epsilon > 0.0f) {
      Rng r = rng_img.split("start");
      for (int64_t k = 0; k < xa.size(); ++k)
        xa.data()[k] += r.uniform(-tm.epsilon, tm.epsilon);
      project_ball(xa, x0, tm);
    }
    PerImage& row = rows[static_cast<size_t>(i)];
    for (int step = 0; step < tm.steps; ++step) {
      Tensor g;
      {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor xl = tape.leaf(xa);
        Rng r = rng_img.split(1000 + static_cast<uint64_t>(step));
        Tensor loss = softmax_cross_entropy(forward(xl, r), {y[static_cast<size_t>(i)]});
        tape.backward(loss);
        g = xa.grad_tensor();
      }
      if (!finite_vec(g.vec())) {
        row.aborted = 1;
        break;
      }
      pgd_move(xa, x0, g, tm);
    }
    row.adv = xa;
    row.success = eval_success(forward, xa, y[static_cast<size_t>(i)], rng_img.split("eval"));
    row.seconds = now_sec() - t0;
  });
  return merge(rows, x);
}

Tensor eot_gradient(const LogitsFn& forward, const Tensor& x1, int y, int n_eot,
                    Rng& rng) {
  if (n_eot < 1) fail_contract("eot_gradient: n_eot must be >= 1");
  Tensor acc = Tensor::zeros(x1.shape());
  for (int k = 0; k < n_eot; ++k) {
    Rng r = rng.split(static_cast<uint64_t>(k));
    Tape tape;
    Tape::Scope scope(tape);
    Tensor xl = tape.leaf(x1.detached());
    Tensor loss = softmax_cross_entropy(forward(xl, r), {y});
    tape.backward(loss);
    const auto& g = xl.grad();
    for (int64_t i = 0; i < acc.size(); ++i) acc.data()[i] += g[static_cast<size_t>(i)];
  }
  for (int64_t i = 0; i < acc.size(); ++i) acc.data()[i] /= static_cast<float>(n_eot);
  return acc;
}

namespace {

// shared loop for the two adaptive attacks; grad_fn returns the gradient
// contribution of one (path, eot-sample) pair
AttackResult adaptive_attack(const DefensePipeline& defense, const Tensor& x,
                             const std::vector<int>& y, const ThreatModel& tm,
                             int n_eot, uint64_t seed, AttackStats* stats,
                             const std::function<Tensor(int path, const Tensor& xa,
                                                        const Tensor& cot, Rng rng)>& pullback,
                             const char* tag) {
  tm.validate();
  if (n_eot < 1) fail_contract("adaptive attack: n_eot must be >= 1");
  int n = x.dim(0);
  if (static_cast<int>(y.size()) != n) fail_contract("adaptive attack: label count mismatch");
  std::vector<PerImage> rows(static_cast<size_t>(n));
  Rng root = Rng(seed).split(tag);

  parallel_for(n, [&](int i) {
    double t0 = now_sec();
    Rng rng_img = root.split(static_cast<uint64_t>(i));
    Tensor x0 = take_row(x, i);
    Tensor xa = x0.clone();
    PerImage& row = rows[static_cast<size_t>(i)];
    int yi = y[static_cast<size_t>(i)];

    for (int step = 0; step < tm.steps; ++step) {
      Tensor g = Tensor::zeros(xa.shape());
      bool bad = false;
      for (int e = 0; e < n_eot && !bad; ++e) {
        Rng sample_rng =
            rng_img.split(static_cast<uint64_t>(step) * 7919 + static_cast<uint64_t>(e));
        std::vector<Tensor> outs;
        {
          Tape::NoGrad ng;
          Rng r = sample_rng;  // value copy; pullback replays the same stream
          outs = defense.purify_paths(xa, r);
        }
        for (size_t p = 0; p < outs.size(); ++p) {
          Rng cr = sample_rng.split(static_cast<uint64_t>(p) + 101);
          Tensor cot = loss_grad_at(defense.classify, outs[p], yi, cr);
          Tensor gp = pullback(static_cast<int>(p), xa, cot, sample_rng);
          if (stats) stats->purification_grad_evals.fetch_add(1);
          if (!finite_vec(gp.vec())) {
            bad = true;
            break;
          }
          for (int64_t k = 0; k < g.size(); ++k) g.data()[k] += gp.data()[k];
        }
      }
      if (bad) {
        row.aborted = 1;
        break;
      }
      pgd_move(xa, x0, g, tm);
    }
    row.adv = xa;
    {
      Rng er = rng_img.split("eval");
      Tape::NoGrad ng;
      Tensor logits = defense.defended_output(xa, er);
      row.success = argmax_rows(logits)[0] != yi ? 1 : 0;
    }
    row.seconds = now_sec() - t0;
  });
  return merge(rows, x);
}

}  // namespace

AttackResult bpda_eot_attack(const DefensePipeline& defense, const Tensor& x,
                             const std::vector<int>& y, const ThreatModel& tm,
                             int n_eot, uint64_t seed, AttackStats* stats,
                             Surrogate surrogate) {
  auto pullback = [&defense, surrogate](int path, const Tensor& xa, const Tensor& cot,
                                        Rng rng) -> Tensor {
    if (surrogate == Surrogate::coarse_diffusion && defense.purify_vjp)
      return defense.purify_vjp(path, xa, cot, rng);
    // identity surrogate: the purifier's backward pass is the identity
    (void)path;
    (void)xa;
    (void)rng;
    return cot.clone();
  };
  return adaptive_attack(defense, x, y, tm, n_eot, seed, stats, pullback, "bpda-eot");
}

AttackResult pgd_eot_attack(const DefensePipeline& defense, const Tensor& x,
                            const std::vector<int>& y, const ThreatModel& tm,
                            int n_eot, uint64_t seed, AttackStats* stats) {
  if (!defense.purify_vjp)
    fail_contract("pgd_eot_attack requires an exact purification backward");
  auto pullback = [&defense](int path, const Tensor& xa, const Tensor& cot,
                             Rng rng) -> Tensor {
    return defense.purify_vjp(path, xa, cot, rng);
  };
  return adaptive_attack(defense, x, y, tm, n_eot, seed, stats, pullback, "pgd-eot");
}

AttackResult spsa_attack(const LogitsFn& forward, const Tensor& x,
                         const std::vector<int>& y, const ThreatModel& tm,
                         int n_samples, float perturb_scale, uint64_t seed,
                         AttackStats* stats) {
  tm.validate();
  if (n_samples < 2 || n_samples % 2 != 0)
    fail_contract("spsa_attack: n_samples must be even and >= 2");
  int n = x.dim(0);
  if (static_cast<int>(y.size()) != n) fail_contract("spsa_attack: label count mismatch");
  std::vector<PerImage> rows(static_cast<size_t>(n));
  Rng root = Rng(seed).split("spsa");

  parallel_for(n, [&](int i) {
    double t0 = now_sec();
    Rng rng_img = root.split(static_cast<uint64_t>(i));
    Tensor x0 = take_row(x, i);
    Tensor xa = x0.clone();
    PerImage& row = rows[static_cast<size_t>(i)];
    int yi = y[static_cast<size_t>(i)];

    auto loss_at = [&](const Tensor& xq, Rng& r) {
      Tape::NoGrad ng;
      Tensor loss = softmax_cross_entropy(forward(xq, r), {yi});
      ++row.queries;
      if (stats) stats->forward_queries.fetch_add(1);
      return static_cast<double>(loss.item());
    };

    int pairs = n_samples / 2;
    for (int step = 0; step < tm.steps; ++step) {
      Rng r = rng_img.split(5000 + static_cast<uint64_t>(step));
      Tensor g = Tensor::zeros(xa.shape());
      for (int k = 0; k < pairs; ++k) {
        Tensor delta = Tensor::zeros(xa.shape());
        for (int64_t j = 0; j < delta.size(); ++j)
          delta.data()[j] = r.uniform() < 0.5 ? -1.0f : 1.0f;
        Tensor xp = xa.clone(), xm = xa.clone();
        for (int64_t j = 0; j < xa.size(); ++j) {
          xp.data()[j] += perturb_scale * delta.data()[j];
          xm.data()[j] -= perturb_scale * delta.data()[j];
        }
        Rng rp = r.split(2 * static_cast<uint64_t>(k));
        Rng rm = r.split(2 * static_cast<uint64_t>(k) + 1);
        double diff = (loss_at(xp, rp) - loss_at(xm, rm)) / (2.0 * perturb_scale);
        for (int64_t j = 0; j < g.size(); ++j)
          g.data()[j] += static_cast<float>(diff) * delta.data()[j];
      }
      for (int64_t j = 0; j < g.size(); ++j) g.data()[j] /= static_cast<float>(pairs);
      pgd_move(xa, x0, g, tm);
    }
    row.adv = xa;
    row.success = eval_success(forward, xa, yi, rng_img.split("eval"));
    row.seconds = now_sec() - t0;
  });
  return merge(rows, x);
}

}  // namespace oap
