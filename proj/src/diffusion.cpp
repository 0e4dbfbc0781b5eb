#include "oap/diffusion.hpp"

#include <cmath>

#include "oap/errors.hpp"
#include "oap/ops.hpp"
#include "oap/tape.hpp"

namespace oap {

DiffusionSchedule DiffusionSchedule::linear(int total_steps, float beta_start,
                                            float beta_end, int t_star) {
  if (total_steps < 1) fail_contract("schedule needs at least one step");
  if (!(0.0f < beta_start && beta_start < beta_end && beta_end < 1.0f))
    fail_contract("schedule requires 0 < beta_1 < beta_T < 1");
  if (t_star < 0 || t_star > total_steps)
    fail_contract("t_star outside [0, T]");
  DiffusionSchedule s;
  s.total_steps = total_steps;
  s.t_star = t_star;
  s.beta.assign(static_cast<size_t>(total_steps) + 1, 0.0f);
  s.alpha_bar.assign(static_cast<size_t>(total_steps) + 1, 1.0f);
  s.sigma.assign(static_cast<size_t>(total_steps) + 1, 0.0f);
  for (int t = 1; t <= total_steps; ++t) {
    float frac = total_steps == 1 ? 0.0f
                                  : static_cast<float>(t - 1) / static_cast<float>(total_steps - 1);
    s.beta[static_cast<size_t>(t)] = beta_start + (beta_end - beta_start) * frac;
    s.alpha_bar[static_cast<size_t>(t)] =
        s.alpha_bar[static_cast<size_t>(t - 1)] * (1.0f - s.beta[static_cast<size_t>(t)]);
    s.sigma[static_cast<size_t>(t)] = std::sqrt(2.0f * s.beta[static_cast<size_t>(t)]);
  }
  if (!(s.alpha_bar[static_cast<size_t>(total_steps)] < 0.01f))
    fail_contract("schedule too shallow: alpha_bar[T] = " +
                  std::to_string(s.alpha_bar[static_cast<size_t>(total_steps)]) +
                  " >= 0.01, x_T is not near-pure noise");
  return s;
}

ScoreFn score_from_model(const ScoreModel& m, const DiffusionSchedule& sched) {
  const ScoreModel* mp = &m;
  const DiffusionSchedule* sp = &sched;
  return [mp, sp](const Tensor& x, int t) -> Tensor {
    if (t < 1 || t > sp->total_steps)
      fail_contract("score requested outside [1, T]");
    float denom = std::sqrt(1.0f - sp->alpha_bar[static_cast<size_t>(t)]);
    return scale(mp->forward(x, t), -1.0f / denom);
  };
}

namespace {

Tensor tile_rows(const Tensor& row, int n) {
  std::vector<int> shape = row.shape();
  shape.insert(shape.begin(), n);
  Tensor out = Tensor::zeros(shape);
  for (int i = 0; i < n; ++i)
    std::copy(row.data(), row.data() + row.size(), out.data() + i * row.size());
  return out;
}

}  // namespace

ScoreFn gaussian_oracle_score(const Tensor& mu, float data_var,
                              const DiffusionSchedule& sched) {
  Tensor mu_copy = mu.clone();
  const DiffusionSchedule* sp = &sched;
  return [mu_copy, data_var, sp](const Tensor& x, int t) -> Tensor {
    float abar = sp->alpha_bar[static_cast<size_t>(t)];
    float v = abar * data_var + (1.0f - abar);
    Tensor m_t = tile_rows(mu_copy, x.dim(0));
    for (int64_t i = 0; i < m_t.size(); ++i) m_t.data()[i] *= std::sqrt(abar);
    return scale(sub(x, m_t), -1.0f / v);
  };
}

ScoreFn mixture_oracle_score(const Tensor& mu_a, const Tensor& mu_b, float data_var,
                             const DiffusionSchedule& sched) {
  Tensor ma = mu_a.clone(), mb = mu_b.clone();
  const DiffusionSchedule* sp = &sched;
  return [ma, mb, data_var, sp](const Tensor& x, int t) -> Tensor {
    float abar = sp->alpha_bar[static_cast<size_t>(t)];
    double v = abar * data_var + (1.0f - abar);
    double sa = std::sqrt(abar);
    int n = x.dim(0);
    int64_t rowsz = x.size() / n;
    Tensor out = Tensor::zeros(x.shape());
    for (int b = 0; b < n; ++b) {
      const float* px = x.data() + b * rowsz;
      double da = 0.0, db = 0.0;
      for (int64_t i = 0; i < rowsz; ++i) {
        double ra = px[i] - sa * ma.data()[i];
        double rb = px[i] - sa * mb.data()[i];
        da += ra * ra;
        db += rb * rb;
      }
      double la = -da / (2.0 * v), lb = -db / (2.0 * v);
      double m = std::max(la, lb);
      double wa = std::exp(la - m), wb = std::exp(lb - m);
      double z = wa + wb;
      wa /= z;
      wb /= z;
      float* po = out.data() + b * rowsz;
      for (int64_t i = 0; i < rowsz; ++i) {
        double ra = px[i] - sa * ma.data()[i];
        double rb = px[i] - sa * mb.data()[i];
        po[i] = static_cast<float>(-(wa * ra + wb * rb) / v);
      }
    }
    return out;
  };
}

Tensor forward_diffuse(const Tensor& x0, int t, const DiffusionSchedule& sched, Rng& rng) {
  if (t < 0 || t > sched.total_steps)
    fail_contract("forward_diffuse: t outside [0, T]");
  if (t == 0) return x0.clone();
  float sa = std::sqrt(sched.alpha_bar[static_cast<size_t>(t)]);
  float sn = std::sqrt(1.0f - sched.alpha_bar[static_cast<size_t>(t)]);
  Tensor noise = Tensor::zeros(x0.shape());
  rng.fill_gaussian(noise.data(), noise.size(), 0.0f, sn);
  return add(scale(x0, sa), noise);
}

namespace {

// one reverse update; both the score and (when enabled) the guidance are
// evaluated at x_t. Noise is drawn after the drift so replay order is stable.
Tensor guided_step(const Tensor& xt, int t, const ScoreFn& score,
                   const DiffusionSchedule& sched, const GuidanceConfig& gc, Rng& rng) {
  Tensor s = score(xt, t);
  if (s.nonfinite_flag() || s.scan_nonfinite())
    fail_numeric("non-finite score at t = " + std::to_string(t));
  Tensor y = add(xt, scale(s, sched.beta[static_cast<size_t>(t)]));
  if (gc.enabled && gc.eta > 0.0f) {
    if (!gc.purifier) fail_contract("guidance enabled without a purifier");
    Tensor ghat = gc.purifier->forward(xt);
    y = add(y, scale(sub(ghat, xt), gc.eta));
  }
  if (t > 1) {
    Tensor z = Tensor::zeros(xt.shape());
    rng.fill_gaussian(z.data(), z.size(), 0.0f, sched.sigma[static_cast<size_t>(t)]);
    y = add(y, z);
  }
  return y;
}

Tensor purify_impl(const Tensor& x, const DiffusionSchedule& sched, const ScoreFn& score,
                   const GuidanceConfig& gc, Rng& rng, std::vector<Tensor>* taps) {
  if (taps) taps->clear();
  if (sched.t_star == 0) {
    Tensor out = x.clone();
    if (taps) taps->push_back(out);
    return out;
  }
  Tensor xt = forward_diffuse(x, sched.t_star, sched, rng);
  if (taps) taps->push_back(xt.detached());
  for (int t = sched.t_star; t >= 1; --t) {
    xt = guided_step(xt, t, score, sched, gc, rng);
    if (t == 1) xt = clamp(xt, 0.0f, 1.0f);
    if (taps) taps->push_back(xt.detached());
  }
  return xt;
}

}  // namespace

Tensor reverse_step(const Tensor& xt, int t, const ScoreFn& score,
                    const DiffusionSchedule& sched, Rng& rng) {
  if (t < 1 || t > sched.total_steps)
    fail_contract("reverse_step: t outside [1, T]");
  GuidanceConfig off;
  return guided_step(xt, t, score, sched, off, rng);
}

Tensor diffpure_purify(const Tensor& x, const DiffusionSchedule& sched,
                       const ScoreFn& score, Rng& rng, std::vector<Tensor>* taps) {
  GuidanceConfig off;
  return purify_impl(x, sched, score, off, rng, taps);
}

Tensor oap_guided_purify(const Tensor& x, const DiffusionSchedule& sched,
                         const ScoreFn& score, const GuidanceConfig& gc, Rng& rng,
                         std::vector<Tensor>* taps) {
  return purify_impl(x, sched, score, gc, rng, taps);
}

Tensor purify_recorded(const Tensor& x, const DiffusionSchedule& sched,
                       const ScoreFn& score, const GuidanceConfig& gc, Rng rng) {
  return purify_impl(x, sched, score, gc, rng, nullptr);
}

Tensor purify_chain_vjp(const Tensor& x, const Tensor& cotangent,
                        const DiffusionSchedule& sched, const ScoreFn& score,
                        const GuidanceConfig& gc, Rng rng) {
  if (!same_shape(x, cotangent))
    fail_contract("purify_chain_vjp: cotangent shape mismatch");
  if (sched.t_star == 0) return cotangent.clone();

  int ts = sched.t_star;
  // forward pass without a tape, snapshotting the rng before each step
  std::vector<Tensor> states(static_cast<size_t>(ts) + 1);
  std::vector<Rng> replay(static_cast<size_t>(ts) + 1, Rng(0));
  float sa = std::sqrt(sched.alpha_bar[static_cast<size_t>(ts)]);
  {
    Tape::NoGrad ng;
    Tensor xt = forward_diffuse(x, ts, sched, rng);
    states[static_cast<size_t>(ts)] = xt;
    for (int t = ts; t >= 1; --t) {
      replay[static_cast<size_t>(t)] = rng;
      xt = guided_step(xt, t, score, sched, gc, rng);
      if (t == 1) xt = clamp(xt, 0.0f, 1.0f);
      states[static_cast<size_t>(t - 1)] = xt;
    }
  }

  // re-run one step at a time under a fresh tape, pulling the cotangent back
  Tensor c = cotangent.clone();
  for (int t = 1; t <= ts; ++t) {
    Rng r = replay[static_cast<size_t>(t)];
    Tape tape;
    Tape::Scope scope(tape);
    Tensor xl = tape.leaf(states[static_cast<size_t>(t)]);
    Tensor y = guided_step(xl, t, score, sched, gc, r);
    if (t == 1) y = clamp(y, 0.0f, 1.0f);
    tape.backward(sum(mul(y, c)));
    c = Tensor::from(xl.shape(), xl.grad());
  }
  // through forward diffusion: x_t* = sa * x + const
  return scale(c, sa);
}

}  // namespace oap
