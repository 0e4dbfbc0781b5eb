#pragma once

#include <functional>
#include <vector>

#include "oap/models.hpp"
#include "oap/rng.hpp"
#include "oap/tensor.hpp"

namespace oap {

// Discrete DDPM-style schedule. total_steps is the full noising depth T;
// purification forward-noises only to t_star (the DiffPure convention of
// t* = 0.1 on a [0,1] time axis with dt = 1e-3, i.e. index 100 of 1000).
struct DiffusionSchedule {
  int total_steps = 1000;
  std::vector<float> beta;       // [0..T], beta[0] = 0
  std::vector<float> alpha_bar;  // [0..T], alpha_bar[0] = 1, strictly decreasing
  std::vector<float> sigma;      // reverse-step noise scale sqrt(2 beta_t)
  float dt = 1e-3f;
  int t_star = 100;

  // linear beta ramp; asserts alpha_bar[T] < 0.01 (x_T near pure noise)
  static DiffusionSchedule linear(int total_steps = 1000, float beta_start = 1e-4f,
                                  float beta_end = 2e-2f, int t_star = 100);
};

// score function s(x, t) ~ grad_x log q_t(x); must be built from tensor ops
// so it records on an active tape
using ScoreFn = std::function<Tensor(const Tensor&, int)>;

// s = -eps_phi(x, t) / sqrt(1 - alpha_bar_t)
ScoreFn score_from_model(const ScoreModel& m, const DiffusionSchedule& sched);

// closed-form score of the forward marginals of N(mu, data_var I); mu has the
// data shape and broadcasts over the batch row
ScoreFn gaussian_oracle_score(const Tensor& mu, float data_var,
                              const DiffusionSchedule& sched);

// two-component isotropic mixture oracle (test fixture; forward-only, does
// not record on a tape)
ScoreFn mixture_oracle_score(const Tensor& mu_a, const Tensor& mu_b, float data_var,
                             const DiffusionSchedule& sched);

// closed form x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t = 0 returns x0
Tensor forward_diffuse(const Tensor& x0, int t, const DiffusionSchedule& sched, Rng& rng);

// Langevin-style update x_{t-1} = x_t + beta_t s(x_t, t) + sigma_t z,
// with no noise injected at t = 1
Tensor reverse_step(const Tensor& xt, int t, const ScoreFn& score,
                    const DiffusionSchedule& sched, Rng& rng);

struct GuidanceConfig {
  float eta = 2.5e-3f;
  const PurifierModel* purifier = nullptr;
  bool enabled = false;
};

// forward-noise to t_star, then reverse to 0; final output clamped to [0,1].
// taps, when non-null, receives x_{t*} ... x_0 (t*+1 states, x_0 bitwise
// equal to the returned output)
Tensor diffpure_purify(const Tensor& x, const DiffusionSchedule& sched,
                       const ScoreFn& score, Rng& rng,
                       std::vector<Tensor>* taps = nullptr);

// adds eta * (g_theta(x_t) - x_t) to every reverse step (both the score and
// the guidance are evaluated at x_t); eta = 0 reproduces diffpure_purify
// bitwise under the same rng
Tensor oap_guided_purify(const Tensor& x, const DiffusionSchedule& sched,
                         const ScoreFn& score, const GuidanceConfig& gc, Rng& rng,
                         std::vector<Tensor>* taps = nullptr);

// Exact gradient of <purify(x), cotangent> under frozen randomness, taken by
// re-running one reverse step at a time with a fresh tape (per-step
// activation checkpointing; memory stays O(one step)).
Tensor purify_chain_vjp(const Tensor& x, const Tensor& cotangent,
                        const DiffusionSchedule& sched, const ScoreFn& score,
                        const GuidanceConfig& gc, Rng rng);

// differentiable purification recorded on the active tape in one piece
// (memory O(t_star); prefer purify_chain_vjp for long chains)
Tensor purify_recorded(const Tensor& x, const DiffusionSchedule& sched,
                       const ScoreFn& score, const GuidanceConfig& gc, Rng rng);

}  // namespace oap
