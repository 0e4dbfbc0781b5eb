#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "oap/rng.hpp"
#include "oap/tensor.hpp"

namespace oap {

enum class Norm { linf, l2 };

struct ThreatModel {
  Norm norm = Norm::linf;
  float epsilon = 8.0f / 255.0f;
  float alpha = 0.0f;  // 0 -> 2.5 * epsilon / steps
  int steps = 40;
  bool random_start = false;
  float lo = 0.0f, hi = 1.0f;  // input bounds

  float step_size() const {
    return alpha > 0.0f ? alpha
                        : 2.5f * epsilon / static_cast<float>(steps < 1 ? 1 : steps);
  }
  void validate() const;
};

struct AttackResult {
  Tensor adv;                    // same shape as the input batch
  std::vector<uint8_t> success;  // pipeline misclassifies the adversarial image
  std::vector<uint8_t> aborted;  // non-finite gradient; image left at its last iterate
  std::vector<double> seconds;   // per-image wall clock
  std::vector<int64_t> queries;  // black-box forward count (0 for white-box)
};

// Differentiable forward to logits for a [1,...] single-image batch. Records
// on the active tape; rng supplies any defense randomness.
using LogitsFn = std::function<Tensor(const Tensor& x, Rng& rng)>;

// A defense as seen by adaptive attacks. purify_paths runs the full defense
// once and returns every path's purified output (one entry for single-path
// defenses); the final entry order is fixed. purify_vjp pulls a cotangent
// back through one path's frozen-noise purification chain (exact per-step
// backward); when absent, attacks fall back to the BPDA surrogate.
struct DefensePipeline {
  int n_paths = 1;
  std::function<std::vector<Tensor>(const Tensor& x, Rng& rng)> purify_paths;
  std::function<Tensor(int path, const Tensor& x, const Tensor& cot, Rng& rng)> purify_vjp;
  LogitsFn classify;  // logits of a purified (or raw) image; deterministic

  // the deployed defense: full purification followed by classification
  Tensor defended_output(const Tensor& x, Rng& rng) const;
};

// counts per-path purification-gradient evaluations during adaptive attacks
struct AttackStats {
  std::atomic<int64_t> purification_grad_evals{0};
  std::atomic<int64_t> forward_queries{0};
};

// PGD: x <- Pi_ball(x + a * sign(grad)) for linf, normalized-gradient steps
// for l2; iterates stay inside the epsilon-ball and [lo, hi].
AttackResult pgd_attack(const LogitsFn& forward, const Tensor& x,
                        const std::vector<int>& y, const ThreatModel& tm,
                        uint64_t seed);

// mean of n_eot gradient samples of the (stochastic) pipeline loss at x
Tensor eot_gradient(const LogitsFn& forward, const Tensor& x1, int y, int n_eot,
                    Rng& rng);

enum class Surrogate { identity, coarse_diffusion };

// forward through the true defense, backward through the surrogate
AttackResult bpda_eot_attack(const DefensePipeline& defense, const Tensor& x,
                             const std::vector<int>& y, const ThreatModel& tm,
                             int n_eot, uint64_t seed, AttackStats* stats = nullptr,
                             Surrogate surrogate = Surrogate::identity);

// exact gradients through every reverse step (requires defense.purify_vjp)
AttackResult pgd_eot_attack(const DefensePipeline& defense, const Tensor& x,
                            const std::vector<int>& y, const ThreatModel& tm,
                            int n_eot, uint64_t seed, AttackStats* stats = nullptr);

// SPSA with Rademacher perturbations; n_samples forward pairs per step
AttackResult spsa_attack(const LogitsFn& forward, const Tensor& x,
                         const std::vector<int>& y, const ThreatModel& tm,
                         int n_samples, float perturb_scale, uint64_t seed,
                         AttackStats* stats = nullptr);

// ball projection helpers (exposed for tests)
void project_ball(Tensor& x_adv, const Tensor& x0, const ThreatModel& tm);
double lp_dist(const Tensor& a, const Tensor& b, Norm norm);

}  // namespace oap
