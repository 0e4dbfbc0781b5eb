#pragma once

#include <cstdint>

#include <json.hpp>

#include "oap/attacks.hpp"
#include "oap/dataset.hpp"
#include "oap/diffusion.hpp"
#include "oap/models.hpp"
#include "oap/serialize.hpp"
#include "oap/tensor.hpp"

namespace oap {

// Opposite adversarial path: K negated-PGD steps from a starting point,
// re-centering the projection set at each iterate.
struct OapConfig {
  int k = 1;
  float alpha = 0.0f;  // 0 -> 2.5 * threat.epsilon / inner_attack_steps
  ThreatModel threat;  // projection set S and input bounds
  int inner_attack_steps = 7;  // PGD length used to form x_adv pairs

  float step() const {
    return alpha > 0.0f
               ? alpha
               : 2.5f * threat.epsilon / static_cast<float>(inner_attack_steps);
  }
};

// x^k = Pi_{x^{k-1}+S}(x^{k-1} - a sign(grad L(x^{k-1}, y))), x^0 = x.
// Requires the ground-truth label. x is a [1,...] single-image batch.
Tensor gen_reference_point(const ClassifierModel& f, const Tensor& x, int y,
                           const OapConfig& cfg);

struct OapDataset {
  Tensor x_adv;  // [N,...]
  Tensor x_ref;  // [N,...] the x^K targets
  std::vector<int> labels;
  nlohmann::json meta;

  int size() const { return x_adv.defined() ? x_adv.dim(0) : 0; }
  TensorBundle to_bundle() const;
  static OapDataset from_bundle(const TensorBundle& b);
};

// one (x_adv, x^K) pair per input; x_adv comes from PGD with
// cfg.inner_attack_steps iterations against f
OapDataset build_oap_dataset(const ClassifierModel& f, const Dataset& data,
                             const OapConfig& cfg, uint64_t seed);

// Eq-2 style training: minimize mean |g(x_adv) - x^K|
PurifierModel train_baseline_purifier(const OapDataset& ds, const TrainConfig& cfg);

// noise-conditioned variant: inputs are forward-diffused at a uniform
// t in [0, t_star] before the L1 objective
PurifierModel train_noise_conditioned_purifier(const OapDataset& ds,
                                               const DiffusionSchedule& sched,
                                               int t_star, const TrainConfig& cfg);

// content fingerprint of a parameter list (provenance ids)
std::string model_content_id(const ParamList& params);

}  // namespace oap
