#include "oap/refpoint.hpp"

#include <cmath>

#include "oap/adam.hpp"
#include "oap/errors.hpp"
#include "oap/ops.hpp"
#include "oap/tape.hpp"
#include "oap/threadpool.hpp"

namespace oap {

Tensor gen_reference_point(const ClassifierModel& f, const Tensor& x, int y,
                           const OapConfig& cfg) {
  if (cfg.k < 0) fail_contract("gen_reference_point: K must be >= 0");
  if (cfg.step() <= 0.0f) fail_contract("gen_reference_point: alpha must be > 0");
  Tensor xk = x.clone();
  float a = cfg.step();
  float eps = cfg.threat.epsilon;
  for (int k = 0; k < cfg.k; ++k) {
    Tensor g;
    {
      Tape tape;
      Tape::Scope scope(tape);
      Tensor xl = tape.leaf(xk);
      Tensor loss = softmax_cross_entropy(f.forward(xl), {y});
      tape.backward(loss);
      g = xk.grad_tensor();
    }
    if (g.scan_nonfinite())
      fail_numeric("gen_reference_point: non-finite gradient at step " + std::to_string(k));
    Tensor prev = xk;
    Tensor next = prev.clone();
    for (int64_t i = 0; i < next.size(); ++i) {
      float gi = g.data()[i];
      float s = gi > 0.0f ? 1.0f : (gi < 0.0f ? -1.0f : 0.0f);
      float v = prev.data()[i] - a * s;
      // projection set re-centered at x^{k-1}
      float lo = prev.data()[i] - eps, hi = prev.data()[i] + eps;
      v = v < lo ? lo : (v > hi ? hi : v);
      v = v < cfg.threat.lo ? cfg.threat.lo : (v > cfg.threat.hi ? cfg.threat.hi : v);
      next.data()[i] = v;
    }
    xk = next;
  }
  return xk;
}

TensorBundle OapDataset::to_bundle() const {
  TensorBundle b;
  b.set("x_adv", x_adv);
  b.set("x_ref", x_ref);
  Tensor lab = Tensor::zeros({static_cast<int>(labels.size())});
  for (size_t i = 0; i < labels.size(); ++i) lab.data()[i] = static_cast<float>(labels[i]);
  b.set("labels", lab);
  b.meta = meta;
  return b;
}

OapDataset OapDataset::from_bundle(const TensorBundle& b) {
  OapDataset d;
  d.x_adv = b.get("x_adv");
  d.x_ref = b.get("x_ref");
  const Tensor& lab = b.get("labels");
  for (int64_t i = 0; i < lab.size(); ++i)
    d.labels.push_back(static_cast<int>(lab.data()[i]));
  d.meta = b.meta;
  return d;
}

OapDataset build_oap_dataset(const ClassifierModel& f, const Dataset& data,
                             const OapConfig& cfg, uint64_t seed) {
  if (data.size() == 0) fail_contract("build_oap_dataset: empty dataset");
  int n = data.size();

  ThreatModel atk = cfg.threat;
  atk.steps = cfg.inner_attack_steps;
  atk.alpha = cfg.step();
  LogitsFn forward = [&f](const Tensor& x, Rng&) { return f.forward(x); };
  AttackResult adv = pgd_attack(forward, data.inputs, data.labels, atk,
                                mix64(seed, hash_str64("oap-adv")));

  OapDataset ds;
  ds.x_adv = adv.adv;
  ds.x_ref = Tensor::zeros(data.inputs.shape());
  ds.labels = data.labels;
  parallel_for(n, [&](int i) {
    Tensor ref = gen_reference_point(f, take_row(data.inputs, i),
                                     data.labels[static_cast<size_t>(i)], cfg);
    set_row(ds.x_ref, i, ref);
  });

  ds.meta["k"] = cfg.k;
  ds.meta["alpha"] = cfg.step();
  ds.meta["epsilon"] = cfg.threat.epsilon;
  ds.meta["inner_attack_steps"] = cfg.inner_attack_steps;
  ds.meta["seed"] = seed;
  ds.meta["classifier_id"] = model_content_id(f.params);
  ds.meta["kind"] = data.kind;
  return ds;
}

namespace {

PurifierModel make_purifier_for(const Tensor& sample_batch, uint64_t seed) {
  if (sample_batch.rank() == 4)
    return PurifierModel::make("purifier-conv", seed, sample_batch.dim(1),
                               sample_batch.dim(2), sample_batch.dim(3));
  return PurifierModel::make("purifier-mlp", seed, 1, 16, 16, sample_batch.dim(1));
}

PurifierModel train_purifier_impl(const OapDataset& ds, const DiffusionSchedule* sched,
                                  int t_star, const TrainConfig& cfg) {
  if (ds.size() == 0) fail_contract("purifier training: empty dataset");
  PurifierModel m = make_purifier_for(ds.x_adv, mix64(cfg.seed, 0x33));
  m.noise_conditioned = sched != nullptr;
  for (auto& [n, t] : m.params) t.ensure_grad();
  Adam opt(m.param_tensors(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  Rng rng = Rng(cfg.seed).split("train-purifier");
  int n = ds.size();

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<int> idx(static_cast<size_t>(std::min(cfg.batch, n)));
    for (auto& i : idx) i = rng.uniform_int(n);
    Tensor xb = gather_rows(ds.x_adv, idx);
    Tensor yb = gather_rows(ds.x_ref, idx);

    if (sched) {
      // Per-sample forward diffusion at uniform t in [0, t_star]; the noised
      // input is a constant on the tape.
      int nb = xb.dim(0);
      int64_t rowsz = xb.size() / nb;
      for (int b = 0; b < nb; ++b) {
        int t = rng.uniform_int(t_star + 1);
        if (t == 0) continue;
        float sa = std::sqrt(sched->alpha_bar[static_cast<size_t>(t)]);
        float sn = std::sqrt(1.0f - sched->alpha_bar[static_cast<size_t>(t)]);
        for (int64_t i = b * rowsz; i < (b + 1) * rowsz; ++i)
          xb.data()[i] = sa * xb.data()[i] + sn * static_cast<float>(rng.gaussian());
      }
    }

    opt.zero_grad();
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = l1_loss(m.forward(xb), yb);
    double lv = loss.item();
    if (!std::isfinite(lv))
      fail_numeric("purifier training diverged at step " + std::to_string(step));
    tape.backward(loss);
    opt.step();
  }
  return m;
}

}  // namespace

PurifierModel train_baseline_purifier(const OapDataset& ds, const TrainConfig& cfg) {
  return train_purifier_impl(ds, nullptr, 0, cfg);
}

PurifierModel train_noise_conditioned_purifier(const OapDataset& ds,
                                               const DiffusionSchedule& sched,
                                               int t_star, const TrainConfig& cfg) {
  if (t_star < 0 || t_star > sched.total_steps)
    fail_contract("train_noise_conditioned_purifier: t_star outside the schedule");
  return train_purifier_impl(ds, &sched, t_star, cfg);
}

std::string model_content_id(const ParamList& params) {
  std::string bytes;
  for (const auto& [name, t] : params) {
    bytes.append(name);
    bytes.append(reinterpret_cast<const char*>(t.data()),
                 static_cast<size_t>(t.size()) * sizeof(float));
  }
  return content_hash_hex(bytes.data(), bytes.size());
}

}  // namespace oap
