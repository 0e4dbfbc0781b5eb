#include "oap/models.hpp"

#include <cmath>
#include <fstream>

#include "oap/adam.hpp"
#include "oap/diffusion.hpp"
#include "oap/errors.hpp"
#include "oap/ops.hpp"
#include "oap/rng.hpp"
#include "oap/tape.hpp"

namespace oap {

namespace {

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng, float gain = 1.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  float stddev = gain * std::sqrt(2.0f / static_cast<float>(fan_in));
  rng.fill_gaussian(t.data(), t.size(), 0.0f, stddev);
  return t;
}

const Tensor& find_param(const ParamList& params, const std::string& name) {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  fail_contract("missing parameter " + name);
}

// Parameters enter the tape only when they carry a gradient slot (training);
// otherwise they pass through as untracked constants.
Tensor use_param(const ParamList& params, const std::string& name) {
  const Tensor& t = find_param(params, name);
  Tape* tp = Tape::active();
  if (tp && t.has_grad()) return tp->leaf(t);
  return t;
}

std::vector<Tensor> tensors_of(ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (auto& [n, t] : params) out.push_back(t);
  return out;
}

int64_t count_of(const ParamList& params) {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

Checkpoint make_ckpt(const std::string& arch, const nlohmann::json& meta,
                     const ParamList& params) {
  Checkpoint ck;
  ck.arch = arch;
  ck.meta = meta;
  ck.params = params;
  return ck;
}

void write_curve(const std::string& path, const std::vector<std::pair<int, double>>& rows) {
  if (path.empty()) return;
  std::ofstream os(path);
  if (!os) fail_io("cannot write training curve: " + path);
  os << "step,loss\n";
  char buf[64];
  for (const auto& [step, loss] : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.6g\n", step, loss);
    os << buf;
  }
}

}  // namespace

Tensor time_embedding(const std::vector<int>& t, int dim) {
  int half = dim / 2;
  Tensor e = Tensor::zeros({static_cast<int>(t.size()), dim});
  for (size_t i = 0; i < t.size(); ++i)
    for (int k = 0; k < half; ++k) {
      double f = std::pow(1000.0, static_cast<double>(k) / (half - 1));
      double ph = static_cast<double>(t[i]) / f;
      e.data()[i * dim + 2 * k] = static_cast<float>(std::sin(ph));
      e.data()[i * dim + 2 * k + 1] = static_cast<float>(std::cos(ph));
    }
  return e;
}

// ---------------------------------------------------------------------------
// ClassifierModel

ClassifierModel ClassifierModel::make(const std::string& arch, int classes,
                                      uint64_t seed) {
  ClassifierModel m;
  m.arch = arch;
  m.classes = classes;
  Rng rng(seed);
  if (arch == "mlp-2d") {
    m.in_dim = 2;
    m.params.emplace_back("l1.w", he_normal({2, 64}, 2, rng));
    m.params.emplace_back("l1.b", Tensor::zeros({64}));
    m.params.emplace_back("l2.w", he_normal({64, 64}, 64, rng));
    m.params.emplace_back("l2.b", Tensor::zeros({64}));
    m.params.emplace_back("head.w", he_normal({64, classes}, 64, rng));
    m.params.emplace_back("head.b", Tensor::zeros({classes}));
  } else if (arch == "cnn-tiny") {
    m.in_channels = 1;
    m.in_h = m.in_w = 16;
    m.params.emplace_back("conv1.w", he_normal({8, 1, 3, 3}, 9, rng));
    m.params.emplace_back("conv1.b", Tensor::zeros({8}));
    m.params.emplace_back("conv2.w", he_normal({16, 8, 3, 3}, 72, rng));
    m.params.emplace_back("conv2.b", Tensor::zeros({16}));
    m.params.emplace_back("conv3.w", he_normal({16, 16, 3, 3}, 144, rng));
    m.params.emplace_back("conv3.b", Tensor::zeros({16}));
    m.params.emplace_back("head.w", he_normal({64, classes}, 64, rng));
    m.params.emplace_back("head.b", Tensor::zeros({classes}));
  } else {
    fail_config("unknown classifier arch: " + arch);
  }
  return m;
}

Tensor ClassifierModel::forward(const Tensor& x) const {
  if (arch == "mlp-2d") {
    if (x.rank() != 2 || x.dim(1) != in_dim)
      fail_contract("mlp-2d expects [N," + std::to_string(in_dim) + "], got " +
                    shape_str(x.shape()));
    Tensor h = relu(add_bias_rows(matmul(x, use_param(params, "l1.w")),
                                  use_param(params, "l1.b")));
    h = relu(add_bias_rows(matmul(h, use_param(params, "l2.w")),
                           use_param(params, "l2.b")));
    return add_bias_rows(matmul(h, use_param(params, "head.w")),
                         use_param(params, "head.b"));
  }
  if (arch == "cnn-tiny") {
    if (x.rank() != 4 || x.dim(1) != in_channels || x.dim(2) != in_h || x.dim(3) != in_w)
      fail_contract("cnn-tiny expects [N,1,16,16], got " + shape_str(x.shape()));
    Tensor h = relu(add_bias_chan(conv2d(x, use_param(params, "conv1.w")),
                                  use_param(params, "conv1.b")));
    h = avg_pool2(h);  // 8x8
    h = relu(add_bias_chan(conv2d(h, use_param(params, "conv2.w")),
                           use_param(params, "conv2.b")));
    h = avg_pool2(h);  // 4x4
    h = relu(add_bias_chan(conv2d(h, use_param(params, "conv3.w")),
                           use_param(params, "conv3.b")));
    h = avg_pool2(h);  // 2x2
    h = reshape(h, {x.dim(0), 64});
    return add_bias_rows(matmul(h, use_param(params, "head.w")),
                         use_param(params, "head.b"));
  }
  fail_config("unknown classifier arch: " + arch);
}

Checkpoint ClassifierModel::to_checkpoint() const {
  nlohmann::json meta;
  meta["classes"] = classes;
  meta["kind"] = "classifier";
  return make_ckpt(arch, meta, params);
}

ClassifierModel ClassifierModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "classifier")
    fail_io("checkpoint is not a classifier (kind=" + ck.meta.value("kind", "?") + ")");
  ClassifierModel m;
  m.arch = ck.arch;
  m.classes = ck.meta.at("classes").get<int>();
  m.params = ck.params;
  return m;
}

std::vector<Tensor> ClassifierModel::param_tensors() { return tensors_of(params); }
int64_t ClassifierModel::param_count() const { return count_of(params); }

// ---------------------------------------------------------------------------
// ScoreModel

ScoreModel ScoreModel::make(const std::string& arch, int total_steps, uint64_t seed,
                            int channels, int height, int width, int in_dim) {
  ScoreModel m;
  m.arch = arch;
  m.total_steps = total_steps;
  Rng rng(seed);
  if (arch == "score-conv") {
    m.channels = channels;
    m.height = height;
    m.width = width;
    m.params.emplace_back("conv1.w", he_normal({32, channels, 3, 3}, 9 * channels, rng));
    m.params.emplace_back("conv1.b", Tensor::zeros({32}));
    m.params.emplace_back("temb.w", he_normal({m.time_dim, 32}, m.time_dim, rng));
    m.params.emplace_back("temb.b", Tensor::zeros({32}));
    m.params.emplace_back("conv2.w", he_normal({32, 32, 3, 3}, 288, rng));
    m.params.emplace_back("conv2.b", Tensor::zeros({32}));
    m.params.emplace_back("conv3.w", he_normal({channels, 32, 3, 3}, 288, rng, 0.1f));
    m.params.emplace_back("conv3.b", Tensor::zeros({channels}));
  } else if (arch == "score-mlp") {
    m.in_dim = in_dim;
    m.params.emplace_back("l1.w", he_normal({in_dim, 64}, in_dim, rng));
    m.params.emplace_back("l1.b", Tensor::zeros({64}));
    m.params.emplace_back("temb.w", he_normal({m.time_dim, 64}, m.time_dim, rng));
    m.params.emplace_back("temb.b", Tensor::zeros({64}));
    m.params.emplace_back("l2.w", he_normal({64, 64}, 64, rng));
    m.params.emplace_back("l2.b", Tensor::zeros({64}));
    m.params.emplace_back("l3.w", he_normal({64, in_dim}, 64, rng, 0.1f));
    m.params.emplace_back("l3.b", Tensor::zeros({in_dim}));
  } else {
    fail_config("unknown score arch: " + arch);
  }
  return m;
}

Tensor ScoreModel::forward(const Tensor& x, int t) const {
  return forward(x, std::vector<int>(static_cast<size_t>(x.dim(0)), t));
}

Tensor ScoreModel::forward(const Tensor& x, const std::vector<int>& t) const {
  for (int ti : t)
    if (ti < 0 || ti > total_steps)
      fail_contract("diffusion time index out of range [0," +
                    std::to_string(total_steps) + "]");
  if (static_cast<int>(t.size()) != x.dim(0))
    fail_contract("per-sample time count does not match batch");
  Tensor emb = time_embedding(t, time_dim);
  if (arch == "score-conv") {
    if (x.rank() != 4 || x.dim(1) != channels)
      fail_contract("score-conv expects [N,C,H,W], got " + shape_str(x.shape()));
    Tensor te = add_bias_rows(matmul(emb, use_param(params, "temb.w")),
                              use_param(params, "temb.b"));  // [N,32]
    Tensor h = add_bias_chan(conv2d(x, use_param(params, "conv1.w")),
                             use_param(params, "conv1.b"));
    h = silu(add_row_chan(h, te));
    h = silu(add_bias_chan(conv2d(h, use_param(params, "conv2.w")),
                           use_param(params, "conv2.b")));
    return add_bias_chan(conv2d(h, use_param(params, "conv3.w")),
                         use_param(params, "conv3.b"));
  }
  if (arch == "score-mlp") {
    if (x.rank() != 2 || x.dim(1) != in_dim)
      fail_contract("score-mlp expects [N,D], got " + shape_str(x.shape()));
    Tensor te = add_bias_rows(matmul(emb, use_param(params, "temb.w")),
                              use_param(params, "temb.b"));  // [N,64]
    Tensor h = add_bias_rows(matmul(x, use_param(params, "l1.w")),
                             use_param(params, "l1.b"));
    h = silu(add(h, te));
    h = silu(add_bias_rows(matmul(h, use_param(params, "l2.w")),
                           use_param(params, "l2.b")));
    return add_bias_rows(matmul(h, use_param(params, "l3.w")),
                         use_param(params, "l3.b"));
  }
  fail_config("unknown score arch: " + arch);
}

Checkpoint ScoreModel::to_checkpoint() const {
  nlohmann::json meta;
  meta["kind"] = "score";
  meta["total_steps"] = total_steps;
  meta["channels"] = channels;
  meta["height"] = height;
  meta["width"] = width;
  meta["in_dim"] = in_dim;
  meta["time_dim"] = time_dim;
  return make_ckpt(arch, meta, params);
}

ScoreModel ScoreModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "score") fail_io("checkpoint is not a score model");
  ScoreModel m;
  m.arch = ck.arch;
  m.total_steps = ck.meta.at("total_steps").get<int>();
  m.channels = ck.meta.value("channels", 1);
  m.height = ck.meta.value("height", 16);
  m.width = ck.meta.value("width", 16);
  m.in_dim = ck.meta.value("in_dim", 2);
  m.time_dim = ck.meta.value("time_dim", 16);
  m.params = ck.params;
  return m;
}

std::vector<Tensor> ScoreModel::param_tensors() { return tensors_of(params); }
int64_t ScoreModel::param_count() const { return count_of(params); }

// ---------------------------------------------------------------------------
// PurifierModel

PurifierModel PurifierModel::make(const std::string& arch, uint64_t seed, int channels,
                                  int height, int width, int in_dim) {
  PurifierModel m;
  m.arch = arch;
  Rng rng(seed);
  if (arch == "purifier-conv") {
    m.channels = channels;
    m.height = height;
    m.width = width;
    m.params.emplace_back("enc1.w", he_normal({16, channels, 3, 3}, 9 * channels, rng));
    m.params.emplace_back("enc1.b", Tensor::zeros({16}));
    m.params.emplace_back("enc2.w", he_normal({16, 16, 3, 3}, 144, rng));
    m.params.emplace_back("enc2.b", Tensor::zeros({16}));
    m.params.emplace_back("enc3.w", he_normal({16, 16, 3, 3}, 144, rng));
    m.params.emplace_back("enc3.b", Tensor::zeros({16}));
    m.params.emplace_back("dec1.w", he_normal({16, 16, 3, 3}, 144, rng));
    m.params.emplace_back("dec1.b", Tensor::zeros({16}));
    m.params.emplace_back("dec2.w", he_normal({16, 16, 3, 3}, 144, rng));
    m.params.emplace_back("dec2.b", Tensor::zeros({16}));
    // near-identity start: the residual branch opens at zero
    m.params.emplace_back("dec3.w", he_normal({channels, 16, 3, 3}, 144, rng, 0.01f));
    m.params.emplace_back("dec3.b", Tensor::zeros({channels}));
  } else if (arch == "purifier-mlp") {
    m.in_dim = in_dim;
    m.params.emplace_back("enc1.w", he_normal({in_dim, 64}, in_dim, rng));
    m.params.emplace_back("enc1.b", Tensor::zeros({64}));
    m.params.emplace_back("enc2.w", he_normal({64, 64}, 64, rng));
    m.params.emplace_back("enc2.b", Tensor::zeros({64}));
    m.params.emplace_back("dec1.w", he_normal({64, 64}, 64, rng));
    m.params.emplace_back("dec1.b", Tensor::zeros({64}));
    m.params.emplace_back("dec2.w", he_normal({64, in_dim}, 64, rng, 0.01f));
    m.params.emplace_back("dec2.b", Tensor::zeros({in_dim}));
  } else {
    fail_config("unknown purifier arch: " + arch);
  }
  return m;
}

Tensor PurifierModel::forward(const Tensor& x) const {
  if (arch == "purifier-conv") {
    if (x.rank() != 4 || x.dim(1) != channels)
      fail_contract("purifier-conv expects [N,C,H,W], got " + shape_str(x.shape()));
    Tensor h = relu(add_bias_chan(conv2d(x, use_param(params, "enc1.w")),
                                  use_param(params, "enc1.b")));
    h = relu(add_bias_chan(conv2d(h, use_param(params, "enc2.w")),
                           use_param(params, "enc2.b")));
    h = relu(add_bias_chan(conv2d(h, use_param(params, "enc3.w")),
                           use_param(params, "enc3.b")));
    h = relu(add_bias_chan(conv2d(h, use_param(params, "dec1.w")),
                           use_param(params, "dec1.b")));
    h = relu(add_bias_chan(conv2d(h, use_param(params, "dec2.w")),
                           use_param(params, "dec2.b")));
    h = add_bias_chan(conv2d(h, use_param(params, "dec3.w")),
                      use_param(params, "dec3.b"));
    return clamp(add(x, h), 0.0f, 1.0f);
  }
  if (arch == "purifier-mlp") {
    if (x.rank() != 2 || x.dim(1) != in_dim)
      fail_contract("purifier-mlp expects [N,D], got " + shape_str(x.shape()));
    Tensor h = relu(add_bias_rows(matmul(x, use_param(params, "enc1.w")),
                                  use_param(params, "enc1.b")));
    h = relu(add_bias_rows(matmul(h, use_param(params, "enc2.w")),
                           use_param(params, "enc2.b")));
    h = relu(add_bias_rows(matmul(h, use_param(params, "dec1.w")),
                           use_param(params, "dec1.b")));
    h = add_bias_rows(matmul(h, use_param(params, "dec2.w")),
                      use_param(params, "dec2.b"));
    return clamp(add(x, h), 0.0f, 1.0f);
  }
  fail_config("unknown purifier arch: " + arch);
}

Checkpoint PurifierModel::to_checkpoint() const {
  nlohmann::json meta;
  meta["kind"] = "purifier";
  meta["noise_conditioned"] = noise_conditioned;
  meta["channels"] = channels;
  meta["height"] = height;
  meta["width"] = width;
  meta["in_dim"] = in_dim;
  return make_ckpt(arch, meta, params);
}

PurifierModel PurifierModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "purifier") fail_io("checkpoint is not a purifier");
  PurifierModel m;
  m.arch = ck.arch;
  m.noise_conditioned = ck.meta.value("noise_conditioned", false);
  m.channels = ck.meta.value("channels", 1);
  m.height = ck.meta.value("height", 16);
  m.width = ck.meta.value("width", 16);
  m.in_dim = ck.meta.value("in_dim", 2);
  m.params = ck.params;
  return m;
}

std::vector<Tensor> PurifierModel::param_tensors() { return tensors_of(params); }
int64_t PurifierModel::param_count() const { return count_of(params); }

// ---------------------------------------------------------------------------
// training loops

double accuracy(const ClassifierModel& m, const Tensor& inputs,
                const std::vector<int>& labels) {
  Tape::NoGrad ng;
  std::vector<int> pred = argmax_rows(m.forward(inputs));
  int hits = 0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++hits;
  return labels.empty() ? 0.0 : static_cast<double>(hits) / labels.size();
}

ClassifierModel train_classifier(const Dataset& data, const std::string& arch,
                                 const TrainConfig& cfg) {
  if (data.size() == 0) fail_contract("train_classifier: empty dataset");
  for (int y : data.labels)
    if (y < 0 || y >= data.classes) fail_contract("label out of range");
  ClassifierModel m = ClassifierModel::make(arch, data.classes, mix64(cfg.seed, 0x11));
  for (auto& [n, t] : m.params) t.ensure_grad();
  Adam opt(m.param_tensors(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  Rng rng = Rng(cfg.seed).split("train-classifier");

  std::vector<std::pair<int, double>> curve;
  int n = data.size();
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<int> idx(static_cast<size_t>(std::min(cfg.batch, n)));
    for (auto& i : idx) i = rng.uniform_int(n);
    Tensor xb = data.gather(idx);
    std::vector<int> yb(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) yb[k] = data.labels[static_cast<size_t>(idx[k])];

    opt.zero_grad();
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = softmax_cross_entropy(m.forward(xb), yb);
    double lv = loss.item();
    if (!std::isfinite(lv))
      fail_numeric("train_classifier diverged at step " + std::to_string(step));
    tape.backward(loss);
    opt.step();
    if (step % cfg.log_every == 0 || step == 1 || step == cfg.steps)
      curve.emplace_back(step, lv);
  }
  write_curve(cfg.curve_csv, curve);
  return m;
}

ScoreModel train_score_model(const Dataset& data, const DiffusionSchedule& sched,
                             const TrainConfig& cfg) {
  if (data.size() == 0) fail_contract("train_score_model: empty dataset");
  bool image = data.inputs.rank() == 4;
  ScoreModel m =
      image ? ScoreModel::make("score-conv", sched.total_steps, mix64(cfg.seed, 0x22),
                               data.inputs.dim(1), data.inputs.dim(2), data.inputs.dim(3))
            : ScoreModel::make("score-mlp", sched.total_steps, mix64(cfg.seed, 0x22), 1,
                               16, 16, data.inputs.dim(1));
  for (auto& [n, t] : m.params) t.ensure_grad();
  Adam opt(m.param_tensors(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  Rng rng = Rng(cfg.seed).split("train-score");

  std::vector<std::pair<int, double>> curve;
  int n = data.size();
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<int> idx(static_cast<size_t>(std::min(cfg.batch, n)));
    for (auto& i : idx) i = rng.uniform_int(n);
    Tensor x0 = data.gather(idx);
    int nb = x0.dim(0);

    // noised inputs and targets are constants on the tape
    std::vector<int> tvec(static_cast<size_t>(nb));
    Tensor xt = Tensor::zeros(x0.shape());
    Tensor noise = Tensor::zeros(x0.shape());
    int64_t rowsz = x0.size() / nb;
    for (int b = 0; b < nb; ++b) {
      int t = 1 + rng.uniform_int(sched.total_steps);
      tvec[static_cast<size_t>(b)] = t;
      float sa = std::sqrt(sched.alpha_bar[static_cast<size_t>(t)]);
      float sn = std::sqrt(1.0f - sched.alpha_bar[static_cast<size_t>(t)]);
      for (int64_t i = b * rowsz; i < (b + 1) * rowsz; ++i) {
        float eps = static_cast<float>(rng.gaussian());
        noise.data()[i] = eps;
        xt.data()[i] = sa * x0.data()[i] + sn * eps;
      }
    }

    opt.zero_grad();
    Tape tape;
    Tape::Scope scope(tape);
    Tensor pred = m.forward(xt, tvec);
    Tensor loss = scale(l2sq_loss(pred, noise), 2.0f / static_cast<float>(pred.size()));
    double lv = loss.item();
    if (!std::isfinite(lv))
      fail_numeric("train_score_model diverged at step " + std::to_string(step));
    tape.backward(loss);
    opt.step();
    if (step % cfg.log_every == 0 || step == 1 || step == cfg.steps)
      curve.emplace_back(step, lv);
  }
  write_curve(cfg.curve_csv, curve);
  return m;
}

}  // namespace oap
