#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "oap/dataset.hpp"
#include "oap/serialize.hpp"
#include "oap/tensor.hpp"

namespace oap {

struct DiffusionSchedule;

struct TrainConfig {
  int steps = 1500;
  int batch = 32;
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  uint64_t seed = 1;
  std::string curve_csv;  // optional training-curve output
  int log_every = 50;
};

using ParamList = std::vector<std::pair<std::string, Tensor>>;

// f_phi. mlp-2d: 2-64-64-C relu. cnn-tiny: three 3x3 conv layers
// (8,16,16 channels) with 2x2 mean pooling and a linear head.
struct ClassifierModel {
  std::string arch;  // mlp-2d | cnn-tiny
  int classes = 0;
  int in_channels = 1, in_h = 16, in_w = 16;
  int in_dim = 2;
  ParamList params;

  Tensor forward(const Tensor& x) const;  // logits [N,C]
  Checkpoint to_checkpoint() const;
  static ClassifierModel from_checkpoint(const Checkpoint& ck);
  static ClassifierModel make(const std::string& arch, int classes, uint64_t seed);
  std::vector<Tensor> param_tensors();
  int64_t param_count() const;
};

// eps_phi, the noise predictor. Conv trunk (or MLP trunk for 2-D data) with
// a 16-dim sinusoidal time embedding added after the first layer.
struct ScoreModel {
  std::string arch;  // score-conv | score-mlp
  int channels = 1, height = 16, width = 16;
  int in_dim = 2;
  int time_dim = 16;
  int total_steps = 1000;
  ParamList params;

  Tensor forward(const Tensor& x, int t) const;
  Tensor forward(const Tensor& x, const std::vector<int>& t) const;
  Checkpoint to_checkpoint() const;
  static ScoreModel from_checkpoint(const Checkpoint& ck);
  static ScoreModel make(const std::string& arch, int total_steps, uint64_t seed,
                         int channels = 1, int height = 16, int width = 16,
                         int in_dim = 2);
  std::vector<Tensor> param_tensors();
  int64_t param_count() const;
};

// g_theta. Small conv encoder-decoder (or MLP for 2-D data) with a residual
// connection from the input; outputs clamped to [0,1].
struct PurifierModel {
  std::string arch;  // purifier-conv | purifier-mlp
  bool noise_conditioned = false;
  int channels = 1, height = 16, width = 16;
  int in_dim = 2;
  ParamList params;

  Tensor forward(const Tensor& x) const;
  Checkpoint to_checkpoint() const;
  static PurifierModel from_checkpoint(const Checkpoint& ck);
  static PurifierModel make(const std::string& arch, uint64_t seed, int channels = 1,
                            int height = 16, int width = 16, int in_dim = 2);
  std::vector<Tensor> param_tensors();
  int64_t param_count() const;
};

ClassifierModel train_classifier(const Dataset& data, const std::string& arch,
                                 const TrainConfig& cfg);

// denoising score matching: predict the injected noise at a uniform t in [1,T]
ScoreModel train_score_model(const Dataset& data, const DiffusionSchedule& sched,
                             const TrainConfig& cfg);

// sinusoidal embedding, frequencies geometric from 1 to 1000 (constant tensor)
Tensor time_embedding(const std::vector<int>& t, int dim);

double accuracy(const ClassifierModel& m, const Tensor& inputs,
                const std::vector<int>& labels);

}  // namespace oap
