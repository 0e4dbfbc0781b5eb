#include "oap/adam.hpp"

#include <cmath>

#include "oap/errors.hpp"

namespace oap {

Adam::Adam(std::vector<Tensor> params, float lr, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (params_.empty()) fail_contract("Adam requires at least one parameter");
  for (auto& p : params_) {
    p.ensure_grad();
    m_.emplace_back(static_cast<size_t>(p.size()), 0.0f);
    v_.emplace_back(static_cast<size_t>(p.size()), 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) fail_contract("Adam: parameter has no gradient");
    const auto& g = p.grad();
    float* pd = p.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0f - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0f - beta2_) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      pd[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

}  // namespace oap
