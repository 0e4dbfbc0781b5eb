#include "oap/tensor.hpp"

#include <cmath>
#include <sstream>

#include "oap/errors.hpp"

namespace oap {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) fail_contract("tensor extents must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  int64_t n = shape_size(shape);
  t.p_ = std::make_shared<Payload>();
  t.p_->shape = std::move(shape);
  t.p_->v.assign(static_cast<size_t>(n), 0.0f);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t = zeros(std::move(shape));
  for (auto& x : t.p_->v) x = value;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> values) {
  int64_t n = shape_size(shape);
  if (n != static_cast<int64_t>(values.size()))
    fail_contract("tensor data length " + std::to_string(values.size()) +
                  " does not match shape " + shape_str(shape));
  Tensor t;
  t.p_ = std::make_shared<Payload>();
  t.p_->shape = std::move(shape);
  t.p_->v = std::move(values);
  return t;
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

const std::vector<int>& Tensor::shape() const {
  if (!p_) fail_contract("use of undefined tensor");
  return p_->shape;
}

int64_t Tensor::size() const { return static_cast<int64_t>(vec().size()); }

float* Tensor::data() { return vec().data(); }
const float* Tensor::data() const { return vec().data(); }

std::vector<float>& Tensor::vec() {
  if (!p_) fail_contract("use of undefined tensor");
  return p_->v;
}
const std::vector<float>& Tensor::vec() const {
  if (!p_) fail_contract("use of undefined tensor");
  return p_->v;
}

float Tensor::item() const {
  if (size() != 1) fail_contract("item() requires a scalar tensor, shape is " + shape_str(shape()));
  return vec()[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  if (!p_) return t;
  t.p_ = std::make_shared<Payload>();
  t.p_->shape = p_->shape;
  t.p_->v = p_->v;
  t.p_->nonfinite = p_->nonfinite;
  return t;
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

bool Tensor::has_grad() const { return p_ && p_->grad != nullptr; }

void Tensor::ensure_grad() {
  if (!p_) fail_contract("use of undefined tensor");
  if (!p_->grad) p_->grad = std::make_unique<std::vector<float>>(p_->v.size(), 0.0f);
}

void Tensor::zero_grad() {
  if (has_grad()) p_->grad->assign(p_->v.size(), 0.0f);
}

const std::vector<float>& Tensor::grad() const {
  if (!has_grad()) fail_contract("tensor has no gradient slot");
  return *p_->grad;
}

std::vector<float>& Tensor::grad_slot() {
  if (!has_grad()) fail_contract("tensor has no gradient slot");
  return *p_->grad;
}

Tensor Tensor::grad_tensor() const { return Tensor::from(shape(), grad()); }

bool Tensor::nonfinite_flag() const { return p_ && p_->nonfinite; }

void Tensor::set_nonfinite_flag(bool v) const {
  if (p_) p_->nonfinite = v;
}

bool Tensor::scan_nonfinite() const {
  if (!p_) return false;
  for (float x : p_->v) {
    if (!std::isfinite(x)) {
      p_->nonfinite = true;
      return true;
    }
  }
  return false;
}

}  // namespace oap
