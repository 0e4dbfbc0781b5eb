#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace oap {

class Tape;

int64_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Dense row-major float32 tensor. Copies are shallow: they share storage and
// the gradient slot. clone() deep-copies. A tensor carries a tape link only
// when it was produced by an op (or registered as a leaf) while a tape scope
// was active; detached tensors never receive gradient.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, float value);
  static Tensor from(std::vector<int> shape, std::vector<float> values);
  static Tensor scalar(float value);

  bool defined() const { return p_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const { return shape()[static_cast<size_t>(i)]; }
  int64_t size() const;

  float* data();
  const float* data() const;
  std::vector<float>& vec();
  const std::vector<float>& vec() const;
  float item() const;  // scalar tensors only

  Tensor clone() const;
  // same storage, no tape link
  Tensor detached() const;

  bool has_grad() const;
  void ensure_grad();
  void zero_grad();
  const std::vector<float>& grad() const;
  std::vector<float>& grad_slot();  // mutable; slot must exist
  Tensor grad_tensor() const;       // deep copy of the slot, detached

  // lazily propagated NaN/Inf diagnostic
  bool nonfinite_flag() const;
  void set_nonfinite_flag(bool v) const;
  bool scan_nonfinite() const;  // O(n); updates the flag

  bool recorded() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape* tape() const { return tape_; }

  bool same_storage(const Tensor& other) const { return p_ == other.p_; }
  const void* storage_id() const { return p_.get(); }

 private:
  struct Payload {
    std::vector<int> shape;
    std::vector<float> v;
    std::unique_ptr<std::vector<float>> grad;
    mutable bool nonfinite = false;
  };
  std::shared_ptr<Payload> p_;
  Tape* tape_ = nullptr;
  int node_ = -1;

  friend class Tape;
};

bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace oap
