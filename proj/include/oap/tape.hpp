#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "oap/tensor.hpp"

namespace oap {

enum class Op : uint8_t {
  leaf,
  matmul,
  conv2d,
  add,
  sub,
  mul,
  add_bias_rows,   // [N,F] + [F]
  add_bias_chan,   // [N,C,H,W] + [C]
  add_row_chan,    // [N,C,H,W] + [N,C]
  scale,           // x * c
  add_scalar,      // x + c
  relu,
  silu,
  tanh_,
  clamp,
  sign,
  sum,
  mean,
  avg_pool2,
  reshape,
  softmax_xent,
  l1_loss,
  l2sq_loss,
};

struct OpAttrs {
  float a = 0.0f;  // clamp lo / scale factor / added scalar
  float b = 0.0f;  // clamp hi
  std::vector<int> labels;  // softmax_xent targets
  std::vector<int> shape;   // reshape: input shape
};

struct TapeNode {
  Op op;
  // input node ids aligned with the first inputs.size() entries of saved;
  // id -1 marks an untracked constant input
  std::vector<int> inputs;
  // saved[i] for i < inputs.size() are the input values; extra entries hold
  // op-specific activations (e.g. softmax probabilities)
  std::vector<Tensor> saved;
  Tensor out;
  OpAttrs attrs;
};

// Reverse-mode tape. Single-threaded per instance; distinct tapes may run on
// distinct threads. Activate with Tape::Scope; ops record onto the active
// tape when at least one input is tracked.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers t as a differentiation root. Returns a tracked handle sharing
  // t's storage and gradient slot. Repeated calls with the same storage
  // return the same node.
  Tensor leaf(const Tensor& t, bool needs_grad = true);

  // Accumulates d(loss)/d(tensor) into the gradient slot of every recorded
  // tensor that has one. Repeated calls accumulate.
  void backward(const Tensor& loss);

  // d(loss)/d(t) for any tensor recorded on this tape, from the last
  // backward() call (detached copy; zeros if the node was unreachable).
  Tensor grad_of(const Tensor& t) const;

  size_t size() const { return nodes_.size(); }

  class Scope {
   public:
    explicit Scope(Tape& t);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  // Temporarily disables recording (forward values are unchanged).
  class NoGrad {
   public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active();

  // used by ops.cpp
  int record(Op op, std::vector<int> inputs, std::vector<Tensor> saved,
             OpAttrs attrs, Tensor& out);
  const TapeNode& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

 private:
  std::vector<TapeNode> nodes_;
  std::unordered_map<const void*, int> leaf_ids_;
  std::vector<std::vector<float>> last_grads_;
};

}  // namespace oap
