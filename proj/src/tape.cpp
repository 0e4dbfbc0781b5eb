#include "oap/tape.hpp"

#include <cmath>

#include "oap/errors.hpp"
#include "ops_vjp.hpp"

namespace oap {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape::Scope::Scope(Tape& t) : prev_(g_active) { g_active = &t; }
Tape::Scope::~Scope() { g_active = prev_; }

Tape::NoGrad::NoGrad() : prev_(g_active) { g_active = nullptr; }
Tape::NoGrad::~NoGrad() { g_active = prev_; }

Tape* Tape::active() { return g_active; }

int Tape::record(Op op, std::vector<int> inputs, std::vector<Tensor> saved,
                 OpAttrs attrs, Tensor& out) {
  TapeNode nd;
  nd.op = op;
  nd.inputs = std::move(inputs);
  nd.saved = std::move(saved);
  nd.attrs = std::move(attrs);
  nd.out = out;
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(nd));
  out.tape_ = this;
  out.node_ = id;
  nodes_.back().out.tape_ = this;
  nodes_.back().out.node_ = id;
  return id;
}

Tensor Tape::leaf(const Tensor& t, bool needs_grad) {
  if (!t.defined()) fail_contract("cannot register an undefined tensor as leaf");
  auto it = leaf_ids_.find(t.storage_id());
  if (it != leaf_ids_.end()) {
    Tensor r = t;
    r.tape_ = this;
    r.node_ = it->second;
    if (needs_grad) r.ensure_grad();
    return r;
  }
  if (t.recorded() && t.tape() == this) {
    Tensor r = t;
    if (needs_grad) r.ensure_grad();
    return r;
  }
  Tensor r = t.detached();
  if (needs_grad) r.ensure_grad();
  int id = record(Op::leaf, {}, {}, {}, r);
  leaf_ids_.emplace(t.storage_id(), id);
  return r;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.recorded() || loss.tape() != this)
    fail_contract("backward: loss is not recorded on this tape");
  if (loss.size() != 1) fail_contract("backward: loss must be scalar");

  last_grads_.assign(nodes_.size(), {});
  auto& seed = last_grads_[static_cast<size_t>(loss.node())];
  seed.assign(1, 1.0f);

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    auto& g = last_grads_[static_cast<size_t>(i)];
    if (g.empty()) continue;
    const TapeNode& nd = nodes_[static_cast<size_t>(i)];
    auto grad_buf = [&](int slot) -> float* {
      int id = nd.inputs[static_cast<size_t>(slot)];
      if (id < 0) return nullptr;
      auto& buf = last_grads_[static_cast<size_t>(id)];
      if (buf.empty())
        buf.assign(static_cast<size_t>(nodes_[static_cast<size_t>(id)].out.size()), 0.0f);
      return buf.data();
    };
    detail::op_vjp(nd, g, grad_buf);
  }

  // deposit into the gradient slots of every recorded tensor that has one
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const auto& g = last_grads_[i];
    if (g.empty()) continue;
    Tensor& out = nodes_[i].out;
    if (!out.has_grad()) continue;
    auto& slot = out.grad_slot();
    for (size_t k = 0; k < g.size(); ++k) slot[k] += g[k];
  }
}

Tensor Tape::grad_of(const Tensor& t) const {
  if (!t.recorded() || t.tape() != this)
    fail_contract("grad_of: tensor is not recorded on this tape");
  const auto& g = last_grads_[static_cast<size_t>(t.node())];
  if (g.empty()) return Tensor::zeros(t.shape());
  return Tensor::from(t.shape(), g);
}

}  // namespace oap
