#pragma once

#include <vector>

#include "oap/tensor.hpp"

namespace oap {

// Tensor primitives. Each op validates shapes, computes the forward value,
// and records itself on the active tape when any input is tracked. Forward
// values are identical with and without an active tape. Reductions
// accumulate in double.

Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N]
// stride 1, zero padding "same", odd kernel; x [N,C,H,W], w [O,C,kh,kw]
Tensor conv2d(const Tensor& x, const Tensor& w);
Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_bias_rows(const Tensor& x, const Tensor& b);  // [N,F]+[F]
Tensor add_bias_chan(const Tensor& x, const Tensor& b);  // [N,C,H,W]+[C]
Tensor add_row_chan(const Tensor& x, const Tensor& b);   // [N,C,H,W]+[N,C]
Tensor scale(const Tensor& x, float c);
Tensor add_scalar(const Tensor& x, float c);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor tanh(const Tensor& x);
// subgradient zero at and outside the bounds
Tensor clamp(const Tensor& x, float lo, float hi);
// gradient defined as zero everywhere
Tensor sign(const Tensor& x);
Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar
Tensor avg_pool2(const Tensor& x);  // 2x2/2; H, W even
Tensor reshape(const Tensor& x, std::vector<int> shape);
// mean cross-entropy over the batch; logits [N,C], labels in [0,C)
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor l1_loss(const Tensor& a, const Tensor& b);    // mean |a-b|
Tensor l2sq_loss(const Tensor& a, const Tensor& b);  // 0.5 * sum (a-b)^2

// forward-only helpers (never recorded)
Tensor softmax_rows(const Tensor& logits);
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace oap
