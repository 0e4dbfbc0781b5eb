#include "oap/ops.hpp"

#include <cmath>
#include <cstring>
#include <functional>

#include "oap/errors.hpp"
#include "oap/tape.hpp"
#include "ops_vjp.hpp"

namespace oap {

namespace {

// Records `out` on the active tape when any input is tracked on it.
Tensor finish(Op op, std::vector<Tensor> inputs, std::vector<Tensor> extra,
              OpAttrs attrs, Tensor out) {
  bool nonfinite = false;
  for (const auto& t : inputs) nonfinite |= t.nonfinite_flag();
  if (nonfinite) out.set_nonfinite_flag(true);

  Tape* tp = Tape::active();
  if (!tp) return out;
  bool any_tracked = false;
  std::vector<int> ids(inputs.size(), -1);
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& t = inputs[i];
    if (t.recorded()) {
      if (t.tape() != tp) fail_contract("tensor belongs to a different tape");
      ids[i] = t.node();
      any_tracked = true;
    }
  }
  if (!any_tracked) return out;
  std::vector<Tensor> saved = std::move(inputs);
  for (auto& e : extra) saved.push_back(std::move(e));
  tp->record(op, std::move(ids), std::move(saved), std::move(attrs), out);
  return out;
}

void check_rank(const Tensor& t, int r, const char* what) {
  if (t.rank() != r)
    fail_contract(std::string(what) + ": expected rank " + std::to_string(r) +
                  ", got shape " + shape_str(t.shape()));
}

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul lhs");
  check_rank(b, 2, "matmul rhs");
  int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    fail_contract("matmul inner extents differ: " + shape_str(a.shape()) +
                  " x " + shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t)
        acc += static_cast<double>(pa[i * k + t]) * pb[t * n + j];
      po[i * n + j] = static_cast<float>(acc);
    }
  return finish(Op::matmul, {a, b}, {}, {}, std::move(out));
}

Tensor conv2d(const Tensor& x, const Tensor& w) {
  check_rank(x, 4, "conv2d input");
  check_rank(w, 4, "conv2d weight");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int oc = w.dim(0), ic = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (ic != c)
    fail_contract("conv2d channel mismatch: input " + shape_str(x.shape()) +
                  ", weight " + shape_str(w.shape()));
  if (kh % 2 == 0 || kw % 2 == 0) fail_contract("conv2d requires odd kernel extents");
  int ph = kh / 2, pw = kw / 2;
  Tensor out = Tensor::zeros({n, oc, h, wd});
  const float* px = x.data();
  const float* pk = w.data();
  float* po = out.data();
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < oc; ++o)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < wd; ++j) {
          double acc = 0.0;
          for (int ci = 0; ci < c; ++ci)
            for (int u = 0; u < kh; ++u) {
              int yy = i + u - ph;
              if (yy < 0 || yy >= h) continue;
              const float* xrow = px + ((static_cast<int64_t>(b) * c + ci) * h + yy) * wd;
              const float* krow = pk + ((static_cast<int64_t>(o) * c + ci) * kh + u) * kw;
              for (int v = 0; v < kw; ++v) {
                int xx = j + v - pw;
                if (xx < 0 || xx >= wd) continue;
                acc += static_cast<double>(xrow[xx]) * krow[v];
              }
            }
          po[((static_cast<int64_t>(b) * oc + o) * h + i) * wd + j] = static_cast<float>(acc);
        }
  return finish(Op::conv2d, {x, w}, {}, {}, std::move(out));
}

namespace {

Tensor ew_binary(Op op, const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    fail_contract("elementwise op shape mismatch: " + shape_str(a.shape()) +
                  " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t n = a.size();
  switch (op) {
    case Op::add: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
    case Op::sub: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
    case Op::mul: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
    default: fail_contract("bad elementwise op");
  }
  return finish(op, {a, b}, {}, {}, std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return ew_binary(Op::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return ew_binary(Op::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return ew_binary(Op::mul, a, b); }

Tensor add_bias_rows(const Tensor& x, const Tensor& b) {
  check_rank(x, 2, "add_bias_rows input");
  check_rank(b, 1, "add_bias_rows bias");
  int n = x.dim(0), f = x.dim(1);
  if (b.dim(0) != f)
    fail_contract("bias length " + shape_str(b.shape()) + " does not match " + shape_str(x.shape()));
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < f; ++j) po[i * f + j] = px[i * f + j] + pb[j];
  return finish(Op::add_bias_rows, {x, b}, {}, {}, std::move(out));
}

Tensor add_bias_chan(const Tensor& x, const Tensor& b) {
  check_rank(x, 4, "add_bias_chan input");
  check_rank(b, 1, "add_bias_chan bias");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (b.dim(0) != c)
    fail_contract("bias length " + shape_str(b.shape()) + " does not match " + shape_str(x.shape()));
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t hw = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int ci = 0; ci < c; ++ci) {
      int64_t base = (static_cast<int64_t>(i) * c + ci) * hw;
      for (int64_t p = 0; p < hw; ++p) po[base + p] = px[base + p] + pb[ci];
    }
  return finish(Op::add_bias_chan, {x, b}, {}, {}, std::move(out));
}

Tensor add_row_chan(const Tensor& x, const Tensor& b) {
  check_rank(x, 4, "add_row_chan input");
  check_rank(b, 2, "add_row_chan bias");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (b.dim(0) != n || b.dim(1) != c)
    fail_contract("per-row bias " + shape_str(b.shape()) + " does not match " + shape_str(x.shape()));
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t hw = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int ci = 0; ci < c; ++ci) {
      int64_t base = (static_cast<int64_t>(i) * c + ci) * hw;
      float bias = pb[i * c + ci];
      for (int64_t p = 0; p < hw; ++p) po[base + p] = px[base + p] + bias;
    }
  return finish(Op::add_row_chan, {x, b}, {}, {}, std::move(out));
}

Tensor scale(const Tensor& x, float c) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = px[i] * c;
  OpAttrs at;
  at.a = c;
  return finish(Op::scale, {x}, {}, std::move(at), std::move(out));
}

Tensor add_scalar(const Tensor& x, float c) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = px[i] + c;
  OpAttrs at;
  at.a = c;
  return finish(Op::add_scalar, {x}, {}, std::move(at), std::move(out));
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = px[i] > 0.0f ? px[i] : 0.0f;
  return finish(Op::relu, {x}, {}, {}, std::move(out));
}

Tensor silu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = px[i] * sigmoidf(px[i]);
  return finish(Op::silu, {x}, {}, {}, std::move(out));
}

Tensor tanh(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = std::tanh(px[i]);
  Tensor saved_out = out;  // evaluation order of finish() args is unspecified
  return finish(Op::tanh_, {x}, {std::move(saved_out)}, {}, std::move(out));
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  if (!(std::isfinite(lo) && std::isfinite(hi)) || lo > hi)
    fail_contract("clamp bounds must be finite with lo <= hi");
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i)
    po[i] = px[i] < lo ? lo : (px[i] > hi ? hi : px[i]);
  OpAttrs at;
  at.a = lo;
  at.b = hi;
  return finish(Op::clamp, {x}, {}, std::move(at), std::move(out));
}

Tensor sign(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i)
    po[i] = px[i] > 0.0f ? 1.0f : (px[i] < 0.0f ? -1.0f : 0.0f);
  return finish(Op::sign, {x}, {}, {}, std::move(out));
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  const float* px = x.data();
  for (int64_t i = 0; i < x.size(); ++i) acc += px[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  return finish(Op::sum, {x}, {}, {}, std::move(out));
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  const float* px = x.data();
  for (int64_t i = 0; i < x.size(); ++i) acc += px[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(x.size())));
  return finish(Op::mean, {x}, {}, {}, std::move(out));
}

Tensor avg_pool2(const Tensor& x) {
  check_rank(x, 4, "avg_pool2 input");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) fail_contract("avg_pool2 requires even spatial extents");
  int ho = h / 2, wo = w / 2;
  Tensor out = Tensor::zeros({n, c, ho, wo});
  const float* px = x.data();
  float* po = out.data();
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          const float* p0 = px + ((static_cast<int64_t>(b) * c + ci) * h + 2 * i) * w + 2 * j;
          const float* p1 = p0 + w;
          po[((static_cast<int64_t>(b) * c + ci) * ho + i) * wo + j] =
              static_cast<float>((static_cast<double>(p0[0]) + p0[1] + p1[0] + p1[1]) * 0.25);
        }
  return finish(Op::avg_pool2, {x}, {}, {}, std::move(out));
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_size(shape) != x.size())
    fail_contract("reshape to " + shape_str(shape) + " changes element count of " +
                  shape_str(x.shape()));
  Tensor out = Tensor::from(shape, x.vec());
  OpAttrs at;
  at.shape = x.shape();
  return finish(Op::reshape, {x}, {}, std::move(at), std::move(out));
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_rank(logits, 2, "softmax_cross_entropy logits");
  int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    fail_contract("label count does not match batch size");
  for (int y : labels)
    if (y < 0 || y >= c) fail_contract("label out of range [0, C)");
  Tensor probs = Tensor::zeros(logits.shape());
  const float* pl = logits.data();
  float* pp = probs.data();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* row = pl + static_cast<int64_t>(i) * c;
    double m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - m);
    double lse = m + std::log(z);
    for (int j = 0; j < c; ++j)
      pp[static_cast<int64_t>(i) * c + j] = static_cast<float>(std::exp(row[j] - lse));
    total += lse - row[labels[static_cast<size_t>(i)]];
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / n));
  OpAttrs at;
  at.labels = labels;
  return finish(Op::softmax_xent, {logits}, {probs}, std::move(at), std::move(out));
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    fail_contract("l1_loss shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double acc = 0.0;
  const float* pa = a.data();
  const float* pb = b.data();
  for (int64_t i = 0; i < a.size(); ++i) acc += std::fabs(static_cast<double>(pa[i]) - pb[i]);
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(a.size())));
  return finish(Op::l1_loss, {a, b}, {}, {}, std::move(out));
}

Tensor l2sq_loss(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    fail_contract("l2sq_loss shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double acc = 0.0;
  const float* pa = a.data();
  const float* pb = b.data();
  for (int64_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(pa[i]) - pb[i];
    acc += d * d;
  }
  Tensor out = Tensor::scalar(static_cast<float>(0.5 * acc));
  return finish(Op::l2sq_loss, {a, b}, {}, {}, std::move(out));
}

Tensor softmax_rows(const Tensor& logits) {
  check_rank(logits, 2, "softmax_rows logits");
  int n = logits.dim(0), c = logits.dim(1);
  Tensor out = Tensor::zeros(logits.shape());
  const float* pl = logits.data();
  float* po = out.data();
  for (int i = 0; i < n; ++i) {
    const float* row = pl + static_cast<int64_t>(i) * c;
    double m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - m);
    for (int j = 0; j < c; ++j)
      po[static_cast<int64_t>(i) * c + j] = static_cast<float>(std::exp(row[j] - m) / z);
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  check_rank(logits, 2, "argmax_rows logits");
  int n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  const float* pl = logits.data();
  for (int i = 0; i < n; ++i) {
    const float* row = pl + static_cast<int64_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

// ----------------------------------------------------------------------------
// backward rules, dispatched from Tape::backward

namespace detail {

void op_vjp(const TapeNode& nd, const std::vector<float>& g,
            const std::function<float*(int)>& grad_buf) {
  auto in = [&](int i) -> const Tensor& { return nd.saved[static_cast<size_t>(i)]; };
  switch (nd.op) {
    case Op::leaf:
      break;
    case Op::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      int m = a.dim(0), k = a.dim(1), n = b.dim(1);
      const float* pa = a.data();
      const float* pb = b.data();
      if (float* da = grad_buf(0)) {
        for (int i = 0; i < m; ++i)
          for (int t = 0; t < k; ++t) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j)
              acc += static_cast<double>(g[static_cast<size_t>(i * n + j)]) * pb[t * n + j];
            da[i * k + t] += static_cast<float>(acc);
          }
      }
      if (float* db = grad_buf(1)) {
        for (int t = 0; t < k; ++t)
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
              acc += static_cast<double>(pa[i * k + t]) * g[static_cast<size_t>(i * n + j)];
            db[t * n + j] += static_cast<float>(acc);
          }
      }
      break;
    }
    case Op::conv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
      int oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
      int ph = kh / 2, pw = kw / 2;
      const float* px = x.data();
      const float* pk = w.data();
      if (float* dx = grad_buf(0)) {
        for (int b = 0; b < n; ++b)
          for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
              for (int xx = 0; xx < wd; ++xx) {
                double acc = 0.0;
                for (int o = 0; o < oc; ++o)
                  for (int u = 0; u < kh; ++u) {
                    int i = y - u + ph;
                    if (i < 0 || i >= h) continue;
                    const float* grow =
                        g.data() + ((static_cast<int64_t>(b) * oc + o) * h + i) * wd;
                    const float* krow =
                        pk + ((static_cast<int64_t>(o) * c + ci) * kh + u) * kw;
                    for (int v = 0; v < kw; ++v) {
                      int j = xx - v + pw;
                      if (j < 0 || j >= wd) continue;
                      acc += static_cast<double>(grow[j]) * krow[v];
                    }
                  }
                dx[((static_cast<int64_t>(b) * c + ci) * h + y) * wd + xx] +=
                    static_cast<float>(acc);
              }
      }
      if (float* dw = grad_buf(1)) {
        for (int o = 0; o < oc; ++o)
          for (int ci = 0; ci < c; ++ci)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                double acc = 0.0;
                for (int b = 0; b < n; ++b)
                  for (int i = 0; i < h; ++i) {
                    int yy = i + u - ph;
                    if (yy < 0 || yy >= h) continue;
                    const float* grow =
                        g.data() + ((static_cast<int64_t>(b) * oc + o) * h + i) * wd;
                    const float* xrow =
                        px + ((static_cast<int64_t>(b) * c + ci) * h + yy) * wd;
                    for (int j = 0; j < wd; ++j) {
                      int xx = j + v - pw;
                      if (xx < 0 || xx >= wd) continue;
                      acc += static_cast<double>(grow[j]) * xrow[xx];
                    }
                  }
                dw[((static_cast<int64_t>(o) * c + ci) * kh + u) * kw + v] +=
                    static_cast<float>(acc);
              }
      }
      break;
    }
    case Op::add: {
      int64_t n = in(0).size();
      if (float* da = grad_buf(0))
        for (int64_t i = 0; i < n; ++i) da[i] += g[static_cast<size_t>(i)];
      if (float* db = grad_buf(1))
        for (int64_t i = 0; i < n; ++i) db[i] += g[static_cast<size_t>(i)];
      break;
    }
    case Op::sub: {
      int64_t n = in(0).size();
      if (float* da = grad_buf(0))
        for (int64_t i = 0; i < n; ++i) da[i] += g[static_cast<size_t>(i)];
      if (float* db = grad_buf(1))
        for (int64_t i = 0; i < n; ++i) db[i] -= g[static_cast<size_t>(i)];
      break;
    }
    case Op::mul: {
      const float* pa = in(0).data();
      const float* pb = in(1).data();
      int64_t n = in(0).size();
      if (float* da = grad_buf(0))
        for (int64_t i = 0; i < n; ++i) da[i] += g[static_cast<size_t>(i)] * pb[i];
      if (float* db = grad_buf(1))
        for (int64_t i = 0; i < n; ++i) db[i] += g[static_cast<size_t>(i)] * pa[i];
      break;
    }
    case Op::add_bias_rows: {
      int n = in(0).dim(0), f = in(0).dim(1);
      if (float* dx = grad_buf(0))
        for (int64_t i = 0; i < static_cast<int64_t>(n) * f; ++i)
          dx[i] += g[static_cast<size_t>(i)];
      if (float* db = grad_buf(1))
        for (int j = 0; j < f; ++j) {
          double acc = 0.0;
          for (int i = 0; i < n; ++i) acc += g[static_cast<size_t>(i * f + j)];
          db[j] += static_cast<float>(acc);
        }
      break;
    }
    case Op::add_bias_chan: {
      int n = in(0).dim(0), c = in(0).dim(1), h = in(0).dim(2), w = in(0).dim(3);
      int64_t hw = static_cast<int64_t>(h) * w;
      if (float* dx = grad_buf(0))
        for (int64_t i = 0; i < in(0).size(); ++i) dx[i] += g[static_cast<size_t>(i)];
      if (float* db = grad_buf(1))
        for (int ci = 0; ci < c; ++ci) {
          double acc = 0.0;
          for (int b = 0; b < n; ++b) {
            int64_t base = (static_cast<int64_t>(b) * c + ci) * hw;
            for (int64_t p = 0; p < hw; ++p) acc += g[static_cast<size_t>(base + p)];
          }
          db[ci] += static_cast<float>(acc);
        }
      break;
    }
    case Op::add_row_chan: {
      int n = in(0).dim(0), c = in(0).dim(1), h = in(0).dim(2), w = in(0).dim(3);
      int64_t hw = static_cast<int64_t>(h) * w;
      if (float* dx = grad_buf(0))
        for (int64_t i = 0; i < in(0).size(); ++i) dx[i] += g[static_cast<size_t>(i)];
      if (float* db = grad_buf(1))
        for (int b = 0; b < n; ++b)
          for (int ci = 0; ci < c; ++ci) {
            int64_t base = (static_cast<int64_t>(b) * c + ci) * hw;
            double acc = 0.0;
            for (int64_t p = 0; p < hw; ++p) acc += g[static_cast<size_t>(base + p)];
            db[b * c + ci] += static_cast<float>(acc);
          }
      break;
    }
    case Op::scale: {
      if (float* dx = grad_buf(0))
        for (int64_t i = 0; i < in(0).size(); ++i)
          dx[i] += g[static_cast<size_t>(i)] * nd.attrs.a;
      break;
    }
    case Op::add_scalar: {
      if (float* dx = grad_buf(0))
        for (int64_t i = 0; i < in(0).size(); ++i) dx[i] += g[static_cast<size_t>(i)];
      break;
    }
    case Op::relu: {
      const float* px = in(0).data();
      if (float* dx = grad_buf(0))
        for (int64_t i = 0; i < in(0).size(); ++i)
          if (px[i] > 0.0f) dx[i] += g[static_cast<size_t>(i)];
      break;
    }
    case Op::silu: {
      const float* px = in(0).data();
      if (float* dx = grad_buf(0))
        for (int64_t i = 0; i < in(0).size(); ++i) {
          float s = sigmoidf(px[i]);
          dx[i] += g[static_cast<size_t>(i)] * s * (1.0f + px[i] * (1.0f - s));
        }
      break;
    }
    case Op::tanh_: {
      const float* py = nd.saved[1].data();  // saved output
      if (float* dx = grad_buf(0))
        for (int64_t i = 0; i < in(0).size(); ++i)
          dx[i] += g[static_cast<size_t>(i)] * (1.0f - py[i] * py[i]);
      break;
    }
    case Op::clamp: {
      const float* px = in(0).data();
      float lo = nd.attrs.a, hi = nd.attrs.b;
      if (float* dx = grad_buf(0))
        for (int64_t i = 0; i < in(0).size(); ++i)
          if (px[i] > lo && px[i] < hi) dx[i] += g[static_cast<size_t>(i)];
      break;
    }
    case Op::sign:
      break;  // zero subgradient everywhere
    case Op::sum: {
      if (float* dx = grad_buf(0))
        for (int64_t i = 0; i < in(0).size(); ++i) dx[i] += g[0];
      break;
    }
    case Op::mean: {
      if (float* dx = grad_buf(0)) {
        float inv = 1.0f / static_cast<float>(in(0).size());
        for (int64_t i = 0; i < in(0).size(); ++i) dx[i] += g[0] * inv;
      }
      break;
    }
    case Op::avg_pool2: {
      int n = in(0).dim(0), c = in(0).dim(1), h = in(0).dim(2), w = in(0).dim(3);
      int ho = h / 2, wo = w / 2;
      if (float* dx = grad_buf(0))
        for (int b = 0; b < n; ++b)
          for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < ho; ++i)
              for (int j = 0; j < wo; ++j) {
                float gv =
                    g[static_cast<size_t>(((static_cast<int64_t>(b) * c + ci) * ho + i) * wo + j)] *
                    0.25f;
                float* p0 = dx + ((static_cast<int64_t>(b) * c + ci) * h + 2 * i) * w + 2 * j;
                float* p1 = p0 + w;
                p0[0] += gv;
                p0[1] += gv;
                p1[0] += gv;
                p1[1] += gv;
              }
      break;
    }
    case Op::reshape: {
      if (float* dx = grad_buf(0))
        for (int64_t i = 0; i < in(0).size(); ++i) dx[i] += g[static_cast<size_t>(i)];
      break;
    }
    case Op::softmax_xent: {
      const Tensor& probs = nd.saved[1];
      int n = probs.dim(0), c = probs.dim(1);
      const float* pp = probs.data();
      if (float* dl = grad_buf(0)) {
        float s = g[0] / static_cast<float>(n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < c; ++j) {
            float onehot = (j == nd.attrs.labels[static_cast<size_t>(i)]) ? 1.0f : 0.0f;
            dl[static_cast<int64_t>(i) * c + j] +=
                s * (pp[static_cast<int64_t>(i) * c + j] - onehot);
          }
      }
      break;
    }
    case Op::l1_loss: {
      const float* pa = in(0).data();
      const float* pb = in(1).data();
      int64_t n = in(0).size();
      float s = g[0] / static_cast<float>(n);
      float* da = grad_buf(0);
      float* db = grad_buf(1);
      for (int64_t i = 0; i < n; ++i) {
        float d = pa[i] - pb[i];
        float sg = d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f);
        if (da) da[i] += s * sg;
        if (db) db[i] -= s * sg;
      }
      break;
    }
    case Op::l2sq_loss: {
      const float* pa = in(0).data();
      const float* pb = in(1).data();
      int64_t n = in(0).size();
      float* da = grad_buf(0);
      float* db = grad_buf(1);
      for (int64_t i = 0; i < n; ++i) {
        float d = (pa[i] - pb[i]) * g[0];
        if (da) da[i] += d;
        if (db) db[i] -= d;
      }
      break;
    }
  }
}

}  // namespace detail

}  // namespace oap
