#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "oap/ops.hpp"
#include "oap/rng.hpp"
#include "oap/tape.hpp"
#include "oap/tensor.hpp"

namespace testutil {

inline oap::Tensor rand_tensor(std::vector<int> shape, oap::Rng& rng,
                               float lo = -1.0f, float hi = 1.0f) {
  oap::Tensor t = oap::Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// keeps every entry at distance >= margin from the given kink values
inline void push_off_kinks(oap::Tensor& t, std::initializer_list<float> kinks,
                           float margin = 1e-2f) {
  for (int64_t i = 0; i < t.size(); ++i)
    for (float k : kinks)
      if (std::fabs(t.data()[i] - k) < margin)
        t.data()[i] = k + (t.data()[i] >= k ? margin : -margin);
}

// Central finite differences against the analytic gradient of a scalar
// function of x. The analytic side runs once; the FD side nudges every
// element by +-h with differences accumulated in double.
struct GradCheck {
  double rel_err = 0.0;     // ||analytic - fd||2 / max(||fd||2, tiny)
  double max_abs_err = 0.0;
  std::vector<float> analytic, fd;
};

inline GradCheck check_grad(const std::function<oap::Tensor(const oap::Tensor&)>& fwd,
                            const oap::Tensor& x0, double h = 1e-3) {
  GradCheck r;
  oap::Tensor x = x0.clone();
  {
    oap::Tape tape;
    oap::Tape::Scope scope(tape);
    oap::Tensor xl = tape.leaf(x);
    oap::Tensor loss = fwd(xl);
    tape.backward(loss);
    r.analytic = x.grad();
  }
  auto eval = [&](const oap::Tensor& xv) {
    oap::Tape::NoGrad ng;
    return static_cast<double>(fwd(xv).item());
  };
  oap::Tensor xf = x0.clone();
  r.fd.resize(static_cast<size_t>(xf.size()));
  for (int64_t i = 0; i < xf.size(); ++i) {
    float orig = xf.data()[i];
    xf.data()[i] = static_cast<float>(orig + h);
    double fp = eval(xf);
    xf.data()[i] = static_cast<float>(orig - h);
    double fm = eval(xf);
    xf.data()[i] = orig;
    r.fd[static_cast<size_t>(i)] = static_cast<float>((fp - fm) / (2.0 * h));
  }
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < r.fd.size(); ++i) {
    double d = static_cast<double>(r.analytic[i]) - r.fd[i];
    num += d * d;
    den += static_cast<double>(r.fd[i]) * r.fd[i];
    r.max_abs_err = std::max(r.max_abs_err, std::fabs(d));
  }
  r.rel_err = std::sqrt(num) / std::max(std::sqrt(den), 1e-8);
  return r;
}

inline bool bitwise_equal(const oap::Tensor& a, const oap::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), static_cast<size_t>(a.size()) * sizeof(float)) == 0;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("oap_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
