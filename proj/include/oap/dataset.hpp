#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oap/tensor.hpp"

namespace oap {

// Synthetic labeled data. points2d: two Gaussian blobs in the unit square
// (variant "moons": two interleaved half-moons). shapes16: 16x16 grayscale
// squares / circles / triangles, procedurally rendered.
struct Dataset {
  std::string kind;  // points2d | shapes16
  std::string variant;
  Tensor inputs;  // [N,2] or [N,1,16,16], values in [0,1]
  std::vector<int> labels;
  int classes = 0;
  std::string split;
  uint64_t seed = 0;

  int size() const { return inputs.defined() ? inputs.dim(0) : 0; }
  Tensor gather(const std::vector<int>& idx) const;
};

// kinds: "points2d" (blobs), "moons" (points2d variant), "shapes16"
Dataset gen_dataset(const std::string& kind, int n, uint64_t seed,
                    const std::string& split = "train");

// batch helpers (forward-only, never recorded)
Tensor gather_rows(const Tensor& t, const std::vector<int>& idx);
Tensor take_row(const Tensor& t, int i);               // [1, ...]
Tensor stack_rows(const std::vector<Tensor>& rows);    // inverse of take_row
void set_row(Tensor& dst, int i, const Tensor& row);

}  // namespace oap
