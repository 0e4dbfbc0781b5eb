#include "oap/dataset.hpp"

#include <cmath>

#include "oap/errors.hpp"
#include "oap/rng.hpp"

namespace oap {

Tensor gather_rows(const Tensor& t, const std::vector<int>& idx) {
  if (t.rank() < 1) fail_contract("gather_rows requires rank >= 1");
  int n = t.dim(0);
  int64_t rowsz = t.size() / n;
  std::vector<int> shape = t.shape();
  shape[0] = static_cast<int>(idx.size());
  Tensor out = Tensor::zeros(shape);
  for (size_t k = 0; k < idx.size(); ++k) {
    int i = idx[k];
    if (i < 0 || i >= n) fail_contract("gather_rows index out of range");
    std::copy(t.data() + i * rowsz, t.data() + (i + 1) * rowsz,
              out.data() + static_cast<int64_t>(k) * rowsz);
  }
  return out;
}

Tensor take_row(const Tensor& t, int i) { return gather_rows(t, {i}); }

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) fail_contract("stack_rows requires at least one row");
  std::vector<int> shape = rows[0].shape();
  if (shape.empty() || shape[0] != 1) fail_contract("stack_rows expects [1,...] rows");
  shape[0] = static_cast<int>(rows.size());
  Tensor out = Tensor::zeros(shape);
  int64_t rowsz = rows[0].size();
  for (size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].size() != rowsz) fail_contract("stack_rows shape mismatch");
    std::copy(rows[k].data(), rows[k].data() + rowsz,
              out.data() + static_cast<int64_t>(k) * rowsz);
  }
  return out;
}

void set_row(Tensor& dst, int i, const Tensor& row) {
  int64_t rowsz = dst.size() / dst.dim(0);
  if (row.size() != rowsz) fail_contract("set_row size mismatch");
  std::copy(row.data(), row.data() + rowsz, dst.data() + i * rowsz);
}

Tensor Dataset::gather(const std::vector<int>& idx) const {
  return gather_rows(inputs, idx);
}

namespace {

void render_shape(float* img, int cls, Rng& rng) {
  float bg = rng.uniform(0.05f, 0.2f);
  float fg = rng.uniform(0.6f, 1.0f);
  float cx = rng.uniform(6.0f, 10.0f);
  float cy = rng.uniform(6.0f, 10.0f);
  float r = rng.uniform(3.0f, 5.0f);
  // 3x3 supersampling for soft edges
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 3; ++sy)
        for (int sx = 0; sx < 3; ++sx) {
          float px = x + (sx + 0.5f) / 3.0f;
          float py = y + (sy + 0.5f) / 3.0f;
          float dx = px - cx, dy = py - cy;
          bool inside = false;
          switch (cls) {
            case 0:  // square
              inside = std::fabs(dx) <= r * 0.82f && std::fabs(dy) <= r * 0.82f;
              break;
            case 1:  // circle
              inside = dx * dx + dy * dy <= r * r;
              break;
            default: {  // triangle, apex up
              float v0x = cx, v0y = cy - r;
              float v1x = cx - r, v1y = cy + r * 0.8f;
              float v2x = cx + r, v2y = cy + r * 0.8f;
              auto edge = [&](float ax, float ay, float bx, float by) {
                return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
              };
              float e0 = edge(v0x, v0y, v1x, v1y);
              float e1 = edge(v1x, v1y, v2x, v2y);
              float e2 = edge(v2x, v2y, v0x, v0y);
              inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
              break;
            }
          }
          hits += inside ? 1 : 0;
        }
      float a = hits / 9.0f;
      img[y * 16 + x] = bg + (fg - bg) * a;
    }
}

}  // namespace

Dataset gen_dataset(const std::string& kind, int n, uint64_t seed,
                    const std::string& split) {
  Dataset d;
  d.seed = seed;
  d.split = split;
  Rng root = Rng(seed).split(split);

  if (kind == "points2d" || kind == "moons") {
    d.kind = "points2d";
    d.variant = (kind == "moons") ? "moons" : "blobs";
    d.classes = 2;
    if (n < d.classes) fail_contract("dataset size below class count");
    d.inputs = Tensor::zeros({n, 2});
    d.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Rng rng = root.split(static_cast<uint64_t>(i));
      int cls = i % 2;
      float x, y;
      if (d.variant == "blobs") {
        float cx = cls == 0 ? 0.35f : 0.65f;
        float cy = cls == 0 ? 0.35f : 0.65f;
        x = cx + 0.08f * static_cast<float>(rng.gaussian());
        y = cy + 0.08f * static_cast<float>(rng.gaussian());
      } else {
        float theta = rng.uniform(0.0f, 3.14159265f);
        float mx, my;
        if (cls == 0) {
          mx = std::cos(theta);
          my = std::sin(theta);
        } else {
          mx = 1.0f - std::cos(theta);
          my = 0.5f - std::sin(theta);
        }
        mx += 0.05f * static_cast<float>(rng.gaussian());
        my += 0.05f * static_cast<float>(rng.gaussian());
        x = (mx + 1.25f) / 3.5f;
        y = (my + 0.75f) / 2.5f;
      }
      d.inputs.data()[i * 2 + 0] = std::min(1.0f, std::max(0.0f, x));
      d.inputs.data()[i * 2 + 1] = std::min(1.0f, std::max(0.0f, y));
      d.labels[static_cast<size_t>(i)] = cls;
    }
    return d;
  }

  if (kind == "shapes16") {
    d.kind = "shapes16";
    d.variant = "default";
    d.classes = 3;
    if (n < d.classes) fail_contract("dataset size below class count");
    d.inputs = Tensor::zeros({n, 1, 16, 16});
    d.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Rng rng = root.split(static_cast<uint64_t>(i));
      int cls = i % 3;
      render_shape(d.inputs.data() + static_cast<int64_t>(i) * 256, cls, rng);
      d.labels[static_cast<size_t>(i)] = cls;
    }
    return d;
  }

  fail_config("unknown dataset kind: " + kind);
}

}  // namespace oap
