#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "oap/tensor.hpp"

namespace oap {

// Binary formats share one layout: 8-byte magic, u64 little-endian length,
// UTF-8 JSON header, raw little-endian float32 payload. Offsets in the
// header are byte offsets into the payload section. Round-trips are
// bit-exact.

// "OAPCKPT1": model parameters plus architecture tag and metadata.
struct Checkpoint {
  std::string arch;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> params;

  const Tensor& param(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// "OAPTNSR1": the general tensor container used for datasets, adversarial
// batches, purified batches and tap traces.
struct TensorBundle {
  std::vector<std::pair<std::string, Tensor>> tensors;
  nlohmann::json meta = nlohmann::json::object();

  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  void set(const std::string& name, Tensor t);
};

void save_bundle(const std::string& path, const TensorBundle& b);
TensorBundle load_bundle(const std::string& path);

// 64-bit FNV-1a content fingerprint, hex-encoded; used for provenance ids
std::string content_hash_hex(const void* data, size_t n);
std::string file_hash_hex(const std::string& path);

}  // namespace oap
