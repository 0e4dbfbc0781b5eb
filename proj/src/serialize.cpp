#include "oap/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "oap/errors.hpp"

namespace oap {

namespace {

constexpr char kCkptMagic[8] = {'O', 'A', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr char kTnsrMagic[8] = {'O', 'A', 'P', 'T', 'N', 'S', 'R', '1'};

void write_u64le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

struct Section {
  nlohmann::json header;
  std::vector<float> payload;
};

void write_file(const std::string& path, const char magic[8],
                const nlohmann::json& header, const std::vector<float>& payload) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail_io("cannot open for writing: " + path);
  os.write(magic, 8);
  std::string h = header.dump();
  write_u64le(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  // float32 payload; little-endian host assumed (checked at load)
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!os) fail_io("write failed: " + path);
}

Section read_file(const std::string& path, const char magic[8]) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_io("cannot open: " + path);
  char m[8];
  is.read(m, 8);
  if (!is || std::memcmp(m, magic, 8) != 0)
    fail_io("bad magic in " + path + " (expected " + std::string(magic, 8) + ")");
  uint64_t hlen = read_u64le(is);
  if (!is || hlen > (1ull << 30)) fail_io("corrupt header length in " + path);
  std::string h(hlen, '\0');
  is.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!is) fail_io("truncated header in " + path);
  Section s;
  try {
    s.header = nlohmann::json::parse(h);
  } catch (const std::exception& e) {
    fail_io("invalid JSON header in " + path + ": " + e.what());
  }
  is.seekg(0, std::ios::end);
  auto end = is.tellg();
  is.seekg(static_cast<std::streamoff>(8 + 8 + hlen), std::ios::beg);
  auto begin = is.tellg();
  size_t nbytes = static_cast<size_t>(end - begin);
  if (nbytes % sizeof(float) != 0) fail_io("payload not float32-aligned in " + path);
  s.payload.resize(nbytes / sizeof(float));
  is.read(reinterpret_cast<char*>(s.payload.data()), static_cast<std::streamsize>(nbytes));
  if (!is) fail_io("truncated payload in " + path);
  return s;
}

Tensor take_tensor(const std::vector<float>& payload, const nlohmann::json& entry) {
  std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
  uint64_t off = entry.at("offset").get<uint64_t>();
  if (off % sizeof(float) != 0) fail_io("misaligned tensor offset");
  size_t start = static_cast<size_t>(off / sizeof(float));
  size_t count = static_cast<size_t>(shape_size(shape));
  if (start + count > payload.size()) fail_io("tensor extends past payload");
  std::vector<float> v(payload.begin() + static_cast<std::ptrdiff_t>(start),
                       payload.begin() + static_cast<std::ptrdiff_t>(start + count));
  Tensor t = Tensor::from(std::move(shape), std::move(v));
  t.scan_nonfinite();
  return t;
}

}  // namespace

const Tensor& Checkpoint::param(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  fail_contract("checkpoint has no parameter named " + name);
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["arch"] = ck.arch;
  header["meta"] = ck.meta;
  std::vector<float> payload;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& [name, t] : ck.params) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = payload.size() * sizeof(float);
    plist.push_back(std::move(e));
    payload.insert(payload.end(), t.vec().begin(), t.vec().end());
  }
  header["params"] = std::move(plist);
  write_file(path, kCkptMagic, header, payload);
}

Checkpoint load_checkpoint(const std::string& path) {
  Section s = read_file(path, kCkptMagic);
  Checkpoint ck;
  try {
    ck.arch = s.header.at("arch").get<std::string>();
    ck.meta = s.header.value("meta", nlohmann::json::object());
    for (const auto& e : s.header.at("params"))
      ck.params.emplace_back(e.at("name").get<std::string>(), take_tensor(s.payload, e));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail_io("malformed checkpoint header in " + path + ": " + e.what());
  }
  return ck;
}

bool TensorBundle::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor& TensorBundle::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  fail_contract("bundle has no tensor named " + name);
}

void TensorBundle::set(const std::string& name, Tensor t) {
  for (auto& [n, existing] : tensors)
    if (n == name) {
      existing = std::move(t);
      return;
    }
  tensors.emplace_back(name, std::move(t));
}

void save_bundle(const std::string& path, const TensorBundle& b) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["dtype"] = "f32";
  header["count"] = b.tensors.size();
  header["meta"] = b.meta;
  std::vector<float> payload;
  nlohmann::json tlist = nlohmann::json::array();
  for (const auto& [name, t] : b.tensors) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = payload.size() * sizeof(float);
    tlist.push_back(std::move(e));
    payload.insert(payload.end(), t.vec().begin(), t.vec().end());
  }
  header["tensors"] = std::move(tlist);
  write_file(path, kTnsrMagic, header, payload);
}

TensorBundle load_bundle(const std::string& path) {
  Section s = read_file(path, kTnsrMagic);
  TensorBundle b;
  try {
    if (s.header.value("dtype", "f32") != std::string("f32"))
      fail_io("unsupported dtype in " + path);
    b.meta = s.header.value("meta", nlohmann::json::object());
    for (const auto& e : s.header.at("tensors"))
      b.tensors.emplace_back(e.at("name").get<std::string>(), take_tensor(s.payload, e));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail_io("malformed bundle header in " + path + ": " + e.what());
  }
  return b;
}

std::string content_hash_hex(const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xCBF29CE484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_io("cannot open: " + path);
  std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return content_hash_hex(data.data(), data.size());
}

}  // namespace oap
