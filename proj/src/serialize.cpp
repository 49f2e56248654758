// SPDX-License-Identifier: Apache-2.0
#include "gscnn/serialize.hpp"

#include <cstring>
#include <fstream>

namespace gscnn {

namespace {

constexpr uint32_t kTensorVersion = 1;
constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
  // host is little-endian; raw write keeps the format definition simple
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("tensor record: truncated input");
  return v;
}

void write_magic(std::ostream& out, const char* m) { out.write(m, 4); }

void expect_magic(std::istream& in, const char* m) {
  char buf[4];
  in.read(buf, 4);
  if (!in || std::memcmp(buf, m, 4) != 0)
    throw std::runtime_error(std::string("bad magic, expected ") + m);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  write_magic(out, "GSTN");
  write_le<uint32_t>(out, kTensorVersion);
  write_le<uint32_t>(out, uint32_t(t.shape().size()));
  for (int e : t.shape()) write_le<uint64_t>(out, uint64_t(e));
  out.write(reinterpret_cast<const char*>(t.data().data()),
            std::streamsize(t.numel() * sizeof(float)));
}

Tensor read_tensor(std::istream& in) {
  expect_magic(in, "GSTN");
  uint32_t version = read_le<uint32_t>(in);
  if (version != kTensorVersion)
    throw std::runtime_error("tensor record: unsupported version " + std::to_string(version));
  uint32_t rank = read_le<uint32_t>(in);
  if (rank > 8) throw std::runtime_error("tensor record: implausible rank");
  Shape shape(rank);
  for (auto& e : shape) e = int(read_le<uint64_t>(in));
  auto t = Tensor::zeros(shape);
  in.read(reinterpret_cast<char*>(t.data().data()),
          std::streamsize(t.numel() * sizeof(float)));
  if (!in) throw std::runtime_error("tensor record: truncated data");
  return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return read_tensor(in);
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_magic(out, "GSCK");
  write_le<uint32_t>(out, kCheckpointVersion);
  write_le<uint64_t>(out, ck.config_text.size());
  out.write(ck.config_text.data(), std::streamsize(ck.config_text.size()));
  write_le<uint32_t>(out, ck.epoch);
  write_le<uint32_t>(out, uint32_t(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    write_le<uint32_t>(out, uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    write_tensor(out, t);
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  expect_magic(in, "GSCK");
  uint32_t version = read_le<uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  uint64_t cfg_len = read_le<uint64_t>(in);
  ck.config_text.resize(cfg_len);
  in.read(ck.config_text.data(), std::streamsize(cfg_len));
  ck.epoch = read_le<uint32_t>(in);
  uint32_t n = read_le<uint32_t>(in);
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t len = read_le<uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw std::runtime_error("checkpoint: truncated record name");
    ck.tensors.emplace(std::move(name), read_tensor(in));
  }
  return ck;
}

}  // namespace gscnn
