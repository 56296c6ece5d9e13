#pragma once

// Binary checkpoint format: magic, format version, vocab hash, then named
// scalar fields and flat little-endian 64-bit parameter arrays.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "twga/tensor.hpp"

namespace twga {

inline constexpr char kCkptMagic[8] = {'T', 'W', 'G', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCkptVersion = 1;

class CheckpointWriter {
 public:
  explicit CheckpointWriter(const std::string& path, std::uint64_t vocab_hash) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out_.write(kCkptMagic, 8);
    write_u32(kCkptVersion);
    write_u64(vocab_hash);
  }

  void write_u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<char*>(b), 4);
  }
  void write_u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<char*>(b), 8);
  }
  void write_f64(double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    write_u64(v);
  }
  void write_string(const std::string& s) {
    write_u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void write_tensor(const Tensor& t) {
    write_u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(static_cast<std::uint32_t>(d));
    for (double v : *t.data) write_f64(v);
  }

 private:
  std::ofstream out_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& path, std::uint64_t expected_vocab_hash) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in_.read(magic, 8);
    if (!in_ || std::memcmp(magic, kCkptMagic, 8) != 0)
      throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t ver = read_u32();
    if (ver != kCkptVersion)
      throw std::runtime_error("checkpoint: version mismatch in " + path + ": file has " + std::to_string(ver) +
                               ", expected " + std::to_string(kCkptVersion));
    std::uint64_t h = read_u64();
    if (expected_vocab_hash != 0 && h != expected_vocab_hash)
      throw std::runtime_error("checkpoint: vocabulary hash mismatch in " + path);
  }

  std::uint32_t read_u32() {
    unsigned char b[4];
    in_.read(reinterpret_cast<char*>(b), 4);
    if (!in_) throw std::runtime_error("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t read_u64() {
    unsigned char b[8];
    in_.read(reinterpret_cast<char*>(b), 8);
    if (!in_) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double read_f64() {
    std::uint64_t v = read_u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string read_string() {
    std::uint32_t n = read_u32();
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) throw std::runtime_error("checkpoint: truncated file");
    return s;
  }
  // fills an existing tensor; shapes must agree with the file
  void read_tensor_into(Tensor& t) {
    std::uint32_t nd = read_u32();
    std::vector<int> shape(nd);
    for (std::uint32_t i = 0; i < nd; ++i) shape[i] = static_cast<int>(read_u32());
    if (shape != t.shape)
      throw std::runtime_error("checkpoint: tensor shape mismatch, file has " + Tensor::zeros(shape).shape_str() +
                               ", model expects " + t.shape_str());
    for (double& v : *t.data) v = read_f64();
  }

 private:
  std::ifstream in_;
};

}  // namespace twga
