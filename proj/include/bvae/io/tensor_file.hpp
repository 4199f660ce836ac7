#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "bvae/io/binary.hpp"

namespace bvae::io {

// TNSR container:
//   "TNSR" | version u32 | dtype u8 | ndim u8 | ndim x u32 dims | payload
// All integers little endian; payload row-major.

enum class DType : std::uint8_t { u8 = 0, f32 = 1 };

inline constexpr std::uint32_t kTensorVersion = 1;

inline std::size_t dtype_size(DType d) { return d == DType::u8 ? 1 : 4; }

struct TensorHeader {
  DType dtype = DType::u8;
  std::vector<std::uint32_t> dims;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

inline void write_tensor_header(std::ostream& os, const TensorHeader& h) {
  if (h.dims.size() > 255) throw ContractError("tensor: too many dimensions");
  write_magic(os, "TNSR");
  write_le<std::uint32_t>(os, kTensorVersion);
  write_le<std::uint8_t>(os, std::uint8_t(h.dtype));
  write_le<std::uint8_t>(os, std::uint8_t(h.dims.size()));
  for (auto d : h.dims) write_le<std::uint32_t>(os, d);
}

inline TensorHeader read_tensor_header(std::istream& is) {
  expect_magic(is, "TNSR", "tensor file");
  const auto version = read_le<std::uint32_t>(is);
  if (version != kTensorVersion) throw DataError("tensor file: unsupported version " + std::to_string(version));
  TensorHeader h;
  const auto dtype = read_le<std::uint8_t>(is);
  if (dtype > 1) throw DataError("tensor file: unknown dtype " + std::to_string(dtype));
  h.dtype = DType(dtype);
  const auto ndim = read_le<std::uint8_t>(is);
  for (int i = 0; i < ndim; ++i) h.dims.push_back(read_le<std::uint32_t>(is));
  return h;
}

/// Streams a tensor to disk chunk by chunk; `close` verifies that exactly the
/// declared number of elements was written.
class TensorWriter {
 public:
  TensorWriter(const std::filesystem::path& path, TensorHeader header)
      : header_(std::move(header)), os_(path, std::ios::binary | std::ios::trunc) {
    if (!os_) throw DataError("cannot open " + path.string() + " for writing");
    write_tensor_header(os_, header_);
  }

  void write(std::span<const std::uint8_t> values) {
    if (header_.dtype != DType::u8) throw ContractError("tensor writer: dtype is not u8");
    written_ += values.size();
    write_le_array(os_, values.data(), values.size());
  }

  void write(std::span<const float> values) {
    if (header_.dtype != DType::f32) throw ContractError("tensor writer: dtype is not f32");
    written_ += values.size();
    write_le_array(os_, values.data(), values.size());
  }

  void close() {
    if (written_ != header_.element_count()) {
      throw ContractError("tensor writer: wrote " + std::to_string(written_) + " of " +
                          std::to_string(header_.element_count()) + " elements");
    }
    os_.close();
    if (!os_) throw DataError("tensor writer: write failed");
  }

 private:
  TensorHeader header_;
  std::ofstream os_;
  std::size_t written_ = 0;
};

/// Sequential reader over the payload.
class TensorReader {
 public:
  explicit TensorReader(const std::filesystem::path& path) : is_(path, std::ios::binary) {
    if (!is_) throw DataError("cannot open " + path.string());
    header_ = read_tensor_header(is_);
  }

  const TensorHeader& header() const noexcept { return header_; }
  std::size_t remaining() const noexcept { return header_.element_count() - read_; }

  void read(std::span<std::uint8_t> out) {
    if (header_.dtype != DType::u8) throw DataError("tensor reader: dtype is not u8");
    take(out.size());
    read_le_array(is_, out.data(), out.size());
  }

  void read(std::span<float> out) {
    if (header_.dtype != DType::f32) throw DataError("tensor reader: dtype is not f32");
    take(out.size());
    read_le_array(is_, out.data(), out.size());
  }

 private:
  void take(std::size_t n) {
    if (n > remaining()) throw DataError("tensor reader: read past end of payload");
    read_ += n;
  }

  TensorHeader header_;
  std::ifstream is_;
  std::size_t read_ = 0;
};

inline void write_u8_tensor(const std::filesystem::path& path, std::vector<std::uint32_t> dims,
                            std::span<const std::uint8_t> data) {
  TensorWriter w(path, {DType::u8, std::move(dims)});
  w.write(data);
  w.close();
}

inline void write_f32_tensor(const std::filesystem::path& path, std::vector<std::uint32_t> dims,
                             std::span<const float> data) {
  TensorWriter w(path, {DType::f32, std::move(dims)});
  w.write(data);
  w.close();
}

inline std::vector<std::uint8_t> read_u8_tensor(const std::filesystem::path& path, TensorHeader* header = nullptr) {
  TensorReader r(path);
  std::vector<std::uint8_t> data(r.header().element_count());
  r.read(std::span<std::uint8_t>(data));
  if (header) *header = r.header();
  return data;
}

inline std::vector<float> read_f32_tensor(const std::filesystem::path& path, TensorHeader* header = nullptr) {
  TensorReader r(path);
  std::vector<float> data(r.header().element_count());
  r.read(std::span<float>(data));
  if (header) *header = r.header();
  return data;
}

}  // namespace bvae::io
