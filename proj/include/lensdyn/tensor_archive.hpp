#pragma once

// Reader/writer for the safetensors container layout:
//   u64 little-endian N | N bytes of JSON manifest | raw little-endian payload
// Only F32 payloads are supported.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lensdyn/numerics.hpp"

namespace lensdyn {

struct RawTensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t element_count() const;
  std::string shape_string() const;
};

struct TensorArchive {
  std::map<std::string, RawTensor> tensors;
  /// The `__metadata__` string map.
  std::map<std::string, std::string> metadata;
  /// Exact manifest bytes as stored; used for fingerprints.
  std::string manifest;

  const RawTensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

TensorArchive parse_archive(std::span<const std::byte> bytes);
TensorArchive read_archive(const std::filesystem::path& path);

std::string serialize_archive(const std::map<std::string, RawTensor>& tensors,
                              const std::map<std::string, std::string>& metadata = {});
void write_archive(const std::filesystem::path& path, const std::map<std::string, RawTensor>& tensors,
                   const std::map<std::string, std::string>& metadata = {});

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(const std::string& bytes);

RawTensor to_raw(const MatrixF& m);
RawTensor to_raw(const VectorF& v);
/// Shape-checked conversions; `name` is used in error messages.
MatrixF to_matrix(const RawTensor& t, std::int64_t rows, std::int64_t cols, const std::string& name);
VectorF to_vector(const RawTensor& t, std::int64_t size, const std::string& name);

}  // namespace lensdyn
