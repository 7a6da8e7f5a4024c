#include "lensdyn/tensor_archive.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace lensdyn {

using nlohmann::json;

namespace {

constexpr std::size_t kHeaderPrefix = 8;

std::string shape_of(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace

std::int64_t RawTensor::element_count() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string RawTensor::shape_string() const { return shape_of(shape); }

const RawTensor& TensorArchive::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw MissingTensorError(name);
  return it->second;
}

TensorArchive parse_archive(std::span<const std::byte> bytes) {
  if (bytes.size() < kHeaderPrefix) throw FormatError("archive shorter than its 8-byte header length", 0);
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data(), sizeof n);
  if (n > bytes.size() - kHeaderPrefix) {
    throw FormatError("manifest length " + std::to_string(n) + " exceeds file size", 0);
  }
  TensorArchive archive;
  archive.manifest.assign(reinterpret_cast<const char*>(bytes.data()) + kHeaderPrefix, n);

  json manifest;
  try {
    manifest = json::parse(archive.manifest);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), kHeaderPrefix + e.byte);
  }
  if (!manifest.is_object()) throw FormatError("manifest must be a JSON object", kHeaderPrefix);

  const std::size_t buffer_start = kHeaderPrefix + n;
  const std::size_t buffer_size = bytes.size() - buffer_start;
  for (const auto& [name, entry] : manifest.items()) {
    if (name == "__metadata__") {
      if (!entry.is_object()) throw FormatError("__metadata__ must be an object", kHeaderPrefix);
      for (const auto& [k, v] : entry.items()) {
        if (!v.is_string()) throw FormatError("__metadata__ value for '" + k + "' must be a string", kHeaderPrefix);
        archive.metadata[k] = v.get<std::string>();
      }
      continue;
    }
    if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets")) {
      throw FormatError("tensor '" + name + "' lacks dtype/shape/data_offsets", kHeaderPrefix);
    }
    if (entry["dtype"] != "F32") {
      throw FormatError("tensor '" + name + "' has unsupported dtype " + entry["dtype"].dump(), kHeaderPrefix);
    }
    RawTensor t;
    std::size_t begin = 0;
    std::size_t end = 0;
    try {
      t.shape = entry["shape"].get<std::vector<std::int64_t>>();
      auto offsets = entry["data_offsets"].get<std::vector<std::size_t>>();
      if (offsets.size() != 2) throw FormatError("tensor '" + name + "' data_offsets needs 2 entries", kHeaderPrefix);
      begin = offsets[0];
      end = offsets[1];
    } catch (const json::exception& e) {
      throw FormatError("tensor '" + name + "' has a malformed entry: " + e.what(), kHeaderPrefix);
    }
    if (std::any_of(t.shape.begin(), t.shape.end(), [](auto d) { return d < 0; })) {
      throw FormatError("tensor '" + name + "' has a negative dimension", kHeaderPrefix);
    }
    if (begin > end || end > buffer_size) {
      throw FormatError("tensor '" + name + "' data_offsets out of bounds", buffer_start + std::min(begin, buffer_size));
    }
    const auto count = static_cast<std::size_t>(t.element_count());
    if (end - begin != count * sizeof(float)) {
      throw FormatError("tensor '" + name + "' byte length does not match shape " + t.shape_string(),
                        buffer_start + begin);
    }
    t.data.resize(count);
    if (count) std::memcpy(t.data.data(), bytes.data() + buffer_start + begin, count * sizeof(float));
    archive.tensors.emplace(name, std::move(t));
  }
  return archive;
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open archive: " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_archive(std::as_bytes(std::span(raw)));
}

std::string serialize_archive(const std::map<std::string, RawTensor>& tensors,
                              const std::map<std::string, std::string>& metadata) {
  json manifest = json::object();
  std::string payload;
  for (const auto& [name, t] : tensors) {
    if (static_cast<std::size_t>(t.element_count()) != t.data.size()) {
      throw ShapeError("tensor '" + name + "' shape " + t.shape_string() + " does not match " +
                       std::to_string(t.data.size()) + " values");
    }
    const std::size_t begin = payload.size();
    payload.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
    manifest[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {begin, payload.size()}}};
  }
  if (!metadata.empty()) manifest["__metadata__"] = metadata;
  const std::string header = manifest.dump();
  const std::uint64_t n = header.size();
  std::string out(kHeaderPrefix, '\0');
  std::memcpy(out.data(), &n, sizeof n);
  out += header;
  out += payload;
  return out;
}

void write_archive(const std::filesystem::path& path, const std::map<std::string, RawTensor>& tensors,
                   const std::map<std::string, std::string>& metadata) {
  const std::string bytes = serialize_archive(tensors, metadata);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write archive: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write: " + path.string());
}

std::string sha256_hex(std::span<const std::byte> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string sha256_hex(const std::string& bytes) { return sha256_hex(std::as_bytes(std::span(bytes))); }

RawTensor to_raw(const MatrixF& m) {
  RawTensor t;
  t.shape = {m.rows(), m.cols()};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

RawTensor to_raw(const VectorF& v) {
  RawTensor t;
  t.shape = {v.size()};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

MatrixF to_matrix(const RawTensor& t, std::int64_t rows, std::int64_t cols, const std::string& name) {
  if (t.shape != std::vector<std::int64_t>{rows, cols}) {
    throw ShapeError("tensor '" + name + "' has shape " + t.shape_string() + ", expected " +
                     shape_of({rows, cols}));
  }
  return Eigen::Map<const MatrixF>(t.data.data(), rows, cols);
}

VectorF to_vector(const RawTensor& t, std::int64_t size, const std::string& name) {
  if (t.shape != std::vector<std::int64_t>{size}) {
    throw ShapeError("tensor '" + name + "' has shape " + t.shape_string() + ", expected " + shape_of({size}));
  }
  return Eigen::Map<const VectorF>(t.data.data(), size);
}

}  // namespace lensdyn
