#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lensdyn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ArgumentError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

/// Malformed archive bytes; `offset` is the byte position where parsing failed.
struct FormatError : Error {
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset(offset) {}
  std::size_t offset;
};

struct MissingTensorError : Error {
  explicit MissingTensorError(const std::string& name)
      : Error("missing tensor: " + name), name(name) {}
  std::string name;
};

struct LengthError : Error {
  using Error::Error;
};

struct VocabularyError : Error {
  using Error::Error;
};

/// A lens archive was produced for a different model.
struct FingerprintError : Error {
  using Error::Error;
};

/// Dataset schema violation; `line` is 1-based.
struct ValidationError : Error {
  ValidationError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

struct UnsupportedTokenizerError : Error {
  using Error::Error;
};

struct PreconditionError : Error {
  using Error::Error;
};

/// Statistic undefined for the given sample (constant input, too few points, empty group).
struct StatsError : Error {
  using Error::Error;
};

}  // namespace lensdyn
