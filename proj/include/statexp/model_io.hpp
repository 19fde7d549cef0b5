#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "statexp/model.hpp"

namespace statexp {

/// Schema violation, reported with the JSON pointer of the offending value.
class SchemaError : public ValidationError {
 public:
  SchemaError(std::string pointer, const std::string& message)
      : ValidationError(pointer + ": " + message), pointer_(std::move(pointer)) {}
  const std::string& pointer() const noexcept { return pointer_; }

 private:
  std::string pointer_;
};

/// Thrown when a file cannot be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Contents of a model file. The optional `observables` block carries the
/// potential V and observable Q used by the response commands.
struct ModelFile {
  JumpModel model;
  std::optional<Vector> potential;
  std::optional<Vector> observable;
};

/// Parses
///   { "states": [..], "beta": r, "epsilon": r, "energy": {state: r},
///     "base_rates": [{"from": s, "to": s, "rate": r}],
///     "forcing": [{"from": s, "to": s, "value": r}],
///     "observables": {"V": {state: r}, "Q": {state: r}} }   (observables optional)
/// Forcing entries list one orientation; the reverse is filled with the
/// opposite sign and contradictory duplicates are rejected.
ModelFile parse_model(const nlohmann::json& document);
ModelFile load_model_file(const std::filesystem::path& path);

/// Model JSON with canonical key order.
nlohmann::json model_to_json(const JumpModel& model);

std::string read_text_file(const std::filesystem::path& path);

/// 64-bit FNV-1a of the bytes, as 16 hex digits.
std::string content_hash(std::string_view bytes);

}  // namespace statexp
