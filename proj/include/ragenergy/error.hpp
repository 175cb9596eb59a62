#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ragenergy {

enum class Errc {
  invalid_measurement,
  invalid_parameter,
  schema,
  undefined_similarity,
  stage,
  verification_format,
  configuration,
  retrieval,
  validation,
  statistics,
  undefined_shares,
  migration,
  io,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_measurement: return "invalid-measurement";
    case Errc::invalid_parameter: return "invalid-parameter";
    case Errc::schema: return "schema";
    case Errc::undefined_similarity: return "undefined-similarity";
    case Errc::stage: return "stage";
    case Errc::verification_format: return "verification-format";
    case Errc::configuration: return "configuration";
    case Errc::retrieval: return "retrieval";
    case Errc::validation: return "validation";
    case Errc::statistics: return "statistics";
    case Errc::undefined_shares: return "undefined-shares";
    case Errc::migration: return "migration";
    case Errc::io: return "io";
  }
  return "unknown";
}

/// Base error for everything the library throws. The code selects the CLI
/// exit status (validation-type codes map to 1, runtime codes to 2).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + " error: " + message), code_(code) {}

  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Failure inside a pipeline stage. Carries the offending sentence index when
/// the failure came from embedding a particular sentence.
class StageError : public Error {
 public:
  explicit StageError(const std::string& message, std::optional<std::size_t> sentence = std::nullopt)
      : Error(Errc::stage, message), sentence_(sentence) {}

  [[nodiscard]] std::optional<std::size_t> sentence_index() const noexcept { return sentence_; }

 private:
  std::optional<std::size_t> sentence_;
};

constexpr bool is_validation_error(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_measurement:
    case Errc::invalid_parameter:
    case Errc::schema:
    case Errc::configuration:
    case Errc::validation:
    case Errc::migration:
      return true;
    default:
      return false;
  }
}

}  // namespace ragenergy
