#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sirem {

enum class Errc {
  invalid_argument,
  shape_mismatch,
  non_finite,
  size_limit_exceeded,
  empty_input,
  range_violation,
  dimension_mismatch,
  stale_cache,
  non_convergent_step,
  divergence,
  zero_reference,
  all_zero_input,
  format_error,
  size_mismatch,
  unknown_dtype,
  missing_file,
  schema_violation,
  io_failure,
  usage,
};

constexpr std::string_view errc_name(Errc c) noexcept {
  switch (c) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::non_finite: return "non-finite";
    case Errc::size_limit_exceeded: return "size-limit-exceeded";
    case Errc::empty_input: return "empty-input";
    case Errc::range_violation: return "range-violation";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::stale_cache: return "stale-cache";
    case Errc::non_convergent_step: return "non-convergent-step";
    case Errc::divergence: return "divergence";
    case Errc::zero_reference: return "zero-reference";
    case Errc::all_zero_input: return "all-zero-input";
    case Errc::format_error: return "format-error";
    case Errc::size_mismatch: return "size-mismatch";
    case Errc::unknown_dtype: return "unknown-dtype";
    case Errc::missing_file: return "missing-file";
    case Errc::schema_violation: return "schema-violation";
    case Errc::io_failure: return "io-failure";
    case Errc::usage: return "usage";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string &msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string &msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string &msg) {
  if (!cond) fail(code, msg);
}

}  // namespace sirem
