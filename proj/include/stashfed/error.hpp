#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace stashfed {

enum class Errc {
  malformed_path,
  oversized_chunk,
  invalid_argument,
  not_found,
  range_unsatisfiable,
  io_error,
  conflict,
  malformed_descriptor,
  origin_unreachable,
  integrity_error,
  cache_full,
  no_caches,
  all_methods_failed,
  malformed_packet,
  unencodable,
  sink_unavailable,
  upstream_unreachable,
  undefined_baseline,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Raised when bytes do not match the catalog. chunk_index is absent for a
// size mismatch detected before any hashing.
class IntegrityError : public Error {
 public:
  IntegrityError(std::optional<std::uint64_t> chunk_index, const std::string& what)
      : Error(Errc::integrity_error, what), chunk_index_(chunk_index) {}

  std::optional<std::uint64_t> chunk_index() const noexcept { return chunk_index_; }

 private:
  std::optional<std::uint64_t> chunk_index_;
};

}  // namespace stashfed
