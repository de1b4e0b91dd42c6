#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "stashfed/chunk.hpp"

namespace stashfed {

using Digest = std::array<std::uint8_t, 32>;

// SHA-256 over one chunk. Throws Error(oversized_chunk) past chunk_size.
Digest chunk_checksum(std::span<const std::byte> data, std::uint64_t chunk_size = kChunkSize);
Digest chunk_checksum(std::string_view data, std::uint64_t chunk_size = kChunkSize);

std::string to_hex(const Digest& digest);
Digest digest_from_hex(std::string_view hex);

// Incremental SHA-256 for whole files and streams.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(Sha256&&) noexcept;
  Sha256& operator=(Sha256&&) noexcept;

  void update(std::string_view data);
  Digest finish();

  static Digest of(std::string_view data);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace stashfed
