#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace stashfed {

// 24 MiB, the transfer, checksum and accounting unit.
inline constexpr std::uint64_t kChunkSize = 24ull << 20;

struct ChunkSpec {
  std::uint64_t index = 0;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  friend bool operator==(const ChunkSpec&, const ChunkSpec&) = default;
};

// Half-open byte interval [begin, end).
struct ByteRange {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;

  std::uint64_t size() const noexcept { return end > begin ? end - begin : 0; }
  bool empty() const noexcept { return end <= begin; }

  friend bool operator==(const ByteRange&, const ByteRange&) = default;
};

std::uint64_t chunk_count(std::uint64_t file_size, std::uint64_t chunk_size = kChunkSize);

std::vector<ChunkSpec> chunk_layout(std::uint64_t file_size,
                                    std::uint64_t chunk_size = kChunkSize);

ChunkSpec chunk_at(std::uint64_t file_size, std::uint64_t index,
                   std::uint64_t chunk_size = kChunkSize);

// Indices of the chunks that overlap `range` (clamped to the file).
std::vector<std::uint64_t> chunks_overlapping(std::uint64_t file_size, ByteRange range,
                                              std::uint64_t chunk_size = kChunkSize);

// Resolves an optional request range against a file size; throws
// Error(range_unsatisfiable) when a non-empty range starts at or beyond EOF.
ByteRange resolve_range(std::uint64_t file_size, const std::optional<ByteRange>& range);

}  // namespace stashfed
