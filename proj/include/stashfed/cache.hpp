#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stashfed/catalog.hpp"
#include "stashfed/chunk.hpp"
#include "stashfed/clock.hpp"
#include "stashfed/endpoint.hpp"
#include "stashfed/geo.hpp"
#include "stashfed/path.hpp"
#include "stashfed/single_flight.hpp"

namespace stashfed {

struct CacheConfig {
  std::string cache_id = "cache";
  Endpoint listen{"127.0.0.1", 0};
  std::vector<Endpoint> redirectors;
  std::filesystem::path storage_dir;
  std::uint64_t capacity = 0;
  double high_watermark = 0.90;
  double low_watermark = 0.70;
  GeoCoordinate location;
  std::uint64_t chunk_size = kChunkSize;
  double register_interval = 60.0;
  double origin_connect_timeout = 2.0;
  double origin_read_timeout = 60.0;
  std::optional<Endpoint> monitor;
  std::uint32_t server_id = 1;
  // Endpoint advertised to redirectors; defaults to the bound listen endpoint.
  std::optional<Endpoint> advertised;

  // Throws Error(invalid_argument) unless 0 < low < high <= 1 and
  // capacity > chunk_size.
  void validate() const;
};

enum class CacheStatus { hit, miss, partial };
std::string_view cache_status_name(CacheStatus s) noexcept;
std::optional<CacheStatus> parse_cache_status(std::string_view s) noexcept;

struct CacheEntry {
  FederationPath path;
  std::uint64_t total_size = 0;
  std::vector<bool> chunks_present;
  std::uint64_t bytes_stored = 0;
  std::uint64_t last_access = 0;  // logical tick, strictly increasing
  std::uint32_t in_use = 0;
  std::optional<FileCatalogEntry> catalog;  // absent => unverified
  std::optional<Endpoint> origin;
};

// Space accounting and LRU eviction over whole entries. Not thread-safe;
// the owner serializes access.
class CacheIndex {
 public:
  CacheIndex(std::uint64_t capacity, double high_watermark, double low_watermark,
             std::uint64_t chunk_size = kChunkSize);

  CacheEntry& ensure(const FederationPath& path, std::uint64_t total_size);
  CacheEntry* find(const FederationPath& path);
  const CacheEntry* find(const FederationPath& path) const;

  // Chunk indices overlapping `range` that are not stored. Unknown entries
  // need every overlapping chunk.
  std::vector<std::uint64_t> needed(const FederationPath& path, std::uint64_t total_size,
                                    ByteRange range) const;

  void touch(const FederationPath& path);
  void pin(const FederationPath& path);
  void unpin(const FederationPath& path);

  // Paths removed by evict() since the last call, including when evict()
  // threw. The owner deletes their stored bytes.
  std::vector<FederationPath> take_removed();

  // Evicts whole entries in ascending last_access order, skipping pinned
  // entries and `protect`, until usage <= low * capacity or nothing is
  // evictable. Returns evicted paths in eviction order. Throws
  // Error(cache_full) if afterwards bytes_needed still cannot fit.
  std::vector<FederationPath> evict(std::uint64_t bytes_needed,
                                    const FederationPath* protect = nullptr);

  // Makes room for n more bytes, evicting only when usage + n would cross
  // the high watermark.
  std::vector<FederationPath> reserve(std::uint64_t n, const FederationPath* protect = nullptr);

  void commit_chunk(const FederationPath& path, std::uint64_t index, std::uint64_t length);

  std::uint64_t usage() const noexcept { return usage_; }
  std::uint64_t capacity() const noexcept { return capacity_; }
  double high_bytes() const noexcept { return high_ * static_cast<double>(capacity_); }
  double low_bytes() const noexcept { return low_ * static_cast<double>(capacity_); }
  std::uint64_t chunk_size() const noexcept { return chunk_size_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::uint64_t evictions() const noexcept { return evictions_; }
  const std::map<FederationPath, CacheEntry>& entries() const noexcept { return entries_; }

 private:
  bool fits(std::uint64_t n) const;

  std::uint64_t capacity_;
  double high_;
  double low_;
  std::uint64_t chunk_size_;
  std::uint64_t usage_ = 0;
  std::uint64_t tick_ = 0;
  std::uint64_t evictions_ = 0;
  std::map<FederationPath, CacheEntry> entries_;
  std::vector<FederationPath> removed_;
};

// On-disk chunk files under the storage directory.
class ChunkStore {
 public:
  explicit ChunkStore(std::filesystem::path root);
  void put(const FederationPath& path, std::uint64_t index, std::string_view bytes);
  std::string get(const FederationPath& path, std::uint64_t index, std::uint64_t length) const;
  void remove(const FederationPath& path);
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path dir_for(const FederationPath& path) const;
  std::filesystem::path root_;
};

// How the cache reaches origins. The HTTP implementation locates through
// the redirectors and reads byte ranges.
class OriginAccess {
 public:
  virtual ~OriginAccess() = default;
  virtual Endpoint locate(const FederationPath& path) = 0;
  virtual std::optional<FileCatalogEntry> catalog_entry(const Endpoint& origin,
                                                        const FederationPath& path) = 0;
  // Total size via HEAD, used when the origin has no catalog entry.
  virtual std::uint64_t file_size(const Endpoint& origin, const FederationPath& path) = 0;
  virtual std::string read_range(const Endpoint& origin, const FederationPath& path,
                                 ByteRange range) = 0;
};

std::unique_ptr<OriginAccess> make_http_origin_access(std::vector<Endpoint> redirectors,
                                                      double connect_timeout, double read_timeout);

struct CacheStats {
  std::uint64_t usage_bytes = 0;
  std::uint64_t capacity = 0;
  std::uint64_t entries = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t partials = 0;
  std::uint64_t origin_fetches = 0;
  std::uint64_t evictions = 0;
  std::uint64_t integrity_errors = 0;
};

class CacheService {
 public:
  explicit CacheService(CacheConfig config, std::unique_ptr<OriginAccess> origins = nullptr);

  // A pinned view of one request. Unpins on destruction.
  class Read {
   public:
    ~Read();
    Read(const Read&) = delete;
    Read& operator=(const Read&) = delete;

    CacheStatus status() const noexcept { return status_; }
    std::uint64_t total_size() const noexcept { return total_size_; }
    ByteRange range() const noexcept { return range_; }
    const FederationPath& path() const noexcept { return path_; }
    std::uint64_t bytes_served() const noexcept { return served_; }

    // Bytes of chunk `index`, fetching it from the origin if absent.
    std::string chunk(std::uint64_t index);
    // Every byte of range(), in order.
    std::string read_all();

   private:
    friend class CacheService;
    Read(CacheService& owner, FederationPath path) : owner_(owner), path_(std::move(path)) {}
    CacheService& owner_;
    FederationPath path_;
    CacheStatus status_ = CacheStatus::miss;
    std::uint64_t total_size_ = 0;
    ByteRange range_;
    std::uint64_t served_ = 0;
  };

  using RangeForSize = std::function<std::optional<ByteRange>(std::uint64_t total_size)>;

  // Resolves metadata, classifies the request and pins the entry. Throws
  // not-found, range-unsatisfiable or origin-unreachable.
  std::unique_ptr<Read> open(const FederationPath& path, const RangeForSize& range_for_size);
  std::unique_ptr<Read> open(const FederationPath& path, std::optional<ByteRange> range = std::nullopt);

  struct Response {
    CacheStatus status = CacheStatus::miss;
    std::uint64_t total_size = 0;
    ByteRange range;
    std::string bytes;
  };
  Response handle_request(const FederationPath& path, std::optional<ByteRange> range = std::nullopt);

  // Missing chunk indices for a range of a known entry.
  std::vector<std::uint64_t> cache_lookup(const FederationPath& path, ByteRange range) const;

  // Fetches, verifies and commits the given chunks. A digest mismatch is
  // retried once, then raised as IntegrityError.
  void fetch_from_origin(const FederationPath& path, const std::vector<std::uint64_t>& chunks);

  std::vector<FederationPath> evict(std::uint64_t bytes_needed);

  // Catalog view of an entry for clients; resolves metadata if needed.
  struct Metadata {
    std::uint64_t total_size = 0;
    std::optional<FileCatalogEntry> catalog;
    std::optional<Endpoint> origin;
  };
  Metadata metadata(const FederationPath& path);

  CacheStats stats() const;
  const CacheConfig& config() const { return config_; }

 private:
  struct FetchKey {
    FederationPath path;
    std::uint64_t index;
    friend auto operator<=>(const FetchKey&, const FetchKey&) = default;
  };

  Metadata resolve(const FederationPath& path);
  void ensure_chunk(const FederationPath& path, std::uint64_t index);
  std::string fetch_verified(const FederationPath& path, std::uint64_t index);
  void unpin(const FederationPath& path);
  void drop_removed_locked();

  CacheConfig config_;
  std::unique_ptr<OriginAccess> origins_;
  ChunkStore store_;
  mutable std::mutex mu_;
  CacheIndex index_;
  SingleFlight<FetchKey, bool> chunk_flights_;
  SingleFlight<FederationPath, Metadata> meta_flights_;
  std::atomic<std::uint64_t> hits_{0}, misses_{0}, partials_{0}, origin_fetches_{0},
      integrity_errors_{0};
};

class MonitorEmitter;

// HTTP front end: GET/HEAD /data/<path>, GET /meta/<path>, GET /stats.
class CacheServer {
 public:
  explicit CacheServer(CacheConfig config, std::unique_ptr<OriginAccess> origins = nullptr);
  ~CacheServer();

  std::uint16_t start();
  void stop();
  Endpoint endpoint() const;
  CacheService& service() { return service_; }
  void register_now();

 private:
  struct Impl;
  CacheService service_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace stashfed
