#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stashfed/catalog.hpp"
#include "stashfed/chunk.hpp"
#include "stashfed/clock.hpp"
#include "stashfed/endpoint.hpp"
#include "stashfed/path.hpp"
#include "stashfed/snapshot.hpp"

namespace stashfed {

// stat() view of one regular file under the origin root.
struct FileStat {
  std::uint64_t size = 0;
  std::int64_t mtime = 0;  // whole seconds
  std::uint32_t mode = 0;
  std::filesystem::path local;
};

using TreeStats = std::map<FederationPath, FileStat>;

struct IndexState {
  Catalog catalog;
  double last_scan = 0.0;
};

// Instrumentation for the scan-cost property: how many files and bytes the
// indexer actually read.
struct IndexCounters {
  std::atomic<std::uint64_t> files_hashed{0};
  std::atomic<std::uint64_t> bytes_hashed{0};
};

// Walks root_dir without following symlinks; non-regular files are skipped.
// Throws Error(io_error) if the tree cannot be read.
TreeStats stat_tree(const std::filesystem::path& root_dir, const FederationPath& prefix);

FileCatalogEntry index_file(const FederationPath& path, const FileStat& stat,
                            std::uint64_t chunk_size = kChunkSize,
                            IndexCounters* counters = nullptr);

IndexState index_tree(const std::filesystem::path& root_dir, const FederationPath& prefix,
                      std::uint64_t chunk_size = kChunkSize, IndexCounters* counters = nullptr,
                      double now = 0.0);

// Paths that are new, deleted, or whose (mtime, size) differ from the
// previous catalog. Never reads file contents.
std::set<FederationPath> detect_changes(const IndexState& previous, const TreeStats& current);

// Incremental pass: re-hashes only what detect_changes reports.
IndexState reindex(const IndexState& previous, const std::filesystem::path& root_dir,
                   const FederationPath& prefix, std::uint64_t chunk_size = kChunkSize,
                   IndexCounters* counters = nullptr, double now = 0.0);

struct OriginConfig {
  FederationPath namespace_prefix;
  std::filesystem::path root_dir;
  Endpoint listen{"127.0.0.1", 0};
  std::vector<Endpoint> redirectors;
  double reindex_interval = 30.0;
  double heartbeat_interval = 60.0;
  std::uint64_t chunk_size = kChunkSize;
  std::uint32_t server_id = 1;
  std::optional<Endpoint> monitor;  // UDP collector
};

struct OriginStats {
  std::uint64_t requests = 0;
  std::uint64_t bytes_served = 0;
  std::uint64_t files_indexed = 0;
};

// Origin logic independent of the wire: byte serving, locate answers and
// the catalog. Indexing publishes a whole new IndexState at once.
class Origin {
 public:
  // Validates the config and performs the initial scan.
  explicit Origin(OriginConfig config, const Clock& clock = SystemClock::instance());

  struct ReadResult {
    std::string bytes;
    std::uint64_t total_size = 0;
    std::int64_t mtime = 0;
  };

  ReadResult serve_read(const FederationPath& path, std::optional<ByteRange> range = std::nullopt);

  // Resolves a federation path to the local file. Throws not-found when
  // outside the namespace or absent. Counts as one request.
  FileStat open_for_read(const FederationPath& path);
  void note_bytes_served(std::uint64_t n) { bytes_served_ += n; }

  bool handle_locate(const FederationPath& path) const;
  std::optional<FileCatalogEntry> catalog_entry(const FederationPath& path) const;

  // One scan pass. On io-error the previous state stays published and the
  // error is rethrown.
  void reindex_now();

  std::shared_ptr<const IndexState> index() const { return state_.load(); }
  OriginStats stats() const;
  const IndexCounters& index_counters() const { return counters_; }
  const OriginConfig& config() const { return config_; }

 private:
  OriginConfig config_;
  const Clock& clock_;
  Snapshot<IndexState> state_;
  IndexCounters counters_;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> bytes_served_{0};
};

// HTTP front end plus the background reindex and heartbeat loops.
class OriginServer {
 public:
  explicit OriginServer(OriginConfig config, const Clock& clock = SystemClock::instance());
  ~OriginServer();

  // Binds, serves, registers with every redirector. Returns bound port.
  std::uint16_t start();
  void stop();

  Endpoint endpoint() const;
  Origin& origin() { return origin_; }

  // Registration as advertised to redirectors (defaults to the bound
  // endpoint). Tests may point it at a relay.
  void set_advertised_endpoint(Endpoint ep) { advertised_ = std::move(ep); }
  void register_now();

 private:
  struct Impl;
  Origin origin_;
  std::unique_ptr<Impl> impl_;
  std::optional<Endpoint> advertised_;
};

}  // namespace stashfed
