#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stashfed/cache.hpp"
#include "stashfed/catalog.hpp"
#include "stashfed/chunk.hpp"
#include "stashfed/endpoint.hpp"
#include "stashfed/error.hpp"
#include "stashfed/geo.hpp"
#include "stashfed/path.hpp"
#include "stashfed/redirector.hpp"

namespace stashfed {

enum class Method { cache_federation, direct_origin, proxy_http };
std::string_view method_name(Method m) noexcept;
// Accepts the report names and the short CLI names cache, origin, proxy.
Method parse_method(std::string_view s);
std::vector<Method> parse_methods(std::string_view csv);

// Ascending haversine distance from the client, ties by cache_id.
std::vector<CacheDescriptor> select_nearest_cache(const GeoCoordinate& client,
                                                  std::vector<CacheDescriptor> directory);

struct Attempt {
  Method method = Method::cache_federation;
  std::vector<std::string> endpoints;  // every server contacted, in order
  bool ok = false;
  std::optional<Errc> error;
  std::optional<std::uint64_t> chunk_index;  // integrity failures only
  std::string detail;
};

struct TransferReport {
  FederationPath path;
  std::filesystem::path destination;
  bool success = false;
  std::uint64_t bytes = 0;
  double duration = 0;          // whole invocation
  double lookup_seconds = 0;    // ranking, directory and metadata lookups
  double transfer_seconds = 0;  // moving bytes
  std::optional<Method> method_used;
  std::optional<CacheStatus> cache_status;
  bool verified = false;
  std::vector<Attempt> attempts;
};

nlohmann::json to_json(const TransferReport& r);

// 0 success, 2 every attempt not-found, 3 any integrity error, 4 otherwise.
int exit_code(const TransferReport& r);

struct ClientOptions {
  std::vector<Endpoint> redirectors;
  // Explicit caches are tried in the given order; otherwise the directory
  // comes from the redirectors and is ranked by distance.
  std::vector<Endpoint> caches;
  GeoCoordinate location;
  std::vector<Method> methods{Method::cache_federation, Method::direct_origin, Method::proxy_http};
  std::optional<Endpoint> proxy;
  // Base URL (http://host:port) of the origin used for proxy fetches. When
  // absent the origin is located through the redirectors.
  std::optional<std::string> origin_url;
  std::size_t cache_attempts = 2;
  std::size_t parallel_chunks = 4;
  double connect_timeout = 2.0;
  double read_timeout = 60.0;
  std::uint64_t chunk_size = kChunkSize;
};

// Parses "http://host:port" (a trailing path is ignored) into an endpoint.
Endpoint endpoint_from_url(std::string_view url);

TransferReport download(const FederationPath& path, const std::filesystem::path& destination,
                        const ClientOptions& options);

// Throws IntegrityError: without a chunk index on size mismatch, otherwise
// naming the first mismatching chunk.
void verify_download(const std::filesystem::path& file, const FileCatalogEntry& entry,
                     std::uint64_t chunk_size = kChunkSize);

}  // namespace stashfed
