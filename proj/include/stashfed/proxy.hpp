#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stashfed/clock.hpp"
#include "stashfed/endpoint.hpp"
#include "stashfed/single_flight.hpp"

namespace stashfed {

struct ProxyConfig {
  Endpoint listen{"127.0.0.1", 0};
  std::uint64_t capacity = 1ull << 30;
  std::uint64_t max_object_size = 1ull << 20;
  double object_ttl = 300.0;
  double upstream_connect_timeout = 2.0;
  double upstream_read_timeout = 60.0;

  // Throws invalid-argument unless max_object_size <= capacity and ttl > 0.
  void validate() const;
};

enum class ProxyStatus { hit, miss, uncacheable };
std::string_view proxy_status_name(ProxyStatus s) noexcept;
std::optional<ProxyStatus> parse_proxy_status(std::string_view s) noexcept;

struct UpstreamResponse {
  int status = 0;
  std::string body;
  std::string content_type = "application/octet-stream";
};

// Fetches an absolute http:// URL. Throws Error(upstream_unreachable) when
// no response arrives.
using UpstreamFetch = std::function<UpstreamResponse(const std::string& url)>;
UpstreamFetch http_upstream(double connect_timeout, double read_timeout);

struct ParsedUrl {
  Endpoint endpoint;
  std::string target;  // path and query, starts with '/'
};
// Accepts http://host[:port]/target only.
ParsedUrl parse_http_url(std::string_view url);

struct ProxyStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t uncacheable = 0;
  std::uint64_t expirations = 0;
  std::uint64_t evictions = 0;
  std::uint64_t upstream_fetches = 0;
  std::uint64_t stored_bytes = 0;
  std::uint64_t objects = 0;
};

class ProxyCache {
 public:
  ProxyCache(ProxyConfig config, UpstreamFetch upstream,
             const Clock& clock = SystemClock::instance());

  struct Result {
    ProxyStatus status = ProxyStatus::miss;
    int http_status = 200;
    std::string content_type;
    std::shared_ptr<const std::string> bytes;
  };

  Result get(const std::string& url);

  // Drops objects older than the TTL, then evicts least recently used
  // objects while over capacity. Returns how many objects were removed.
  std::size_t expire_sweep(double now);

  bool contains(const std::string& url) const;
  // Stored URLs, least recently used first.
  std::vector<std::string> lru_order() const;
  ProxyStats stats() const;
  const ProxyConfig& config() const { return config_; }
  double now() const { return clock_.now(); }

 private:
  struct Object {
    std::shared_ptr<const std::string> bytes;
    std::string content_type;
    double fetched_at = 0;
    std::uint64_t last_access = 0;
  };

  std::size_t enforce_capacity_locked();
  void erase_locked(std::map<std::string, Object>::iterator it);

  ProxyConfig config_;
  UpstreamFetch upstream_;
  const Clock& clock_;
  mutable std::mutex mu_;
  std::map<std::string, Object> objects_;
  std::uint64_t stored_ = 0;
  std::uint64_t tick_ = 0;
  ProxyStats counters_;
  SingleFlight<std::string, Result> flights_;
};

// Forward proxy over HTTP: absolute-URL GET requests, header
// X-Proxy-Cache, and GET /stats on the same port.
class ProxyServer {
 public:
  explicit ProxyServer(ProxyConfig config, UpstreamFetch upstream = {},
                       const Clock& clock = SystemClock::instance());
  ~ProxyServer();

  std::uint16_t start();
  void stop();
  Endpoint endpoint() const;
  ProxyCache& cache() { return cache_; }

 private:
  struct Impl;
  ProxyCache cache_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace stashfed
