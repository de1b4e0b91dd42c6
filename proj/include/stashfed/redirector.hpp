#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stashfed/clock.hpp"
#include "stashfed/endpoint.hpp"
#include "stashfed/geo.hpp"
#include "stashfed/path.hpp"
#include "stashfed/snapshot.hpp"

namespace stashfed {

struct OriginRegistration {
  FederationPath prefix;
  Endpoint endpoint;
  double last_heartbeat = 0.0;
};

struct CacheDescriptor {
  std::string cache_id;
  Endpoint endpoint;
  GeoCoordinate location;

  friend bool operator==(const CacheDescriptor&, const CacheDescriptor&) = default;
};

nlohmann::json to_json(const CacheDescriptor& d);
// Throws Error(malformed_descriptor) on missing fields or bad coordinates.
CacheDescriptor cache_descriptor_from_json(const nlohmann::json& j);

struct Registry {
  std::map<FederationPath, OriginRegistration> origins;
  std::map<std::string, CacheDescriptor> caches;
};

struct RedirectorConfig {
  Endpoint listen{"127.0.0.1", 0};
  // An origin is stale once its last heartbeat is older than this
  // (3 missed 60 s beats by default).
  double heartbeat_ttl = 180.0;
  double confirm_timeout = 2.0;
};

// Asks one origin whether it holds a path. Connection failures and
// timeouts must return false.
using OriginProbe = std::function<bool(const Endpoint&, const FederationPath&)>;

OriginProbe http_origin_probe(double timeout_seconds);

class Redirector {
 public:
  explicit Redirector(RedirectorConfig config = {}, const Clock& clock = SystemClock::instance(),
                      OriginProbe probe = {});

  // Idempotent for the same (prefix, endpoint); refreshes the heartbeat.
  // Throws Error(conflict) if a live registration holds the prefix with a
  // different endpoint. A stale holder is replaced.
  void register_origin(const FederationPath& prefix, const Endpoint& endpoint);

  // Live registrations whose prefix matches `path`, longest prefix first.
  std::vector<OriginRegistration> candidates(const FederationPath& path) const;

  // Confirms candidates in order; the first `has` wins. Throws not-found.
  Endpoint locate(const FederationPath& path);

  void register_cache(const CacheDescriptor& descriptor);
  std::vector<CacheDescriptor> list_caches() const;

  std::shared_ptr<const Registry> registry() const { return registry_.load(); }
  std::uint64_t probes_sent() const { return probes_.load(); }
  const RedirectorConfig& config() const { return config_; }

 private:
  bool live(const OriginRegistration& r, double now) const;

  RedirectorConfig config_;
  const Clock& clock_;
  OriginProbe probe_;
  Snapshot<Registry> registry_;
  std::atomic<std::uint64_t> probes_{0};
};

class RedirectorServer {
 public:
  explicit RedirectorServer(RedirectorConfig config = {}, const Clock& clock = SystemClock::instance(),
                            OriginProbe probe = {});
  ~RedirectorServer();

  std::uint16_t start();
  void stop();
  Endpoint endpoint() const;
  Redirector& redirector() { return redirector_; }

 private:
  struct Impl;
  Redirector redirector_;
  std::unique_ptr<Impl> impl_;
};

// Client side of the redirector protocol. Walks the ordered endpoint list
// and fails over only on connection errors; a 404 is authoritative.
class RedirectorClient {
 public:
  explicit RedirectorClient(std::vector<Endpoint> redirectors, double timeout_seconds = 2.0);

  // Throws not-found, or origin-unreachable when no redirector answers.
  Endpoint locate(const FederationPath& path) const;
  std::vector<CacheDescriptor> list_caches() const;
  // Registers with every redirector; returns how many accepted.
  std::size_t register_cache(const CacheDescriptor& descriptor) const;

  const std::vector<Endpoint>& endpoints() const { return redirectors_; }

 private:
  std::vector<Endpoint> redirectors_;
  double timeout_;
};

}  // namespace stashfed
