#include "stashfed/redirector.hpp"

#include <algorithm>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "http_util.hpp"
#include "stashfed/error.hpp"
#include "stashfed/http_host.hpp"

namespace stashfed {

nlohmann::json to_json(const CacheDescriptor& d) {
  return {{"cache_id", d.cache_id},
          {"endpoint", d.endpoint.str()},
          {"lat", d.location.latitude()},
          {"lon", d.location.longitude()}};
}

CacheDescriptor cache_descriptor_from_json(const nlohmann::json& j) {
  try {
    CacheDescriptor d;
    d.cache_id = j.at("cache_id").get<std::string>();
    if (d.cache_id.empty()) throw Error(Errc::malformed_descriptor, "empty cache_id");
    d.endpoint = Endpoint::parse(j.at("endpoint").get<std::string>());
    d.location = GeoCoordinate(j.at("lat").get<double>(), j.at("lon").get<double>());
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed_descriptor, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::malformed_descriptor) throw;
    throw Error(Errc::malformed_descriptor, e.what());
  }
}

OriginProbe http_origin_probe(double timeout_seconds) {
  return [timeout_seconds](const Endpoint& ep, const FederationPath& path) {
    auto cli = detail::make_client(ep, timeout_seconds, timeout_seconds);
    auto res = cli->Get("/locate", httplib::Params{{"path", path.str()}}, httplib::Headers{});
    return res && res->status == 200;
  };
}

// ---------------------------------------------------------------- Redirector

Redirector::Redirector(RedirectorConfig config, const Clock& clock, OriginProbe probe)
    : config_(std::move(config)),
      clock_(clock),
      probe_(probe ? std::move(probe) : http_origin_probe(config_.confirm_timeout)) {}

bool Redirector::live(const OriginRegistration& r, double now) const {
  return now - r.last_heartbeat <= config_.heartbeat_ttl;
}

void Redirector::register_origin(const FederationPath& prefix, const Endpoint& endpoint) {
  const double now = clock_.now();
  registry_.update([&](Registry& reg) {
    auto it = reg.origins.find(prefix);
    if (it != reg.origins.end() && it->second.endpoint != endpoint && live(it->second, now))
      throw Error(Errc::conflict, prefix.str() + " is held by " + it->second.endpoint.str());
    reg.origins.insert_or_assign(prefix, OriginRegistration{prefix, endpoint, now});
  });
}

std::vector<OriginRegistration> Redirector::candidates(const FederationPath& path) const {
  const double now = clock_.now();
  auto reg = registry_.load();
  std::vector<OriginRegistration> out;
  // Walk the ancestors of path from longest to shortest; each lookup is an
  // exact-prefix probe, so non-matching registrations are never touched.
  std::string text = path.str();
  while (true) {
    auto it = reg->origins.find(FederationPath::normalize(text));
    if (it != reg->origins.end() && live(it->second, now)) out.push_back(it->second);
    if (text == "/") break;
    auto slash = text.rfind('/');
    text = slash == 0 ? "/" : text.substr(0, slash);
  }
  return out;
}

Endpoint Redirector::locate(const FederationPath& path) {
  for (const auto& c : candidates(path)) {
    ++probes_;
    if (probe_(c.endpoint, path)) return c.endpoint;
  }
  throw Error(Errc::not_found, path.str());
}

void Redirector::register_cache(const CacheDescriptor& descriptor) {
  if (descriptor.cache_id.empty() || descriptor.endpoint.host.empty())
    throw Error(Errc::malformed_descriptor, "cache_id and endpoint are required");
  registry_.update([&](Registry& reg) { reg.caches.insert_or_assign(descriptor.cache_id, descriptor); });
}

std::vector<CacheDescriptor> Redirector::list_caches() const {
  auto reg = registry_.load();
  std::vector<CacheDescriptor> out;
  for (const auto& [id, d] : reg->caches) out.push_back(d);
  return out;
}

// ---------------------------------------------------------------- server

struct RedirectorServer::Impl {
  HttpHost host;
  Endpoint listen;
};

RedirectorServer::RedirectorServer(RedirectorConfig config, const Clock& clock, OriginProbe probe)
    : redirector_(config, clock, std::move(probe)), impl_(std::make_unique<Impl>()) {
  impl_->listen = config.listen;
  auto& svr = impl_->host.server();

  svr.Post("/register/origin", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto j = nlohmann::json::parse(req.body);
      redirector_.register_origin(FederationPath::normalize(j.at("prefix").get<std::string>()),
                                  Endpoint::parse(j.at("endpoint").get<std::string>()));
      res.set_content(R"({"ok":true})", "application/json");
    } catch (const Error& e) {
      res.status = e.code() == Errc::conflict ? 409 : 400;
      res.set_content(e.what(), "text/plain");
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    }
  });

  svr.Post("/register/cache", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      redirector_.register_cache(cache_descriptor_from_json(nlohmann::json::parse(req.body)));
      res.set_content(R"({"ok":true})", "application/json");
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    }
  });

  svr.Get("/locate", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto ep = redirector_.locate(FederationPath::normalize(req.get_param_value("path")));
      res.set_content(nlohmann::json{{"origin", ep.str()}}.dump(), "application/json");
    } catch (const Error& e) {
      res.status = e.code() == Errc::not_found ? 404 : 400;
    }
  });

  svr.Get("/caches", [this](const httplib::Request&, httplib::Response& res) {
    auto arr = nlohmann::json::array();
    for (const auto& d : redirector_.list_caches()) arr.push_back(to_json(d));
    res.set_content(arr.dump(), "application/json");
  });
}

RedirectorServer::~RedirectorServer() { stop(); }

std::uint16_t RedirectorServer::start() { return impl_->host.start(impl_->listen.host, impl_->listen.port); }
void RedirectorServer::stop() { impl_->host.stop(); }
Endpoint RedirectorServer::endpoint() const { return {impl_->listen.host, impl_->host.port()}; }

// ---------------------------------------------------------------- client

RedirectorClient::RedirectorClient(std::vector<Endpoint> redirectors, double timeout_seconds)
    : redirectors_(std::move(redirectors)), timeout_(timeout_seconds) {}

Endpoint RedirectorClient::locate(const FederationPath& path) const {
  for (const auto& r : redirectors_) {
    auto cli = detail::make_client(r, timeout_, timeout_ * 2);
    auto res = cli->Get("/locate", httplib::Params{{"path", path.str()}}, httplib::Headers{});
    if (!res) continue;
    if (res->status == 404) throw Error(Errc::not_found, path.str());
    if (res->status != 200) continue;
    try {
      return Endpoint::parse(nlohmann::json::parse(res->body).at("origin").get<std::string>());
    } catch (const std::exception&) {
      continue;
    }
  }
  throw Error(Errc::origin_unreachable, "no redirector answered for " + path.str());
}

std::vector<CacheDescriptor> RedirectorClient::list_caches() const {
  for (const auto& r : redirectors_) {
    auto cli = detail::make_client(r, timeout_, timeout_ * 2);
    auto res = cli->Get("/caches");
    if (!res || res->status != 200) continue;
    try {
      std::vector<CacheDescriptor> out;
      for (const auto& j : nlohmann::json::parse(res->body)) out.push_back(cache_descriptor_from_json(j));
      return out;
    } catch (const std::exception&) {
      continue;
    }
  }
  throw Error(Errc::origin_unreachable, "no redirector answered /caches");
}

std::size_t RedirectorClient::register_cache(const CacheDescriptor& descriptor) const {
  std::size_t ok = 0;
  auto body = to_json(descriptor).dump();
  for (const auto& r : redirectors_) {
    auto cli = detail::make_client(r, timeout_, timeout_);
    auto res = cli->Post("/register/cache", body, "application/json");
    if (res && res->status == 200) ++ok;
  }
  return ok;
}

}  // namespace stashfed
