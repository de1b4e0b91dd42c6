#include "stashfed/proxy.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "http_util.hpp"
#include "stashfed/error.hpp"
#include "stashfed/http_host.hpp"

namespace stashfed {

void ProxyConfig::validate() const {
  if (max_object_size > capacity)
    throw Error(Errc::invalid_argument, "max object size exceeds capacity");
  if (!(object_ttl > 0)) throw Error(Errc::invalid_argument, "ttl must be positive");
}

std::string_view proxy_status_name(ProxyStatus s) noexcept {
  switch (s) {
    case ProxyStatus::hit: return "HIT";
    case ProxyStatus::miss: return "MISS";
    case ProxyStatus::uncacheable: return "UNCACHEABLE";
  }
  return "MISS";
}

std::optional<ProxyStatus> parse_proxy_status(std::string_view s) noexcept {
  if (s == "HIT") return ProxyStatus::hit;
  if (s == "MISS") return ProxyStatus::miss;
  if (s == "UNCACHEABLE") return ProxyStatus::uncacheable;
  return std::nullopt;
}

ParsedUrl parse_http_url(std::string_view url) {
  constexpr std::string_view scheme = "http://";
  if (url.substr(0, scheme.size()) != scheme)
    throw Error(Errc::invalid_argument, "not an http URL: " + std::string(url));
  auto rest = url.substr(scheme.size());
  auto slash = rest.find('/');
  auto authority = rest.substr(0, slash);
  std::string target = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
  if (authority.empty()) throw Error(Errc::invalid_argument, "URL without host");
  const bool has_port = authority.back() != ']' && authority.find(':') != std::string_view::npos &&
                        (authority.front() != '[' || authority.find("]:") != std::string_view::npos);
  auto ep = has_port ? Endpoint::parse(authority) : Endpoint::parse(std::string(authority) + ":80");
  return {ep, target};
}

UpstreamFetch http_upstream(double connect_timeout, double read_timeout) {
  return [=](const std::string& url) {
    auto parsed = parse_http_url(url);
    auto cli = detail::make_client(parsed.endpoint, connect_timeout, read_timeout);
    // the target is already encoded by whoever built the URL
    cli->set_url_encode(false);
    auto res = cli->Get(parsed.target);
    if (!res) throw Error(Errc::upstream_unreachable, url);
    UpstreamResponse out;
    out.status = res->status;
    out.body = std::move(res->body);
    if (res->has_header("Content-Type")) out.content_type = res->get_header_value("Content-Type");
    return out;
  };
}

// ---- ProxyCache ----

ProxyCache::ProxyCache(ProxyConfig config, UpstreamFetch upstream, const Clock& clock)
    : config_(std::move(config)),
      upstream_(upstream ? std::move(upstream)
                         : http_upstream(config_.upstream_connect_timeout,
                                         config_.upstream_read_timeout)),
      clock_(clock) {
  config_.validate();
}

void ProxyCache::erase_locked(std::map<std::string, Object>::iterator it) {
  stored_ -= it->second.bytes->size();
  objects_.erase(it);
}

std::size_t ProxyCache::enforce_capacity_locked() {
  std::size_t removed = 0;
  while (stored_ > config_.capacity && !objects_.empty()) {
    auto victim = std::min_element(objects_.begin(), objects_.end(), [](const auto& a, const auto& b) {
      return a.second.last_access < b.second.last_access;
    });
    erase_locked(victim);
    ++counters_.evictions;
    ++removed;
  }
  return removed;
}

ProxyCache::Result ProxyCache::get(const std::string& url) {
  {
    std::lock_guard lock(mu_);
    auto it = objects_.find(url);
    if (it != objects_.end()) {
      if (clock_.now() - it->second.fetched_at <= config_.object_ttl) {
        it->second.last_access = ++tick_;
        ++counters_.hits;
        return {ProxyStatus::hit, 200, it->second.content_type, it->second.bytes};
      }
      erase_locked(it);
      ++counters_.expirations;
    }
  }

  auto [result, leader] = flights_.run(url, [&] {
    auto up = upstream_(url);
    Result r;
    r.http_status = up.status;
    r.content_type = up.content_type;
    auto bytes = std::make_shared<const std::string>(std::move(up.body));
    r.bytes = bytes;
    std::lock_guard lock(mu_);
    ++counters_.upstream_fetches;
    if (up.status != 200) {
      r.status = ProxyStatus::miss;
      return r;
    }
    if (bytes->size() > config_.max_object_size) {
      r.status = ProxyStatus::uncacheable;
      return r;
    }
    r.status = ProxyStatus::miss;
    if (auto old = objects_.find(url); old != objects_.end()) erase_locked(old);
    objects_[url] = Object{bytes, r.content_type, clock_.now(), ++tick_};
    stored_ += bytes->size();
    enforce_capacity_locked();
    return r;
  });
  std::lock_guard lock(mu_);
  if (result.status == ProxyStatus::uncacheable)
    ++counters_.uncacheable;
  else
    ++counters_.misses;
  (void)leader;
  return result;
}

std::size_t ProxyCache::expire_sweep(double now) {
  std::lock_guard lock(mu_);
  std::size_t removed = 0;
  for (auto it = objects_.begin(); it != objects_.end();) {
    if (now - it->second.fetched_at > config_.object_ttl) {
      auto next = std::next(it);
      erase_locked(it);
      ++counters_.expirations;
      ++removed;
      it = next;
    } else {
      ++it;
    }
  }
  return removed + enforce_capacity_locked();
}

bool ProxyCache::contains(const std::string& url) const {
  std::lock_guard lock(mu_);
  return objects_.count(url) > 0;
}

std::vector<std::string> ProxyCache::lru_order() const {
  std::lock_guard lock(mu_);
  std::vector<std::pair<std::uint64_t, std::string>> v;
  for (const auto& [url, o] : objects_) v.emplace_back(o.last_access, url);
  std::sort(v.begin(), v.end());
  std::vector<std::string> out;
  for (auto& [_, url] : v) out.push_back(std::move(url));
  return out;
}

ProxyStats ProxyCache::stats() const {
  std::lock_guard lock(mu_);
  auto s = counters_;
  s.stored_bytes = stored_;
  s.objects = objects_.size();
  return s;
}

// ---- ProxyServer ----

struct ProxyServer::Impl {
  HttpHost host;
  std::mutex mu;
  std::condition_variable cv;
  bool stopping = false;
  std::thread sweeper;
};

ProxyServer::ProxyServer(ProxyConfig config, UpstreamFetch upstream, const Clock& clock)
    : cache_(std::move(config), std::move(upstream), clock), impl_(std::make_unique<Impl>()) {
  auto& svr = impl_->host.server();

  svr.Get(R"(http://.*)", [this](const httplib::Request& req, httplib::Response& res) {
    std::string url = req.target.rfind("http://", 0) == 0 ? req.target : req.path;
    try {
      auto r = cache_.get(url);
      res.status = r.http_status;
      res.set_header("X-Proxy-Cache", std::string(proxy_status_name(r.status)));
      auto bytes = r.bytes;
      if (bytes->empty()) {
        res.set_content("", r.content_type);
        return;
      }
      res.set_content_provider(
          bytes->size(), r.content_type,
          [bytes](std::size_t offset, std::size_t length, httplib::DataSink& sink) {
            return sink.write(bytes->data() + offset, length);
          });
    } catch (const Error& e) {
      res.status = e.code() == Errc::invalid_argument ? 400 : 502;
      res.set_content(e.what(), "text/plain");
    }
  });

  svr.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
    auto s = cache_.stats();
    nlohmann::json j{{"hits", s.hits},
                     {"misses", s.misses},
                     {"uncacheable", s.uncacheable},
                     {"expirations", s.expirations},
                     {"evictions", s.evictions},
                     {"upstream_fetches", s.upstream_fetches},
                     {"stored_bytes", s.stored_bytes},
                     {"objects", s.objects},
                     {"capacity", cache_.config().capacity},
                     {"max_object_size", cache_.config().max_object_size},
                     {"ttl", cache_.config().object_ttl}};
    res.set_content(j.dump(), "application/json");
  });
}

ProxyServer::~ProxyServer() { stop(); }

Endpoint ProxyServer::endpoint() const { return {cache_.config().listen.host, impl_->host.port()}; }

std::uint16_t ProxyServer::start() {
  const auto& cfg = cache_.config();
  auto port = impl_->host.start(cfg.listen.host, cfg.listen.port);
  {
    std::lock_guard lock(impl_->mu);
    impl_->stopping = false;
  }
  const double interval = std::min(1.0, cfg.object_ttl);
  impl_->sweeper = std::thread([this, interval] {
    std::unique_lock lock(impl_->mu);
    while (!impl_->cv.wait_for(lock, std::chrono::duration<double>(interval),
                               [this] { return impl_->stopping; })) {
      lock.unlock();
      cache_.expire_sweep(cache_.now());
      lock.lock();
    }
  });
  return port;
}

void ProxyServer::stop() {
  {
    std::lock_guard lock(impl_->mu);
    impl_->stopping = true;
  }
  impl_->cv.notify_all();
  if (impl_->sweeper.joinable()) impl_->sweeper.join();
  impl_->host.stop();
}

}  // namespace stashfed
