#include "stashfed/cache.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "http_util.hpp"
#include "stashfed/checksum.hpp"
#include "stashfed/error.hpp"
#include "stashfed/http_host.hpp"
#include "stashfed/monitoring.hpp"
#include "stashfed/redirector.hpp"

namespace fs = std::filesystem;

namespace stashfed {

void CacheConfig::validate() const {
  if (!(low_watermark > 0.0 && low_watermark < high_watermark && high_watermark <= 1.0))
    throw Error(Errc::invalid_argument, "watermarks must satisfy 0 < low < high <= 1");
  if (chunk_size == 0) throw Error(Errc::invalid_argument, "chunk size must be positive");
  if (capacity <= chunk_size)
    throw Error(Errc::invalid_argument, "capacity must exceed the chunk size");
}

std::string_view cache_status_name(CacheStatus s) noexcept {
  switch (s) {
    case CacheStatus::hit: return "HIT";
    case CacheStatus::miss: return "MISS";
    case CacheStatus::partial: return "PARTIAL";
  }
  return "MISS";
}

std::optional<CacheStatus> parse_cache_status(std::string_view s) noexcept {
  if (s == "HIT") return CacheStatus::hit;
  if (s == "MISS") return CacheStatus::miss;
  if (s == "PARTIAL") return CacheStatus::partial;
  return std::nullopt;
}

// ---- CacheIndex ----

CacheIndex::CacheIndex(std::uint64_t capacity, double high, double low, std::uint64_t chunk_size)
    : capacity_(capacity), high_(high), low_(low), chunk_size_(chunk_size) {
  if (!(low > 0.0 && low < high && high <= 1.0) || chunk_size == 0)
    throw Error(Errc::invalid_argument, "bad cache index parameters");
}

CacheEntry& CacheIndex::ensure(const FederationPath& path, std::uint64_t total_size) {
  auto it = entries_.find(path);
  if (it != entries_.end()) return it->second;
  CacheEntry e;
  e.path = path;
  e.total_size = total_size;
  e.chunks_present.assign(chunk_count(total_size, chunk_size_), false);
  e.last_access = ++tick_;
  return entries_.emplace(path, std::move(e)).first->second;
}

CacheEntry* CacheIndex::find(const FederationPath& path) {
  auto it = entries_.find(path);
  return it == entries_.end() ? nullptr : &it->second;
}

const CacheEntry* CacheIndex::find(const FederationPath& path) const {
  auto it = entries_.find(path);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::uint64_t> CacheIndex::needed(const FederationPath& path, std::uint64_t total_size,
                                              ByteRange range) const {
  auto all = chunks_overlapping(total_size, range, chunk_size_);
  const auto* e = find(path);
  if (!e) return all;
  std::vector<std::uint64_t> out;
  for (auto i : all)
    if (i >= e->chunks_present.size() || !e->chunks_present[i]) out.push_back(i);
  return out;
}

void CacheIndex::touch(const FederationPath& path) {
  if (auto* e = find(path)) e->last_access = ++tick_;
}

void CacheIndex::pin(const FederationPath& path) {
  if (auto* e = find(path)) ++e->in_use;
}

void CacheIndex::unpin(const FederationPath& path) {
  if (auto* e = find(path); e && e->in_use > 0) --e->in_use;
}

bool CacheIndex::fits(std::uint64_t n) const {
  return static_cast<double>(usage_ + n) <= high_bytes() + static_cast<double>(chunk_size_);
}

std::vector<FederationPath> CacheIndex::take_removed() {
  std::vector<FederationPath> out;
  out.swap(removed_);
  return out;
}

std::vector<FederationPath> CacheIndex::evict(std::uint64_t bytes_needed,
                                              const FederationPath* protect) {
  std::vector<const CacheEntry*> candidates;
  for (const auto& [p, e] : entries_) {
    if (e.in_use > 0 || (protect && p == *protect)) continue;
    candidates.push_back(&e);
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const CacheEntry* a, const CacheEntry* b) { return a->last_access < b->last_access; });

  std::vector<FederationPath> evicted;
  for (const auto* e : candidates) {
    if (static_cast<double>(usage_) <= low_bytes()) break;
    usage_ -= e->bytes_stored;
    evicted.push_back(e->path);
    removed_.push_back(e->path);
    ++evictions_;
    entries_.erase(e->path);
  }
  if (!fits(bytes_needed))
    throw Error(Errc::cache_full, "cannot make room for " + std::to_string(bytes_needed) + " bytes");
  return evicted;
}

std::vector<FederationPath> CacheIndex::reserve(std::uint64_t n, const FederationPath* protect) {
  if (static_cast<double>(usage_ + n) <= high_bytes()) return {};
  return evict(n, protect);
}

void CacheIndex::commit_chunk(const FederationPath& path, std::uint64_t index,
                              std::uint64_t length) {
  auto* e = find(path);
  if (!e || index >= e->chunks_present.size())
    throw Error(Errc::invalid_argument, "commit for unknown chunk");
  if (e->chunks_present[index]) return;
  e->chunks_present[index] = true;
  e->bytes_stored += length;
  usage_ += length;
}

// ---- ChunkStore ----

ChunkStore::ChunkStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw Error(Errc::io_error, "cannot create " + root_.string() + ": " + ec.message());
}

fs::path ChunkStore::dir_for(const FederationPath& path) const {
  return root_ / to_hex(Sha256::of(path.str()));
}

void ChunkStore::put(const FederationPath& path, std::uint64_t index, std::string_view bytes) {
  auto dir = dir_for(path);
  std::error_code ec;
  fs::create_directories(dir, ec);
  auto final_path = dir / std::to_string(index);
  auto tmp = dir / (std::to_string(index) + ".part");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::io_error, "write failed: " + tmp.string());
  }
  fs::rename(tmp, final_path, ec);
  if (ec) throw Error(Errc::io_error, "rename failed: " + ec.message());
}

std::string ChunkStore::get(const FederationPath& path, std::uint64_t index,
                            std::uint64_t length) const {
  auto file = dir_for(path) / std::to_string(index);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "missing chunk file " + file.string());
  std::string buf(length, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(length));
  if (static_cast<std::uint64_t>(in.gcount()) != length)
    throw Error(Errc::io_error, "short chunk file " + file.string());
  return buf;
}

void ChunkStore::remove(const FederationPath& path) {
  std::error_code ec;
  fs::remove_all(dir_for(path), ec);
}

// ---- HTTP origin access ----

namespace {

class HttpOriginAccess final : public OriginAccess {
 public:
  HttpOriginAccess(std::vector<Endpoint> redirectors, double connect, double read)
      : redirectors_(std::move(redirectors), connect), connect_(connect), read_(read) {}

  Endpoint locate(const FederationPath& path) override { return redirectors_.locate(path); }

  std::optional<FileCatalogEntry> catalog_entry(const Endpoint& origin,
                                                const FederationPath& path) override {
    auto cli = detail::make_client(origin, connect_, read_);
    auto res = cli->Get("/catalog", httplib::Params{{"path", path.str()}}, httplib::Headers{});
    if (!res) throw Error(Errc::origin_unreachable, "origin " + origin.str() + " unreachable");
    if (res->status == 404) return std::nullopt;
    if (res->status != 200) throw Error(Errc::io_error, "catalog status " + std::to_string(res->status));
    auto line = res->body;
    while (!line.empty() && line.back() == '\n') line.pop_back();
    return parse_catalog_line(line);
  }

  std::uint64_t file_size(const Endpoint& origin, const FederationPath& path) override {
    auto cli = detail::make_client(origin, connect_, read_);
    auto res = cli->Head("/data" + path.str());
    if (!res) throw Error(Errc::origin_unreachable, "origin " + origin.str() + " unreachable");
    if (res->status == 404) throw Error(Errc::not_found, path.str());
    if (res->status != 200) throw Error(Errc::io_error, "HEAD status " + std::to_string(res->status));
    return detail::header_u64(*res, "X-Total-Size");
  }

  std::string read_range(const Endpoint& origin, const FederationPath& path,
                         ByteRange range) override {
    auto cli = detail::make_client(origin, connect_, read_);
    auto res = cli->Get("/data" + path.str(), {{"Range", detail::range_header(range)}});
    if (!res) throw Error(Errc::origin_unreachable, "origin " + origin.str() + " unreachable");
    if (res->status == 404) throw Error(Errc::not_found, path.str());
    if (res->status != 206 && res->status != 200)
      throw Error(Errc::io_error, "range status " + std::to_string(res->status));
    if (res->status == 200 && range.begin < res->body.size())
      return res->body.substr(range.begin, range.size());
    return std::move(res->body);
  }

 private:
  RedirectorClient redirectors_;
  double connect_;
  double read_;
};

}  // namespace

std::unique_ptr<OriginAccess> make_http_origin_access(std::vector<Endpoint> redirectors,
                                                      double connect_timeout, double read_timeout) {
  return std::make_unique<HttpOriginAccess>(std::move(redirectors), connect_timeout, read_timeout);
}

// ---- CacheService ----

namespace {

fs::path fresh_storage(const CacheConfig& cfg) {
  cfg.validate();
  if (cfg.storage_dir.empty()) throw Error(Errc::invalid_argument, "storage dir required");
  std::error_code ec;
  fs::create_directories(cfg.storage_dir, ec);
  for (const auto& child : fs::directory_iterator(cfg.storage_dir, ec)) fs::remove_all(child.path(), ec);
  return cfg.storage_dir;
}

}  // namespace

CacheService::CacheService(CacheConfig config, std::unique_ptr<OriginAccess> origins)
    : config_(std::move(config)),
      origins_(origins ? std::move(origins)
                       : make_http_origin_access(config_.redirectors, config_.origin_connect_timeout,
                                                 config_.origin_read_timeout)),
      store_(fresh_storage(config_)),
      index_(config_.capacity, config_.high_watermark, config_.low_watermark, config_.chunk_size) {}

void CacheService::drop_removed_locked() {
  for (const auto& p : index_.take_removed()) store_.remove(p);
}

CacheService::Metadata CacheService::resolve(const FederationPath& path) {
  {
    std::lock_guard lock(mu_);
    if (const auto* e = index_.find(path); e && e->origin)
      return {e->total_size, e->catalog, e->origin};
  }
  return meta_flights_
      .run(path,
           [&] {
             Metadata m;
             m.origin = origins_->locate(path);
             m.catalog = origins_->catalog_entry(*m.origin, path);
             m.total_size = m.catalog ? m.catalog->size : origins_->file_size(*m.origin, path);
             return m;
           })
      .first;
}

std::unique_ptr<CacheService::Read> CacheService::open(const FederationPath& path,
                                                       const RangeForSize& range_for_size) {
  auto meta = resolve(path);
  auto range = resolve_range(meta.total_size, range_for_size ? range_for_size(meta.total_size)
                                                             : std::nullopt);
  std::unique_ptr<Read> read(new Read(*this, path));
  read->total_size_ = meta.total_size;
  read->range_ = range;

  std::lock_guard lock(mu_);
  auto& e = index_.ensure(path, meta.total_size);
  if (!e.origin) {
    e.origin = meta.origin;
    e.catalog = meta.catalog;
  }
  auto missing = index_.needed(path, meta.total_size, range);
  auto overlapping = chunks_overlapping(meta.total_size, range, config_.chunk_size);
  if (missing.empty()) {
    read->status_ = CacheStatus::hit;
    ++hits_;
  } else if (missing.size() == overlapping.size()) {
    read->status_ = CacheStatus::miss;
    ++misses_;
  } else {
    read->status_ = CacheStatus::partial;
    ++partials_;
  }
  index_.touch(path);
  index_.pin(path);
  return read;
}

std::unique_ptr<CacheService::Read> CacheService::open(const FederationPath& path,
                                                       std::optional<ByteRange> range) {
  return open(path, [range](std::uint64_t) { return range; });
}

CacheService::Read::~Read() { owner_.unpin(path_); }

std::string CacheService::Read::chunk(std::uint64_t index) {
  owner_.ensure_chunk(path_, index);
  auto spec = chunk_at(total_size_, index, owner_.config_.chunk_size);
  return owner_.store_.get(path_, index, spec.length);
}

std::string CacheService::Read::read_all() {
  std::string out;
  out.reserve(range_.size());
  for (auto i : chunks_overlapping(total_size_, range_, owner_.config_.chunk_size)) {
    auto spec = chunk_at(total_size_, i, owner_.config_.chunk_size);
    auto bytes = chunk(i);
    auto from = std::max(range_.begin, spec.offset);
    auto to = std::min(range_.end, spec.offset + spec.length);
    out.append(bytes, from - spec.offset, to - from);
  }
  served_ += out.size();
  return out;
}

void CacheService::unpin(const FederationPath& path) {
  std::lock_guard lock(mu_);
  index_.unpin(path);
}

CacheService::Response CacheService::handle_request(const FederationPath& path,
                                                    std::optional<ByteRange> range) {
  auto read = open(path, range);
  Response r;
  r.status = read->status();
  r.total_size = read->total_size();
  r.range = read->range();
  r.bytes = read->read_all();
  return r;
}

std::vector<std::uint64_t> CacheService::cache_lookup(const FederationPath& path,
                                                      ByteRange range) const {
  std::lock_guard lock(mu_);
  const auto* e = index_.find(path);
  if (!e) throw Error(Errc::not_found, path.str() + " not cached");
  return index_.needed(path, e->total_size, range);
}

std::string CacheService::fetch_verified(const FederationPath& path, std::uint64_t index) {
  std::optional<FileCatalogEntry> catalog;
  Endpoint origin;
  std::uint64_t total = 0;
  {
    std::lock_guard lock(mu_);
    const auto* e = index_.find(path);
    if (!e || !e->origin) throw Error(Errc::not_found, path.str() + " has no metadata");
    catalog = e->catalog;
    origin = *e->origin;
    total = e->total_size;
  }
  const auto spec = chunk_at(total, index, config_.chunk_size);
  const ByteRange range{spec.offset, spec.offset + spec.length};

  auto read_once = [&] {
    ++origin_fetches_;
    try {
      return origins_->read_range(origin, path, range);
    } catch (const Error& e) {
      if (e.code() != Errc::origin_unreachable) throw;
      origin = origins_->locate(path);
      {
        std::lock_guard lock(mu_);
        if (auto* entry = index_.find(path)) entry->origin = origin;
      }
      ++origin_fetches_;
      return origins_->read_range(origin, path, range);
    }
  };

  for (int attempt = 0; attempt < 2; ++attempt) {
    auto bytes = read_once();
    if (!catalog) {
      if (bytes.size() != spec.length)
        throw Error(Errc::io_error, "short read of chunk " + std::to_string(index));
      return bytes;
    }
    if (bytes.size() == spec.length && index < catalog->chunk_digests.size() &&
        chunk_checksum(bytes, config_.chunk_size) == catalog->chunk_digests[index])
      return bytes;
  }
  ++integrity_errors_;
  throw IntegrityError(index, path.str() + " chunk " + std::to_string(index) +
                                  " failed verification twice");
}

void CacheService::ensure_chunk(const FederationPath& path, std::uint64_t index) {
  auto present = [&] {
    std::lock_guard lock(mu_);
    const auto* e = index_.find(path);
    return e && index < e->chunks_present.size() && e->chunks_present[index];
  };
  if (present()) return;
  chunk_flights_.run(FetchKey{path, index}, [&] {
    if (present()) return true;
    auto bytes = fetch_verified(path, index);
    store_.put(path, index, bytes);
    std::lock_guard lock(mu_);
    try {
      index_.reserve(bytes.size(), &path);
    } catch (const Error&) {
      drop_removed_locked();
      auto* e = index_.find(path);
      if (!e || e->bytes_stored == 0) store_.remove(path);
      throw;
    }
    drop_removed_locked();
    index_.commit_chunk(path, index, bytes.size());
    return true;
  });
}

void CacheService::fetch_from_origin(const FederationPath& path,
                                     const std::vector<std::uint64_t>& chunks) {
  auto read = open(path);
  for (auto i : chunks) ensure_chunk(path, i);
}

std::vector<FederationPath> CacheService::evict(std::uint64_t bytes_needed) {
  std::lock_guard lock(mu_);
  try {
    auto out = index_.evict(bytes_needed);
    drop_removed_locked();
    return out;
  } catch (...) {
    drop_removed_locked();
    throw;
  }
}

CacheService::Metadata CacheService::metadata(const FederationPath& path) { return resolve(path); }

CacheStats CacheService::stats() const {
  CacheStats s;
  {
    std::lock_guard lock(mu_);
    s.usage_bytes = index_.usage();
    s.capacity = index_.capacity();
    s.entries = index_.size();
    s.evictions = index_.evictions();
  }
  s.hits = hits_;
  s.misses = misses_;
  s.partials = partials_;
  s.origin_fetches = origin_fetches_;
  s.integrity_errors = integrity_errors_;
  return s;
}

// ---- CacheServer ----

struct CacheServer::Impl {
  HttpHost host;
  std::unique_ptr<MonitorEmitter> monitor = std::make_unique<MonitorEmitter>();
  std::mutex mu;
  std::condition_variable cv;
  bool stopping = false;
  std::thread registrar;
};

namespace {

void set_error(httplib::Response& res, const Error& e) {
  res.set_header("X-Stashfed-Error", std::string(errc_name(e.code())));
  switch (e.code()) {
    case Errc::not_found: res.status = 404; break;
    case Errc::range_unsatisfiable: res.status = 416; break;
    case Errc::integrity_error: {
      res.status = 502;
      if (auto* ie = dynamic_cast<const IntegrityError*>(&e); ie && ie->chunk_index())
        res.set_header("X-Chunk-Index", std::to_string(*ie->chunk_index()));
      break;
    }
    case Errc::origin_unreachable: res.status = 503; break;
    case Errc::cache_full: res.status = 507; break;
    default: res.status = 500; break;
  }
  res.set_content(e.what(), "text/plain");
}

struct Stream {
  std::shared_ptr<CacheService::Read> read;
  std::uint64_t chunk_size = 0;
  std::optional<std::uint64_t> current;
  std::string bytes;
  std::uint64_t served = 0;
  std::uint32_t ops = 0;

  bool load(std::uint64_t index) {
    if (current == index) return true;
    try {
      bytes = read->chunk(index);
    } catch (const std::exception&) {
      return false;
    }
    current = index;
    return true;
  }
};

}  // namespace

CacheServer::CacheServer(CacheConfig config, std::unique_ptr<OriginAccess> origins)
    : service_(std::move(config), std::move(origins)), impl_(std::make_unique<Impl>()) {
  const auto& cfg = service_.config();
  if (cfg.monitor) impl_->monitor = std::make_unique<MonitorEmitter>(*cfg.monitor, cfg.server_id);
  auto& svr = impl_->host.server();

  svr.Get(R"(/data/.*)", [this](const httplib::Request& req, httplib::Response& res) {
    auto path = detail::data_path(req.path);
    if (!path) {
      res.status = 400;
      return;
    }
    const auto chunk_size = service_.config().chunk_size;
    auto stream = std::make_shared<Stream>();
    stream->chunk_size = chunk_size;
    try {
      stream->read = service_.open(*path, [&req](std::uint64_t size) {
        return detail::request_range(req, size);
      });
      const auto& read = *stream->read;
      res.set_header("X-Cache", std::string(cache_status_name(read.status())));
      res.set_header("X-Total-Size", std::to_string(read.total_size()));
      if (read.total_size() == 0) {
        res.set_content("", "application/octet-stream");
        return;
      }
      if (req.method != "HEAD") {
        auto first = read.range().begin / chunk_size;
        stream->bytes = stream->read->chunk(first);
        stream->current = first;
      }
    } catch (const Error& e) {
      set_error(res, e);
      return;
    }

    std::uint32_t file_id = 0;
    auto& monitor = *impl_->monitor;
    if (monitor.enabled() && req.method != "HEAD") {
      const auto ipv = static_cast<std::uint8_t>(req.remote_addr.find(':') == std::string::npos ? 4 : 6);
      auto user = monitor.login(req.remote_addr.empty() ? "unknown" : req.remote_addr,
                                AuthMethod::http, ipv);
      file_id = monitor.open(user, path->str(), stream->read->total_size());
    }

    res.set_content_provider(
        stream->read->total_size(), "application/octet-stream",
        [stream](std::size_t offset, std::size_t length, httplib::DataSink& sink) {
          auto index = offset / stream->chunk_size;
          if (!stream->load(index)) return false;
          auto within = offset - index * stream->chunk_size;
          if (within >= stream->bytes.size()) return false;
          auto n = std::min<std::size_t>(length, stream->bytes.size() - within);
          if (!sink.write(stream->bytes.data() + within, n)) return false;
          stream->served += n;
          ++stream->ops;
          return true;
        },
        [stream, file_id, &monitor](bool) {
          if (file_id != 0) monitor.close(file_id, stream->served, stream->ops);
        });
  });

  svr.Get(R"(/meta/.*)", [this](const httplib::Request& req, httplib::Response& res) {
    auto path = detail::data_path(req.path, "/meta");
    if (!path) {
      res.status = 400;
      return;
    }
    try {
      auto m = service_.metadata(*path);
      nlohmann::json j;
      if (m.catalog) {
        j = nlohmann::json::parse(to_catalog_line(*m.catalog));
        j["verified"] = true;
      } else {
        j = {{"path", path->str()}, {"size", m.total_size}, {"chunks", nlohmann::json::array()},
             {"verified", false}};
      }
      res.set_content(j.dump(), "application/json");
    } catch (const Error& e) {
      set_error(res, e);
    }
  });

  svr.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
    auto s = service_.stats();
    nlohmann::json j{{"cache_id", service_.config().cache_id},
                     {"usage_bytes", s.usage_bytes},
                     {"capacity", s.capacity},
                     {"entries", s.entries},
                     {"hits", s.hits},
                     {"misses", s.misses},
                     {"partials", s.partials},
                     {"origin_fetches", s.origin_fetches},
                     {"evictions", s.evictions},
                     {"integrity_errors", s.integrity_errors}};
    res.set_content(j.dump(), "application/json");
  });
}

CacheServer::~CacheServer() { stop(); }

Endpoint CacheServer::endpoint() const {
  return {service_.config().listen.host, impl_->host.port()};
}

void CacheServer::register_now() {
  const auto& cfg = service_.config();
  if (cfg.redirectors.empty()) return;
  CacheDescriptor d{cfg.cache_id, cfg.advertised.value_or(endpoint()), cfg.location};
  RedirectorClient(cfg.redirectors).register_cache(d);
}

std::uint16_t CacheServer::start() {
  const auto& cfg = service_.config();
  auto port = impl_->host.start(cfg.listen.host, cfg.listen.port);
  {
    std::lock_guard lock(impl_->mu);
    impl_->stopping = false;
  }
  register_now();
  if (cfg.register_interval > 0 && !cfg.redirectors.empty()) {
    impl_->registrar = std::thread([this, interval = cfg.register_interval] {
      std::unique_lock lock(impl_->mu);
      while (!impl_->cv.wait_for(lock, std::chrono::duration<double>(interval),
                                 [this] { return impl_->stopping; })) {
        lock.unlock();
        register_now();
        lock.lock();
      }
    });
  }
  return port;
}

void CacheServer::stop() {
  {
    std::lock_guard lock(impl_->mu);
    impl_->stopping = true;
  }
  impl_->cv.notify_all();
  if (impl_->registrar.joinable()) impl_->registrar.join();
  impl_->host.stop();
}

}  // namespace stashfed
