#include "stashfed/origin.hpp"

#include <sys/stat.h>

#include <condition_variable>
#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "http_util.hpp"
#include "stashfed/error.hpp"
#include "stashfed/http_host.hpp"
#include "stashfed/monitoring.hpp"

namespace fs = std::filesystem;

namespace stashfed {

namespace {

std::optional<FileStat> lstat_regular(const fs::path& p) {
  struct ::stat st {};
  if (::lstat(p.c_str(), &st) != 0 || !S_ISREG(st.st_mode)) return std::nullopt;
  return FileStat{static_cast<std::uint64_t>(st.st_size), static_cast<std::int64_t>(st.st_mtime),
                  static_cast<std::uint32_t>(st.st_mode & 07777), p};
}

std::string read_range(const fs::path& file, std::uint64_t offset, std::uint64_t length) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + file.string());
  std::string out(length, '\0');
  in.seekg(static_cast<std::streamoff>(offset));
  in.read(out.data(), static_cast<std::streamsize>(length));
  if (static_cast<std::uint64_t>(in.gcount()) != length)
    throw Error(Errc::io_error, "short read on " + file.string());
  return out;
}

}  // namespace

TreeStats stat_tree(const fs::path& root_dir, const FederationPath& prefix) {
  TreeStats out;
  std::error_code ec;
  fs::recursive_directory_iterator it(root_dir, fs::directory_options::none, ec);
  if (ec) throw Error(Errc::io_error, "cannot scan " + root_dir.string() + ": " + ec.message());
  for (const fs::recursive_directory_iterator end; it != end; it.increment(ec)) {
    if (ec) throw Error(Errc::io_error, "scan failed: " + ec.message());
    auto st = lstat_regular(it->path());
    if (!st) continue;
    auto rel = fs::relative(it->path(), root_dir).generic_string();
    out.emplace(prefix.join(rel), std::move(*st));
  }
  if (ec) throw Error(Errc::io_error, "scan failed: " + ec.message());
  return out;
}

FileCatalogEntry index_file(const FederationPath& path, const FileStat& stat,
                            std::uint64_t chunk_size, IndexCounters* counters) {
  FileCatalogEntry entry{path, stat.size, stat.mtime, stat.mode, {}};
  std::ifstream in(stat.local, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + stat.local.string());
  std::string buf;
  for (const auto& chunk : chunk_layout(stat.size, chunk_size)) {
    buf.resize(chunk.length);
    in.read(buf.data(), static_cast<std::streamsize>(chunk.length));
    if (static_cast<std::uint64_t>(in.gcount()) != chunk.length)
      throw Error(Errc::io_error, "file changed while indexing: " + stat.local.string());
    entry.chunk_digests.push_back(chunk_checksum(buf, chunk_size));
  }
  if (counters) {
    counters->files_hashed += 1;
    counters->bytes_hashed += stat.size;
  }
  return entry;
}

IndexState index_tree(const fs::path& root_dir, const FederationPath& prefix,
                      std::uint64_t chunk_size, IndexCounters* counters, double now) {
  IndexState state;
  state.last_scan = now;
  for (const auto& [path, st] : stat_tree(root_dir, prefix))
    state.catalog.emplace(path, index_file(path, st, chunk_size, counters));
  return state;
}

std::set<FederationPath> detect_changes(const IndexState& previous, const TreeStats& current) {
  std::set<FederationPath> out;
  for (const auto& [path, st] : current) {
    auto it = previous.catalog.find(path);
    if (it == previous.catalog.end() || it->second.mtime != st.mtime || it->second.size != st.size)
      out.insert(path);
  }
  for (const auto& [path, entry] : previous.catalog)
    if (!current.contains(path)) out.insert(path);
  return out;
}

IndexState reindex(const IndexState& previous, const fs::path& root_dir,
                   const FederationPath& prefix, std::uint64_t chunk_size,
                   IndexCounters* counters, double now) {
  auto current = stat_tree(root_dir, prefix);
  IndexState next{previous.catalog, now};
  for (const auto& path : detect_changes(previous, current)) {
    auto it = current.find(path);
    if (it == current.end()) {
      next.catalog.erase(path);
    } else {
      next.catalog.insert_or_assign(path, index_file(path, it->second, chunk_size, counters));
    }
  }
  return next;
}

// ---------------------------------------------------------------- Origin

Origin::Origin(OriginConfig config, const Clock& clock) : config_(std::move(config)), clock_(clock) {
  std::error_code ec;
  if (!fs::is_directory(config_.root_dir, ec))
    throw Error(Errc::invalid_argument, "origin root is not a readable directory: " +
                                            config_.root_dir.string());
  if (config_.chunk_size == 0) throw Error(Errc::invalid_argument, "chunk size 0");
  state_.store(index_tree(config_.root_dir, config_.namespace_prefix, config_.chunk_size,
                          &counters_, clock_.now()));
}

FileStat Origin::open_for_read(const FederationPath& path) {
  ++requests_;
  if (!path.has_prefix(config_.namespace_prefix))
    throw Error(Errc::not_found, path.str() + " is outside " + config_.namespace_prefix.str());
  auto local = config_.root_dir / path.relative_to(config_.namespace_prefix);
  auto st = lstat_regular(local);
  if (!st) throw Error(Errc::not_found, path.str());
  return *st;
}

Origin::ReadResult Origin::serve_read(const FederationPath& path, std::optional<ByteRange> range) {
  auto st = open_for_read(path);
  auto r = resolve_range(st.size, range);
  ReadResult out{r.empty() ? std::string() : read_range(st.local, r.begin, r.size()), st.size,
                 st.mtime};
  bytes_served_ += out.bytes.size();
  return out;
}

bool Origin::handle_locate(const FederationPath& path) const {
  return state_.load()->catalog.contains(path);
}

std::optional<FileCatalogEntry> Origin::catalog_entry(const FederationPath& path) const {
  auto state = state_.load();
  auto it = state->catalog.find(path);
  if (it == state->catalog.end()) return std::nullopt;
  return it->second;
}

void Origin::reindex_now() {
  auto previous = state_.load();
  state_.store(reindex(*previous, config_.root_dir, config_.namespace_prefix, config_.chunk_size,
                       &counters_, clock_.now()));
}

OriginStats Origin::stats() const {
  return {requests_.load(), bytes_served_.load(), state_.load()->catalog.size()};
}

// ---------------------------------------------------------------- server

struct OriginServer::Impl {
  HttpHost host;
  std::unique_ptr<MonitorEmitter> monitor = std::make_unique<MonitorEmitter>();
  std::mutex mu;
  std::condition_variable cv;
  bool stopping = false;
  std::thread reindexer;
  std::thread heartbeat;
};

OriginServer::OriginServer(OriginConfig config, const Clock& clock)
    : origin_(std::move(config), clock), impl_(std::make_unique<Impl>()) {
  if (const auto& m = origin_.config().monitor)
    impl_->monitor = std::make_unique<MonitorEmitter>(*m, origin_.config().server_id);
  auto& svr = impl_->host.server();

  svr.Get(R"(/data/.*)", [this](const httplib::Request& req, httplib::Response& res) {
    auto path = detail::data_path(req.path);
    if (!path) {
      res.status = 400;
      return;
    }
    try {
      auto st = origin_.open_for_read(*path);
      auto range = detail::request_range(req, st.size);
      res.set_header("X-Total-Size", std::to_string(st.size));
      res.set_header("X-Mtime", std::to_string(st.mtime));
      if (st.size == 0) {
        res.set_content("", "application/octet-stream");
        return;
      }
      if (req.method != "HEAD") origin_.note_bytes_served(range ? range->size() : st.size);
      struct Transfer {
        std::ifstream file;
        std::uint64_t served = 0;
        std::uint32_t ops = 0;
      };
      auto t = std::make_shared<Transfer>();
      t->file.open(st.local, std::ios::binary);
      std::uint32_t file_id = 0;
      auto& monitor = *impl_->monitor;
      if (monitor.enabled() && req.method != "HEAD") {
        const auto ipv = static_cast<std::uint8_t>(req.remote_addr.find(':') == std::string::npos ? 4 : 6);
        auto user = monitor.login(req.remote_addr.empty() ? "unknown" : req.remote_addr,
                                  AuthMethod::http, ipv);
        file_id = monitor.open(user, path->str(), st.size);
      }
      res.set_content_provider(
          st.size, "application/octet-stream",
          [t](std::size_t offset, std::size_t length, httplib::DataSink& sink) {
            std::string buf(std::min<std::size_t>(length, 1 << 20), '\0');
            t->file.seekg(static_cast<std::streamoff>(offset));
            t->file.read(buf.data(), static_cast<std::streamsize>(buf.size()));
            auto got = static_cast<std::size_t>(t->file.gcount());
            if (got == 0) return false;
            t->served += got;
            ++t->ops;
            return sink.write(buf.data(), got);
          },
          [t, file_id, &monitor](bool) {
            if (file_id != 0) monitor.close(file_id, t->served, t->ops);
          });
    } catch (const Error& e) {
      res.status = e.code() == Errc::range_unsatisfiable ? 416 : 404;
      res.set_content(e.what(), "text/plain");
    }
  });

  svr.Get("/locate", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto path = FederationPath::normalize(req.get_param_value("path"));
      res.status = origin_.handle_locate(path) ? 200 : 404;
    } catch (const Error&) {
      res.status = 400;
    }
  });

  svr.Get("/catalog", [this](const httplib::Request& req, httplib::Response& res) {
    if (req.has_param("path")) {
      try {
        auto entry = origin_.catalog_entry(FederationPath::normalize(req.get_param_value("path")));
        if (!entry) {
          res.status = 404;
          return;
        }
        res.set_content(to_catalog_line(*entry) + "\n", "application/x-ndjson");
      } catch (const Error&) {
        res.status = 400;
      }
      return;
    }
    res.set_content(catalog_text(origin_.index()->catalog), "application/x-ndjson");
  });

  svr.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
    auto s = origin_.stats();
    nlohmann::json j{{"requests", s.requests},
                     {"bytes_served", s.bytes_served},
                     {"files_indexed", s.files_indexed}};
    res.set_content(j.dump(), "application/json");
  });
}

OriginServer::~OriginServer() { stop(); }

Endpoint OriginServer::endpoint() const {
  return {origin_.config().listen.host, impl_->host.port()};
}

void OriginServer::register_now() {
  const auto ep = advertised_.value_or(endpoint());
  nlohmann::json body{{"prefix", origin_.config().namespace_prefix.str()}, {"endpoint", ep.str()}};
  for (const auto& r : origin_.config().redirectors) {
    auto cli = detail::make_client(r, 2.0, 2.0);
    cli->Post("/register/origin", body.dump(), "application/json");
  }
}

std::uint16_t OriginServer::start() {
  const auto& cfg = origin_.config();
  auto port = impl_->host.start(cfg.listen.host, cfg.listen.port);
  {
    std::lock_guard lock(impl_->mu);
    impl_->stopping = false;
  }
  register_now();

  auto loop = [this](double interval, auto fn) {
    return std::thread([this, interval, fn] {
      std::unique_lock lock(impl_->mu);
      while (!impl_->stopping) {
        if (impl_->cv.wait_for(lock, std::chrono::duration<double>(interval),
                               [this] { return impl_->stopping; }))
          break;
        lock.unlock();
        try {
          fn();
        } catch (const Error&) {
          // previous state stays published; retry next interval
        }
        lock.lock();
      }
    });
  };
  if (cfg.reindex_interval > 0)
    impl_->reindexer = loop(cfg.reindex_interval, [this] { origin_.reindex_now(); });
  if (cfg.heartbeat_interval > 0 && !cfg.redirectors.empty())
    impl_->heartbeat = loop(cfg.heartbeat_interval, [this] { register_now(); });
  return port;
}

void OriginServer::stop() {
  {
    std::lock_guard lock(impl_->mu);
    impl_->stopping = true;
  }
  impl_->cv.notify_all();
  if (impl_->reindexer.joinable()) impl_->reindexer.join();
  if (impl_->heartbeat.joinable()) impl_->heartbeat.join();
  impl_->host.stop();
}

}  // namespace stashfed
