#include "stashfed/client.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "http_util.hpp"
#include "stashfed/checksum.hpp"
#include "stashfed/proxy.hpp"

namespace fs = std::filesystem;

namespace stashfed {

std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::cache_federation: return "cache-federation";
    case Method::direct_origin: return "direct-origin";
    case Method::proxy_http: return "proxy-http";
  }
  return "cache-federation";
}

Method parse_method(std::string_view s) {
  if (s == "cache" || s == "cache-federation") return Method::cache_federation;
  if (s == "origin" || s == "direct-origin") return Method::direct_origin;
  if (s == "proxy" || s == "proxy-http") return Method::proxy_http;
  throw Error(Errc::invalid_argument, "unknown method: " + std::string(s));
}

std::vector<Method> parse_methods(std::string_view csv) {
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    auto comma = csv.find(',', start);
    auto item = csv.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    if (!item.empty()) out.push_back(parse_method(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw Error(Errc::invalid_argument, "no methods given");
  return out;
}

std::vector<CacheDescriptor> select_nearest_cache(const GeoCoordinate& client,
                                                  std::vector<CacheDescriptor> directory) {
  if (directory.empty()) throw Error(Errc::no_caches, "cache directory is empty");
  std::vector<std::pair<double, CacheDescriptor>> keyed;
  for (auto& d : directory) keyed.emplace_back(haversine_km(client, d.location), std::move(d));
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second.cache_id < b.second.cache_id;
  });
  std::vector<CacheDescriptor> out;
  for (auto& [_, d] : keyed) out.push_back(std::move(d));
  return out;
}

nlohmann::json to_json(const TransferReport& r) {
  nlohmann::json attempts = nlohmann::json::array();
  for (const auto& a : r.attempts) {
    attempts.push_back({{"method", std::string(method_name(a.method))},
                        {"endpoints", a.endpoints},
                        {"ok", a.ok},
                        {"error", a.error ? nlohmann::json(std::string(errc_name(*a.error))) : nlohmann::json()},
                        {"chunk_index", a.chunk_index ? nlohmann::json(*a.chunk_index) : nlohmann::json()},
                        {"detail", a.detail}});
  }
  return {{"path", r.path.str()},
          {"destination", r.destination.string()},
          {"success", r.success},
          {"bytes", r.bytes},
          {"duration", r.duration},
          {"lookup_seconds", r.lookup_seconds},
          {"transfer_seconds", r.transfer_seconds},
          {"method_used", r.method_used ? nlohmann::json(std::string(method_name(*r.method_used))) : nlohmann::json()},
          {"cache_status",
           r.cache_status ? nlohmann::json(std::string(cache_status_name(*r.cache_status))) : nlohmann::json()},
          {"verified", r.verified},
          {"attempts", attempts}};
}

int exit_code(const TransferReport& r) {
  if (r.success) return 0;
  bool all_not_found = !r.attempts.empty();
  for (const auto& a : r.attempts) {
    if (a.error == Errc::integrity_error) return 3;
    if (a.error != Errc::not_found) all_not_found = false;
  }
  return all_not_found ? 2 : 4;
}

Endpoint endpoint_from_url(std::string_view url) { return parse_http_url(url).endpoint; }

void verify_download(const fs::path& file, const FileCatalogEntry& entry, std::uint64_t chunk_size) {
  std::error_code ec;
  auto size = fs::file_size(file, ec);
  if (ec) throw Error(Errc::io_error, "cannot stat " + file.string());
  if (size != entry.size)
    throw IntegrityError(std::nullopt, "size " + std::to_string(size) + " != catalog size " +
                                           std::to_string(entry.size));
  auto layout = chunk_layout(size, chunk_size);
  if (layout.size() != entry.chunk_digests.size())
    throw IntegrityError(std::nullopt, "catalog lists " + std::to_string(entry.chunk_digests.size()) +
                                           " chunks, expected " + std::to_string(layout.size()));
  std::ifstream in(file, std::ios::binary);
  std::string buf;
  for (const auto& c : layout) {
    buf.resize(c.length);
    in.read(buf.data(), static_cast<std::streamsize>(c.length));
    if (static_cast<std::uint64_t>(in.gcount()) != c.length)
      throw IntegrityError(c.index, "short read");
    if (chunk_checksum(buf, chunk_size) != entry.chunk_digests[c.index])
      throw IntegrityError(c.index, "chunk " + std::to_string(c.index) + " digest mismatch");
  }
}

namespace {

using Clk = std::chrono::steady_clock;

double since(Clk::time_point t) {
  return std::chrono::duration<double>(Clk::now() - t).count();
}

class PartFile {
 public:
  PartFile(fs::path final_path, std::uint64_t size) : final_(std::move(final_path)) {
    tmp_ = final_;
    tmp_ += ".stashcp.part";
    fd_ = ::open(tmp_.c_str(), O_CREAT | O_TRUNC | O_WRONLY, 0644);
    if (fd_ < 0) throw Error(Errc::io_error, "cannot create " + tmp_.string());
    if (::ftruncate(fd_, static_cast<off_t>(size)) != 0) {
      ::close(fd_);
      throw Error(Errc::io_error, "cannot size " + tmp_.string());
    }
  }
  ~PartFile() {
    if (fd_ >= 0) ::close(fd_);
    if (!committed_) {
      std::error_code ec;
      fs::remove(tmp_, ec);
    }
  }
  void write_at(std::uint64_t offset, std::string_view bytes) {
    std::size_t done = 0;
    while (done < bytes.size()) {
      auto n = ::pwrite(fd_, bytes.data() + done, bytes.size() - done,
                        static_cast<off_t>(offset + done));
      if (n <= 0) throw Error(Errc::io_error, "write failed on " + tmp_.string());
      done += static_cast<std::size_t>(n);
    }
  }
  const fs::path& tmp() const { return tmp_; }
  void commit() {
    ::close(fd_);
    fd_ = -1;
    std::error_code ec;
    fs::rename(tmp_, final_, ec);
    if (ec) throw Error(Errc::io_error, "rename failed: " + ec.message());
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path tmp_;
  int fd_ = -1;
  bool committed_ = false;
};

[[noreturn]] void throw_for_response(const httplib::Result& res, const Endpoint& server) {
  if (!res) throw Error(Errc::upstream_unreachable, server.str() + " unreachable");
  if (res->status == 404) throw Error(Errc::not_found, "not found at " + server.str());
  if (res->status == 416) throw Error(Errc::range_unsatisfiable, server.str());
  if (res->get_header_value("X-Stashfed-Error") == "integrity-error") {
    std::optional<std::uint64_t> idx;
    if (res->has_header("X-Chunk-Index")) idx = std::stoull(res->get_header_value("X-Chunk-Index"));
    throw IntegrityError(idx, "upstream of " + server.str() + " failed verification");
  }
  if (res->get_header_value("X-Stashfed-Error") == "origin-unreachable")
    throw Error(Errc::origin_unreachable, "origin unreachable from " + server.str());
  throw Error(Errc::io_error, server.str() + " answered " + std::to_string(res->status));
}

struct ChunkedResult {
  std::optional<CacheStatus> status;
};

// Fetches every chunk of `path` from `server` with Range requests, up to
// `parallel` at a time, verifying each against `catalog` when present.
ChunkedResult fetch_chunks(const Endpoint& server, const FederationPath& path, std::uint64_t size,
                           const std::optional<FileCatalogEntry>& catalog, PartFile& out,
                           const ClientOptions& opt) {
  const auto layout = chunk_layout(size, opt.chunk_size);
  if (catalog && catalog->chunk_digests.size() != layout.size())
    throw IntegrityError(std::nullopt, "catalog chunk count mismatch");
  const std::string target = "/data" + path.str();

  if (layout.empty()) {
    auto cli = detail::make_client(server, opt.connect_timeout, opt.read_timeout);
    auto res = cli->Get(target);
    if (!res || res->status != 200) throw_for_response(res, server);
    ChunkedResult r;
    r.status = parse_cache_status(res->get_header_value("X-Cache"));
    return r;
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::map<std::uint64_t, std::exception_ptr> errors;
  std::vector<std::optional<CacheStatus>> statuses(layout.size());

  auto worker = [&] {
    auto cli = detail::make_client(server, opt.connect_timeout, opt.read_timeout);
    while (!failed) {
      auto i = next++;
      if (i >= layout.size()) return;
      const auto& c = layout[i];
      try {
        const ByteRange range{c.offset, c.offset + c.length};
        bool good = false;
        std::string body;
        for (int attempt = 0; attempt < 2 && !good; ++attempt) {
          auto res = cli->Get(target, {{"Range", detail::range_header(range)}});
          if (!res || (res->status != 206 && res->status != 200)) throw_for_response(res, server);
          body = std::move(res->body);
          if (res->status == 200 && body.size() == size && size != c.length)
            body = body.substr(c.offset, c.length);
          statuses[i] = parse_cache_status(res->get_header_value("X-Cache"));
          good = body.size() == c.length &&
                 (!catalog || chunk_checksum(body, opt.chunk_size) == catalog->chunk_digests[i]);
        }
        if (!good)
          throw IntegrityError(c.index, path.str() + " chunk " + std::to_string(c.index) +
                                            " from " + server.str() + " failed verification");
        out.write_at(c.offset, body);
      } catch (...) {
        std::lock_guard lock(mu);
        errors.emplace(c.index, std::current_exception());
        failed = true;
      }
    }
  };

  const auto n = std::max<std::size_t>(1, std::min(opt.parallel_chunks, layout.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (!errors.empty()) std::rethrow_exception(errors.begin()->second);

  ChunkedResult r;
  bool all_hit = true, all_miss = true;
  for (const auto& s : statuses) {
    if (!s) {
      all_hit = all_miss = false;
      continue;
    }
    all_hit = all_hit && *s == CacheStatus::hit;
    all_miss = all_miss && *s == CacheStatus::miss;
  }
  if (all_hit) r.status = CacheStatus::hit;
  else if (all_miss) r.status = CacheStatus::miss;
  else if (std::any_of(statuses.begin(), statuses.end(), [](auto& s) { return s.has_value(); }))
    r.status = CacheStatus::partial;
  return r;
}

std::optional<FileCatalogEntry> parse_meta(const std::string& body, std::uint64_t& size) {
  auto j = nlohmann::json::parse(body);
  size = j.at("size").get<std::uint64_t>();
  if (!j.value("verified", false)) return std::nullopt;
  j.erase("verified");
  return parse_catalog_line(j.dump());
}

struct MethodOutcome {
  std::optional<CacheStatus> cache_status;
  bool verified = false;
  std::uint64_t bytes = 0;
};

class Downloader {
 public:
  Downloader(const FederationPath& path, fs::path dest, const ClientOptions& opt, TransferReport& report)
      : path_(path), dest_(std::move(dest)), opt_(opt), report_(report) {}

  MethodOutcome cache_federation(Attempt& attempt) {
    auto t = Clk::now();
    std::vector<Endpoint> caches = opt_.caches;
    if (caches.empty()) {
      RedirectorClient rc(opt_.redirectors, opt_.connect_timeout);
      for (const auto& r : opt_.redirectors) attempt.endpoints.push_back(r.str());
      for (auto& d : select_nearest_cache(opt_.location, rc.list_caches())) caches.push_back(d.endpoint);
    }
    if (caches.empty()) throw Error(Errc::no_caches, "no caches configured");
    if (caches.size() > opt_.cache_attempts) caches.resize(opt_.cache_attempts);
    report_.lookup_seconds += since(t);

    std::optional<Error> integrity, other, not_found;
    for (const auto& cache : caches) {
      attempt.endpoints.push_back(cache.str());
      try {
        return from_server(cache, [&](std::uint64_t& size) {
          auto cli = detail::make_client(cache, opt_.connect_timeout, opt_.read_timeout);
          auto res = cli->Get("/meta" + path_.str());
          if (!res || res->status != 200) throw_for_response(res, cache);
          return parse_meta(res->body, size);
        });
      } catch (const IntegrityError& e) {
        attempt.chunk_index = e.chunk_index();
        integrity.emplace(e);
      } catch (const Error& e) {
        (e.code() == Errc::not_found ? not_found : other).emplace(e);
      }
    }
    if (integrity) throw IntegrityError(attempt.chunk_index, integrity->what());
    if (other) throw Error(*other);
    throw Error(*not_found);
  }

  MethodOutcome direct_origin(Attempt& attempt) {
    auto t = Clk::now();
    for (const auto& r : opt_.redirectors) attempt.endpoints.push_back(r.str());
    auto origin = RedirectorClient(opt_.redirectors, opt_.connect_timeout).locate(path_);
    attempt.endpoints.push_back(origin.str());
    report_.lookup_seconds += since(t);
    return from_server(origin, [&](std::uint64_t& size) -> std::optional<FileCatalogEntry> {
      auto cli = detail::make_client(origin, opt_.connect_timeout, opt_.read_timeout);
      auto res = cli->Get("/catalog", httplib::Params{{"path", path_.str()}}, httplib::Headers{});
      if (res && res->status == 200) {
        auto line = res->body;
        while (!line.empty() && line.back() == '\n') line.pop_back();
        auto entry = parse_catalog_line(line);
        size = entry.size;
        return entry;
      }
      auto head = cli->Head("/data" + path_.str());
      if (!head || head->status != 200) throw_for_response(head, origin);
      size = detail::header_u64(*head, "X-Total-Size");
      return std::nullopt;
    });
  }

  MethodOutcome proxy_http(Attempt& attempt) {
    auto t = Clk::now();
    std::string base;
    if (opt_.origin_url) {
      base = *opt_.origin_url;
      while (!base.empty() && base.back() == '/') base.pop_back();
    } else {
      for (const auto& r : opt_.redirectors) attempt.endpoints.push_back(r.str());
      base = "http://" + RedirectorClient(opt_.redirectors, opt_.connect_timeout).locate(path_).str();
    }
    auto origin = endpoint_from_url(base);
    attempt.endpoints.push_back(opt_.proxy->str());
    report_.lookup_seconds += since(t);

    auto cli = detail::make_client(origin, opt_.connect_timeout, opt_.read_timeout);
    cli->set_proxy(opt_.proxy->host, opt_.proxy->port);
    t = Clk::now();
    auto res = cli->Get("/data" + path_.str());
    if (!res) throw Error(Errc::upstream_unreachable, "proxy " + opt_.proxy->str() + " unreachable");
    if (res->status != 200) {
      if (res->status == 404) throw Error(Errc::not_found, base + " via proxy");
      throw Error(Errc::upstream_unreachable, "proxy answered " + std::to_string(res->status));
    }
    attempt.detail = "X-Proxy-Cache: " + res->get_header_value("X-Proxy-Cache");
    PartFile part(dest_, res->body.size());
    part.write_at(0, res->body);
    report_.transfer_seconds += since(t);

    MethodOutcome out;
    out.bytes = res->body.size();
    auto cat = cli->Get("/catalog", httplib::Params{{"path", path_.str()}}, httplib::Headers{});
    if (cat && cat->status == 200) {
      auto line = cat->body;
      while (!line.empty() && line.back() == '\n') line.pop_back();
      verify_download(part.tmp(), parse_catalog_line(line), opt_.chunk_size);
      out.verified = true;
    }
    part.commit();
    return out;
  }

 private:
  template <typename MetaFn>
  MethodOutcome from_server(const Endpoint& server, MetaFn&& meta) {
    auto t = Clk::now();
    std::uint64_t size = 0;
    auto catalog = meta(size);
    report_.lookup_seconds += since(t);

    t = Clk::now();
    PartFile part(dest_, size);
    auto fetched = fetch_chunks(server, path_, size, catalog, part, opt_);
    report_.transfer_seconds += since(t);
    MethodOutcome out;
    out.cache_status = fetched.status;
    out.bytes = size;
    if (catalog) {
      verify_download(part.tmp(), *catalog, opt_.chunk_size);
      out.verified = true;
    }
    part.commit();
    return out;
  }

  FederationPath path_;
  fs::path dest_;
  const ClientOptions& opt_;
  TransferReport& report_;
};

bool applicable(Method m, const ClientOptions& opt) {
  switch (m) {
    case Method::cache_federation: return !opt.caches.empty() || !opt.redirectors.empty();
    case Method::direct_origin: return !opt.redirectors.empty();
    case Method::proxy_http: return opt.proxy && (opt.origin_url || !opt.redirectors.empty());
  }
  return false;
}

}  // namespace

TransferReport download(const FederationPath& path, const fs::path& destination,
                        const ClientOptions& options) {
  const auto start = Clk::now();
  TransferReport report;
  report.path = path;
  report.destination = destination;
  std::error_code ec;
  if (fs::is_directory(destination, ec)) {
    auto name = path.str().substr(path.str().rfind('/') + 1);
    report.destination = destination / (name.empty() ? "download" : name);
  }

  Downloader dl(path, report.destination, options, report);
  for (auto m : options.methods) {
    if (!applicable(m, options)) continue;
    Attempt attempt;
    attempt.method = m;
    try {
      MethodOutcome out;
      switch (m) {
        case Method::cache_federation: out = dl.cache_federation(attempt); break;
        case Method::direct_origin: out = dl.direct_origin(attempt); break;
        case Method::proxy_http: out = dl.proxy_http(attempt); break;
      }
      attempt.ok = true;
      report.attempts.push_back(std::move(attempt));
      report.success = true;
      report.method_used = m;
      report.cache_status = out.cache_status;
      report.verified = out.verified;
      report.bytes = out.bytes;
      break;
    } catch (const IntegrityError& e) {
      attempt.error = Errc::integrity_error;
      if (e.chunk_index()) attempt.chunk_index = e.chunk_index();
      attempt.detail = e.what();
    } catch (const Error& e) {
      attempt.error = e.code();
      attempt.detail = e.what();
    } catch (const std::exception& e) {
      attempt.error = Errc::io_error;
      attempt.detail = e.what();
    }
    report.attempts.push_back(std::move(attempt));
  }
  if (report.attempts.empty()) {
    Attempt none;
    none.error = Errc::all_methods_failed;
    none.detail = "no applicable method configured";
    report.attempts.push_back(std::move(none));
  }
  report.duration = since(start);
  return report;
}

}  // namespace stashfed
