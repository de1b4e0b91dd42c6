#pragma once

#include <memory>
#include <optional>
#include <string>

#include <httplib.h>

#include "stashfed/chunk.hpp"
#include "stashfed/endpoint.hpp"
#include "stashfed/error.hpp"
#include "stashfed/path.hpp"

namespace stashfed::detail {

inline std::unique_ptr<httplib::Client> make_client(const Endpoint& ep, double connect_timeout = 2.0,
                                                    double read_timeout = 60.0) {
  auto cli = std::make_unique<httplib::Client>(ep.host, ep.port);
  auto sec = [](double s) { return static_cast<time_t>(s); };
  auto usec = [](double s) { return static_cast<time_t>((s - static_cast<double>(static_cast<time_t>(s))) * 1e6); };
  cli->set_connection_timeout(sec(connect_timeout), usec(connect_timeout));
  cli->set_read_timeout(sec(read_timeout), usec(read_timeout));
  cli->set_write_timeout(sec(read_timeout), usec(read_timeout));
  cli->set_keep_alive(false);
  return cli;
}

inline std::string range_header(ByteRange r) {
  return "bytes=" + std::to_string(r.begin) + "-" + std::to_string(r.end - 1);
}

// First requested range of a request, resolved against the file size.
// nullopt when the request has no Range header. Mirrors httplib's own
// validation: anything it would answer with 416 throws range-unsatisfiable.
inline std::optional<ByteRange> request_range(const httplib::Request& req, std::uint64_t size) {
  if (req.ranges.empty()) return std::nullopt;
  auto [first, last] = req.ranges[0];
  const auto len = static_cast<ssize_t>(size);
  if (first == -1 && last == -1) {
    first = 0;
    last = len - 1;
  } else if (first == -1) {
    first = len - last;
    last = len - 1;
  } else if (last == -1) {
    last = len - 1;
  }
  if (!(0 <= first && first <= last && last <= len - 1))
    throw Error(Errc::range_unsatisfiable, "bad range for size " + std::to_string(size));
  return ByteRange{static_cast<std::uint64_t>(first), static_cast<std::uint64_t>(last) + 1};
}

// "/data/<path>" → federation path. Returns nullopt when malformed.
inline std::optional<FederationPath> data_path(const std::string& request_path,
                                               std::string_view route_prefix = "/data") {
  if (request_path.size() <= route_prefix.size()) return std::nullopt;
  try {
    return FederationPath::normalize(request_path.substr(route_prefix.size()));
  } catch (...) {
    return std::nullopt;
  }
}

inline std::uint64_t header_u64(const httplib::Response& res, const std::string& key,
                                std::uint64_t fallback = 0) {
  if (!res.has_header(key)) return fallback;
  return std::stoull(res.get_header_value(key));
}

// Total size from Content-Range "bytes a-b/total", if present.
inline std::optional<std::uint64_t> content_range_total(const httplib::Response& res) {
  if (!res.has_header("Content-Range")) return std::nullopt;
  auto v = res.get_header_value("Content-Range");
  auto slash = v.rfind('/');
  if (slash == std::string::npos || v.substr(slash + 1) == "*") return std::nullopt;
  return std::stoull(v.substr(slash + 1));
}

}  // namespace stashfed::detail
