#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "cli_common.hpp"
#include "stashfed/client.hpp"

int main(int argc, char** argv) {
  using namespace stashfed;
  CLI::App app{"Copy a file out of the federation"};
  std::string source, dest, redirectors, caches, methods = "cache,origin,proxy", proxy, origin_url, report;
  double lat = 0, lon = 0;
  ClientOptions opt;
  app.add_option("path", source, "Federation path")->required();
  app.add_option("dest", dest, "Destination file or directory")->required();
  app.add_option("--redirectors", redirectors, "Redirector H:P[,H:P]")->envname("STASHCP_REDIRECTORS");
  app.add_option("--caches", caches, "Cache H:P list, tried in order")->envname("STASHCP_CACHES");
  app.add_option("--lat", lat, "Client latitude")->envname("STASHCP_LAT")->check(CLI::Range(-90.0, 90.0));
  app.add_option("--lon", lon, "Client longitude")->envname("STASHCP_LON")->check(CLI::Range(-180.0, 180.0));
  app.add_option("--methods", methods, "Ordered subset of cache,origin,proxy")->envname("STASHCP_METHODS");
  app.add_option("--proxy", proxy, "HTTP proxy URL or H:P")->envname("STASHCP_PROXY");
  app.add_option("--origin-url", origin_url, "Origin base URL for proxy fetches")->envname("STASHCP_ORIGIN_URL");
  app.add_option("--json-report", report, "Write a JSON transfer report here")->envname("STASHCP_JSON_REPORT");
  app.add_option("--chunk-size", opt.chunk_size, "Chunk size in bytes")
      ->envname("STASHCP_CHUNK_SIZE")
      ->check(CLI::PositiveNumber);
  app.add_option("--cache-attempts", opt.cache_attempts, "Caches tried before falling back")
      ->envname("STASHCP_CACHE_ATTEMPTS");
  app.add_option("--parallel", opt.parallel_chunks, "Concurrent chunk fetches")
      ->envname("STASHCP_PARALLEL")
      ->check(CLI::PositiveNumber);
  app.add_option("--connect-timeout", opt.connect_timeout, "Seconds")->envname("STASHCP_CONNECT_TIMEOUT");
  app.add_option("--read-timeout", opt.read_timeout, "Seconds")->envname("STASHCP_READ_TIMEOUT");
  CLI11_PARSE(app, argc, argv);

  TransferReport r;
  try {
    opt.redirectors = tools::endpoint_list_arg(redirectors);
    opt.caches = tools::endpoint_list_arg(caches);
    opt.location = GeoCoordinate(lat, lon);
    opt.methods = parse_methods(methods);
    if (!proxy.empty())
      opt.proxy = proxy.rfind("http://", 0) == 0 ? endpoint_from_url(proxy) : Endpoint::parse(proxy);
    if (!origin_url.empty()) opt.origin_url = origin_url;
    r = download(normalize_path(source), dest, opt);
  } catch (const Error& e) {
    std::cerr << "stashcp: " << e.what() << "\n";
    return 1;
  }

  if (!report.empty()) {
    std::ofstream out(report);
    out << to_json(r).dump(2) << "\n";
  }
  if (r.success) {
    std::cerr << "stashcp: " << r.bytes << " bytes via " << method_name(*r.method_used) << " in "
              << r.duration << " s\n";
  } else {
    for (const auto& a : r.attempts)
      std::cerr << "stashcp: " << method_name(a.method) << " failed: "
                << (a.error ? std::string(errc_name(*a.error)) : std::string("ok")) << " " << a.detail << "\n";
  }
  return exit_code(r);
}
