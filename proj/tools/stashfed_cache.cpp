#include <iostream>

#include "cli_common.hpp"
#include "stashfed/cache.hpp"

int main(int argc, char** argv) {
  using namespace stashfed;
  CLI::App app{"Federation cache server"};
  std::string listen = "127.0.0.1:8001", redirectors, dir, monitor, advertise;
  double lat = 0, lon = 0;
  CacheConfig cfg;
  app.add_option("--id", cfg.cache_id, "Cache id")->required();
  app.add_option("--listen", listen, "H:P to listen on");
  app.add_option("--redirectors", redirectors, "Redirector H:P[,H:P]")->required();
  app.add_option("--dir", dir, "Chunk storage directory (wiped at startup)")->required();
  app.add_option("--capacity", cfg.capacity, "Capacity in bytes")->required();
  app.add_option("--high", cfg.high_watermark, "High watermark fraction");
  app.add_option("--low", cfg.low_watermark, "Low watermark fraction");
  app.add_option("--lat", lat, "Latitude")->check(CLI::Range(-90.0, 90.0));
  app.add_option("--lon", lon, "Longitude")->check(CLI::Range(-180.0, 180.0));
  app.add_option("--chunk-size", cfg.chunk_size, "Chunk size in bytes")->check(CLI::PositiveNumber);
  app.add_option("--register-interval", cfg.register_interval, "Seconds between registrations");
  app.add_option("--advertise", advertise, "H:P given to redirectors instead of --listen");
  auto* sid = app.add_option("--server-id", cfg.server_id, "Monitoring server id (default derived from identity)");
  app.add_option("--monitor", monitor, "Collector UDP H:P");
  CLI11_PARSE(app, argc, argv);

  auto signals = tools::block_shutdown_signals();
  try {
    cfg.listen = tools::endpoint_arg(listen);
    cfg.redirectors = tools::endpoint_list_arg(redirectors);
    cfg.storage_dir = dir;
    cfg.location = GeoCoordinate(lat, lon);
    if (sid->count() == 0) cfg.server_id = tools::derived_server_id("cache:" + cfg.cache_id + "@" + listen);
    if (!monitor.empty()) cfg.monitor = tools::endpoint_arg(monitor);
    if (!advertise.empty()) cfg.advertised = tools::endpoint_arg(advertise);
    CacheServer server(cfg);
    server.start();
    std::cerr << "cache " << cfg.cache_id << " listening on " << server.endpoint().str() << "\n";
    tools::wait_for_shutdown(signals);
    server.stop();
  } catch (const Error& e) {
    std::cerr << "stashfed-cache: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
