#include <iostream>

#include "cli_common.hpp"
#include "stashfed/origin.hpp"

int main(int argc, char** argv) {
  using namespace stashfed;
  CLI::App app{"Federation origin server"};
  std::string prefix, root, listen = "127.0.0.1:8000", redirectors, monitor;
  OriginConfig cfg;
  app.add_option("--prefix", prefix, "Namespace prefix this origin exports")->required();
  app.add_option("--root", root, "Local directory backing the prefix")->required()->check(CLI::ExistingDirectory);
  app.add_option("--listen", listen, "H:P to listen on");
  app.add_option("--redirector,--redirectors", redirectors, "Redirector H:P[,H:P]");
  app.add_option("--reindex-interval", cfg.reindex_interval, "Seconds between index scans");
  app.add_option("--heartbeat-interval", cfg.heartbeat_interval, "Seconds between registrations");
  app.add_option("--chunk-size", cfg.chunk_size, "Chunk size in bytes")->check(CLI::PositiveNumber);
  auto* sid = app.add_option("--server-id", cfg.server_id, "Monitoring server id (default derived from identity)");
  app.add_option("--monitor", monitor, "Collector UDP H:P");
  CLI11_PARSE(app, argc, argv);

  auto signals = tools::block_shutdown_signals();
  try {
    cfg.namespace_prefix = normalize_path(prefix);
    cfg.root_dir = root;
    cfg.listen = tools::endpoint_arg(listen);
    cfg.redirectors = tools::endpoint_list_arg(redirectors);
    if (sid->count() == 0) cfg.server_id = tools::derived_server_id("origin:" + cfg.namespace_prefix.str() + "@" + listen);
    if (!monitor.empty()) cfg.monitor = tools::endpoint_arg(monitor);
    OriginServer server(cfg);
    server.start();
    std::cerr << "origin " << cfg.namespace_prefix.str() << " listening on " << server.endpoint().str()
              << " (" << server.origin().stats().files_indexed << " files indexed)\n";
    tools::wait_for_shutdown(signals);
    server.stop();
  } catch (const Error& e) {
    std::cerr << "stashfed-origin: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
