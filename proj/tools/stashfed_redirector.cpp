#include <iostream>

#include "cli_common.hpp"
#include "stashfed/redirector.hpp"

int main(int argc, char** argv) {
  using namespace stashfed;
  CLI::App app{"Federation redirector"};
  std::string listen = "127.0.0.1:8444";
  RedirectorConfig cfg;
  app.add_option("--listen", listen, "H:P to listen on");
  app.add_option("--heartbeat-ttl", cfg.heartbeat_ttl, "Seconds after which an origin is stale")
      ->check(CLI::PositiveNumber);
  app.add_option("--confirm-timeout", cfg.confirm_timeout, "Origin probe timeout in seconds");
  CLI11_PARSE(app, argc, argv);

  auto signals = tools::block_shutdown_signals();
  try {
    cfg.listen = tools::endpoint_arg(listen);
    RedirectorServer server(cfg);
    server.start();
    std::cerr << "redirector listening on " << server.endpoint().str() << "\n";
    tools::wait_for_shutdown(signals);
    server.stop();
  } catch (const Error& e) {
    std::cerr << "stashfed-redirector: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
