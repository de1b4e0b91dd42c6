#include <iostream>

#include <nlohmann/json.hpp>

#include "cli_common.hpp"
#include "stashfed/monitoring.hpp"

int main(int argc, char** argv) {
  using namespace stashfed;
  CLI::App app{"Monitoring collector"};
  std::string udp = "0.0.0.0:9930", admin = "127.0.0.1:9931";
  CollectorServiceConfig cfg;
  app.add_option("--udp", udp, "UDP H:P to receive packets on");
  app.add_option("--sink", cfg.sink, "file:PATH or tcp:H:P");
  app.add_option("--admin", admin, "H:P for GET /stats");
  app.add_option("--grace", cfg.join.grace_period, "Seconds an unmatched close waits");
  app.add_option("--login-ttl", cfg.join.login_ttl, "Seconds a login is retained");
  app.add_option("--open-ttl", cfg.join.open_ttl, "Seconds an open is retained");
  CLI11_PARSE(app, argc, argv);

  auto signals = tools::block_shutdown_signals();
  try {
    cfg.udp = tools::endpoint_arg(udp);
    cfg.admin = tools::endpoint_arg(admin);
    CollectorService service(cfg);
    service.start();
    std::cerr << "collector on udp " << service.udp_port() << ", admin " << service.admin_port() << "\n";
    tools::wait_for_shutdown(signals);
    service.stop();
    std::cerr << service.stats().dump() << "\n";
  } catch (const Error& e) {
    std::cerr << "stashfed-collector: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
