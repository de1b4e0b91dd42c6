#include <iostream>

#include "cli_common.hpp"
#include "stashfed/proxy.hpp"

int main(int argc, char** argv) {
  using namespace stashfed;
  CLI::App app{"Caching forward HTTP proxy"};
  std::string listen = "127.0.0.1:3128";
  ProxyConfig cfg;
  app.add_option("--listen", listen, "H:P to listen on");
  app.add_option("--capacity", cfg.capacity, "Capacity in bytes")->required();
  app.add_option("--max-object", cfg.max_object_size, "Largest cacheable object in bytes")->required();
  app.add_option("--ttl", cfg.object_ttl, "Object lifetime in seconds")->required();
  CLI11_PARSE(app, argc, argv);

  auto signals = tools::block_shutdown_signals();
  try {
    cfg.listen = tools::endpoint_arg(listen);
    ProxyServer server(cfg);
    server.start();
    std::cerr << "proxy listening on " << server.endpoint().str() << "\n";
    tools::wait_for_shutdown(signals);
    server.stop();
  } catch (const Error& e) {
    std::cerr << "stashfed-proxy: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
