#pragma once

#include <cstdint>
#include <memory>
#include <string>

namespace httplib {
class Server;
}

namespace stashfed {

// Runs an httplib::Server on a background thread. Port 0 binds any free
// port; the bound port is available from port() once start() returns.
class HttpHost {
 public:
  HttpHost();
  ~HttpHost();
  HttpHost(const HttpHost&) = delete;
  HttpHost& operator=(const HttpHost&) = delete;

  httplib::Server& server() { return *server_; }

  std::uint16_t start(const std::string& host, std::uint16_t port);
  void stop();
  bool running() const { return running_; }
  std::uint16_t port() const { return port_; }

 private:
  struct Runner;
  std::unique_ptr<httplib::Server> server_;
  std::unique_ptr<Runner> runner_;
  std::uint16_t port_ = 0;
  bool running_ = false;
};

}  // namespace stashfed
