#include "stashfed/http_host.hpp"

#include <thread>

#include <httplib.h>

#include "stashfed/error.hpp"

namespace stashfed {

struct HttpHost::Runner {
  std::thread thread;
};

HttpHost::HttpHost() : server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [] { return new httplib::ThreadPool(16); };
}

HttpHost::~HttpHost() { stop(); }

std::uint16_t HttpHost::start(const std::string& host, std::uint16_t port) {
  if (running_) return port_;
  int bound = 0;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else {
    bound = server_->bind_to_port(host, port) ? port : -1;
  }
  if (bound <= 0) throw Error(Errc::io_error, "cannot bind " + host + ":" + std::to_string(port));
  port_ = static_cast<std::uint16_t>(bound);
  runner_ = std::make_unique<Runner>();
  runner_->thread = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  running_ = true;
  return port_;
}

void HttpHost::stop() {
  if (!running_) return;
  server_->stop();
  if (runner_ && runner_->thread.joinable()) runner_->thread.join();
  runner_.reset();
  running_ = false;
}

}  // namespace stashfed
