#pragma once

#include <csignal>
#include <iostream>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>

#include "stashfed/endpoint.hpp"
#include "stashfed/error.hpp"

namespace stashfed::tools {

// Call before any thread starts so every thread inherits the mask.
inline sigset_t block_shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

inline int wait_for_shutdown(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  return sig;
}

// Nonzero FNV-1a of a server's identity, used when --server-id is omitted.
inline std::uint32_t derived_server_id(std::string_view identity) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : identity) h = (h ^ c) * 16777619u;
  return h == 0 ? 1 : h;
}

inline Endpoint endpoint_arg(const std::string& s) { return Endpoint::parse(s); }

inline std::vector<Endpoint> endpoint_list_arg(const std::string& s) {
  return s.empty() ? std::vector<Endpoint>{} : Endpoint::parse_list(s);
}

}  // namespace stashfed::tools
