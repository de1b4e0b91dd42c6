#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace stashfed {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  // "host:port"; throws Error(invalid_argument) when malformed.
  static Endpoint parse(std::string_view text);
  static std::vector<Endpoint> parse_list(std::string_view comma_separated);

  std::string str() const { return host + ":" + std::to_string(port); }

  friend bool operator==(const Endpoint&, const Endpoint&) = default;
  friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

}  // namespace stashfed
