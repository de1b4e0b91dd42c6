#pragma once

#include <compare>
#include <functional>
#include <string>
#include <string_view>

namespace stashfed {

// Canonical absolute path within the federation namespace. Always begins
// with '/', has no empty, '.' or '..' segments and no trailing '/' (except
// the root itself). Comparison is byte-wise on the canonical text.
class FederationPath {
 public:
  FederationPath() : text_("/") {}

  // Throws Error(malformed_path) on empty input, embedded NUL or a '..'
  // that would climb above the root.
  static FederationPath normalize(std::string_view raw);

  const std::string& str() const noexcept { return text_; }
  bool is_root() const noexcept { return text_.size() == 1; }

  // Segment-aware: "/exp1" is a prefix of "/exp1/a" but not of "/exp10".
  bool has_prefix(const FederationPath& prefix) const noexcept;

  // Appends a relative component (may contain several segments).
  FederationPath join(std::string_view relative) const;

  // Text after `prefix`, without a leading '/'. Empty when equal.
  std::string relative_to(const FederationPath& prefix) const;

  friend bool operator==(const FederationPath&, const FederationPath&) = default;
  friend auto operator<=>(const FederationPath& a, const FederationPath& b) {
    return a.text_ <=> b.text_;
  }

 private:
  explicit FederationPath(std::string canonical) : text_(std::move(canonical)) {}
  std::string text_;
};

inline FederationPath normalize_path(std::string_view raw) {
  return FederationPath::normalize(raw);
}

}  // namespace stashfed

template <>
struct std::hash<stashfed::FederationPath> {
  std::size_t operator()(const stashfed::FederationPath& p) const noexcept {
    return std::hash<std::string>{}(p.str());
  }
};
