#pragma once

#include <memory>
#include <mutex>
#include <utility>

namespace stashfed {

// Holder for an immutable value that is replaced wholesale. Readers get a
// shared_ptr to a complete value and never observe a half-built one.
template <typename T>
class Snapshot {
 public:
  Snapshot() : value_(std::make_shared<const T>()) {}
  explicit Snapshot(T initial) : value_(std::make_shared<const T>(std::move(initial))) {}

  std::shared_ptr<const T> load() const {
    std::lock_guard lock(mu_);
    return value_;
  }

  void store(T next) {
    auto fresh = std::make_shared<const T>(std::move(next));
    std::lock_guard lock(mu_);
    value_ = std::move(fresh);
  }

  // Copy-modify-publish under the writer lock. Writers serialize.
  template <typename Fn>
  auto update(Fn&& fn) {
    std::lock_guard wlock(writer_mu_);
    T copy = *load();
    if constexpr (std::is_void_v<decltype(fn(copy))>) {
      fn(copy);
      store(std::move(copy));
    } else {
      auto result = fn(copy);
      store(std::move(copy));
      return result;
    }
  }

 private:
  mutable std::mutex mu_;
  std::mutex writer_mu_;
  std::shared_ptr<const T> value_;
};

}  // namespace stashfed
