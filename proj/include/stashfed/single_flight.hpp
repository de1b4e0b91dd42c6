#pragma once

#include <exception>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <utility>

namespace stashfed {

// Collapses concurrent calls for the same key into one execution of the
// work function. Callers that arrive while a call is in flight wait for it
// and observe its result (or its exception).
template <typename Key, typename Value>
class SingleFlight {
 public:
  // Returns the value and whether this caller ran the work itself.
  template <typename Fn>
  std::pair<Value, bool> run(const Key& key, Fn&& work) {
    std::promise<Value> promise;
    std::shared_future<Value> future;
    bool leader = false;
    {
      std::lock_guard lock(mu_);
      auto it = inflight_.find(key);
      if (it != inflight_.end()) {
        future = it->second;
      } else {
        future = promise.get_future().share();
        inflight_.emplace(key, future);
        leader = true;
      }
    }
    if (!leader) return {future.get(), false};

    try {
      promise.set_value(work());
    } catch (...) {
      promise.set_exception(std::current_exception());
    }
    {
      std::lock_guard lock(mu_);
      inflight_.erase(key);
    }
    return {future.get(), true};
  }

  std::size_t inflight() const {
    std::lock_guard lock(mu_);
    return inflight_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<Key, std::shared_future<Value>> inflight_;
};

}  // namespace stashfed
