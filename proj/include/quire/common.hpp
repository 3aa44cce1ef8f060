#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

#include <json.hpp>

namespace quire {

using Json = nlohmann::json;

inline constexpr std::string_view kUser = "user";

/// Source of the timestamps stamped on workspace versions, messages, records
/// and events. The logical clock makes every persisted byte reproducible.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now() = 0;
  virtual std::int64_t peek() const = 0;
  virtual void restore(std::int64_t value) = 0;
};

class LogicalClock final : public Clock {
 public:
  std::int64_t now() override { return ++value_; }
  std::int64_t peek() const override { return value_.load(); }
  void restore(std::int64_t value) override { value_ = value; }

 private:
  std::atomic<std::int64_t> value_{0};
};

/// Milliseconds on the steady clock; never goes backwards.
class SteadyClock final : public Clock {
 public:
  std::int64_t now() override {
    std::int64_t ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now().time_since_epoch())
                          .count();
    std::int64_t prev = last_.load();
    std::int64_t next = 0;
    do {
      next = ms > prev ? ms : prev + 1;
    } while (!last_.compare_exchange_weak(prev, next));
    return next;
  }
  std::int64_t peek() const override { return last_.load(); }
  void restore(std::int64_t value) override { last_ = value; }

 private:
  std::atomic<std::int64_t> last_{0};
};

std::shared_ptr<Clock> make_clock(const std::string& kind);

}  // namespace quire
