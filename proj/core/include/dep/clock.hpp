#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>

namespace dep {

using Duration = std::chrono::nanoseconds;
using TimePoint = std::chrono::time_point<std::chrono::steady_clock, Duration>;

inline double to_seconds(Duration d) { return std::chrono::duration<double>(d).count(); }

/// Rounds up so that waiting the returned duration never falls short.
Duration from_seconds(double seconds);

class Clock {
 public:
  virtual ~Clock() = default;

  virtual TimePoint now() const = 0;
  virtual void sleep_for(Duration d) = 0;

  /// Waits on `cv` until `ready()` holds or `timeout` elapses in this
  /// clock's notion of time. A negative timeout waits without bound.
  virtual void wait_event(std::condition_variable& cv, std::unique_lock<std::mutex>& lock, Duration timeout,
                          const std::function<bool()>& ready) = 0;
};

class SteadyClock final : public Clock {
 public:
  TimePoint now() const override;
  void sleep_for(Duration d) override;
  void wait_event(std::condition_variable& cv, std::unique_lock<std::mutex>& lock, Duration timeout,
                  const std::function<bool()>& ready) override;
};

// Time advances only through sleep_for. Event waits return when the
// predicate holds, regardless of the timeout, since no virtual time passes
// while a thread is blocked.
class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(TimePoint start = TimePoint{}) : now_(start) {}

  TimePoint now() const override;
  void sleep_for(Duration d) override;
  void wait_event(std::condition_variable& cv, std::unique_lock<std::mutex>& lock, Duration timeout,
                  const std::function<bool()>& ready) override;
  void advance(Duration d) { sleep_for(d); }

 private:
  mutable std::mutex mu_;
  TimePoint now_;
};

std::shared_ptr<Clock> steady_clock();

}  // namespace dep
