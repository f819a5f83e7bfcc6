#include "dep/rate.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace dep {

Duration from_seconds(double seconds) {
  if (seconds <= 0) return Duration::zero();
  return Duration(static_cast<Duration::rep>(std::ceil(seconds * 1e9)));
}

TimePoint SteadyClock::now() const {
  return std::chrono::time_point_cast<Duration>(std::chrono::steady_clock::now());
}

void SteadyClock::sleep_for(Duration d) {
  if (d > Duration::zero()) std::this_thread::sleep_for(d);
}

void SteadyClock::wait_event(std::condition_variable& cv, std::unique_lock<std::mutex>& lock, Duration timeout,
                             const std::function<bool()>& ready) {
  if (timeout < Duration::zero()) {
    cv.wait(lock, ready);
  } else {
    cv.wait_for(lock, timeout, ready);
  }
}

TimePoint VirtualClock::now() const {
  std::lock_guard lk(mu_);
  return now_;
}

void VirtualClock::sleep_for(Duration d) {
  if (d <= Duration::zero()) return;
  std::lock_guard lk(mu_);
  now_ += d;
}

void VirtualClock::wait_event(std::condition_variable& cv, std::unique_lock<std::mutex>& lock, Duration,
                              const std::function<bool()>& ready) {
  cv.wait(lock, ready);
}

std::shared_ptr<Clock> steady_clock() {
  static auto clock = std::make_shared<SteadyClock>();
  return clock;
}

// ---------------------------------------------------------------------------

TokenBucket::TokenBucket(std::uint32_t capacity, double refill_per_second, TimePoint start)
    : capacity_(std::max<std::uint32_t>(capacity, 1)),
      rate_(refill_per_second),
      level_(static_cast<double>(capacity_)),
      last_(start) {
  if (!(rate_ > 0.0)) throw Error(StatusCode::unprocessable, "token bucket refill rate must be positive");
}

void TokenBucket::refill(TimePoint now) {
  if (now <= last_) return;
  level_ = std::min(static_cast<double>(capacity_), level_ + to_seconds(now - last_) * rate_);
  last_ = now;
}

TokenBucket::Outcome TokenBucket::acquire(TimePoint now) {
  refill(now);
  if (level_ >= 1.0) {
    level_ -= 1.0;
    return Permit{};
  }
  return Wait{from_seconds((1.0 - level_) / rate_)};
}

double TokenBucket::level(TimePoint now) {
  refill(now);
  return level_;
}

// ---------------------------------------------------------------------------

ConcurrencyGovernor::ConcurrencyGovernor(const GovernorConfig& cfg) : cfg_(cfg) {
  if (cfg_.max_limit < 1) throw Error(StatusCode::unprocessable, "max concurrency must be at least 1");
  if (!(cfg_.decrease_factor > 0.0 && cfg_.decrease_factor < 1.0)) {
    throw Error(StatusCode::unprocessable, "decrease factor must lie in (0,1)");
  }
  if (cfg_.increase_step < 1) throw Error(StatusCode::unprocessable, "increase step must be positive");
  limit_ = std::clamp<std::uint32_t>(cfg_.initial_limit, min_limit(), cfg_.max_limit);
}

StatusDirective ConcurrencyGovernor::on_status(StatusCode status) {
  StatusDirective d;
  d.limit_before = limit_;
  switch (classify_status(status)) {
    case RetryClass::backoff_and_reduce: {
      auto reduced = static_cast<std::uint32_t>(std::floor(limit_ * cfg_.decrease_factor));
      limit_ = std::max(min_limit(), reduced);
      streak_ = 0;
      d.retry = true;
      d.backoff = true;
      break;
    }
    case RetryClass::bounded_retry:
      streak_ = 0;
      d.retry = true;
      d.backoff = true;
      break;
    case RetryClass::never:
      if (status != StatusCode::ok) {
        streak_ = 0;
      } else if (++streak_ >= cfg_.cooldown_successes) {
        limit_ = std::min(cfg_.max_limit, limit_ + cfg_.increase_step);
        streak_ = 0;
      }
      break;
  }
  d.limit_after = limit_;
  return d;
}

Duration backoff_delay(const BackoffPolicy& policy, std::uint32_t attempt, std::mt19937_64& rng) {
  double base = to_seconds(policy.base) * std::pow(policy.factor, std::max<std::uint32_t>(attempt, 1) - 1);
  base = std::min(base, to_seconds(policy.max_delay));
  std::uniform_real_distribution<double> jitter(1.0 - policy.jitter, 1.0 + policy.jitter);
  return from_seconds(std::min(base * jitter(rng), to_seconds(policy.max_delay)));
}

}  // namespace dep
