#pragma once

#include <cstdint>
#include <random>
#include <variant>

#include "dep/clock.hpp"
#include "dep/protocol.hpp"

namespace dep {

/// Lazily refilled token bucket. Starts full.
class TokenBucket {
 public:
  struct Permit {};
  struct Wait {
    Duration duration;
  };
  using Outcome = std::variant<Permit, Wait>;

  TokenBucket(std::uint32_t capacity, double refill_per_second, TimePoint start);

  /// Grants a permit if at least one token is available at `now`; otherwise
  /// returns the exact time until the level reaches one token.
  Outcome acquire(TimePoint now);

  double level(TimePoint now);
  std::uint32_t capacity() const noexcept { return capacity_; }
  double refill_rate() const noexcept { return rate_; }

 private:
  void refill(TimePoint now);

  std::uint32_t capacity_;
  double rate_;
  double level_;
  TimePoint last_;
};

inline bool granted(const TokenBucket::Outcome& o) { return std::holds_alternative<TokenBucket::Permit>(o); }

struct GovernorConfig {
  std::uint32_t initial_limit = 8;
  std::uint32_t max_limit = 8;
  double decrease_factor = 0.5;
  std::uint32_t increase_step = 1;
  std::uint32_t cooldown_successes = 10;  // uninterrupted successes before an increase
};

/// What the scheduler should do with the request that produced a status.
struct StatusDirective {
  bool retry = false;
  bool backoff = false;
  std::uint32_t limit_before = 0;
  std::uint32_t limit_after = 0;
};

// AIMD limit on in-flight requests: multiplicative decrease on 429,
// additive increase after a run of successes.
class ConcurrencyGovernor {
 public:
  explicit ConcurrencyGovernor(const GovernorConfig& cfg);

  StatusDirective on_status(StatusCode status);

  std::uint32_t current_limit() const noexcept { return limit_; }
  std::uint32_t max_limit() const noexcept { return cfg_.max_limit; }
  static constexpr std::uint32_t min_limit() noexcept { return 1; }

 private:
  GovernorConfig cfg_;
  std::uint32_t limit_;
  std::uint32_t streak_ = 0;
};

struct BackoffPolicy {
  Duration base = std::chrono::seconds(1);
  double factor = 2.0;
  double jitter = 0.2;  // +/- fraction
  Duration max_delay = std::chrono::seconds(60);
  std::uint32_t max_attempts = 5;  // bounded-retry class only
};

/// Delay before attempt `attempt + 1`, given `attempt` >= 1 failed attempts.
Duration backoff_delay(const BackoffPolicy& policy, std::uint32_t attempt, std::mt19937_64& rng);

}  // namespace dep
