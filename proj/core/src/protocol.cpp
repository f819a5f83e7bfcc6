#include "dep/protocol.hpp"

#include <random>

namespace dep {

RetryClass classify_status(int code) noexcept {
  switch (code) {
    case 200:
    case 400:
    case 401:
    case 404:
    case 422:
      return RetryClass::never;
    case 429:
      return RetryClass::backoff_and_reduce;
    case 409:
    case 500:
    case 503:
      return RetryClass::bounded_retry;
    default:
      return (code >= 500 && code <= 599) ? RetryClass::bounded_retry : RetryClass::never;
  }
}

bool is_known_status(int code) noexcept { return to_status_code(code).has_value(); }

std::optional<StatusCode> to_status_code(int code) noexcept {
  for (StatusCode s : kAllStatusCodes) {
    if (static_cast<int>(s) == code) return s;
  }
  return std::nullopt;
}

std::string_view status_reason(StatusCode code) noexcept {
  switch (code) {
    case StatusCode::ok: return "OK";
    case StatusCode::bad_request: return "Bad Request";
    case StatusCode::unauthorized: return "Unauthorized";
    case StatusCode::not_found: return "Not Found";
    case StatusCode::conflict: return "Conflict";
    case StatusCode::unprocessable: return "Unprocessable Entity";
    case StatusCode::too_many_requests: return "Too Many Requests";
    case StatusCode::internal_error: return "Internal Server Error";
    case StatusCode::unavailable: return "Service Unavailable";
  }
  return "Unknown";
}

std::string_view to_string(RetryClass rc) noexcept {
  switch (rc) {
    case RetryClass::never: return "never";
    case RetryClass::backoff_and_reduce: return "backoff-and-reduce";
    case RetryClass::bounded_retry: return "bounded-retry";
  }
  return "never";
}

Error::Error(StatusCode status, const std::string& message, std::string path)
    : std::runtime_error(message), status_(status), path_(std::move(path)) {}

// ---------------------------------------------------------------------------

std::optional<EvaluationId> EvaluationId::parse(std::string_view text) {
  if (text.size() != 32) return std::nullopt;
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
  };
  std::array<std::uint8_t, 16> bytes{};
  for (std::size_t i = 0; i < 16; ++i) {
    int hi = nibble(text[2 * i]);
    int lo = nibble(text[2 * i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    bytes[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return EvaluationId(bytes);
}

std::string EvaluationId::str() const {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(32, '0');
  for (std::size_t i = 0; i < 16; ++i) {
    out[2 * i] = kHex[bytes_[i] >> 4];
    out[2 * i + 1] = kHex[bytes_[i] & 0x0f];
  }
  return out;
}

bool EvaluationId::empty() const noexcept {
  for (auto b : bytes_) {
    if (b != 0) return false;
  }
  return true;
}

EvaluationId new_evaluation_id(const EntropySource& entropy) {
  std::array<std::uint8_t, 16> bytes{};
  try {
    std::uint64_t words[2];
    if (entropy) {
      words[0] = entropy();
      words[1] = entropy();
    } else {
      std::random_device rd;
      words[0] = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
      words[1] = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }
    for (std::size_t i = 0; i < 16; ++i) {
      bytes[i] = static_cast<std::uint8_t>(words[i / 8] >> (8 * (i % 8)));
    }
  } catch (const std::exception& e) {
    throw Error(StatusCode::internal_error, std::string("entropy source failed: ") + e.what());
  }
  return EvaluationId(bytes);
}

// ---------------------------------------------------------------------------

std::string_view to_string(LifecycleState s) noexcept {
  switch (s) {
    case LifecycleState::running: return "running";
    case LifecycleState::paused: return "paused";
    case LifecycleState::completed: return "completed";
    case LifecycleState::failed: return "failed";
  }
  return "failed";
}

std::optional<LifecycleState> parse_lifecycle_state(std::string_view s) noexcept {
  for (LifecycleState st : kAllLifecycleStates) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

std::string TransitionVerdict::describe() const {
  return std::string(to_string(from)) + " -> " + std::string(to_string(to)) +
         (accepted ? " (accepted)" : " (rejected)");
}

TransitionVerdict validate_transition(LifecycleState from, LifecycleState to) noexcept {
  using S = LifecycleState;
  bool ok = (from == S::running && (to == S::paused || to == S::completed || to == S::failed)) ||
            (from == S::paused && to == S::running) || (from == S::failed && to == S::running);
  return {ok, from, to};
}

std::string_view to_string(EndpointKind k) noexcept {
  return k == EndpointKind::scripted ? "scripted" : "http-chat";
}

std::string_view to_string(DataFormat f) noexcept {
  switch (f) {
    case DataFormat::jsonl: return "jsonl";
    case DataFormat::csv: return "csv";
    case DataFormat::custom: return "custom";
  }
  return "custom";
}

bool same_results(const EvaluationReport& a, const EvaluationReport& b) {
  EvaluationReport x = a;
  EvaluationReport y = b;
  x.evaluation_id = y.evaluation_id = EvaluationId{};
  x.generated_at.clear();
  y.generated_at.clear();
  return x == y;
}

}  // namespace dep
