#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace dep {

inline constexpr std::string_view kProtocolVersion = "dep/1";

// The closed set of codes used on every protocol surface.
enum class StatusCode : int {
  ok = 200,
  bad_request = 400,
  unauthorized = 401,
  not_found = 404,
  conflict = 409,
  unprocessable = 422,
  too_many_requests = 429,
  internal_error = 500,
  unavailable = 503,
};

enum class RetryClass { never, backoff_and_reduce, bounded_retry };

inline constexpr std::array<StatusCode, 9> kAllStatusCodes = {
    StatusCode::ok,           StatusCode::bad_request,   StatusCode::unauthorized,
    StatusCode::not_found,    StatusCode::conflict,      StatusCode::unprocessable,
    StatusCode::too_many_requests, StatusCode::internal_error, StatusCode::unavailable};

/// Total over all integers. Codes outside the closed set fall back to
/// bounded_retry for 5xx values and never otherwise.
RetryClass classify_status(int code) noexcept;
inline RetryClass classify_status(StatusCode code) noexcept {
  return classify_status(static_cast<int>(code));
}

bool is_known_status(int code) noexcept;
std::optional<StatusCode> to_status_code(int code) noexcept;
std::string_view status_reason(StatusCode code) noexcept;
std::string_view to_string(RetryClass rc) noexcept;

/// Every failure crossing a module boundary carries one of the protocol
/// status codes. `path` names the offending field for decode errors.
class Error : public std::runtime_error {
 public:
  Error(StatusCode status, const std::string& message, std::string path = {});

  StatusCode status() const noexcept { return status_; }
  int code() const noexcept { return static_cast<int>(status_); }
  const std::string& path() const noexcept { return path_; }

 private:
  StatusCode status_;
  std::string path_;
};

// 128-bit opaque identifier, rendered as 32 lowercase hex characters.
class EvaluationId {
 public:
  EvaluationId() = default;
  explicit EvaluationId(const std::array<std::uint8_t, 16>& bytes) : bytes_(bytes) {}

  static std::optional<EvaluationId> parse(std::string_view text);
  std::string str() const;
  const std::array<std::uint8_t, 16>& bytes() const noexcept { return bytes_; }
  bool empty() const noexcept;

  friend bool operator==(const EvaluationId&, const EvaluationId&) = default;
  friend auto operator<=>(const EvaluationId&, const EvaluationId&) = default;

 private:
  std::array<std::uint8_t, 16> bytes_{};
};

using EntropySource = std::function<std::uint64_t()>;

/// Draws 128 bits from `entropy`; without one, std::random_device is used.
/// Entropy failures surface as Error(internal_error).
EvaluationId new_evaluation_id(const EntropySource& entropy = {});

enum class LifecycleState { running, paused, completed, failed };

inline constexpr std::array<LifecycleState, 4> kAllLifecycleStates = {
    LifecycleState::running, LifecycleState::paused, LifecycleState::completed,
    LifecycleState::failed};

std::string_view to_string(LifecycleState s) noexcept;
std::optional<LifecycleState> parse_lifecycle_state(std::string_view s) noexcept;

struct TransitionVerdict {
  bool accepted = false;
  LifecycleState from{};
  LifecycleState to{};

  explicit operator bool() const noexcept { return accepted; }
  std::string describe() const;
};

TransitionVerdict validate_transition(LifecycleState from, LifecycleState to) noexcept;

// ---------------------------------------------------------------------------
// Wire records. Every record keeps unknown fields in `extra` so that a
// decode/encode cycle through an older peer does not drop data.

enum class EndpointKind { scripted, http_chat };

std::string_view to_string(EndpointKind k) noexcept;

struct EndpointSpec {
  EndpointKind kind = EndpointKind::scripted;
  nlohmann::json script;        // scripted: behavior script (object)
  std::string url;              // http-chat: full chat-completion URL
  std::string remote_model;     // http-chat: upstream model name
  std::string api_key_env;      // http-chat: env var holding a bearer key
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const EndpointSpec&, const EndpointSpec&) = default;
};

inline constexpr std::int64_t kDefaultDeadlineMs = 120'000;

struct ModelCard {
  std::string model_id;
  std::string display_name;
  std::vector<std::string> capability;
  std::optional<std::string> parameter_size;
  EndpointSpec endpoint;
  nlohmann::json generation_defaults = nlohmann::json::object();
  std::int64_t deadline_ms = kDefaultDeadlineMs;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const ModelCard&, const ModelCard&) = default;
};

struct NormalizationSpec {
  bool lowercase = true;
  bool strip_punctuation = true;
  bool collapse_whitespace = true;
  bool strip_articles = true;

  static NormalizationSpec none() { return {false, false, false, false}; }
  friend bool operator==(const NormalizationSpec&, const NormalizationSpec&) = default;
};

struct MetricBinding {
  std::string name;
  std::optional<NormalizationSpec> normalize;  // per-binding override

  friend bool operator==(const MetricBinding&, const MetricBinding&) = default;
};

enum class DataFormat { jsonl, csv, custom };

std::string_view to_string(DataFormat f) noexcept;

struct DatasetCard {
  std::string dataset_id;
  std::string version;
  std::string description;
  std::string task_type;
  std::vector<std::string> subtasks;
  std::vector<MetricBinding> metrics;
  std::uint64_t sample_count = 0;
  DataFormat data_format = DataFormat::jsonl;
  std::string prompt_template_ref;
  std::optional<std::string> license;
  bool pure_evaluator = false;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const DatasetCard&, const DatasetCard&) = default;
};

struct SampleEnvelope {
  std::string sample_id;
  std::string prompt;
  std::optional<std::string> subtask;
  std::map<std::string, std::string> metadata;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const SampleEnvelope&, const SampleEnvelope&) = default;
};

struct PredictionRecord {
  std::string sample_id;
  std::string raw_output;
  StatusCode status = StatusCode::ok;
  std::int64_t latency_ms = 0;
  std::int64_t attempt_count = 1;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

struct SampleScore {
  std::string sample_id;
  std::map<std::string, double> scores;
  std::optional<std::string> error;

  friend bool operator==(const SampleScore&, const SampleScore&) = default;
};

struct ReportCounts {
  std::uint64_t served = 0;
  std::uint64_t submitted = 0;
  std::uint64_t scored = 0;

  friend bool operator==(const ReportCounts&, const ReportCounts&) = default;
};

struct EvaluationReport {
  EvaluationId evaluation_id;
  std::string dataset_id;
  std::string dataset_version;
  std::string model_id;
  std::map<std::string, double> overall;
  std::map<std::string, std::map<std::string, double>> per_subtask;
  std::optional<std::vector<SampleScore>> per_sample;
  ReportCounts counts;
  std::vector<std::string> notes;
  std::string generated_at;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

/// Equality of everything a score consumer cares about: evaluation_id and
/// generated_at are ignored.
bool same_results(const EvaluationReport& a, const EvaluationReport& b);

struct InferenceRequest {
  std::string prompt;
  nlohmann::json generation = nlohmann::json::object();
  std::string request_id;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const InferenceRequest&, const InferenceRequest&) = default;
};

struct AdapterResponse {
  StatusCode status = StatusCode::ok;
  std::optional<std::string> text;
  std::optional<std::string> error_log;
  nlohmann::json metadata = nlohmann::json::object();  // always has model_id
  nlohmann::json extra = nlohmann::json::object();

  bool ok() const noexcept { return status == StatusCode::ok; }
  friend bool operator==(const AdapterResponse&, const AdapterResponse&) = default;
};

// Transport envelopes.

struct DatasetList {
  std::vector<DatasetCard> datasets;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const DatasetList&, const DatasetList&) = default;
};

struct SamplePage {
  std::string dataset_id;
  std::uint64_t offset = 0;
  std::uint64_t total = 0;
  std::vector<SampleEnvelope> samples;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const SamplePage&, const SamplePage&) = default;
};

struct OpenEvaluation {
  EvaluationId evaluation_id;
  std::string dataset_id;
  std::string dataset_version;
  std::string model_id;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const OpenEvaluation&, const OpenEvaluation&) = default;
};

struct Submission {
  EvaluationId evaluation_id;
  std::vector<PredictionRecord> predictions;
  bool final = true;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const Submission&, const Submission&) = default;
};

struct SubmissionAck {
  EvaluationId evaluation_id;
  std::uint64_t staged = 0;
  std::optional<EvaluationReport> report;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const SubmissionAck&, const SubmissionAck&) = default;
};

struct ErrorBody {
  StatusCode status = StatusCode::internal_error;
  std::string message;
  std::string path;
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const ErrorBody&, const ErrorBody&) = default;
};

}  // namespace dep
