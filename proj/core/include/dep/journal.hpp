#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dep/protocol.hpp"
#include "dep/rate.hpp"
#include "dep/transport.hpp"

namespace dep {

struct RunConfig {
  std::uint32_t concurrency = 8;      // initial and maximum in-flight calls
  double rate = 20.0;                 // token refill per second
  std::uint32_t bucket_capacity = 10;
  std::uint64_t submit_every = 0;     // 0: one final submission
  std::uint64_t page_size = kDefaultSampleLimit;
  GovernorConfig governor;            // initial/max limits follow `concurrency`
  BackoffPolicy backoff;
  nlohmann::json generation = nlohmann::json::object();

  /// Throws Error(unprocessable) naming the offending field.
  void validate() const;
  GovernorConfig effective_governor() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

struct TaskManifest {
  EvaluationId evaluation_id;
  ModelCard model;
  std::string dataset_id;
  std::string dataset_version;
  ServerBinding binding;
  RunConfig config;
  std::string created_at;

  nlohmann::json to_json() const;
  static TaskManifest from_json(const nlohmann::json& j);
};

struct Progress {
  std::uint64_t fetched = 0;
  std::uint64_t generated = 0;
  std::uint64_t submitted = 0;

  friend bool operator==(const Progress&, const Progress&) = default;
};

struct RateEvent {
  int status = 429;
  std::string sample_id;
  std::uint32_t limit_before = 0;
  std::uint32_t limit_after = 0;
  std::int64_t backoff_ms = 0;
  std::string at;

  friend bool operator==(const RateEvent&, const RateEvent&) = default;
};

// Journal entry kinds, one JSON object per line with a "kind" field.
namespace journal_kind {
inline constexpr std::string_view task_created = "task-created";
inline constexpr std::string_view samples_fetched = "samples-fetched";
inline constexpr std::string_view sample_generated = "sample-generated";
inline constexpr std::string_view state_changed = "state-changed";
inline constexpr std::string_view rate_event = "rate-event";
inline constexpr std::string_view submitted = "submitted";
inline constexpr std::string_view report_received = "report-received";
}  // namespace journal_kind

// Everything a journal replay reconstructs.
struct TaskState {
  static constexpr std::size_t kRecentRateEvents = 32;

  std::optional<TaskManifest> manifest;
  LifecycleState state = LifecycleState::paused;
  Progress progress;
  std::uint64_t total = 0;  // dataset size once known
  std::map<std::string, PredictionRecord> predictions;
  std::vector<std::string> order;  // sample_ids in journal order
  std::uint64_t rate_event_count = 0;
  std::deque<RateEvent> recent_rate_events;
  std::optional<std::string> last_error;
  std::optional<EvaluationReport> report;
  std::string updated_at;
  std::uint64_t lines = 0;

  /// Applies one entry; `line` is only used in error messages.
  void apply(const nlohmann::json& entry, std::uint64_t line);
};

struct ReplayResult {
  TaskState state;
  bool partial_tail = false;        // a trailing line without newline was ignored
  std::uint64_t valid_bytes = 0;    // length of the well-formed prefix
  std::optional<std::uint64_t> corrupt_line;
};

/// Folds a journal file. A malformed complete line sets corrupt_line and
/// leaves the state failed with last_error naming the line.
ReplayResult replay_journal(const std::filesystem::path& file);

// Single-writer append handle.
class JournalWriter {
 public:
  /// Opens for append; a partial trailing line is truncated away first.
  explicit JournalWriter(const std::filesystem::path& file);
  ~JournalWriter();

  JournalWriter(const JournalWriter&) = delete;
  JournalWriter& operator=(const JournalWriter&) = delete;

  /// Writes one line; with `sync` the write is flushed to stable storage.
  void append(const nlohmann::json& entry, bool sync = false);

 private:
  int fd_ = -1;
  std::filesystem::path file_;
};

nlohmann::json make_entry(std::string_view kind, nlohmann::json fields = nlohmann::json::object());

}  // namespace dep
