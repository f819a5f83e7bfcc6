#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dep/adapter.hpp"
#include "dep/benchmark.hpp"
#include "dep/clock.hpp"
#include "dep/journal.hpp"
#include "dep/transport.hpp"

namespace dep {

using EndpointFactory = std::function<std::unique_ptr<BenchmarkEndpoint>(const ServerBinding&)>;

struct OrchestratorOptions {
  std::filesystem::path home;  // state root; empty means default_home()
  std::shared_ptr<Clock> clock = steady_clock();
  AdapterFactory adapter_factory;    // default: make_adapter on `clock`
  EndpointFactory endpoint_factory;  // default: bind_endpoint with token and wire_log
  std::optional<std::string> token;  // bearer token for remote bindings, never persisted
  std::shared_ptr<WireLog> wire_log;
  ServiceOptions service_options;    // for local bindings
  std::uint64_t seed = 0;            // backoff jitter; 0 draws from std::random_device
};

struct TaskSnapshot {
  EvaluationId evaluation_id;
  std::string model_id;
  std::string dataset_id;
  std::string dataset_version;
  LifecycleState state = LifecycleState::paused;
  Progress progress;
  std::uint64_t total = 0;
  std::uint64_t rate_event_count = 0;
  std::vector<RateEvent> recent_rate_events;
  std::optional<std::string> last_error;
  std::string created_at;
  std::string updated_at;

  nlohmann::json to_json() const;
};

struct RunControl {
  /// Polled by the scheduler; returning true pauses after in-flight calls finish.
  std::function<bool()> should_stop;
  /// Called after each journaled sample with the running progress.
  std::function<void(const Progress&)> on_progress;
};

struct RunOutcome {
  TaskSnapshot snapshot;
  std::optional<EvaluationReport> report;
  /// Elapsed time on the orchestrator clock for this invocation.
  Duration elapsed{0};
};

// Client-side coordination: lifecycle, paged fetch, rate-limited dispatch,
// journaling and resume. State lives under <home>/evals/<evaluation_id>/.
class Orchestrator {
 public:
  explicit Orchestrator(OrchestratorOptions options = {});

  /// $DEP_HOME, else $HOME/.dep, else ./.dep
  static std::filesystem::path default_home();

  const std::filesystem::path& home() const noexcept { return home_; }
  std::filesystem::path eval_dir(const EvaluationId& id) const;

  /// Persists a paused task. The dataset must be listed by the binding; an
  /// empty version pins the one currently served.
  TaskSnapshot create_evaluation(const ModelCard& model, const std::string& dataset_id, const std::string& version,
                                 const ServerBinding& binding, const RunConfig& config);

  /// Runs until completion, failure or a stop request. A completed task
  /// returns its stored report without side effects.
  RunOutcome run(const EvaluationId& id, const RunControl& control = {});
  RunOutcome resume(const EvaluationId& id, const RunControl& control = {});

  /// Asks a running task (possibly in another process) to pause.
  void request_pause(const EvaluationId& id);

  TaskSnapshot status(const EvaluationId& id) const;
  std::vector<TaskSnapshot> list() const;
  TaskManifest manifest(const EvaluationId& id) const;
  std::optional<EvaluationReport> report(const EvaluationId& id) const;
  /// Raw bytes of report.json, as received from the server.
  std::optional<std::string> report_bytes(const EvaluationId& id) const;

  /// Reports of every completed task, filtered when the filters are non-empty.
  std::vector<EvaluationReport> completed_reports(const std::vector<EvaluationId>& ids = {},
                                                  const std::string& dataset_id = {},
                                                  const std::string& model_id = {}) const;

 private:
  ReplayResult load(const EvaluationId& id) const;
  std::unique_ptr<BenchmarkEndpoint> connect(const ServerBinding& binding) const;

  OrchestratorOptions options_;
  std::filesystem::path home_;
};

TaskSnapshot snapshot_of(const TaskState& state);

inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kJournalFile = "journal.ndjson";
inline constexpr std::string_view kReportFile = "report.json";
inline constexpr std::string_view kPauseRequestFile = "pause.request";

// Discovery across model and benchmark roots.

struct DatasetDiscovery {
  std::vector<DatasetCard> datasets;  // sorted by dataset_id
  std::map<std::string, std::filesystem::path> sources;
  std::vector<DiscoveryWarning> warnings;
};

/// Every directory holding a dataset card under `dirs`, validated with
/// check_package. Invalid packages and duplicate ids become warnings.
DatasetDiscovery discover_datasets(const std::vector<std::filesystem::path>& dirs, const PackagePlugins& plugins = {});

struct Discovery {
  std::vector<ModelCard> models;
  std::vector<DatasetCard> datasets;
  std::vector<DiscoveryWarning> warnings;
};

Discovery discover(const std::vector<std::filesystem::path>& model_dirs,
                   const std::vector<std::filesystem::path>& benchmark_dirs, const PackagePlugins& plugins = {});

// Leaderboard.

struct LeaderboardColumn {
  std::string dataset_id;
  std::string metric;

  std::string label() const { return dataset_id + "/" + metric; }
  friend auto operator<=>(const LeaderboardColumn&, const LeaderboardColumn&) = default;
};

struct LeaderboardRow {
  std::string model_id;
  std::vector<std::optional<double>> cells;  // aligned with Leaderboard::columns
};

struct Leaderboard {
  std::vector<LeaderboardColumn> columns;  // sorted by (dataset_id, metric)
  std::vector<LeaderboardRow> rows;
  std::optional<LeaderboardColumn> sort_column;

  nlohmann::json to_json() const;
};

/// Rows are models, columns are (dataset, metric) pairs from the reports'
/// overall scores. Rows sort descending on `sort_by` (default: the first
/// column), missing cells last, ties by model_id. When one model has several
/// reports for a dataset the most recent one counts.
Leaderboard aggregate(const std::vector<EvaluationReport>& reports,
                      const std::optional<LeaderboardColumn>& sort_by = std::nullopt);

}  // namespace dep
