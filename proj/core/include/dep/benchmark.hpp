#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dep/adapter.hpp"
#include "dep/protocol.hpp"

namespace dep {

// Server-side answer key. There is deliberately no codec for this type: it
// cannot be placed into any client-bound message.
struct GoldRecord {
  std::string sample_id;
  std::vector<std::string> gold;  // one or more acceptable answers
  std::optional<std::string> subtask;
};

struct ExtractionRule {
  enum class Kind { verbatim, regex_capture, last_choice_letter, after_marker };

  Kind kind = Kind::verbatim;
  std::string pattern;           // regex-capture
  std::string marker;            // after-marker
  std::string alphabet = "ABCD"; // last-choice-letter

  static ExtractionRule from_json(const nlohmann::json& j, const std::string& path = "extraction");
};

/// nullopt is the explicit "unparsed" value; it scores as wrong.
std::optional<std::string> extract_answer(const ExtractionRule& rule, std::string_view raw_output);

struct JudgeBinding {
  ModelCard model;
  std::string rubric;  // placeholders {prediction} and {gold}
  std::uint32_t max_attempts = 3;
};

struct LoaderConfig {
  DataFormat format = DataFormat::jsonl;
  std::vector<std::string> files;  // relative to the package dir; empty = every data/ file
  std::string id_field;            // empty = ordinal position
  std::vector<std::string> input_fields;
  std::string gold_field;
  std::string subtask_field;
  std::vector<std::string> metadata_fields;
  std::string custom_loader;
  bool per_sample_details = false;
  ExtractionRule extraction;
  std::optional<JudgeBinding> judge;
};

/// Rows from a custom loader: one JSON object per source record.
using CustomLoader =
    std::function<std::vector<nlohmann::json>(const std::filesystem::path& package_dir, const LoaderConfig&)>;

/// Per-sample scoring step shared by built-in and custom metrics.
using MetricStep = std::function<double(const std::optional<std::string>& extracted, const GoldRecord& gold)>;

struct PackagePlugins {
  std::map<std::string, CustomLoader> loaders;
  std::map<std::string, MetricStep> metrics;
  AdapterFactory judge_factory;  // defaults to make_adapter
  std::shared_ptr<Clock> clock;  // judge retry backoff; defaults to the steady clock
};

struct Diagnostic {
  StatusCode status = StatusCode::unprocessable;
  std::filesystem::path file;
  std::string path;
  std::string message;

  std::string str() const;
};

// Text with {name} placeholders; "{{" and "}}" are literal braces.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  explicit PromptTemplate(std::string text);

  const std::string& text() const noexcept { return text_; }
  const std::vector<std::string>& placeholders() const noexcept { return names_; }
  std::string render(const std::map<std::string, std::string>& fields) const;

 private:
  struct Piece {
    bool placeholder;
    std::string value;
  };
  std::string text_;
  std::vector<Piece> pieces_;
  std::vector<std::string> names_;
};

class BenchmarkPackage {
 public:
  const DatasetCard& card() const noexcept { return card_; }
  const std::filesystem::path& directory() const noexcept { return dir_; }
  const std::vector<std::filesystem::path>& data_files() const noexcept { return files_; }
  const LoaderConfig& loader() const noexcept { return loader_; }
  const PromptTemplate& prompt_template() const noexcept { return template_; }

  std::size_t size() const noexcept { return samples_.size(); }
  /// Distinct subtask values present in the data, sorted.
  const std::vector<std::string>& subtasks() const noexcept { return subtasks_; }
  bool contains(std::string_view sample_id) const;

  /// Offsets past the end yield an empty list.
  std::vector<SampleEnvelope> render_samples(std::size_t offset, std::size_t limit) const;

  const GoldRecord& gold_at(std::size_t index) const { return golds_.at(index); }
  const std::string& sample_id_at(std::size_t index) const { return samples_.at(index).sample_id; }
  std::optional<std::size_t> index_of(std::string_view sample_id) const;

  ModelAdapter* judge() const noexcept { return judge_.get(); }
  const MetricStep* custom_metric(const std::string& name) const;
  Clock& clock() const noexcept { return *clock_; }

 private:
  friend struct PackageLoader;

  struct Source {
    std::string sample_id;
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> metadata;
    std::optional<std::string> subtask;
  };

  DatasetCard card_;
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> files_;
  LoaderConfig loader_;
  PromptTemplate template_;
  std::vector<Source> samples_;
  std::vector<GoldRecord> golds_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::string> subtasks_;
  std::shared_ptr<ModelAdapter> judge_;
  std::map<std::string, MetricStep> custom_metrics_;
  std::shared_ptr<Clock> clock_;
};

inline constexpr std::string_view kDatasetCardFile = "dataset.card.json";
inline constexpr std::string_view kLoaderFile = "loader.json";

struct PackageCheck {
  std::optional<BenchmarkPackage> package;
  std::vector<Diagnostic> diagnostics;
};

/// Runs every load-time validation and collects all violations.
PackageCheck check_package(const std::filesystem::path& dir, const PackagePlugins& plugins = {});

/// Throws Error carrying the first violation's status; the message lists
/// all of them.
BenchmarkPackage load_package(const std::filesystem::path& dir, const PackagePlugins& plugins = {});

bool looks_like_package(const std::filesystem::path& dir);

// Evaluation.

struct JudgeOutcome {
  double score = 0.0;
  std::optional<std::string> warning;  // unparsable reply
  std::optional<std::string> error;    // endpoint failed after retries
};

JudgeOutcome judge_hook(const BenchmarkPackage& pkg, std::string_view prediction, const GoldRecord& gold);

/// First number in [0,1] appearing in the reply.
std::optional<double> parse_judge_score(std::string_view reply);

/// Pure in (package, predictions) apart from generated_at. Served samples
/// that were never submitted score 0.
EvaluationReport evaluate_submission(const BenchmarkPackage& pkg, const EvaluationId& evaluation_id,
                                     const std::string& model_id, const std::vector<PredictionRecord>& predictions);

std::string utc_timestamp();

}  // namespace dep
