#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <set>

#include <spdlog/spdlog.h>

#include "dep/benchmark.hpp"
#include "dep/metrics.hpp"
#include "dep/rate.hpp"

namespace dep {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::optional<double> parse_judge_score(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size()) {
    const bool digit = std::isdigit(static_cast<unsigned char>(reply[i])) != 0;
    const bool dot_digit = reply[i] == '.' && i + 1 < reply.size() &&
                           std::isdigit(static_cast<unsigned char>(reply[i + 1]));
    if (!digit && !dot_digit) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
    if (j < reply.size() && reply[j] == '.' && j + 1 < reply.size() &&
        std::isdigit(static_cast<unsigned char>(reply[j + 1]))) {
      ++j;
      while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
    }
    const bool negative = i > 0 && reply[i - 1] == '-';
    const std::string token(reply.substr(i, j - i));
    const double value = std::strtod(token.c_str(), nullptr);
    if (!negative && value >= 0.0 && value <= 1.0) return value;
    i = j;
  }
  return std::nullopt;
}

JudgeOutcome judge_hook(const BenchmarkPackage& pkg, std::string_view prediction, const GoldRecord& gold) {
  JudgeOutcome out;
  const auto& binding = pkg.loader().judge;
  ModelAdapter* judge = pkg.judge();
  if (!binding || !judge) {
    out.error = "no judge bound to this benchmark";
    return out;
  }
  const std::string gold_text = gold.gold.empty() ? std::string() : gold.gold.front();
  InferenceRequest req;
  req.prompt = PromptTemplate(binding->rubric).render({{"prediction", std::string(prediction)}, {"gold", gold_text}});
  req.request_id = "judge-" + gold.sample_id;

  BackoffPolicy backoff;
  backoff.base = std::chrono::milliseconds(100);
  std::mt19937_64 rng(std::hash<std::string>{}(gold.sample_id));
  AdapterResponse resp;
  for (std::uint32_t attempt = 1; attempt <= binding->max_attempts; ++attempt) {
    resp = judge->generate(req);
    if (resp.ok() || classify_status(resp.status) == RetryClass::never) break;
    if (attempt < binding->max_attempts) pkg.clock().sleep_for(backoff_delay(backoff, attempt, rng));
  }
  if (!resp.ok()) {
    out.error = "judge failed with status " + std::to_string(static_cast<int>(resp.status));
    return out;
  }
  if (auto score = parse_judge_score(*resp.text)) {
    out.score = *score;
  } else {
    out.warning = "unparsable judge reply for sample " + gold.sample_id;
    spdlog::warn("{}", *out.warning);
  }
  return out;
}

namespace {

struct Accumulator {
  double sum = 0.0;
  std::size_t n = 0;
  double mean() const { return n == 0 ? 0.0 : sum / static_cast<double>(n); }
};

}  // namespace

EvaluationReport evaluate_submission(const BenchmarkPackage& pkg, const EvaluationId& evaluation_id,
                                     const std::string& model_id, const std::vector<PredictionRecord>& predictions) {
  // Validate the submission before scoring anything.
  std::vector<const PredictionRecord*> by_index(pkg.size(), nullptr);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    const std::string path = "predictions[" + std::to_string(i) + "].sample_id";
    auto idx = pkg.index_of(p.sample_id);
    if (!idx) throw Error(StatusCode::unprocessable, "unknown sample_id '" + p.sample_id + "'", path);
    if (by_index[*idx]) throw Error(StatusCode::unprocessable, "duplicate sample_id '" + p.sample_id + "'", path);
    by_index[*idx] = &p;
  }

  const DatasetCard& card = pkg.card();
  EvaluationReport rep;
  rep.evaluation_id = evaluation_id;
  rep.dataset_id = card.dataset_id;
  rep.dataset_version = card.version;
  rep.model_id = model_id;
  rep.counts.served = pkg.size();
  rep.counts.submitted = predictions.size();

  std::map<std::string, Accumulator> overall;
  std::map<std::string, std::map<std::string, Accumulator>> per_subtask;
  std::vector<SampleScore> details;
  std::set<std::string> notes;

  for (std::size_t i = 0; i < pkg.size(); ++i) {
    const GoldRecord& gold = pkg.gold_at(i);
    const PredictionRecord* pred = by_index[i];
    SampleScore detail;
    detail.sample_id = gold.sample_id;

    std::optional<std::string> extracted;
    const bool scorable = pred && pred->status == StatusCode::ok;
    bool judge_failed = false;
    if (!pred) {
      detail.error = "not submitted";
    } else if (!scorable) {
      detail.error = "generation failed with status " + std::to_string(static_cast<int>(pred->status));
    } else {
      extracted = extract_answer(pkg.loader().extraction, pred->raw_output);
    }

    for (const auto& binding : card.metrics) {
      double score = 0.0;
      if (scorable) {
        const NormalizationSpec norm = binding.normalize.value_or(metrics::default_normalization(binding.name));
        if (binding.name == metrics::kAccuracy) {
          score = extracted && !gold.gold.empty() ? metrics::accuracy_score(*extracted, gold.gold.front(), norm) : 0.0;
        } else if (binding.name == metrics::kExactMatch) {
          score = extracted ? metrics::exact_match_score(*extracted, gold.gold, norm) : 0.0;
        } else if (binding.name == metrics::kTokenF1) {
          score = extracted ? metrics::token_f1_score(*extracted, gold.gold, norm) : 0.0;
        } else if (binding.name == "judge") {
          if (extracted) {
            JudgeOutcome j = judge_hook(pkg, *extracted, gold);
            score = j.score;
            if (j.warning) notes.insert(*j.warning);
            if (j.error) {
              detail.error = *j.error;
              judge_failed = true;
            }
          }
        } else if (const MetricStep* step = pkg.custom_metric(binding.name)) {
          score = std::clamp((*step)(extracted, gold), 0.0, 1.0);
        }
      }
      detail.scores[binding.name] = score;
      overall[binding.name].sum += score;
      ++overall[binding.name].n;
      if (gold.subtask) {
        auto& acc = per_subtask[*gold.subtask][binding.name];
        acc.sum += score;
        ++acc.n;
      }
    }
    if (scorable && !judge_failed) ++rep.counts.scored;
    details.push_back(std::move(detail));
  }

  for (const auto& binding : card.metrics) rep.overall[binding.name] = overall[binding.name].mean();
  for (const auto& [sub, metrics_for_sub] : per_subtask) {
    for (const auto& [name, acc] : metrics_for_sub) rep.per_subtask[sub][name] = acc.mean();
  }
  if (pkg.size() == 0) notes.insert("no samples");
  rep.notes.assign(notes.begin(), notes.end());
  if (pkg.loader().per_sample_details) rep.per_sample = std::move(details);
  rep.generated_at = utc_timestamp();
  return rep;
}

}  // namespace dep
