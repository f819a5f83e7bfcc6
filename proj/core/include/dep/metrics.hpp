#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dep/protocol.hpp"

namespace dep::metrics {

// Normalization steps, applied in this order: lowercase, punctuation removal,
// article removal, whitespace collapse. Only ASCII is case-folded or treated
// as punctuation; other bytes pass through untouched.
std::string normalize(std::string_view text, const NormalizationSpec& spec);

/// Whitespace split; empty tokens are dropped.
std::vector<std::string> tokenize(std::string_view normalized);

struct AnswerPair {
  std::string prediction;
  std::string gold;
};

struct MultiAnswerPair {
  std::string prediction;
  std::vector<std::string> golds;
};

struct MetricValue {
  double score = 0.0;
  bool empty_input = false;  // set when there was nothing to average
};

// Per-pair scores.
double accuracy_score(std::string_view prediction, std::string_view gold, const NormalizationSpec& norm);
double exact_match_score(std::string_view prediction, std::span<const std::string> golds,
                         const NormalizationSpec& norm);
/// Multiset token overlap F1, best over the acceptable golds.
double token_f1_score(std::string_view prediction, std::span<const std::string> golds,
                      const NormalizationSpec& norm);

// Means over a list; empty input yields 0 with empty_input set.
MetricValue accuracy(std::span<const AnswerPair> pairs, const NormalizationSpec& norm = {});
MetricValue exact_match(std::span<const MultiAnswerPair> pairs, const NormalizationSpec& norm = {});
MetricValue token_f1(std::span<const MultiAnswerPair> pairs, const NormalizationSpec& norm = {});

inline constexpr std::string_view kAccuracy = "acc";
inline constexpr std::string_view kExactMatch = "em";
inline constexpr std::string_view kTokenF1 = "f1";

bool is_builtin(std::string_view name) noexcept;

/// Normalization a built-in binding uses when the card gives no override.
/// "acc" keeps articles so single-letter choices such as "A" survive.
NormalizationSpec default_normalization(std::string_view metric_name);

}  // namespace dep::metrics
