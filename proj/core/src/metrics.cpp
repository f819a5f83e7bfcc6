#include "dep/metrics.hpp"

#include <algorithm>
#include <unordered_map>

namespace dep::metrics {

namespace {

bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Non-ASCII bytes count as word characters so "aé" is not split into an article.
bool is_word_char(unsigned char c) {
  return c >= 128 || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Printable ASCII that is neither alphanumeric nor space; '_' included.
bool is_ascii_punct(unsigned char c) {
  const bool alnum = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
  return c > 32 && c < 127 && !alnum;
}

bool is_article(std::string_view w) { return w == "a" || w == "an" || w == "the"; }

std::string drop_articles(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  std::size_t i = 0;
  while (i < in.size()) {
    if (!is_word_char(static_cast<unsigned char>(in[i]))) {
      out.push_back(in[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < in.size() && is_word_char(static_cast<unsigned char>(in[j]))) ++j;
    std::string_view word = in.substr(i, j - i);
    if (is_article(word)) {
      out.push_back(' ');
    } else {
      out.append(word);
    }
    i = j;
  }
  return out;
}

std::string collapse(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  bool pending_space = false;
  for (char ch : in) {
    if (is_ascii_space(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(ch);
  }
  return out;
}

template <typename Pair, typename Score>
MetricValue mean_over(std::span<const Pair> pairs, Score&& score) {
  if (pairs.empty()) return {0.0, true};
  double total = 0.0;
  for (const auto& p : pairs) total += score(p);
  return {total / static_cast<double>(pairs.size()), false};
}

double f1_single(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::unordered_map<std::string_view, int> counts;
  for (const auto& t : gold) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

std::string normalize(std::string_view text, const NormalizationSpec& spec) {
  std::string s(text);
  if (spec.lowercase) {
    for (char& c : s) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
  }
  if (spec.strip_punctuation) {
    std::erase_if(s, [](char c) { return is_ascii_punct(static_cast<unsigned char>(c)); });
  }
  if (spec.strip_articles) s = drop_articles(s);
  if (spec.collapse_whitespace) s = collapse(s);
  return s;
}

std::vector<std::string> tokenize(std::string_view normalized) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < normalized.size()) {
    while (i < normalized.size() && is_ascii_space(static_cast<unsigned char>(normalized[i]))) ++i;
    std::size_t j = i;
    while (j < normalized.size() && !is_ascii_space(static_cast<unsigned char>(normalized[j]))) ++j;
    if (j > i) out.emplace_back(normalized.substr(i, j - i));
    i = j;
  }
  return out;
}

double accuracy_score(std::string_view prediction, std::string_view gold, const NormalizationSpec& norm) {
  return normalize(prediction, norm) == normalize(gold, norm) ? 1.0 : 0.0;
}

double exact_match_score(std::string_view prediction, std::span<const std::string> golds,
                         const NormalizationSpec& norm) {
  const std::string p = normalize(prediction, norm);
  for (const auto& g : golds) {
    if (normalize(g, norm) == p) return 1.0;
  }
  return 0.0;
}

double token_f1_score(std::string_view prediction, std::span<const std::string> golds,
                      const NormalizationSpec& norm) {
  const auto pred_tokens = tokenize(normalize(prediction, norm));
  double best = 0.0;
  for (const auto& g : golds) {
    best = std::max(best, f1_single(pred_tokens, tokenize(normalize(g, norm))));
  }
  return best;
}

MetricValue accuracy(std::span<const AnswerPair> pairs, const NormalizationSpec& norm) {
  return mean_over(pairs, [&](const AnswerPair& p) { return accuracy_score(p.prediction, p.gold, norm); });
}

MetricValue exact_match(std::span<const MultiAnswerPair> pairs, const NormalizationSpec& norm) {
  return mean_over(pairs,
                   [&](const MultiAnswerPair& p) { return exact_match_score(p.prediction, p.golds, norm); });
}

MetricValue token_f1(std::span<const MultiAnswerPair> pairs, const NormalizationSpec& norm) {
  return mean_over(pairs,
                   [&](const MultiAnswerPair& p) { return token_f1_score(p.prediction, p.golds, norm); });
}

bool is_builtin(std::string_view name) noexcept {
  return name == kAccuracy || name == kExactMatch || name == kTokenF1;
}

NormalizationSpec default_normalization(std::string_view metric_name) {
  NormalizationSpec spec;
  if (metric_name == kAccuracy) spec.strip_articles = false;
  return spec;
}

}  // namespace dep::metrics
