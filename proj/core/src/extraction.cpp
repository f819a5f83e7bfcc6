#include <regex>

#include "dep/benchmark.hpp"

namespace dep {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool is_alnum_ascii(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

[[noreturn]] void rule_error(const std::string& path, const std::string& what) {
  throw Error(StatusCode::unprocessable, what + " at '" + path + "'", path);
}

}  // namespace

ExtractionRule ExtractionRule::from_json(const json& j, const std::string& path) {
  ExtractionRule rule;
  if (j.is_null()) return rule;
  if (!j.is_object()) rule_error(path, "expected an object");
  auto kind = j.find("kind");
  if (kind == j.end() || !kind->is_string()) rule_error(path + ".kind", "missing extraction kind");
  const std::string k = kind->get<std::string>();
  auto string_param = [&](const char* key, bool required) -> std::string {
    auto it = j.find(key);
    if (it == j.end()) {
      if (required) rule_error(path + "." + key, "missing required field");
      return {};
    }
    if (!it->is_string()) rule_error(path + "." + key, "expected a string");
    return it->get<std::string>();
  };
  if (k == "verbatim") {
    rule.kind = Kind::verbatim;
  } else if (k == "regex-capture") {
    rule.kind = Kind::regex_capture;
    rule.pattern = string_param("pattern", true);
    try {
      std::regex probe(rule.pattern);
    } catch (const std::regex_error& e) {
      rule_error(path + ".pattern", std::string("invalid regex: ") + e.what());
    }
  } else if (k == "last-choice-letter") {
    rule.kind = Kind::last_choice_letter;
    if (auto a = string_param("alphabet", false); !a.empty()) rule.alphabet = a;
  } else if (k == "after-marker") {
    rule.kind = Kind::after_marker;
    rule.marker = string_param("marker", true);
    if (rule.marker.empty()) rule_error(path + ".marker", "must not be empty");
  } else {
    rule_error(path + ".kind", "unknown extraction kind '" + k + "'");
  }
  return rule;
}

std::optional<std::string> extract_answer(const ExtractionRule& rule, std::string_view raw) {
  switch (rule.kind) {
    case ExtractionRule::Kind::verbatim:
      return std::string(trim(raw));

    case ExtractionRule::Kind::regex_capture: {
      const std::regex re(rule.pattern);
      std::optional<std::string> last;
      const std::string text(raw);
      for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        last = m.size() > 1 && m[1].matched ? m[1].str() : m[0].str();
      }
      if (!last) return std::nullopt;
      return std::string(trim(*last));
    }

    case ExtractionRule::Kind::last_choice_letter: {
      for (std::size_t i = raw.size(); i-- > 0;) {
        const char c = raw[i];
        if (rule.alphabet.find(c) == std::string::npos) continue;
        const bool left_clear = i == 0 || !is_alnum_ascii(raw[i - 1]);
        const bool right_clear = i + 1 == raw.size() || !is_alnum_ascii(raw[i + 1]);
        if (left_clear && right_clear) return std::string(1, c);
      }
      return std::nullopt;
    }

    case ExtractionRule::Kind::after_marker: {
      auto pos = raw.rfind(rule.marker);
      if (pos == std::string_view::npos) return std::nullopt;
      auto rest = trim(raw.substr(pos + rule.marker.size()));
      if (rest.empty()) return std::nullopt;
      return std::string(rest);
    }
  }
  return std::nullopt;
}

}  // namespace dep
