#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "dep/benchmark.hpp"
#include "dep/codec.hpp"
#include "dep/metrics.hpp"

namespace dep {

namespace fs = std::filesystem;
using nlohmann::json;

std::string Diagnostic::str() const {
  std::string out = file.string();
  if (!path.empty()) out += " [" + path + "]";
  out += ": " + message;
  return out;
}

// ---------------------------------------------------------------------------
// PromptTemplate

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  std::string literal;
  for (std::size_t i = 0; i < text_.size(); ++i) {
    const char c = text_[i];
    if (c == '{' && i + 1 < text_.size() && text_[i + 1] == '{') {
      literal.push_back('{');
      ++i;
    } else if (c == '}' && i + 1 < text_.size() && text_[i + 1] == '}') {
      literal.push_back('}');
      ++i;
    } else if (c == '{') {
      auto close = text_.find('}', i + 1);
      if (close == std::string::npos) {
        throw Error(StatusCode::unprocessable, "unterminated placeholder in prompt template", "template");
      }
      std::string name = text_.substr(i + 1, close - i - 1);
      if (name.empty()) throw Error(StatusCode::unprocessable, "empty placeholder in prompt template", "template");
      if (!literal.empty()) pieces_.push_back({false, std::move(literal)});
      literal.clear();
      pieces_.push_back({true, name});
      if (std::find(names_.begin(), names_.end(), name) == names_.end()) names_.push_back(name);
      i = close;
    } else {
      literal.push_back(c);
    }
  }
  if (!literal.empty()) pieces_.push_back({false, std::move(literal)});
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& fields) const {
  std::string out;
  for (const auto& p : pieces_) {
    if (!p.placeholder) {
      out += p.value;
      continue;
    }
    auto it = fields.find(p.value);
    if (it != fields.end()) out += it->second;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::optional<std::string> slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return {};
  return dump_compact(v);
}

std::vector<std::string> gold_values(const json& v) {
  std::vector<std::string> out;
  if (v.is_array()) {
    for (const auto& e : v) out.push_back(scalar_text(e));
  } else {
    out.push_back(scalar_text(v));
  }
  return out;
}

// RFC 4180: quoted fields may contain commas, doubled quotes and newlines.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (quoted) throw Error(StatusCode::unprocessable, "unterminated quoted CSV field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<json> read_jsonl(const fs::path& file, const std::string& text, std::vector<Diagnostic>& diags) {
  std::vector<json> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      diags.push_back({StatusCode::unprocessable, file, "line " + std::to_string(lineno), "not a JSON object"});
      continue;
    }
    rows.push_back(std::move(j));
  }
  return rows;
}

std::vector<json> read_csv(const fs::path& file, const std::string& text, std::vector<Diagnostic>& diags) {
  std::vector<json> rows;
  std::vector<std::vector<std::string>> cells;
  try {
    cells = parse_csv(text);
  } catch (const Error& e) {
    diags.push_back({StatusCode::unprocessable, file, "", e.what()});
    return rows;
  }
  if (cells.empty()) return rows;
  const auto& header = cells.front();
  for (std::size_t r = 1; r < cells.size(); ++r) {
    if (cells[r].size() != header.size()) {
      diags.push_back({StatusCode::unprocessable, file, "row " + std::to_string(r + 1),
                       "expected " + std::to_string(header.size()) + " columns, found " +
                           std::to_string(cells[r].size())});
      continue;
    }
    json row = json::object();
    for (std::size_t c = 0; c < header.size(); ++c) row[header[c]] = cells[r][c];
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::string> string_list(const json& j, const char* key, const fs::path& file,
                                     std::vector<Diagnostic>& diags) {
  std::vector<std::string> out;
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return out;
  if (!it->is_array()) {
    diags.push_back({StatusCode::unprocessable, file, key, "expected an array of strings"});
    return out;
  }
  for (const auto& e : *it) {
    if (!e.is_string()) {
      diags.push_back({StatusCode::unprocessable, file, key, "expected an array of strings"});
      continue;
    }
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::string string_field(const json& j, const char* key, const fs::path& file, std::vector<Diagnostic>& diags,
                         const std::string& prefix = {}) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string()) {
    diags.push_back({StatusCode::unprocessable, file, prefix + key, "expected a string"});
    return {};
  }
  return it->get<std::string>();
}

}  // namespace

struct PackageLoader {
  static PackageCheck run(const fs::path& dir, const PackagePlugins& plugins);
};

PackageCheck PackageLoader::run(const fs::path& dir, const PackagePlugins& plugins) {
  PackageCheck out;
  auto& diags = out.diagnostics;
  BenchmarkPackage pkg;
  pkg.dir_ = dir;
  pkg.clock_ = plugins.clock ? plugins.clock : steady_clock();

  if (!fs::is_directory(dir)) {
    diags.push_back({StatusCode::not_found, dir, "", "not a directory"});
    return out;
  }

  // Card.
  const fs::path card_file = dir / kDatasetCardFile;
  if (auto text = slurp(card_file)) {
    try {
      pkg.card_ = from_json_value<DatasetCard>(parse_message_json(*text));
    } catch (const Error& e) {
      diags.push_back({e.status(), card_file, e.path(), e.what()});
      return out;
    }
  } else {
    diags.push_back({StatusCode::unprocessable, card_file, "", "missing dataset card"});
    return out;
  }
  const DatasetCard& card = pkg.card_;

  // Loader config.
  const fs::path loader_file = dir / kLoaderFile;
  LoaderConfig& cfg = pkg.loader_;
  cfg.format = card.data_format;
  json loader_json;
  if (auto text = slurp(loader_file)) {
    loader_json = json::parse(*text, nullptr, false);
    if (loader_json.is_discarded() || !loader_json.is_object()) {
      diags.push_back({StatusCode::unprocessable, loader_file, "$", "malformed JSON"});
      return out;
    }
  } else {
    diags.push_back({StatusCode::unprocessable, loader_file, "", "missing loader config"});
    return out;
  }
  if (auto fmt = string_field(loader_json, "format", loader_file, diags); !fmt.empty() &&
                                                                          fmt != to_string(card.data_format)) {
    diags.push_back({StatusCode::unprocessable, loader_file, "format",
                     "loader format '" + fmt + "' disagrees with card data_format '" +
                         std::string(to_string(card.data_format)) + "'"});
  }
  cfg.files = string_list(loader_json, "files", loader_file, diags);
  json fields = loader_json.value("fields", json::object());
  if (!fields.is_object()) {
    diags.push_back({StatusCode::unprocessable, loader_file, "fields", "expected an object"});
    fields = json::object();
  }
  cfg.id_field = string_field(fields, "id", loader_file, diags, "fields.");
  cfg.gold_field = string_field(fields, "gold", loader_file, diags, "fields.");
  cfg.subtask_field = string_field(fields, "subtask", loader_file, diags, "fields.");
  cfg.input_fields = string_list(fields, "inputs", loader_file, diags);
  cfg.metadata_fields = string_list(fields, "metadata", loader_file, diags);
  cfg.custom_loader = string_field(loader_json, "custom_loader", loader_file, diags);
  if (auto it = loader_json.find("per_sample_details"); it != loader_json.end()) {
    cfg.per_sample_details = it->is_boolean() && it->get<bool>();
  }
  try {
    cfg.extraction = ExtractionRule::from_json(loader_json.value("extraction", json()));
  } catch (const Error& e) {
    diags.push_back({e.status(), loader_file, e.path(), e.what()});
  }
  if (cfg.gold_field.empty()) {
    diags.push_back({StatusCode::unprocessable, loader_file, "fields.gold", "a gold field must be mapped"});
  }
  for (const auto& m : cfg.metadata_fields) {
    if (m == cfg.gold_field) {
      diags.push_back({StatusCode::unprocessable, loader_file, "fields.metadata",
                       "metadata field '" + m + "' is the gold field"});
    }
  }
  for (const auto& in : cfg.input_fields) {
    if (in == cfg.gold_field) {
      diags.push_back({StatusCode::unprocessable, loader_file, "fields.inputs",
                       "input field '" + in + "' is the gold field"});
    }
  }

  // Judge binding.
  if (auto it = loader_json.find("judge"); it != loader_json.end() && !it->is_null()) {
    const json& jb = *it;
    std::string card_ref = jb.is_object() ? string_field(jb, "model_card", loader_file, diags, "judge.") : "";
    std::string rubric = jb.is_object() ? string_field(jb, "rubric", loader_file, diags, "judge.") : "";
    if (card_ref.empty() || rubric.empty()) {
      diags.push_back({StatusCode::unprocessable, loader_file, "judge", "judge needs model_card and rubric"});
    } else {
      try {
        JudgeBinding binding;
        binding.model = load_model_card(dir / card_ref);
        binding.rubric = rubric;
        if (auto ma = jb.find("max_attempts"); ma != jb.end() && ma->is_number_unsigned()) {
          binding.max_attempts = std::max<std::uint32_t>(1, ma->get<std::uint32_t>());
        }
        cfg.judge = binding;
        const AdapterFactory& factory = plugins.judge_factory;
        pkg.judge_ = factory ? factory(binding.model) : make_adapter(binding.model, pkg.clock_);
      } catch (const Error& e) {
        diags.push_back({e.status(), dir / card_ref, e.path(), e.what()});
      }
    }
  }

  // Metric bindings.
  for (const auto& m : card.metrics) {
    if (metrics::is_builtin(m.name)) continue;
    if (m.name == "judge") {
      if (!loader_json.contains("judge")) {
        diags.push_back({StatusCode::unprocessable, card_file, "metrics", "metric 'judge' needs a judge binding"});
      }
      continue;
    }
    if (auto it = plugins.metrics.find(m.name); it != plugins.metrics.end()) {
      pkg.custom_metrics_.emplace(m.name, it->second);
      continue;
    }
    diags.push_back({StatusCode::unprocessable, card_file, "metrics", "unknown metric '" + m.name + "'"});
  }

  // Prompt template.
  const fs::path template_file = dir / (card.prompt_template_ref.empty() ? "prompt.tmpl" : card.prompt_template_ref);
  if (auto text = slurp(template_file)) {
    try {
      pkg.template_ = PromptTemplate(*text);
    } catch (const Error& e) {
      diags.push_back({e.status(), template_file, e.path(), e.what()});
    }
  } else {
    diags.push_back({StatusCode::unprocessable, template_file, "", "missing prompt template"});
  }

  // Data files.
  if (!cfg.files.empty()) {
    for (const auto& f : cfg.files) pkg.files_.push_back(dir / f);
  } else if (fs::is_directory(dir / "data")) {
    for (const auto& e : fs::directory_iterator(dir / "data")) {
      if (e.is_regular_file()) pkg.files_.push_back(e.path());
    }
    std::sort(pkg.files_.begin(), pkg.files_.end());
  }
  if (pkg.files_.empty() && card.data_format != DataFormat::custom) {
    diags.push_back({StatusCode::unprocessable, dir / "data", "", "no data files"});
  }

  std::vector<json> rows;
  if (card.data_format == DataFormat::custom) {
    auto it = plugins.loaders.find(cfg.custom_loader);
    if (cfg.custom_loader.empty() || it == plugins.loaders.end()) {
      diags.push_back({StatusCode::unprocessable, loader_file, "custom_loader",
                       "no custom loader registered under '" + cfg.custom_loader + "'"});
    } else {
      try {
        rows = it->second(dir, cfg);
      } catch (const std::exception& e) {
        diags.push_back({StatusCode::unprocessable, loader_file, "custom_loader", e.what()});
      }
    }
  } else {
    for (const auto& file : pkg.files_) {
      auto text = slurp(file);
      if (!text) {
        diags.push_back({StatusCode::unprocessable, file, "", "unreadable data file"});
        continue;
      }
      auto part = card.data_format == DataFormat::jsonl ? read_jsonl(file, *text, diags)
                                                        : read_csv(file, *text, diags);
      rows.insert(rows.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
  }

  // Rows -> client-safe sources + server-only golds.
  std::set<std::string> subtask_set;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& row = rows[i];
    const std::string where = "record " + std::to_string(i);
    BenchmarkPackage::Source src;
    GoldRecord gold;
    if (!cfg.id_field.empty()) {
      auto id = row.find(cfg.id_field);
      if (id == row.end() || scalar_text(*id).empty()) {
        diags.push_back({StatusCode::unprocessable, dir, where, "missing id field '" + cfg.id_field + "'"});
        continue;
      }
      src.sample_id = scalar_text(*id);
    } else {
      src.sample_id = std::to_string(i);
    }
    if (pkg.index_.count(src.sample_id)) {
      diags.push_back({StatusCode::unprocessable, dir, where, "duplicate sample id '" + src.sample_id + "'"});
      continue;
    }
    if (!cfg.gold_field.empty()) {
      auto g = row.find(cfg.gold_field);
      if (g == row.end()) {
        diags.push_back({StatusCode::unprocessable, dir, where, "missing gold field '" + cfg.gold_field + "'"});
        continue;
      }
      gold.gold = gold_values(*g);
    }
    for (auto it = row.begin(); it != row.end(); ++it) {
      const std::string& key = it.key();
      if (key == cfg.gold_field) continue;
      bool is_input = cfg.input_fields.empty()
                          ? (key != cfg.id_field && key != cfg.subtask_field)
                          : std::find(cfg.input_fields.begin(), cfg.input_fields.end(), key) != cfg.input_fields.end();
      if (is_input) src.inputs[key] = scalar_text(it.value());
      if (std::find(cfg.metadata_fields.begin(), cfg.metadata_fields.end(), key) != cfg.metadata_fields.end()) {
        src.metadata[key] = scalar_text(it.value());
      }
    }
    if (!cfg.subtask_field.empty()) {
      if (auto s = row.find(cfg.subtask_field); s != row.end() && !scalar_text(*s).empty()) {
        src.subtask = scalar_text(*s);
        subtask_set.insert(*src.subtask);
      }
    }
    gold.sample_id = src.sample_id;
    gold.subtask = src.subtask;
    pkg.index_.emplace(src.sample_id, pkg.samples_.size());
    pkg.samples_.push_back(std::move(src));
    pkg.golds_.push_back(std::move(gold));
  }
  pkg.subtasks_.assign(subtask_set.begin(), subtask_set.end());

  // Placeholders must resolve to mapped, non-gold inputs.
  std::set<std::string> available(cfg.input_fields.begin(), cfg.input_fields.end());
  if (cfg.input_fields.empty()) {
    for (const auto& s : pkg.samples_) {
      for (const auto& [k, v] : s.inputs) available.insert(k);
    }
  }
  for (const auto& name : pkg.template_.placeholders()) {
    if (name == cfg.gold_field) {
      diags.push_back({StatusCode::unprocessable, template_file, name,
                       "placeholder {" + name + "} refers to the gold field"});
    } else if (!available.count(name)) {
      diags.push_back({StatusCode::unprocessable, template_file, name,
                       "placeholder {" + name + "} is not mapped to an input field"});
    }
  }

  if (!card.subtasks.empty()) {
    for (const auto& s : pkg.subtasks_) {
      if (std::find(card.subtasks.begin(), card.subtasks.end(), s) == card.subtasks.end()) {
        diags.push_back({StatusCode::unprocessable, card_file, "subtasks", "subtask '" + s + "' is not declared"});
      }
    }
  }

  if (card.sample_count != pkg.samples_.size()) {
    diags.push_back({StatusCode::unprocessable, card_file, "sample_count",
                     "card declares " + std::to_string(card.sample_count) + " samples but " +
                         std::to_string(pkg.samples_.size()) + " were loaded"});
  }

  if (diags.empty()) out.package = std::move(pkg);
  return out;
}

PackageCheck check_package(const fs::path& dir, const PackagePlugins& plugins) {
  return PackageLoader::run(dir, plugins);
}

BenchmarkPackage load_package(const fs::path& dir, const PackagePlugins& plugins) {
  PackageCheck check = check_package(dir, plugins);
  if (check.package) return std::move(*check.package);
  std::string message = "invalid benchmark package " + dir.string() + ":";
  for (const auto& d : check.diagnostics) message += "\n  " + d.str();
  const Diagnostic& first = check.diagnostics.front();
  throw Error(first.status, message, first.path);
}

bool looks_like_package(const fs::path& dir) {
  std::error_code ec;
  return fs::is_regular_file(dir / kDatasetCardFile, ec);
}

// ---------------------------------------------------------------------------

bool BenchmarkPackage::contains(std::string_view sample_id) const { return index_.find(sample_id) != index_.end(); }

std::optional<std::size_t> BenchmarkPackage::index_of(std::string_view sample_id) const {
  auto it = index_.find(sample_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const MetricStep* BenchmarkPackage::custom_metric(const std::string& name) const {
  auto it = custom_metrics_.find(name);
  return it == custom_metrics_.end() ? nullptr : &it->second;
}

std::vector<SampleEnvelope> BenchmarkPackage::render_samples(std::size_t offset, std::size_t limit) const {
  std::vector<SampleEnvelope> out;
  if (offset >= samples_.size()) return out;
  const std::size_t end = std::min(samples_.size(), offset + std::min(limit, samples_.size() - offset));
  out.reserve(end - offset);
  for (std::size_t i = offset; i < end; ++i) {
    const Source& s = samples_[i];
    SampleEnvelope env;
    env.sample_id = s.sample_id;
    env.prompt = template_.render(s.inputs);
    env.subtask = s.subtask;
    env.metadata = s.metadata;
    out.push_back(std::move(env));
  }
  return out;
}

}  // namespace dep
