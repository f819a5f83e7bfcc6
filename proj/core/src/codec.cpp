#include "dep/codec.hpp"

#include <initializer_list>
#include <set>

namespace dep {

using nlohmann::json;

namespace {

std::string join_path(const std::string& base, std::string_view key) {
  if (base.empty()) return std::string(key);
  return base + "." + std::string(key);
}

std::string index_path(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw Error(StatusCode::unprocessable, what + " at '" + path + "'", path);
}

// Walks one JSON object, recording consumed keys so the remainder can be
// kept as overflow.
class FieldReader {
 public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "$" : path_, "expected an object");
  }

  const std::string& path() const { return path_; }
  std::string at(std::string_view key) const { return join_path(path_, key); }

  const json* find(std::string_view key) {
    seen_.insert(std::string(key));
    auto it = j_.find(std::string(key));
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  const json& require(std::string_view key) {
    const json* v = find(key);
    if (!v) fail(at(key), "missing required field");
    return *v;
  }

  std::string str(std::string_view key) {
    const json& v = require(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    return v.get<std::string>();
  }

  std::string non_empty_str(std::string_view key) {
    std::string s = str(key);
    if (s.empty()) fail(at(key), "must not be empty");
    return s;
  }

  std::string str_or(std::string_view key, std::string fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) fail(at(key), "expected a string");
    return v->get<std::string>();
  }

  std::optional<std::string> opt_str(std::string_view key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) fail(at(key), "expected a string");
    return v->get<std::string>();
  }

  std::int64_t integer(std::string_view key, std::optional<std::int64_t> fallback = {}) {
    const json* v = find(key);
    if (!v) {
      if (fallback) return *fallback;
      fail(at(key), "missing required field");
    }
    if (!v->is_number_integer()) fail(at(key), "expected an integer");
    return v->get<std::int64_t>();
  }

  std::uint64_t unsigned_integer(std::string_view key, std::optional<std::uint64_t> fallback = {}) {
    const json* v = find(key);
    if (!v) {
      if (fallback) return *fallback;
      fail(at(key), "missing required field");
    }
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                    v->get<std::int64_t>() < 0)) {
      fail(at(key), "expected a non-negative integer");
    }
    return v->get<std::uint64_t>();
  }

  bool boolean(std::string_view key, bool fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_boolean()) fail(at(key), "expected a boolean");
    return v->get<bool>();
  }

  std::vector<std::string> strings(std::string_view key, bool required = false) {
    const json* v = required ? &require(key) : find(key);
    std::vector<std::string> out;
    if (!v) return out;
    if (!v->is_array()) fail(at(key), "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_string()) fail(index_path(at(key), i), "expected a string");
      out.push_back((*v)[i].get<std::string>());
    }
    return out;
  }

  json object_or_empty(std::string_view key) {
    const json* v = find(key);
    if (!v) return json::object();
    if (!v->is_object()) fail(at(key), "expected an object");
    return *v;
  }

  std::map<std::string, std::string> string_map(std::string_view key) {
    std::map<std::string, std::string> out;
    const json* v = find(key);
    if (!v) return out;
    if (!v->is_object()) fail(at(key), "expected an object");
    for (auto it = v->begin(); it != v->end(); ++it) {
      if (!it.value().is_string()) fail(join_path(at(key), it.key()), "expected a string");
      out.emplace(it.key(), it.value().get<std::string>());
    }
    return out;
  }

  template <typename T>
  std::vector<T> records(std::string_view key, bool required) {
    const json* v = required ? &require(key) : find(key);
    std::vector<T> out;
    if (!v) return out;
    if (!v->is_array()) fail(at(key), "expected an array");
    out.reserve(v->size());
    for (std::size_t i = 0; i < v->size(); ++i) {
      out.push_back(from_json_value<T>((*v)[i], index_path(at(key), i)));
    }
    return out;
  }

  EvaluationId evaluation_id(std::string_view key) {
    std::string s = str(key);
    auto id = EvaluationId::parse(s);
    if (!id) fail(at(key), "expected 32 lowercase hex characters");
    return *id;
  }

  StatusCode status(std::string_view key, std::optional<StatusCode> fallback = {}) {
    const json* v = find(key);
    if (!v) {
      if (fallback) return *fallback;
      fail(at(key), "missing required field");
    }
    if (!v->is_number_integer()) fail(at(key), "expected an integer status code");
    auto code = to_status_code(v->get<int>());
    if (!code) fail(at(key), "status code outside the protocol set");
    return *code;
  }

  json rest() const {
    json out = json::object();
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (it.key() == "protocol_version" || seen_.count(it.key())) continue;
      out[it.key()] = it.value();
    }
    return out;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json with_extra(const json& extra) {
  return extra.is_object() ? extra : json::object();
}

double unit_score(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  double d = v.get<double>();
  if (!(d >= 0.0 && d <= 1.0)) fail(path, "score outside [0,1]");
  return d;
}

std::map<std::string, double> score_map(FieldReader& r, std::string_view key) {
  std::map<std::string, double> out;
  const json* v = r.find(key);
  if (!v) return out;
  if (!v->is_object()) fail(r.at(key), "expected an object");
  for (auto it = v->begin(); it != v->end(); ++it) {
    out.emplace(it.key(), unit_score(it.value(), join_path(r.at(key), it.key())));
  }
  return out;
}

json score_map_json(const std::map<std::string, double>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

}  // namespace

std::string dump_compact(const json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

json parse_message_json(std::string_view bytes) {
  json j = json::parse(bytes.begin(), bytes.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) fail("$", "malformed JSON");
  if (!j.is_object()) fail("$", "expected an object");
  auto it = j.find("protocol_version");
  if (it != j.end()) {
    if (!it->is_string() || it->get<std::string>() != kProtocolVersion) {
      fail("protocol_version", "unsupported protocol version (expected dep/1)");
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// ModelCard

namespace {

json endpoint_json(const EndpointSpec& e) {
  json j = with_extra(e.extra);
  j["kind"] = std::string(to_string(e.kind));
  if (e.kind == EndpointKind::scripted) {
    j["script"] = e.script;
  } else {
    j["url"] = e.url;
    if (!e.remote_model.empty()) j["model"] = e.remote_model;
    if (!e.api_key_env.empty()) j["api_key_env"] = e.api_key_env;
  }
  return j;
}

EndpointSpec endpoint_from(const json& j, const std::string& path) {
  FieldReader r(j, path);
  EndpointSpec e;
  std::string kind = r.str("kind");
  if (kind == "scripted") {
    e.kind = EndpointKind::scripted;
    const json& script = r.require("script");
    if (!script.is_object()) fail(r.at("script"), "expected an object");
    e.script = script;
  } else if (kind == "http-chat") {
    e.kind = EndpointKind::http_chat;
    e.url = r.non_empty_str("url");
    e.remote_model = r.str_or("model", "");
    e.api_key_env = r.str_or("api_key_env", "");
  } else {
    fail(r.at("kind"), "unknown endpoint kind '" + kind + "'");
  }
  e.extra = r.rest();
  return e;
}

}  // namespace

json to_json_value(const ModelCard& v) {
  json j = with_extra(v.extra);
  j["model_id"] = v.model_id;
  j["display_name"] = v.display_name;
  j["capability"] = v.capability;
  if (v.parameter_size) j["parameter_size"] = *v.parameter_size;
  j["endpoint"] = endpoint_json(v.endpoint);
  j["generation_defaults"] = v.generation_defaults.is_object() ? v.generation_defaults : json::object();
  j["deadline_ms"] = v.deadline_ms;
  return j;
}

template <>
ModelCard from_json_value<ModelCard>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  ModelCard c;
  c.model_id = r.non_empty_str("model_id");
  c.display_name = r.str_or("display_name", c.model_id);
  c.capability = r.strings("capability");
  c.parameter_size = r.opt_str("parameter_size");
  c.endpoint = endpoint_from(r.require("endpoint"), r.at("endpoint"));
  c.generation_defaults = r.object_or_empty("generation_defaults");
  c.deadline_ms = r.integer("deadline_ms", kDefaultDeadlineMs);
  if (c.deadline_ms <= 0) fail(r.at("deadline_ms"), "must be positive");
  c.extra = r.rest();
  return c;
}

// ---------------------------------------------------------------------------
// DatasetCard

json to_json_value(const NormalizationSpec& v) {
  return json{{"lowercase", v.lowercase},
              {"strip_punctuation", v.strip_punctuation},
              {"collapse_whitespace", v.collapse_whitespace},
              {"strip_articles", v.strip_articles}};
}

template <>
NormalizationSpec from_json_value<NormalizationSpec>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  NormalizationSpec n;
  n.lowercase = r.boolean("lowercase", n.lowercase);
  n.strip_punctuation = r.boolean("strip_punctuation", n.strip_punctuation);
  n.collapse_whitespace = r.boolean("collapse_whitespace", n.collapse_whitespace);
  n.strip_articles = r.boolean("strip_articles", n.strip_articles);
  if (!r.rest().empty()) fail(join_path(path, r.rest().begin().key()), "unknown normalization flag");
  return n;
}

json to_json_value(const MetricBinding& v) {
  if (!v.normalize) return v.name;
  return json{{"name", v.name}, {"normalize", to_json_value(*v.normalize)}};
}

template <>
MetricBinding from_json_value<MetricBinding>(const json& j, const std::string& path) {
  MetricBinding b;
  if (j.is_string()) {
    b.name = j.get<std::string>();
    if (b.name.empty()) fail(path, "metric name must not be empty");
    return b;
  }
  FieldReader r(j, path);
  b.name = r.non_empty_str("name");
  if (const json* n = r.find("normalize")) {
    b.normalize = from_json_value<NormalizationSpec>(*n, r.at("normalize"));
  }
  return b;
}

json to_json_value(const DatasetCard& v) {
  json j = with_extra(v.extra);
  j["dataset_id"] = v.dataset_id;
  j["version"] = v.version;
  j["description"] = v.description;
  j["task_type"] = v.task_type;
  j["subtasks"] = v.subtasks;
  json metrics = json::array();
  for (const auto& m : v.metrics) metrics.push_back(to_json_value(m));
  j["metrics"] = std::move(metrics);
  j["sample_count"] = v.sample_count;
  j["data_format"] = std::string(to_string(v.data_format));
  j["prompt_template_ref"] = v.prompt_template_ref;
  if (v.license) j["license"] = *v.license;
  j["pure_evaluator"] = v.pure_evaluator;
  return j;
}

template <>
DatasetCard from_json_value<DatasetCard>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  DatasetCard c;
  c.dataset_id = r.non_empty_str("dataset_id");
  c.version = r.non_empty_str("version");
  c.description = r.str_or("description", "");
  c.task_type = r.str_or("task_type", "");
  c.subtasks = r.strings("subtasks");
  c.metrics = r.records<MetricBinding>("metrics", true);
  if (c.metrics.empty()) fail(r.at("metrics"), "at least one metric is required");
  c.sample_count = r.unsigned_integer("sample_count");
  std::string fmt = r.str("data_format");
  if (fmt == "jsonl") c.data_format = DataFormat::jsonl;
  else if (fmt == "csv") c.data_format = DataFormat::csv;
  else if (fmt == "custom") c.data_format = DataFormat::custom;
  else fail(r.at("data_format"), "unknown data format '" + fmt + "'");
  c.prompt_template_ref = r.str_or("prompt_template_ref", "prompt.tmpl");
  c.license = r.opt_str("license");
  c.pure_evaluator = r.boolean("pure_evaluator", false);
  c.extra = r.rest();
  return c;
}

// ---------------------------------------------------------------------------
// Samples and predictions

json to_json_value(const SampleEnvelope& v) {
  json j = with_extra(v.extra);
  j["sample_id"] = v.sample_id;
  j["prompt"] = v.prompt;
  if (v.subtask) j["subtask"] = *v.subtask;
  j["metadata"] = v.metadata;
  return j;
}

template <>
SampleEnvelope from_json_value<SampleEnvelope>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  SampleEnvelope s;
  s.sample_id = r.non_empty_str("sample_id");
  s.prompt = r.str("prompt");
  s.subtask = r.opt_str("subtask");
  s.metadata = r.string_map("metadata");
  s.extra = r.rest();
  return s;
}

json to_json_value(const PredictionRecord& v) {
  json j = with_extra(v.extra);
  j["sample_id"] = v.sample_id;
  j["raw_output"] = v.raw_output;
  j["status"] = static_cast<int>(v.status);
  j["latency_ms"] = v.latency_ms;
  j["attempt_count"] = v.attempt_count;
  return j;
}

template <>
PredictionRecord from_json_value<PredictionRecord>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  PredictionRecord p;
  p.sample_id = r.non_empty_str("sample_id");
  p.raw_output = r.str_or("raw_output", "");
  p.status = r.status("status", StatusCode::ok);
  p.latency_ms = r.integer("latency_ms", 0);
  if (p.latency_ms < 0) fail(r.at("latency_ms"), "must be non-negative");
  p.attempt_count = r.integer("attempt_count", 1);
  if (p.attempt_count < 1) fail(r.at("attempt_count"), "must be at least 1");
  p.extra = r.rest();
  return p;
}

// ---------------------------------------------------------------------------
// Reports

json to_json_value(const SampleScore& v) {
  json j = json::object();
  j["sample_id"] = v.sample_id;
  j["scores"] = score_map_json(v.scores);
  if (v.error) j["error"] = *v.error;
  return j;
}

template <>
SampleScore from_json_value<SampleScore>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  SampleScore s;
  s.sample_id = r.non_empty_str("sample_id");
  s.scores = score_map(r, "scores");
  s.error = r.opt_str("error");
  return s;
}

json to_json_value(const EvaluationReport& v) {
  json j = with_extra(v.extra);
  j["evaluation_id"] = v.evaluation_id.str();
  j["dataset_id"] = v.dataset_id;
  j["dataset_version"] = v.dataset_version;
  j["model_id"] = v.model_id;
  j["overall"] = score_map_json(v.overall);
  json subs = json::object();
  for (const auto& [name, scores] : v.per_subtask) subs[name] = score_map_json(scores);
  j["per_subtask"] = std::move(subs);
  if (v.per_sample) {
    json arr = json::array();
    for (const auto& s : *v.per_sample) arr.push_back(to_json_value(s));
    j["per_sample"] = std::move(arr);
  }
  j["counts"] = json{{"served", v.counts.served},
                     {"submitted", v.counts.submitted},
                     {"scored", v.counts.scored}};
  j["notes"] = v.notes;
  j["generated_at"] = v.generated_at;
  return j;
}

template <>
EvaluationReport from_json_value<EvaluationReport>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  EvaluationReport rep;
  rep.evaluation_id = r.evaluation_id("evaluation_id");
  rep.dataset_id = r.non_empty_str("dataset_id");
  rep.dataset_version = r.str("dataset_version");
  rep.model_id = r.str("model_id");
  rep.overall = score_map(r, "overall");
  if (const json* subs = r.find("per_subtask")) {
    if (!subs->is_object()) fail(r.at("per_subtask"), "expected an object");
    for (auto it = subs->begin(); it != subs->end(); ++it) {
      std::string sub_path = join_path(r.at("per_subtask"), it.key());
      FieldReader sr(it.value(), sub_path);
      std::map<std::string, double> scores;
      for (auto s = it.value().begin(); s != it.value().end(); ++s) {
        scores.emplace(s.key(), unit_score(s.value(), join_path(sub_path, s.key())));
      }
      rep.per_subtask.emplace(it.key(), std::move(scores));
    }
  }
  if (r.find("per_sample")) rep.per_sample = r.records<SampleScore>("per_sample", false);
  {
    FieldReader cr(r.require("counts"), r.at("counts"));
    rep.counts.served = cr.unsigned_integer("served");
    rep.counts.submitted = cr.unsigned_integer("submitted");
    rep.counts.scored = cr.unsigned_integer("scored");
    if (rep.counts.scored > rep.counts.submitted) fail(cr.at("scored"), "scored exceeds submitted");
    if (rep.counts.submitted > rep.counts.served) fail(cr.at("submitted"), "submitted exceeds served");
  }
  rep.notes = r.strings("notes");
  rep.generated_at = r.str_or("generated_at", "");
  rep.extra = r.rest();
  return rep;
}

// ---------------------------------------------------------------------------
// Adapter records

json to_json_value(const InferenceRequest& v) {
  json j = with_extra(v.extra);
  j["prompt"] = v.prompt;
  j["generation"] = v.generation.is_object() ? v.generation : json::object();
  j["request_id"] = v.request_id;
  return j;
}

template <>
InferenceRequest from_json_value<InferenceRequest>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  InferenceRequest q;
  q.prompt = r.non_empty_str("prompt");
  q.generation = r.object_or_empty("generation");
  q.request_id = r.str_or("request_id", "");
  q.extra = r.rest();
  return q;
}

json to_json_value(const AdapterResponse& v) {
  json j = with_extra(v.extra);
  j["status"] = static_cast<int>(v.status);
  if (v.text) j["text"] = *v.text;
  if (v.error_log) j["error_log"] = *v.error_log;
  j["metadata"] = v.metadata.is_object() ? v.metadata : json::object();
  return j;
}

template <>
AdapterResponse from_json_value<AdapterResponse>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  AdapterResponse a;
  a.status = r.status("status");
  a.text = r.opt_str("text");
  a.error_log = r.opt_str("error_log");
  if (a.text.has_value() == a.error_log.has_value()) {
    fail(r.at("text"), "exactly one of text and error_log must be present");
  }
  a.metadata = r.object_or_empty("metadata");
  if (!a.metadata.contains("model_id")) fail(join_path(r.at("metadata"), "model_id"), "missing required field");
  a.extra = r.rest();
  return a;
}

// ---------------------------------------------------------------------------
// Transport envelopes

json to_json_value(const DatasetList& v) {
  json j = with_extra(v.extra);
  json arr = json::array();
  for (const auto& c : v.datasets) arr.push_back(to_json_value(c));
  j["datasets"] = std::move(arr);
  return j;
}

template <>
DatasetList from_json_value<DatasetList>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  DatasetList l;
  l.datasets = r.records<DatasetCard>("datasets", true);
  l.extra = r.rest();
  return l;
}

json to_json_value(const SamplePage& v) {
  json j = with_extra(v.extra);
  j["dataset_id"] = v.dataset_id;
  j["offset"] = v.offset;
  j["total"] = v.total;
  json arr = json::array();
  for (const auto& s : v.samples) arr.push_back(to_json_value(s));
  j["samples"] = std::move(arr);
  return j;
}

template <>
SamplePage from_json_value<SamplePage>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  SamplePage p;
  p.dataset_id = r.non_empty_str("dataset_id");
  p.offset = r.unsigned_integer("offset");
  p.total = r.unsigned_integer("total");
  p.samples = r.records<SampleEnvelope>("samples", true);
  p.extra = r.rest();
  return p;
}

json to_json_value(const OpenEvaluation& v) {
  json j = with_extra(v.extra);
  j["evaluation_id"] = v.evaluation_id.str();
  j["dataset_id"] = v.dataset_id;
  j["dataset_version"] = v.dataset_version;
  j["model_id"] = v.model_id;
  return j;
}

template <>
OpenEvaluation from_json_value<OpenEvaluation>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  OpenEvaluation o;
  o.evaluation_id = r.evaluation_id("evaluation_id");
  o.dataset_id = r.non_empty_str("dataset_id");
  o.dataset_version = r.str_or("dataset_version", "");
  o.model_id = r.non_empty_str("model_id");
  o.extra = r.rest();
  return o;
}

json to_json_value(const Submission& v) {
  json j = with_extra(v.extra);
  j["evaluation_id"] = v.evaluation_id.str();
  json arr = json::array();
  for (const auto& p : v.predictions) arr.push_back(to_json_value(p));
  j["predictions"] = std::move(arr);
  j["final"] = v.final;
  return j;
}

template <>
Submission from_json_value<Submission>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  Submission s;
  s.evaluation_id = r.evaluation_id("evaluation_id");
  s.predictions = r.records<PredictionRecord>("predictions", true);
  s.final = r.boolean("final", true);
  s.extra = r.rest();
  return s;
}

json to_json_value(const SubmissionAck& v) {
  json j = with_extra(v.extra);
  j["evaluation_id"] = v.evaluation_id.str();
  j["staged"] = v.staged;
  if (v.report) j["report"] = to_json_value(*v.report);
  return j;
}

template <>
SubmissionAck from_json_value<SubmissionAck>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  SubmissionAck a;
  a.evaluation_id = r.evaluation_id("evaluation_id");
  a.staged = r.unsigned_integer("staged", 0);
  if (const json* rep = r.find("report")) a.report = from_json_value<EvaluationReport>(*rep, r.at("report"));
  a.extra = r.rest();
  return a;
}

json to_json_value(const ErrorBody& v) {
  json j = with_extra(v.extra);
  j["status"] = static_cast<int>(v.status);
  j["message"] = v.message;
  if (!v.path.empty()) j["path"] = v.path;
  return j;
}

template <>
ErrorBody from_json_value<ErrorBody>(const json& j, const std::string& path) {
  FieldReader r(j, path);
  ErrorBody e;
  e.status = r.status("status");
  e.message = r.str_or("message", "");
  e.path = r.str_or("path", "");
  e.extra = r.rest();
  return e;
}

}  // namespace dep
