#include "dep/adapter.hpp"

#include <algorithm>
#include <cstdlib>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "dep/codec.hpp"

namespace dep {

using nlohmann::json;

namespace {

bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (p < pattern.size() && pattern[p] == text[t]) {
      ++p;
      ++t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

std::size_t literal_weight(std::string_view pattern) {
  return static_cast<std::size_t>(std::count_if(pattern.begin(), pattern.end(), [](char c) { return c != '*'; }));
}

[[noreturn]] void script_error(const std::string& path, const std::string& what) {
  throw Error(StatusCode::unprocessable, "script: " + what + " at '" + path + "'", path);
}

StatusCode script_status(const json& v, const std::string& path) {
  if (!v.is_number_integer()) script_error(path, "expected an integer status");
  auto code = to_status_code(v.get<int>());
  if (!code) script_error(path, "unknown status " + std::to_string(v.get<int>()));
  return *code;
}

std::optional<Duration> script_delay(const json& obj, const std::string& path) {
  auto it = obj.find("delay_ms");
  if (it == obj.end()) return std::nullopt;
  if (!it->is_number() || it->get<double>() < 0) script_error(path + ".delay_ms", "expected a non-negative number");
  return from_seconds(it->get<double>() / 1000.0);
}

ScriptedModel::Reply parse_reply(const json& v, const std::string& path) {
  ScriptedModel::Reply r;
  if (v.is_string()) {
    r.text = v.get<std::string>();
    return r;
  }
  if (v.is_number_integer()) {
    r.status = script_status(v, path);
    return r;
  }
  if (!v.is_object()) script_error(path, "expected an object, string or status code");
  if (auto it = v.find("status"); it != v.end()) r.status = script_status(*it, path + ".status");
  if (auto it = v.find("text"); it != v.end()) {
    if (!it->is_string()) script_error(path + ".text", "expected a string");
    r.text = it->get<std::string>();
  }
  if (auto it = v.find("echo"); it != v.end()) {
    if (!it->is_boolean()) script_error(path + ".echo", "expected a boolean");
    r.echo = it->get<bool>();
  }
  r.delay = script_delay(v, path);
  return r;
}

bool is_reserved_key(const std::string& k) {
  return k == "schedule" || k == "faults" || k == "seed" || k == "delay_ms";
}

std::string env_or_empty(const std::string& name) {
  if (name.empty()) return {};
  const char* v = std::getenv(name.c_str());
  return v ? std::string(v) : std::string();
}

}  // namespace

// ---------------------------------------------------------------------------

ModelAdapter::ModelAdapter(ModelCard card, std::shared_ptr<Clock> clock)
    : card_(std::move(card)), clock_(clock ? std::move(clock) : steady_clock()) {}

AdapterResponse ModelAdapter::success(std::string text) {
  AdapterResponse r;
  r.status = StatusCode::ok;
  r.text = std::move(text);
  return r;
}

AdapterResponse ModelAdapter::failure(StatusCode status, std::string error_log) {
  AdapterResponse r;
  r.status = status;
  r.error_log = std::move(error_log);
  return r;
}

AdapterResponse ModelAdapter::generate(const InferenceRequest& request) {
  calls_.fetch_add(1);
  const TimePoint start = clock_->now();
  AdapterResponse r;
  if (request.prompt.empty()) {
    r = failure(StatusCode::bad_request, "empty prompt");
  } else {
    try {
      r = do_generate(request);
    } catch (const Error& e) {
      r = failure(e.status(), e.what());
    } catch (const std::exception& e) {
      r = failure(StatusCode::internal_error, e.what());
    }
  }
  if (r.ok()) {
    if (!r.text) r.text = std::string();
    r.error_log.reset();
  } else {
    r.text.reset();
    if (!r.error_log) r.error_log = std::string(status_reason(r.status));
  }
  if (!r.metadata.is_object()) r.metadata = json::object();
  const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(clock_->now() - start).count();
  r.metadata["model_id"] = card_.model_id;
  r.metadata["latency_ms"] = latency;
  if (!request.request_id.empty()) r.metadata["request_id"] = request.request_id;
  if (!r.ok()) {
    spdlog::debug("model {} request {} -> {} ({})", card_.model_id, request.request_id, static_cast<int>(r.status),
                  *r.error_log);
  }
  return r;
}

// ---------------------------------------------------------------------------

void ScriptedModel::validate_script(const json& script) {
  ModelCard probe;
  probe.model_id = "probe";
  probe.endpoint.script = script;
  ScriptedModel model(probe, std::make_shared<VirtualClock>());
  (void)model;
}

ScriptedModel::ScriptedModel(ModelCard card, std::shared_ptr<Clock> clock)
    : ModelAdapter(std::move(card), std::move(clock)) {
  const json& script = this->card().endpoint.script;
  if (!script.is_object()) script_error("script", "expected an object");

  if (auto it = script.find("schedule"); it != script.end()) {
    if (!it->is_array()) script_error("schedule", "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string path = "schedule[" + std::to_string(i) + "]";
      Reply r = parse_reply((*it)[i], path);
      bool defer = (*it)[i].is_number_integer() && r.status == StatusCode::ok;
      schedule_.push_back(defer ? std::nullopt : std::optional<Reply>(r));
    }
  }
  if (auto it = script.find("faults"); it != script.end()) {
    if (!it->is_object()) script_error("faults", "expected an object");
    double total = 0.0;
    for (auto f = it->begin(); f != it->end(); ++f) {
      int code = 0;
      try {
        code = std::stoi(f.key());
      } catch (const std::exception&) {
        script_error("faults." + f.key(), "expected a status code key");
      }
      auto status = to_status_code(code);
      if (!status) script_error("faults." + f.key(), "unknown status " + f.key());
      if (!f->is_number() || f->get<double>() < 0.0) script_error("faults." + f.key(), "expected a probability");
      total += f->get<double>();
      faults_.emplace_back(*status, f->get<double>());
    }
    if (total > 1.0) script_error("faults", "probabilities sum above 1");
  }
  std::uint64_t seed = 0;
  if (auto it = script.find("seed"); it != script.end()) {
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0) script_error("seed", "expected a non-negative integer");
    seed = it->get<std::uint64_t>();
  }
  rng_.seed(seed);
  if (auto d = script_delay(script, "script")) default_delay_ = *d;

  for (auto it = script.begin(); it != script.end(); ++it) {
    if (is_reserved_key(it.key())) continue;
    patterns_.emplace_back(it.key(), parse_reply(it.value(), it.key()));
  }
  // Most literal characters first; '*' alone is the catch-all.
  std::stable_sort(patterns_.begin(), patterns_.end(), [](const auto& a, const auto& b) {
    return literal_weight(a.first) > literal_weight(b.first);
  });
}

const ScriptedModel::Reply* ScriptedModel::match(const std::string& prompt) const {
  for (const auto& [pattern, reply] : patterns_) {
    if (glob_match(pattern, prompt)) return &reply;
  }
  return nullptr;
}

ScriptedModel::Reply ScriptedModel::pick(const std::string& prompt) {
  std::lock_guard lk(mu_);
  std::size_t position = cursor_++;
  if (position < schedule_.size() && schedule_[position]) return *schedule_[position];
  if (!faults_.empty()) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    double acc = 0.0;
    for (const auto& [status, p] : faults_) {
      acc += p;
      if (u < acc) {
        Reply r;
        r.status = status;
        return r;
      }
    }
  }
  if (patterns_.empty()) {
    Reply echo;
    echo.echo = true;
    return echo;
  }
  if (const Reply* r = match(prompt)) return *r;
  Reply none;
  none.status = StatusCode::internal_error;
  return none;
}

AdapterResponse ScriptedModel::do_generate(const InferenceRequest& request) {
  Reply reply = pick(request.prompt);
  const Duration delay = reply.delay.value_or(default_delay_);
  const Duration deadline = std::chrono::milliseconds(card().deadline_ms);
  if (delay > deadline) {
    clock().sleep_for(deadline);
    return failure(StatusCode::unavailable, "deadline exceeded");
  }
  clock().sleep_for(delay);
  if (reply.status != StatusCode::ok) {
    return failure(reply.status, "scripted " + std::to_string(static_cast<int>(reply.status)));
  }
  if (reply.echo) return success(request.prompt);
  if (reply.text) return success(*reply.text);
  if (!match(request.prompt) && !patterns_.empty()) {
    return failure(StatusCode::internal_error, "no script rule matches the prompt");
  }
  return success(request.prompt);
}

// ---------------------------------------------------------------------------

namespace {

void split_url(const std::string& url, std::string& origin, std::string& path) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(StatusCode::unprocessable, "endpoint url must include a scheme: " + url, "endpoint.url");
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    origin = url;
    path = "/";
  } else {
    origin = url.substr(0, path_start);
    path = url.substr(path_start);
  }
}

}  // namespace

HttpChatModel::HttpChatModel(ModelCard card, std::shared_ptr<Clock> clock)
    : ModelAdapter(std::move(card), std::move(clock)) {
  split_url(this->card().endpoint.url, origin_, path_);
}

AdapterResponse interpret_chat_reply(int http_status, const std::string& body) {
  auto fail = [](StatusCode s, std::string msg) {
    AdapterResponse r;
    r.status = s;
    r.error_log = std::move(msg);
    return r;
  };
  if (http_status != 200) {
    auto code = to_status_code(http_status);
    StatusCode mapped = StatusCode::internal_error;
    if (code && *code != StatusCode::ok) mapped = *code;
    if (http_status == 502 || http_status == 504) mapped = StatusCode::unavailable;
    return fail(mapped, "upstream HTTP " + std::to_string(http_status) + ": " + body.substr(0, 512));
  }
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return fail(StatusCode::internal_error, "malformed upstream reply");
  auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty() || !(*choices)[0].is_object()) {
    return fail(StatusCode::internal_error, "upstream reply has no choices");
  }
  const json& first = (*choices)[0];
  auto message = first.find("message");
  if (message == first.end() || !message->is_object()) {
    return fail(StatusCode::internal_error, "upstream choice has no message");
  }
  auto content = message->find("content");
  if (content == message->end() || !content->is_string()) {
    return fail(StatusCode::internal_error, "upstream message has no text content");
  }
  AdapterResponse r;
  r.status = StatusCode::ok;
  r.text = content->get<std::string>();
  if (auto usage = j.find("usage"); usage != j.end() && usage->is_object()) {
    r.metadata["token_counts"] = *usage;
  }
  return r;
}

AdapterResponse HttpChatModel::do_generate(const InferenceRequest& request) {
  json body = json::object();
  if (!card().endpoint.remote_model.empty()) body["model"] = card().endpoint.remote_model;
  body["messages"] = json::array({json{{"role", "user"}, {"content", request.prompt}}});
  json generation = card().generation_defaults;
  if (!generation.is_object()) generation = json::object();
  if (request.generation.is_object()) generation.update(request.generation);
  for (auto it = generation.begin(); it != generation.end(); ++it) body[it.key()] = it.value();

  httplib::Client client(origin_);
  const auto deadline = std::chrono::milliseconds(card().deadline_ms);
  client.set_connection_timeout(deadline);
  client.set_read_timeout(deadline);
  client.set_write_timeout(deadline);
  httplib::Headers headers;
  if (auto key = env_or_empty(card().endpoint.api_key_env); !key.empty()) {
    headers.emplace("Authorization", "Bearer " + key);
  }
  auto res = client.Post(path_, headers, dump_compact(body), "application/json");
  if (!res) {
    return failure(StatusCode::unavailable, "transport fault: " + httplib::to_string(res.error()));
  }
  return interpret_chat_reply(res->status, res->body);
}

// ---------------------------------------------------------------------------

std::shared_ptr<ModelAdapter> make_adapter(const ModelCard& card, std::shared_ptr<Clock> clock) {
  switch (card.endpoint.kind) {
    case EndpointKind::scripted:
      return std::make_shared<ScriptedModel>(card, std::move(clock));
    case EndpointKind::http_chat:
      return std::make_shared<HttpChatModel>(card, std::move(clock));
  }
  throw Error(StatusCode::unprocessable, "unsupported endpoint kind");
}

ModelCard scripted_card(std::string model_id, json script) {
  ModelCard card;
  card.model_id = std::move(model_id);
  card.display_name = card.model_id;
  card.endpoint.kind = EndpointKind::scripted;
  card.endpoint.script = std::move(script);
  return card;
}

}  // namespace dep
