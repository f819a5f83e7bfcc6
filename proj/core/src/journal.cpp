#include "dep/journal.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dep/benchmark.hpp"
#include "dep/codec.hpp"

namespace dep {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void bad_config(const std::string& field, const std::string& what) {
  throw Error(StatusCode::unprocessable, field + ": " + what, field);
}

std::int64_t to_ms(Duration d) { return std::chrono::duration_cast<std::chrono::milliseconds>(d).count(); }

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(StatusCode::unprocessable, std::string("invalid value for '") + key + "'", key);
  }
}

}  // namespace

// RunConfig

void RunConfig::validate() const {
  if (concurrency < 1) bad_config("concurrency", "must be at least 1");
  if (!(rate > 0.0) || !std::isfinite(rate)) bad_config("rate", "must be a positive number");
  if (bucket_capacity < 1) bad_config("bucket_capacity", "must be at least 1");
  if (page_size < 1) bad_config("page_size", "must be at least 1");
  if (!(governor.decrease_factor > 0.0 && governor.decrease_factor < 1.0)) {
    bad_config("governor.decrease_factor", "must lie strictly between 0 and 1");
  }
  if (governor.increase_step < 1) bad_config("governor.increase_step", "must be at least 1");
  if (governor.cooldown_successes < 1) bad_config("governor.cooldown_successes", "must be at least 1");
  if (backoff.base <= Duration::zero()) bad_config("backoff.base_ms", "must be positive");
  if (backoff.factor < 1.0) bad_config("backoff.factor", "must be at least 1");
  if (backoff.jitter < 0.0 || backoff.jitter >= 1.0) bad_config("backoff.jitter", "must lie in [0, 1)");
  if (backoff.max_delay < backoff.base) bad_config("backoff.max_ms", "must not be below the base delay");
  if (backoff.max_attempts < 1) bad_config("backoff.max_attempts", "must be at least 1");
  if (!generation.is_object()) bad_config("generation", "must be an object");
}

GovernorConfig RunConfig::effective_governor() const {
  GovernorConfig g = governor;
  g.initial_limit = concurrency;
  g.max_limit = concurrency;
  return g;
}

json RunConfig::to_json() const {
  return json{
      {"concurrency", concurrency},
      {"rate", rate},
      {"bucket_capacity", bucket_capacity},
      {"submit_every", submit_every},
      {"page_size", page_size},
      {"governor",
       {{"decrease_factor", governor.decrease_factor},
        {"increase_step", governor.increase_step},
        {"cooldown_successes", governor.cooldown_successes}}},
      {"backoff",
       {{"base_ms", to_ms(backoff.base)},
        {"factor", backoff.factor},
        {"jitter", backoff.jitter},
        {"max_ms", to_ms(backoff.max_delay)},
        {"max_attempts", backoff.max_attempts}}},
      {"generation", generation},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  if (!j.is_object()) bad_config("config", "must be an object");
  c.concurrency = get_or<std::uint32_t>(j, "concurrency", c.concurrency);
  c.rate = get_or<double>(j, "rate", c.rate);
  c.bucket_capacity = get_or<std::uint32_t>(j, "bucket_capacity", c.bucket_capacity);
  c.submit_every = get_or<std::uint64_t>(j, "submit_every", c.submit_every);
  c.page_size = get_or<std::uint64_t>(j, "page_size", c.page_size);
  if (auto g = j.find("governor"); g != j.end() && g->is_object()) {
    c.governor.decrease_factor = get_or<double>(*g, "decrease_factor", c.governor.decrease_factor);
    c.governor.increase_step = get_or<std::uint32_t>(*g, "increase_step", c.governor.increase_step);
    c.governor.cooldown_successes = get_or<std::uint32_t>(*g, "cooldown_successes", c.governor.cooldown_successes);
  }
  if (auto b = j.find("backoff"); b != j.end() && b->is_object()) {
    c.backoff.base = std::chrono::milliseconds(get_or<std::int64_t>(*b, "base_ms", to_ms(c.backoff.base)));
    c.backoff.factor = get_or<double>(*b, "factor", c.backoff.factor);
    c.backoff.jitter = get_or<double>(*b, "jitter", c.backoff.jitter);
    c.backoff.max_delay = std::chrono::milliseconds(get_or<std::int64_t>(*b, "max_ms", to_ms(c.backoff.max_delay)));
    c.backoff.max_attempts = get_or<std::uint32_t>(*b, "max_attempts", c.backoff.max_attempts);
  }
  if (auto g = j.find("generation"); g != j.end()) c.generation = *g;
  c.validate();
  return c;
}

// TaskManifest

json TaskManifest::to_json() const {
  return json{
      {"evaluation_id", evaluation_id.str()},
      {"model", to_json_value(model)},
      {"dataset_id", dataset_id},
      {"dataset_version", dataset_version},
      {"binding", binding.to_json()},
      {"config", config.to_json()},
      {"created_at", created_at},
  };
}

TaskManifest TaskManifest::from_json(const json& j) {
  if (!j.is_object()) throw Error(StatusCode::unprocessable, "manifest must be an object", "manifest");
  TaskManifest m;
  auto id = EvaluationId::parse(get_or<std::string>(j, "evaluation_id", ""));
  if (!id) throw Error(StatusCode::unprocessable, "manifest has no valid evaluation_id", "evaluation_id");
  m.evaluation_id = *id;
  m.model = from_json_value<ModelCard>(j.value("model", json()), "model");
  m.dataset_id = get_or<std::string>(j, "dataset_id", "");
  m.dataset_version = get_or<std::string>(j, "dataset_version", "");
  m.binding = ServerBinding::from_json(j.value("binding", json()), "binding");
  m.config = RunConfig::from_json(j.value("config", json::object()));
  m.created_at = get_or<std::string>(j, "created_at", "");
  return m;
}

// Journal folding

json make_entry(std::string_view kind, json fields) {
  fields["kind"] = std::string(kind);
  fields["at"] = utc_timestamp();
  return fields;
}

void TaskState::apply(const json& entry, std::uint64_t line) {
  auto fail = [&](const std::string& what) -> void {
    throw Error(StatusCode::unprocessable, "journal line " + std::to_string(line) + ": " + what);
  };
  if (!entry.is_object()) fail("entry is not an object");
  auto kind_it = entry.find("kind");
  if (kind_it == entry.end() || !kind_it->is_string()) fail("entry has no kind");
  const std::string kind = kind_it->get<std::string>();
  lines = line;
  if (auto at = entry.find("at"); at != entry.end() && at->is_string()) updated_at = at->get<std::string>();

  try {
    if (kind == journal_kind::task_created) {
      manifest = TaskManifest::from_json(entry.at("manifest"));
      state = LifecycleState::paused;
    } else if (kind == journal_kind::samples_fetched) {
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      progress.fetched = std::max(progress.fetched, offset + count);
      total = entry.at("total").get<std::uint64_t>();
    } else if (kind == journal_kind::sample_generated) {
      auto rec = from_json_value<PredictionRecord>(entry.at("record"), "record");
      if (predictions.count(rec.sample_id)) fail("sample '" + rec.sample_id + "' generated twice");
      order.push_back(rec.sample_id);
      predictions.emplace(rec.sample_id, std::move(rec));
      ++progress.generated;
    } else if (kind == journal_kind::state_changed) {
      auto to = parse_lifecycle_state(entry.at("to").get<std::string>());
      if (!to) fail("unknown lifecycle state");
      state = *to;
      if (auto cause = entry.find("cause"); cause != entry.end() && cause->is_string()) {
        last_error = cause->get<std::string>();
      }
    } else if (kind == journal_kind::rate_event) {
      RateEvent ev;
      ev.status = entry.at("status").get<int>();
      ev.sample_id = entry.value("sample_id", "");
      ev.limit_before = entry.at("limit_before").get<std::uint32_t>();
      ev.limit_after = entry.at("limit_after").get<std::uint32_t>();
      ev.backoff_ms = entry.value("backoff_ms", std::int64_t{0});
      ev.at = updated_at;
      ++rate_event_count;
      recent_rate_events.push_back(std::move(ev));
      if (recent_rate_events.size() > kRecentRateEvents) recent_rate_events.pop_front();
    } else if (kind == journal_kind::submitted) {
      progress.submitted = std::max(progress.submitted, entry.at("count").get<std::uint64_t>());
    } else if (kind == journal_kind::report_received) {
      report = from_json_value<EvaluationReport>(entry.at("report"), "report");
    }
    // Unknown kinds are skipped so that newer journals stay readable.
  } catch (const json::exception& e) {
    fail(e.what());
  } catch (const Error& e) {
    const std::string what = e.what();
    if (what.rfind("journal line ", 0) == 0) throw;
    fail(what);
  }
}

ReplayResult replay_journal(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(StatusCode::not_found, "journal not found: " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  ReplayResult out;
  std::size_t pos = 0;
  std::uint64_t line = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      out.partial_tail = true;
      break;
    }
    ++line;
    const std::string_view body(text.data() + pos, nl - pos);
    const bool blank = body.find_first_not_of(" \t\r") == std::string_view::npos;
    if (!blank) {
      try {
        json entry = json::parse(body);
        out.state.apply(entry, line);
      } catch (const std::exception& e) {
        out.corrupt_line = line;
        out.state.state = LifecycleState::failed;
        const std::string what = e.what();
        out.state.last_error = what.rfind("journal line ", 0) == 0
                                   ? what
                                   : "journal line " + std::to_string(line) + ": malformed entry";
        return out;
      }
    }
    pos = nl + 1;
    out.valid_bytes = pos;
  }
  return out;
}

// Writer

JournalWriter::JournalWriter(const fs::path& file) : file_(file) {
  std::error_code ec;
  if (fs::exists(file, ec)) {
    const auto size = fs::file_size(file, ec);
    if (!ec && size > 0) {
      std::ifstream in(file, std::ios::binary);
      std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (!text.empty() && text.back() != '\n') {
        const auto keep = text.rfind('\n');
        fs::resize_file(file, keep == std::string::npos ? 0 : keep + 1);
      }
    }
  }
  fd_ = ::open(file.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw Error(StatusCode::internal_error, "cannot open journal " + file.string() + ": " + std::strerror(errno));
  }
}

JournalWriter::~JournalWriter() {
  if (fd_ >= 0) ::close(fd_);
}

void JournalWriter::append(const json& entry, bool sync) {
  const std::string line = dump_compact(entry) + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(StatusCode::internal_error, "journal write failed for " + file_.string() + ": " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  if (sync && ::fdatasync(fd_) != 0) {
    throw Error(StatusCode::internal_error, "journal sync failed for " + file_.string() + ": " + std::strerror(errno));
  }
}

}  // namespace dep
