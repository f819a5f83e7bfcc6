#include "dep/orchestrator.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <sstream>
#include <thread>
#include <tuple>

#include <spdlog/spdlog.h>

#include "dep/codec.hpp"

namespace dep {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr Duration kPollSlice = std::chrono::milliseconds(250);

class WorkerPool {
 public:
  explicit WorkerPool(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) threads_.emplace_back([this] { loop(); });
  }

  ~WorkerPool() {
    {
      std::lock_guard lk(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void post(std::function<void()> job) {
    {
      std::lock_guard lk(mu_);
      jobs_.push_back(std::move(job));
    }
    cv_.notify_one();
  }

 private:
  void loop() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stopping_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      job();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
};

std::optional<std::string> slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_atomically(const fs::path& file, const std::string& bytes) {
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(StatusCode::internal_error, "cannot write " + tmp.string());
    out << bytes;
  }
  fs::rename(tmp, file);
}

std::int64_t duration_ms(Duration d) { return std::chrono::duration_cast<std::chrono::milliseconds>(d).count(); }

SubmissionAck submit_with_retry(BenchmarkEndpoint& endpoint, const Submission& submission, const BackoffPolicy& policy,
                                std::mt19937_64& rng, Clock& clock) {
  for (std::uint32_t attempt = 1;; ++attempt) {
    try {
      return endpoint.submit(submission);
    } catch (const Error& e) {
      if (classify_status(e.code()) == RetryClass::never || attempt >= policy.max_attempts) throw;
      spdlog::warn("submission attempt {} failed ({}), retrying", attempt, e.what());
      clock.sleep_for(backoff_delay(policy, attempt, rng));
    }
  }
}

}  // namespace

json TaskSnapshot::to_json() const {
  json events = json::array();
  for (const auto& e : recent_rate_events) {
    events.push_back({{"status", e.status},
                      {"sample_id", e.sample_id},
                      {"limit_before", e.limit_before},
                      {"limit_after", e.limit_after},
                      {"backoff_ms", e.backoff_ms},
                      {"at", e.at}});
  }
  json j = {
      {"evaluation_id", evaluation_id.str()},
      {"model_id", model_id},
      {"dataset_id", dataset_id},
      {"dataset_version", dataset_version},
      {"state", std::string(to_string(state))},
      {"progress", {{"fetched", progress.fetched}, {"generated", progress.generated}, {"submitted", progress.submitted}}},
      {"total", total},
      {"rate_event_count", rate_event_count},
      {"recent_rate_events", events},
      {"created_at", created_at},
      {"updated_at", updated_at},
  };
  j["last_error"] = last_error ? json(*last_error) : json(nullptr);
  return j;
}

TaskSnapshot snapshot_of(const TaskState& st) {
  TaskSnapshot s;
  if (st.manifest) {
    s.evaluation_id = st.manifest->evaluation_id;
    s.model_id = st.manifest->model.model_id;
    s.dataset_id = st.manifest->dataset_id;
    s.dataset_version = st.manifest->dataset_version;
    s.created_at = st.manifest->created_at;
  }
  s.state = st.state;
  s.progress = st.progress;
  s.total = st.total;
  s.rate_event_count = st.rate_event_count;
  s.recent_rate_events.assign(st.recent_rate_events.begin(), st.recent_rate_events.end());
  s.last_error = st.last_error;
  s.updated_at = st.updated_at;
  return s;
}

Orchestrator::Orchestrator(OrchestratorOptions options) : options_(std::move(options)) {
  home_ = options_.home.empty() ? default_home() : options_.home;
  if (!options_.clock) options_.clock = steady_clock();
  if (!options_.adapter_factory) {
    auto clock = options_.clock;
    options_.adapter_factory = [clock](const ModelCard& card) { return make_adapter(card, clock); };
  }
}

fs::path Orchestrator::default_home() {
  if (const char* env = std::getenv("DEP_HOME"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".dep";
  return ".dep";
}

fs::path Orchestrator::eval_dir(const EvaluationId& id) const { return home_ / "evals" / id.str(); }

std::unique_ptr<BenchmarkEndpoint> Orchestrator::connect(const ServerBinding& binding) const {
  if (options_.endpoint_factory) return options_.endpoint_factory(binding);
  ServerBinding b = binding;
  if (b.kind == ServerBinding::Kind::remote && options_.token) b.token = options_.token;
  return bind_endpoint(b, options_.wire_log, options_.service_options);
}

ReplayResult Orchestrator::load(const EvaluationId& id) const {
  const fs::path dir = eval_dir(id);
  std::error_code ec;
  if (!fs::is_directory(dir, ec) || !fs::exists(dir / kJournalFile, ec)) {
    throw Error(StatusCode::not_found, "evaluation " + id.str() + " not found");
  }
  ReplayResult rr = replay_journal(dir / kJournalFile);
  if (!rr.state.manifest) {
    if (auto text = slurp(dir / kManifestFile)) rr.state.manifest = TaskManifest::from_json(json::parse(*text));
  }
  if (!rr.state.manifest) throw Error(StatusCode::unprocessable, "evaluation " + id.str() + " has no manifest");
  return rr;
}

TaskSnapshot Orchestrator::create_evaluation(const ModelCard& model, const std::string& dataset_id,
                                             const std::string& version, const ServerBinding& binding,
                                             const RunConfig& config) {
  config.validate();
  binding.validate();
  if (model.model_id.empty()) throw Error(StatusCode::unprocessable, "model card has no model_id", "model_id");

  auto endpoint = connect(binding);
  const DatasetList list = endpoint->list_datasets();
  auto card = std::find_if(list.datasets.begin(), list.datasets.end(),
                           [&](const DatasetCard& c) { return c.dataset_id == dataset_id; });
  if (card == list.datasets.end()) throw Error(StatusCode::not_found, "dataset '" + dataset_id + "' not found");
  if (!version.empty() && version != card->version) {
    throw Error(StatusCode::not_found, "dataset '" + dataset_id + "' has no version '" + version + "'");
  }

  TaskManifest m;
  m.evaluation_id = new_evaluation_id();
  m.model = model;
  m.dataset_id = dataset_id;
  m.dataset_version = card->version;
  m.binding = binding;
  m.binding.token.reset();
  m.config = config;
  m.created_at = utc_timestamp();

  const fs::path dir = eval_dir(m.evaluation_id);
  if (fs::exists(dir)) throw Error(StatusCode::conflict, "evaluation directory already exists: " + dir.string());
  fs::create_directories(dir);
  write_atomically(dir / kManifestFile, m.to_json().dump(2) + "\n");
  JournalWriter journal(dir / kJournalFile);
  journal.append(make_entry(journal_kind::task_created, {{"manifest", m.to_json()}}), true);
  return status(m.evaluation_id);
}

RunOutcome Orchestrator::resume(const EvaluationId& id, const RunControl& control) { return run(id, control); }

RunOutcome Orchestrator::run(const EvaluationId& id, const RunControl& control) {
  Clock& clock = *options_.clock;
  const TimePoint started = clock.now();
  const fs::path dir = eval_dir(id);

  ReplayResult rr = load(id);
  if (rr.corrupt_line) throw Error(StatusCode::unprocessable, rr.state.last_error.value_or("corrupt journal"));
  TaskState st = std::move(rr.state);
  const TaskManifest m = *st.manifest;
  const RunConfig& cfg = m.config;

  auto outcome = [&] {
    RunOutcome o;
    o.snapshot = snapshot_of(st);
    o.report = st.report;
    o.elapsed = clock.now() - started;
    return o;
  };
  if (st.state == LifecycleState::completed) return outcome();

  JournalWriter journal(dir / kJournalFile);
  std::uint64_t line = st.lines;
  auto record = [&](json entry, bool sync = false) {
    journal.append(entry, sync);
    st.apply(entry, ++line);
  };
  auto transition = [&](LifecycleState to, std::optional<std::string> cause = std::nullopt) {
    const TransitionVerdict v = validate_transition(st.state, to);
    if (!v.accepted) throw Error(StatusCode::conflict, v.describe());
    json fields = {{"from", std::string(to_string(st.state))}, {"to", std::string(to_string(to))}};
    if (cause) fields["cause"] = *cause;
    record(make_entry(journal_kind::state_changed, std::move(fields)), true);
  };
  auto settle_error = [&](const Error& e) {
    const bool transient = classify_status(e.code()) != RetryClass::never;
    const std::string cause = std::to_string(e.code()) + " " + e.what();
    spdlog::error("evaluation {}: {}", id.str(), cause);
    transition(transient ? LifecycleState::paused : LifecycleState::failed, cause);
  };

  std::error_code ec;
  if (st.state == LifecycleState::running) transition(LifecycleState::paused, std::string("recovered an interrupted run"));
  fs::remove(dir / kPauseRequestFile, ec);
  transition(LifecycleState::running);

  std::mt19937_64 rng(options_.seed ? options_.seed : std::random_device{}());
  std::unique_ptr<BenchmarkEndpoint> endpoint;
  std::shared_ptr<ModelAdapter> adapter;
  try {
    endpoint = connect(m.binding);
    OpenEvaluation open;
    open.evaluation_id = id;
    open.dataset_id = m.dataset_id;
    open.dataset_version = m.dataset_version;
    open.model_id = m.model.model_id;
    endpoint->open_evaluation(open);
    adapter = options_.adapter_factory(m.model);
    if (!adapter) throw Error(StatusCode::internal_error, "no adapter for model '" + m.model.model_id + "'");
  } catch (const Error& e) {
    settle_error(e);
    return outcome();
  } catch (const std::exception& e) {
    settle_error(Error(StatusCode::internal_error, e.what()));
    return outcome();
  }

  json generation = m.model.generation_defaults.is_object() ? m.model.generation_defaults : json::object();
  generation.update(cfg.generation);

  struct Pending {
    SampleEnvelope sample;
    std::uint32_t attempts = 0;
    TimePoint not_before{};
  };
  struct Done {
    Pending pending;
    AdapterResponse response;
  };

  TokenBucket bucket(cfg.bucket_capacity, cfg.rate, clock.now());
  ConcurrencyGovernor governor(cfg.effective_governor());
  std::deque<Pending> queue;
  std::mutex mu;
  std::condition_variable cv;
  std::vector<Done> done;
  std::size_t in_flight = 0;
  std::uint64_t next_offset = 0;
  bool more_pages = true;
  bool stopping = false;
  std::optional<Error> abort;
  std::vector<std::string> unsent = st.order;

  auto stop_requested = [&] {
    if (control.should_stop && control.should_stop()) return true;
    std::error_code probe;
    return fs::exists(dir / kPauseRequestFile, probe);
  };

  auto fetch_page = [&] {
    SamplePage page = endpoint->fetch_samples(m.dataset_id, m.dataset_version, next_offset, cfg.page_size);
    record(make_entry(journal_kind::samples_fetched,
                      {{"offset", next_offset}, {"count", page.samples.size()}, {"total", page.total}}));
    for (auto& s : page.samples) {
      if (!st.predictions.count(s.sample_id)) queue.push_back(Pending{std::move(s), 0, clock.now()});
    }
    next_offset += page.samples.size();
    more_pages = !page.samples.empty() && next_offset < page.total;
  };

  auto journal_prediction = [&](PredictionRecord rec) {
    unsent.push_back(rec.sample_id);
    record(make_entry(journal_kind::sample_generated, {{"record", to_json_value(rec)}}), true);
    if (control.on_progress) control.on_progress(st.progress);
  };

  auto handle = [&](Done& d) {
    --in_flight;
    const AdapterResponse& r = d.response;
    const StatusDirective directive = governor.on_status(r.status);
    const RetryClass rc = classify_status(static_cast<int>(r.status));
    bool requeue = false;
    Duration delay{0};
    if (!r.ok() && !stopping) {
      requeue = rc == RetryClass::backoff_and_reduce ||
                (rc == RetryClass::bounded_retry && d.pending.attempts < cfg.backoff.max_attempts);
      if (requeue) delay = backoff_delay(cfg.backoff, d.pending.attempts, rng);
    }
    if (r.status == StatusCode::too_many_requests || requeue || directive.limit_before != directive.limit_after) {
      record(make_entry(journal_kind::rate_event, {{"status", static_cast<int>(r.status)},
                                                   {"sample_id", d.pending.sample.sample_id},
                                                   {"limit_before", directive.limit_before},
                                                   {"limit_after", directive.limit_after},
                                                   {"backoff_ms", duration_ms(delay)}}));
    }
    PredictionRecord rec;
    rec.sample_id = d.pending.sample.sample_id;
    rec.status = r.status;
    rec.attempt_count = d.pending.attempts;
    if (auto lat = r.metadata.find("latency_ms"); lat != r.metadata.end() && lat->is_number()) {
      rec.latency_ms = std::max<std::int64_t>(0, lat->get<std::int64_t>());
    }
    if (r.ok()) {
      rec.raw_output = r.text.value_or("");
      journal_prediction(std::move(rec));
    } else if (requeue) {
      d.pending.not_before = clock.now() + delay;
      queue.push_back(std::move(d.pending));
    } else if (!stopping || rc == RetryClass::never) {
      if (r.error_log) rec.extra["error_log"] = *r.error_log;
      journal_prediction(std::move(rec));
    }
  };

  auto submit_batch = [&](bool final) {
    Submission sub;
    sub.evaluation_id = id;
    sub.final = final;
    const auto& ids = final ? st.order : unsent;
    for (const auto& sid : ids) sub.predictions.push_back(st.predictions.at(sid));
    SubmissionAck ack = submit_with_retry(*endpoint, sub, cfg.backoff, rng, clock);
    record(make_entry(journal_kind::submitted, {{"count", ack.staged}, {"final", final}}));
    unsent.clear();
    return ack;
  };

  {
    WorkerPool pool(cfg.concurrency);
    for (;;) {
      std::vector<Done> batch;
      {
        std::lock_guard lk(mu);
        batch.swap(done);
      }
      for (auto& d : batch) handle(d);

      if (!stopping && stop_requested()) stopping = true;
      try {
        if (!stopping && cfg.submit_every > 0 && unsent.size() >= cfg.submit_every) submit_batch(false);
        if (!stopping && more_pages && queue.size() < governor.current_limit()) fetch_page();
      } catch (const Error& e) {
        abort = e;
        stopping = true;
      } catch (const std::exception& e) {
        abort = Error(StatusCode::internal_error, e.what());
        stopping = true;
      }

      if (in_flight == 0 && (stopping || (queue.empty() && !more_pages))) break;

      std::optional<Duration> wait;
      if (!stopping) {
        while (in_flight < governor.current_limit() && !queue.empty()) {
          const TimePoint now = clock.now();
          auto ready = std::find_if(queue.begin(), queue.end(), [&](const Pending& p) { return p.not_before <= now; });
          if (ready == queue.end()) {
            TimePoint earliest = queue.front().not_before;
            for (const auto& p : queue) earliest = std::min(earliest, p.not_before);
            wait = earliest - now;
            break;
          }
          const TokenBucket::Outcome permit = bucket.acquire(now);
          if (!granted(permit)) {
            wait = std::get<TokenBucket::Wait>(permit).duration;
            break;
          }
          Pending p = std::move(*ready);
          queue.erase(ready);
          ++p.attempts;
          ++in_flight;
          pool.post([&, p = std::move(p)]() mutable {
            InferenceRequest req;
            req.prompt = p.sample.prompt;
            req.generation = generation;
            req.request_id = p.sample.sample_id;
            AdapterResponse resp = adapter->generate(req);
            {
              std::lock_guard lk(mu);
              done.push_back(Done{std::move(p), std::move(resp)});
            }
            cv.notify_all();
          });
        }
      }

      if (in_flight == 0 && !wait) continue;  // only more pages to fetch
      std::unique_lock lk(mu);
      if (!done.empty()) continue;
      if (in_flight > 0) {
        clock.wait_event(cv, lk, wait ? std::min(*wait, kPollSlice) : kPollSlice, [&] { return !done.empty(); });
      } else {
        lk.unlock();
        clock.sleep_for(wait ? std::min(*wait, kPollSlice) : kPollSlice);
      }
    }
  }

  try {
    if (abort) throw *abort;
    if (stopping) {
      fs::remove(dir / kPauseRequestFile, ec);
      transition(LifecycleState::paused);
      return outcome();
    }
    SubmissionAck ack = submit_batch(true);
    if (!ack.report) throw Error(StatusCode::internal_error, "the final submission returned no report");
    write_atomically(dir / kReportFile, encode_message(*ack.report));
    record(make_entry(journal_kind::report_received, {{"report", to_json_value(*ack.report)}}), true);
    transition(LifecycleState::completed);
  } catch (const Error& e) {
    settle_error(e);
  } catch (const std::exception& e) {
    settle_error(Error(StatusCode::internal_error, e.what()));
  }
  return outcome();
}

void Orchestrator::request_pause(const EvaluationId& id) {
  const TaskState st = load(id).state;
  if (st.state == LifecycleState::completed) {
    throw Error(StatusCode::conflict, "evaluation " + id.str() + " is already completed");
  }
  std::ofstream(eval_dir(id) / kPauseRequestFile) << utc_timestamp() << '\n';
}

TaskSnapshot Orchestrator::status(const EvaluationId& id) const {
  TaskSnapshot s = snapshot_of(load(id).state);
  if (s.evaluation_id.empty()) s.evaluation_id = id;
  return s;
}

std::vector<TaskSnapshot> Orchestrator::list() const {
  std::vector<TaskSnapshot> out;
  std::error_code ec;
  const fs::path root = home_ / "evals";
  if (!fs::is_directory(root, ec)) return out;
  for (const auto& e : fs::directory_iterator(root, ec)) {
    auto id = EvaluationId::parse(e.path().filename().string());
    if (!id) continue;
    try {
      out.push_back(status(*id));
    } catch (const std::exception& ex) {
      spdlog::warn("skipping {}: {}", e.path().string(), ex.what());
    }
  }
  std::sort(out.begin(), out.end(), [](const TaskSnapshot& a, const TaskSnapshot& b) {
    return std::tie(a.created_at, a.evaluation_id) < std::tie(b.created_at, b.evaluation_id);
  });
  return out;
}

TaskManifest Orchestrator::manifest(const EvaluationId& id) const { return *load(id).state.manifest; }

std::optional<std::string> Orchestrator::report_bytes(const EvaluationId& id) const {
  load(id);
  return slurp(eval_dir(id) / kReportFile);
}

std::optional<EvaluationReport> Orchestrator::report(const EvaluationId& id) const {
  auto bytes = report_bytes(id);
  if (!bytes) return std::nullopt;
  return decode_message<EvaluationReport>(*bytes);
}

std::vector<EvaluationReport> Orchestrator::completed_reports(const std::vector<EvaluationId>& ids,
                                                              const std::string& dataset_id,
                                                              const std::string& model_id) const {
  std::vector<EvaluationId> selected = ids;
  if (selected.empty()) {
    for (const auto& s : list()) selected.push_back(s.evaluation_id);
  }
  std::vector<EvaluationReport> out;
  for (const auto& id : selected) {
    if (status(id).state != LifecycleState::completed) continue;
    auto rep = report(id);
    if (!rep) continue;
    if (!dataset_id.empty() && rep->dataset_id != dataset_id) continue;
    if (!model_id.empty() && rep->model_id != model_id) continue;
    out.push_back(std::move(*rep));
  }
  return out;
}

}  // namespace dep
