#include "cli.hpp"

#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "dep/codec.hpp"
#include "dep/orchestrator.hpp"

namespace dep::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::atomic<bool>& interrupt_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

namespace {

struct Globals {
  std::string home;
  bool json = false;
  std::string capture_wire;
  std::vector<std::string> model_dirs;
  std::vector<std::string> bench_dirs;
  std::string token;
  bool verbose = false;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

extern "C" void on_signal(int) { interrupt_flag().store(true); }

// Routes SIGINT/SIGTERM to the interrupt flag for the lifetime of a command.
class SignalScope {
 public:
  SignalScope() {
    interrupt_flag().store(false);
    prev_int_ = std::signal(SIGINT, on_signal);
    prev_term_ = std::signal(SIGTERM, on_signal);
  }
  ~SignalScope() {
    std::signal(SIGINT, prev_int_);
    std::signal(SIGTERM, prev_term_);
  }

 private:
  void (*prev_int_)(int);
  void (*prev_term_)(int);
};

class Table {
 public:
  explicit Table(std::vector<std::string> headers) : headers_(std::move(headers)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  void print(std::ostream& out) const {
    std::vector<std::size_t> width(headers_.size());
    for (std::size_t i = 0; i < headers_.size(); ++i) width[i] = headers_[i].size();
    for (const auto& r : rows_) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    auto line = [&](const std::vector<std::string>& cells) {
      std::string s;
      for (std::size_t i = 0; i < headers_.size(); ++i) {
        const std::string& c = i < cells.size() ? cells[i] : std::string();
        s += c;
        if (i + 1 < headers_.size()) s += std::string(width[i] - c.size() + 2, ' ');
      }
      while (!s.empty() && s.back() == ' ') s.pop_back();
      out << s << '\n';
    };
    line(headers_);
    for (const auto& r : rows_) line(r);
  }

 private:
  std::vector<std::string> headers_;
  std::vector<std::vector<std::string>> rows_;
};

std::string score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

fs::path home_of(const Globals& g) { return g.home.empty() ? Orchestrator::default_home() : fs::path(g.home); }

std::vector<fs::path> model_dirs(const Globals& g) {
  if (!g.model_dirs.empty()) return {g.model_dirs.begin(), g.model_dirs.end()};
  return {home_of(g) / "models"};
}

std::vector<fs::path> bench_dirs(const Globals& g) {
  if (!g.bench_dirs.empty()) return {g.bench_dirs.begin(), g.bench_dirs.end()};
  return {home_of(g) / "benchmarks"};
}

std::optional<std::string> token_of(const Globals& g) {
  if (!g.token.empty()) return g.token;
  if (const char* env = std::getenv("DEP_TOKEN"); env && *env) return std::string(env);
  return std::nullopt;
}

std::shared_ptr<WireLog> wire_log_of(const Globals& g) {
  if (g.capture_wire.empty()) return nullptr;
  return std::make_shared<WireLog>(fs::path(g.capture_wire));
}

Orchestrator make_orchestrator(const Globals& g) {
  OrchestratorOptions o;
  o.home = home_of(g);
  o.token = token_of(g);
  o.wire_log = wire_log_of(g);
  return Orchestrator(std::move(o));
}

EvaluationId parse_id(const std::string& text) {
  auto id = EvaluationId::parse(text);
  if (!id) throw Error(StatusCode::not_found, "evaluation '" + text + "' not found");
  return *id;
}

void print_warnings(const std::vector<DiscoveryWarning>& warnings, std::ostream& err) {
  for (const auto& w : warnings) err << "warning: " << w.file.string() << ": " << w.message << '\n';
}

void print_snapshot(const TaskSnapshot& s, std::ostream& out) {
  out << "evaluation  " << s.evaluation_id.str() << '\n'
      << "state       " << to_string(s.state) << '\n'
      << "model       " << s.model_id << '\n'
      << "dataset     " << s.dataset_id << (s.dataset_version.empty() ? "" : "@" + s.dataset_version) << '\n'
      << "progress    fetched " << s.progress.fetched << ", generated " << s.progress.generated << ", submitted "
      << s.progress.submitted << (s.total ? " of " + std::to_string(s.total) : std::string()) << '\n'
      << "rate events " << s.rate_event_count << '\n';
  if (s.last_error) out << "last error  " << *s.last_error << '\n';
}

void print_report(const EvaluationReport& r, std::ostream& out) {
  out << "evaluation " << r.evaluation_id.str() << "  model " << r.model_id << "  dataset " << r.dataset_id << "@"
      << r.dataset_version << '\n';
  Table overall({"METRIC", "SCORE"});
  for (const auto& [m, v] : r.overall) overall.add({m, score(v)});
  overall.print(out);
  if (!r.per_subtask.empty()) {
    out << '\n';
    Table sub({"SUBTASK", "METRIC", "SCORE"});
    for (const auto& [s, metrics] : r.per_subtask) {
      for (const auto& [m, v] : metrics) sub.add({s, m, score(v)});
    }
    sub.print(out);
  }
  out << "\nserved " << r.counts.served << ", submitted " << r.counts.submitted << ", scored " << r.counts.scored
      << '\n';
  for (const auto& n : r.notes) out << "note: " << n << '\n';
}

int finish_run(const RunOutcome& o, const Globals& g, std::ostream& out, std::ostream& err) {
  if (g.json) {
    out << o.snapshot.to_json().dump(2) << '\n';
  } else {
    print_snapshot(o.snapshot, out);
    if (o.report) {
      out << '\n';
      print_report(*o.report, out);
    }
  }
  switch (o.snapshot.state) {
    case LifecycleState::completed:
      return kExitOk;
    case LifecycleState::paused:
      err << "evaluation " << o.snapshot.evaluation_id.str() << " paused; continue with `dep resume "
          << o.snapshot.evaluation_id.str() << "`\n";
      return kExitFailure;
    default:
      err << "error: evaluation " << o.snapshot.evaluation_id.str() << " failed: "
          << o.snapshot.last_error.value_or("unknown cause") << '\n';
      return kExitFailure;
  }
}

// Verbs

struct ListArgs {
  bool models = false;
  bool datasets = false;
  bool evals = false;
  std::string remote;
};

int cmd_list(const Globals& g, const ListArgs& a, std::ostream& out, std::ostream& err) {
  const bool all = !a.models && !a.datasets && !a.evals;
  json combined = json::object();
  const int sections = all ? 3 : int(a.models) + int(a.datasets) + int(a.evals);
  bool first = true;
  auto gap = [&] {
    if (!first && !g.json) out << '\n';
    first = false;
  };

  if (all || a.models) {
    ModelDiscovery d = discover_models(model_dirs(g));
    print_warnings(d.warnings, err);
    if (g.json) {
      json arr = json::array();
      for (const auto& m : d.models) arr.push_back(to_json_value(m));
      combined["models"] = arr;
    } else {
      gap();
      Table t({"MODEL_ID", "NAME", "ENDPOINT", "CAPABILITY"});
      for (const auto& m : d.models) {
        t.add({m.model_id, m.display_name, std::string(to_string(m.endpoint.kind)), join(m.capability, ",")});
      }
      t.print(out);
    }
  }
  if (all || a.datasets) {
    DatasetList list;
    if (!a.remote.empty()) {
      list = bind_endpoint(ServerBinding::remote(a.remote, token_of(g)), wire_log_of(g))->list_datasets();
    } else {
      DatasetDiscovery d = discover_datasets(bench_dirs(g));
      print_warnings(d.warnings, err);
      list.datasets = std::move(d.datasets);
    }
    if (g.json) {
      combined["datasets"] = json::parse(encode_message(list));
    } else {
      gap();
      Table t({"DATASET_ID", "VERSION", "SAMPLES", "TASK", "METRICS"});
      for (const auto& c : list.datasets) {
        std::vector<std::string> metrics;
        for (const auto& m : c.metrics) metrics.push_back(m.name);
        t.add({c.dataset_id, c.version, std::to_string(c.sample_count), c.task_type, join(metrics, ",")});
      }
      t.print(out);
    }
  }
  if (all || a.evals) {
    auto snapshots = make_orchestrator(g).list();
    if (g.json) {
      json arr = json::array();
      for (const auto& s : snapshots) arr.push_back(s.to_json());
      combined["evals"] = arr;
    } else {
      gap();
      Table t({"EVALUATION_ID", "STATE", "MODEL", "DATASET", "GENERATED"});
      for (const auto& s : snapshots) {
        t.add({s.evaluation_id.str(), std::string(to_string(s.state)), s.model_id, s.dataset_id,
               std::to_string(s.progress.generated) + "/" + std::to_string(s.total)});
      }
      t.print(out);
    }
  }
  if (g.json) out << (sections == 1 ? combined.begin().value() : combined).dump(2) << '\n';
  return kExitOk;
}

struct NewArgs {
  std::string model;
  std::string dataset;
  std::string version;
  std::string local;
  std::string remote;
  std::uint32_t concurrency = 8;
  double rate = 20.0;
  std::uint32_t bucket_capacity = 10;
  std::uint64_t submit_every = 0;
  std::uint64_t page_size = kDefaultSampleLimit;
  std::string generation;
};

int cmd_new(const Globals& g, const NewArgs& a, std::ostream& out, std::ostream&) {
  ServerBinding binding;
  if (!a.remote.empty()) {
    binding = ServerBinding::remote(a.remote);
  } else if (!a.local.empty()) {
    binding = ServerBinding::local(a.local);
  } else if (!g.bench_dirs.empty()) {
    binding = ServerBinding::local(g.bench_dirs.front());
  } else {
    throw UsageError("new: one of --local or --remote is required");
  }

  ModelDiscovery models = discover_models(model_dirs(g));
  auto card = std::find_if(models.models.begin(), models.models.end(),
                           [&](const ModelCard& m) { return m.model_id == a.model; });
  if (card == models.models.end()) throw Error(StatusCode::not_found, "model '" + a.model + "' not found");

  RunConfig cfg;
  cfg.concurrency = a.concurrency;
  cfg.rate = a.rate;
  cfg.bucket_capacity = a.bucket_capacity;
  cfg.submit_every = a.submit_every;
  cfg.page_size = a.page_size;
  if (!a.generation.empty()) {
    cfg.generation = json::parse(a.generation, nullptr, false);
    if (cfg.generation.is_discarded() || !cfg.generation.is_object()) {
      throw Error(StatusCode::unprocessable, "--generation must be a JSON object", "generation");
    }
  }

  const TaskSnapshot s = make_orchestrator(g).create_evaluation(*card, a.dataset, a.version, binding, cfg);
  if (g.json) {
    out << s.to_json().dump(2) << '\n';
  } else {
    out << s.evaluation_id.str() << '\n';
  }
  return kExitOk;
}

int cmd_run(const Globals& g, const std::string& id, bool resume, std::ostream& out, std::ostream& err) {
  Orchestrator orch = make_orchestrator(g);
  const EvaluationId eid = parse_id(id);
  SignalScope signals;
  RunControl control;
  control.should_stop = [] { return interrupt_flag().load(); };
  const RunOutcome o = resume ? orch.resume(eid, control) : orch.run(eid, control);
  return finish_run(o, g, out, err);
}

int cmd_pause(const Globals& g, const std::string& id, std::ostream& out) {
  const EvaluationId eid = parse_id(id);
  make_orchestrator(g).request_pause(eid);
  if (!g.json) out << "pause requested for " << eid.str() << '\n';
  else out << json{{"evaluation_id", eid.str()}, {"pause_requested", true}}.dump(2) << '\n';
  return kExitOk;
}

int cmd_status(const Globals& g, const std::string& id, std::ostream& out) {
  const TaskSnapshot s = make_orchestrator(g).status(parse_id(id));
  if (g.json) {
    out << s.to_json().dump(2) << '\n';
  } else {
    print_snapshot(s, out);
  }
  return kExitOk;
}

int cmd_results(const Globals& g, const std::string& id, std::ostream& out) {
  const EvaluationId eid = parse_id(id);
  Orchestrator orch = make_orchestrator(g);
  auto bytes = orch.report_bytes(eid);
  if (!bytes) throw Error(StatusCode::not_found, "no report for evaluation " + eid.str() + " yet");
  if (g.json) {
    out << *bytes << '\n';
  } else {
    print_report(decode_message<EvaluationReport>(*bytes), out);
  }
  return kExitOk;
}

struct LeaderboardArgs {
  std::vector<std::string> ids;
  std::string dataset;
  std::string model;
  std::string sort;
};

int cmd_leaderboard(const Globals& g, const LeaderboardArgs& a, std::ostream& out) {
  std::vector<EvaluationId> ids;
  for (const auto& s : a.ids) ids.push_back(parse_id(s));
  std::optional<LeaderboardColumn> sort;
  if (!a.sort.empty()) {
    const auto slash = a.sort.rfind('/');
    if (slash == std::string::npos || slash == 0 || slash + 1 == a.sort.size()) {
      throw UsageError("--sort expects <dataset_id>/<metric>");
    }
    sort = LeaderboardColumn{a.sort.substr(0, slash), a.sort.substr(slash + 1)};
  }
  const Leaderboard board = aggregate(make_orchestrator(g).completed_reports(ids, a.dataset, a.model), sort);
  if (g.json) {
    out << board.to_json().dump(2) << '\n';
    return kExitOk;
  }
  std::vector<std::string> headers{"MODEL"};
  for (const auto& c : board.columns) headers.push_back(c.label());
  Table t(headers);
  for (const auto& r : board.rows) {
    std::vector<std::string> cells{r.model_id};
    for (const auto& c : r.cells) cells.push_back(c ? score(*c) : "-");
    t.add(cells);
  }
  t.print(out);
  return kExitOk;
}

struct ServeArgs {
  std::vector<std::string> dirs;
  std::string listen = "127.0.0.1:8700";
};

int cmd_serve(const Globals& g, const ServeArgs& a, std::ostream& out) {
  std::vector<fs::path> dirs(a.dirs.begin(), a.dirs.end());
  if (dirs.empty()) dirs = bench_dirs(g);
  const auto colon = a.listen.rfind(':');
  if (colon == std::string::npos) throw UsageError("--listen expects <host>:<port>");
  const std::string host = a.listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(a.listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("--listen expects <host>:<port>");
  }

  std::shared_ptr<BenchmarkService> service = BenchmarkService::from_directories(dirs);
  if (service->dataset_count() == 0) throw Error(StatusCode::not_found, "no benchmark packages to serve");
  SignalScope signals;
  HttpService http(service, token_of(g), wire_log_of(g));
  http.start(host, port);
  if (g.json) {
    out << json{{"url", http.base_url()}, {"datasets", service->dataset_count()}}.dump() << std::endl;
  } else {
    out << "serving " << service->dataset_count() << " dataset(s) on " << http.base_url() << std::endl;
  }
  while (!interrupt_flag().load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  http.stop();
  return kExitOk;
}

int cmd_validate(const Globals& g, const std::string& target, std::ostream& out) {
  const fs::path p(target);
  std::vector<Diagnostic> diags;
  std::string what;
  std::error_code ec;
  if (fs::is_regular_file(p, ec)) {
    what = "model card";
    try {
      load_model_card(p);
    } catch (const Error& e) {
      diags.push_back(Diagnostic{e.status(), p, e.path(), e.what()});
    }
  } else if (looks_like_package(p)) {
    what = "benchmark package";
    diags = check_package(p).diagnostics;
  } else {
    diags.push_back(
        Diagnostic{StatusCode::not_found, p, "", "not a model card file or a benchmark package directory"});
  }
  if (g.json) {
    json arr = json::array();
    for (const auto& d : diags) {
      arr.push_back({{"status", static_cast<int>(d.status)},
                     {"file", d.file.string()},
                     {"path", d.path},
                     {"message", d.message}});
    }
    out << json{{"ok", diags.empty()}, {"diagnostics", arr}}.dump(2) << '\n';
  } else if (diags.empty()) {
    out << "OK " << what << " " << p.string() << '\n';
  } else {
    for (const auto& d : diags) out << d.str() << '\n';
  }
  return diags.empty() ? kExitOk : kExitFailure;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"dep: run model evaluations against local or remote benchmark servers", "dep"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--home", g.home, "State root (default $DEP_HOME, else ~/.dep)");
  app.add_flag("--json", g.json, "Emit protocol records as JSON");
  app.add_option("--capture-wire", g.capture_wire, "Append every exchanged message to this file as JSON lines");
  app.add_option("--model-dir", g.model_dirs, "Directory scanned for *.model.json (repeatable)");
  app.add_option("--bench-dir", g.bench_dirs, "Directory holding benchmark packages (repeatable)");
  app.add_option("--token", g.token, "Bearer token for remote servers (or $DEP_TOKEN)");
  app.add_flag("-v,--verbose", g.verbose, "Log progress to stderr");

  ListArgs list_args;
  auto* list = app.add_subcommand("list", "List models, datasets or evaluations");
  list->add_flag("--models", list_args.models);
  list->add_flag("--datasets", list_args.datasets);
  list->add_flag("--evals", list_args.evals);
  list->add_option("--remote", list_args.remote, "List datasets served at this base URL");

  NewArgs new_args;
  auto* create = app.add_subcommand("new", "Create a paused evaluation");
  create->add_option("--model", new_args.model)->required();
  create->add_option("--dataset", new_args.dataset)->required();
  create->add_option("--version", new_args.version);
  auto* local_opt = create->add_option("--local", new_args.local, "Benchmark directory mounted in-process");
  auto* remote_opt = create->add_option("--remote", new_args.remote, "Benchmark server base URL");
  local_opt->excludes(remote_opt);
  create->add_option("--concurrency", new_args.concurrency)->check(CLI::PositiveNumber);
  create->add_option("--rate", new_args.rate, "Requests per second")->check(CLI::PositiveNumber);
  create->add_option("--bucket-capacity", new_args.bucket_capacity)->check(CLI::PositiveNumber);
  create->add_option("--submit-every", new_args.submit_every, "Submit in batches of N predictions");
  create->add_option("--page-size", new_args.page_size)->check(CLI::PositiveNumber);
  create->add_option("--generation", new_args.generation, "Generation parameters as a JSON object");

  std::string id;
  auto* run = app.add_subcommand("run", "Run an evaluation");
  run->add_option("id", id)->required();
  auto* pause = app.add_subcommand("pause", "Ask a running evaluation to pause");
  pause->add_option("id", id)->required();
  auto* resume = app.add_subcommand("resume", "Resume an evaluation from its journal");
  resume->add_option("id", id)->required();
  auto* status = app.add_subcommand("status", "Show an evaluation's state and progress");
  status->add_option("id", id)->required();
  auto* results = app.add_subcommand("results", "Show an evaluation's report");
  results->add_option("id", id)->required();

  LeaderboardArgs lb_args;
  auto* leaderboard = app.add_subcommand("leaderboard", "Aggregate completed evaluations");
  leaderboard->add_option("ids", lb_args.ids);
  leaderboard->add_option("--dataset", lb_args.dataset);
  leaderboard->add_option("--model", lb_args.model);
  leaderboard->add_option("--sort", lb_args.sort, "<dataset_id>/<metric>");

  ServeArgs serve_args;
  auto* serve = app.add_subcommand("serve", "Serve benchmark packages over HTTP");
  serve->add_option("dirs", serve_args.dirs, "Package directories or parents of packages");
  serve->add_option("--listen", serve_args.listen, "<host>:<port>, port 0 picks one");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a model card or benchmark package");
  validate->add_option("path", validate_path)->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  spdlog::set_level(g.verbose ? spdlog::level::info : spdlog::level::warn);

  try {
    if (list->parsed()) return cmd_list(g, list_args, out, err);
    if (create->parsed()) return cmd_new(g, new_args, out, err);
    if (run->parsed()) return cmd_run(g, id, false, out, err);
    if (resume->parsed()) return cmd_run(g, id, true, out, err);
    if (pause->parsed()) return cmd_pause(g, id, out);
    if (status->parsed()) return cmd_status(g, id, out);
    if (results->parsed()) return cmd_results(g, id, out);
    if (leaderboard->parsed()) return cmd_leaderboard(g, lb_args, out);
    if (serve->parsed()) return cmd_serve(g, serve_args, out);
    if (validate->parsed()) return cmd_validate(g, validate_path, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.code() << " " << status_reason(e.status()) << ": " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace dep::cli
