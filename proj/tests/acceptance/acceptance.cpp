// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "cli.hpp"
#include "dep/codec.hpp"
#include "dep/metrics.hpp"
#include "dep/orchestrator.hpp"
#include "dep/service.hpp"
#include "dep/transport.hpp"
#include "fixtures.hpp"
#include "metric_oracle.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dep;
using dep::testing::CountingAdapter;
using dep::testing::TempDir;

// Thrown by check(); the message becomes the FAIL detail.
struct Unmet : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(bool cond, const std::string& what) {
  if (!cond) throw Unmet(what);
}

struct Outcome {
  std::string detail;
};

RunConfig fast_config() {
  RunConfig c;
  c.rate = 1e6;
  c.bucket_capacity = 1000;
  c.page_size = 25;
  return c;
}

// Orchestrator whose adapters are wrapped in CountingAdapters kept in `sink`.
struct Counted {
  std::vector<std::shared_ptr<CountingAdapter>> adapters;
  std::mutex mu;

  AdapterFactory factory(std::shared_ptr<Clock> clock) {
    return [this, clock](const ModelCard& card) {
      auto a = std::make_shared<CountingAdapter>(make_adapter(card, clock));
      std::lock_guard lk(mu);
      adapters.push_back(a);
      return a;
    };
  }
  std::uint64_t successes() {
    std::lock_guard lk(mu);
    std::uint64_t n = 0;
    for (const auto& a : adapters) n += a->successes();
    return n;
  }
  std::map<std::string, std::uint64_t> per_request() {
    std::lock_guard lk(mu);
    std::map<std::string, std::uint64_t> out;
    for (const auto& a : adapters) {
      for (const auto& [k, v] : a->per_request()) out[k] += v;
    }
    return out;
  }
};

Orchestrator orchestrator(const fs::path& home, std::shared_ptr<Clock> clock, Counted* counted) {
  OrchestratorOptions o;
  o.home = home;
  o.clock = clock;
  o.seed = 7;
  if (counted) o.adapter_factory = counted->factory(clock);
  return Orchestrator(o);
}

std::vector<json> read_ndjson(const fs::path& file) {
  std::vector<json> out;
  std::istringstream in(dep::testing::read_file(file));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

// 1. Gold answers never reach the client.
Outcome ground_truth_isolation() {
  const auto started = std::chrono::steady_clock::now();
  TempDir home, models, benches, capture;

  dep::testing::ToyBenchmark bench;
  bench.dataset_id = "nonce";
  bench.metrics = json::array({"acc", "em"});
  std::vector<std::string> nonces;
  for (std::size_t i = 0; i < 50; ++i) {
    nonces.push_back(dep::testing::nonce(1000 + i));
    bench.rows.push_back({{"id", "s" + std::to_string(i)},
                          {"question", "Recall item " + std::to_string(i)},
                          {"answer", nonces.back()}});
  }
  dep::testing::write_benchmark(benches / "nonce", bench);
  dep::testing::write_model_card(models / "oracle.model.json",
                                 scripted_card("oracle", dep::testing::answering_script(bench, 25, "unknown")));

  std::shared_ptr<BenchmarkService> service = BenchmarkService::from_directories({benches.path()});
  HttpService http(service, std::string("acceptance-token"));
  http.start("127.0.0.1", 0);

  const fs::path wire = capture / "wire.ndjson";
  auto dep_cli = [&](std::vector<std::string> args) {
    std::vector<std::string> full = {"--home",      home.path().string(), "--model-dir", models.path().string(),
                                     "--capture-wire", wire.string(),     "--token",     "acceptance-token"};
    full.insert(full.end(), args.begin(), args.end());
    std::ostringstream out, err;
    const int code = cli::dispatch(full, out, err);
    check(code == 0, "dep " + args.front() + " exited " + std::to_string(code) + ": " + err.str());
    return out.str();
  };
  std::string id = dep_cli({"new", "--model", "oracle", "--dataset", "nonce", "--remote", http.base_url(), "--rate",
                            "1000", "--bucket-capacity", "100"});
  id.erase(std::remove_if(id.begin(), id.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }),
           id.end());
  dep_cli({"run", id});
  const json report = json::parse(dep_cli({"--json", "results", id}));
  http.stop();

  std::size_t client_bound = 0, leaks = 0, server_bound = 0;
  for (const json& e : read_ndjson(wire)) {
    const std::string bytes = e.at("bytes").get<std::string>();
    if (e.at("direction") == "server->client") {
      ++client_bound;
      for (const auto& n : nonces) leaks += bytes.find(n) != std::string::npos;
    } else {
      ++server_bound;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  check(client_bound >= 3 && server_bound >= 3, "wire capture is missing exchanges");
  check(leaks == 0, std::to_string(leaks) + " nonce occurrence(s) in client-bound bytes");
  check(report.at("overall").at("acc").get<double>() == 0.5, "acc " + report["overall"]["acc"].dump());
  check(report.at("overall").at("em").get<double>() == 0.5, "em " + report["overall"]["em"].dump());
  check(report.at("counts").at("scored").get<std::uint64_t>() == 50, "scored " + report["counts"].dump());
  check(secs < 10.0, "took " + std::to_string(secs) + " s");
  std::ostringstream d;
  d << client_bound << " client-bound messages, 0 leaks, acc 0.5, " << secs << " s";
  return {d.str()};
}

// 2. Interrupted and resumed run equals an uninterrupted one.
Outcome resume_equivalence() {
  TempDir home, benches;
  auto bench = dep::testing::arithmetic_benchmark("arith", 100);
  dep::testing::write_benchmark(benches.path(), bench);
  const ModelCard model = scripted_card("scripted", dep::testing::answering_script(bench, 70));
  auto clock = std::make_shared<VirtualClock>();
  RunConfig cfg = fast_config();
  cfg.concurrency = 4;

  Counted counted;
  Orchestrator o = orchestrator(home.path(), clock, &counted);
  const EvaluationId id =
      o.create_evaluation(model, "arith", "", ServerBinding::local(benches.path()), cfg).evaluation_id;
  std::atomic<std::uint64_t> seen{0};
  RunControl interrupt;
  interrupt.on_progress = [&](const Progress& p) { seen = p.generated; };
  interrupt.should_stop = [&] { return seen.load() >= 40; };
  RunOutcome first = o.run(id, interrupt);
  check(first.snapshot.state == LifecycleState::paused, "first leg ended " + std::string(to_string(first.snapshot.state)));
  const std::uint64_t journaled = first.snapshot.progress.generated;
  check(journaled >= 40 && journaled < 100, "interrupted after " + std::to_string(journaled));

  Orchestrator reopened = orchestrator(home.path(), clock, &counted);
  RunOutcome second = reopened.resume(id);
  check(second.snapshot.state == LifecycleState::completed, "resume ended " + std::string(to_string(second.snapshot.state)));
  check(counted.successes() == 100, "successful adapter calls " + std::to_string(counted.successes()));

  TempDir home2;
  Orchestrator straight = orchestrator(home2.path(), clock, nullptr);
  const EvaluationId id2 =
      straight.create_evaluation(model, "arith", "", ServerBinding::local(benches.path()), cfg).evaluation_id;
  RunOutcome whole = straight.run(id2);
  check(whole.report && second.report, "missing report");
  check(same_results(*whole.report, *second.report), "reports differ");
  return {"interrupted at " + std::to_string(journaled) + ", 100 successful calls, reports identical"};
}

// 3. Token-bucket pacing on a virtual clock.
class Timestamping final : public ModelAdapter {
 public:
  Timestamping(std::shared_ptr<ModelAdapter> inner, std::shared_ptr<Clock> clock, std::vector<TimePoint>* grants,
               std::mutex* mu)
      : ModelAdapter(inner->card()), inner_(std::move(inner)), clock_(std::move(clock)), grants_(grants), mu_(mu) {}

 protected:
  AdapterResponse do_generate(const InferenceRequest& r) override {
    {
      std::lock_guard lk(*mu_);
      grants_->push_back(clock_->now());
    }
    return inner_->generate(r);
  }

 private:
  std::shared_ptr<ModelAdapter> inner_;
  std::shared_ptr<Clock> clock_;
  std::vector<TimePoint>* grants_;
  std::mutex* mu_;
};

Outcome token_bucket_timing() {
  TempDir home, benches;
  auto bench = dep::testing::arithmetic_benchmark("paced", 100);
  dep::testing::write_benchmark(benches.path(), bench);
  auto clock = std::make_shared<VirtualClock>();
  std::vector<TimePoint> grants;
  std::mutex mu;

  OrchestratorOptions opts;
  opts.home = home.path();
  opts.clock = clock;
  opts.seed = 7;
  opts.adapter_factory = [&](const ModelCard& card) {
    return std::make_shared<Timestamping>(make_adapter(card, clock), clock, &grants, &mu);
  };
  Orchestrator o(opts);
  RunConfig cfg;
  cfg.bucket_capacity = 10;
  cfg.rate = 20;
  cfg.concurrency = 8;
  cfg.page_size = 100;
  const EvaluationId id = o.create_evaluation(scripted_card("zero-latency", dep::testing::answering_script(bench, 100)),
                                              "paced", "", ServerBinding::local(benches.path()), cfg)
                              .evaluation_id;
  const TimePoint t0 = clock->now();
  RunOutcome out = o.run(id);
  check(out.snapshot.state == LifecycleState::completed, "run ended " + std::string(to_string(out.snapshot.state)));
  check(grants.size() == 100, std::to_string(grants.size()) + " calls");

  std::sort(grants.begin(), grants.end());
  const double elapsed = std::chrono::duration<double>(grants.back() - t0).count();
  check(elapsed >= 4.5 - 1e-9 && elapsed <= 5.5, "last grant at " + std::to_string(elapsed) + " s");

  // Every window [grants[i], grants[j]] holds j - i + 1 grants.
  for (std::size_t i = 0; i < grants.size(); ++i) {
    for (std::size_t j = i; j < grants.size(); ++j) {
      const double w = std::chrono::duration<double>(grants[j] - grants[i]).count();
      const double bound = 10.0 + 20.0 * w + 1e-9;
      check(double(j - i + 1) <= bound, "window of " + std::to_string(w) + " s granted " + std::to_string(j - i + 1));
    }
  }
  std::ostringstream d;
  d << "last grant at " << elapsed << " s, window bound holds over " << grants.size() << " grants";
  return {d.str()};
}

// 4. 429s shrink the concurrency limit and never fail a sample.
Outcome congestion_reaction() {
  TempDir home, benches;
  auto bench = dep::testing::arithmetic_benchmark("storm", 100);
  dep::testing::write_benchmark(benches.path(), bench);
  json script = dep::testing::answering_script(bench, 100);
  script["faults"] = {{"429", 0.3}};
  script["seed"] = 11;
  auto clock = std::make_shared<VirtualClock>();
  Orchestrator o = orchestrator(home.path(), clock, nullptr);
  RunConfig cfg = fast_config();
  cfg.concurrency = 8;
  const EvaluationId id =
      o.create_evaluation(scripted_card("flaky", script), "storm", "", ServerBinding::local(benches.path()), cfg)
          .evaluation_id;
  RunOutcome out = o.run(id);
  check(out.snapshot.state == LifecycleState::completed, "run ended " + std::string(to_string(out.snapshot.state)));
  check(out.report && out.report->counts.scored == 100, "not every sample scored");
  check(out.report->overall.at("acc") == 1.0, "a sample failed");

  std::size_t events = 0;
  for (const json& e : read_ndjson(o.eval_dir(id) / std::string(kJournalFile))) {
    if (e.at("kind") != "rate-event" || e.at("status") != 429) continue;
    ++events;
    const auto before = e.at("limit_before").get<std::uint64_t>();
    const auto after = e.at("limit_after").get<std::uint64_t>();
    check(after < before || (before == 1 && after == 1),
          "429 moved limit " + std::to_string(before) + " -> " + std::to_string(after));
  }
  check(events >= 10, "only " + std::to_string(events) + " 429 events");
  return {std::to_string(events) + " 429s, each shrank or held the floor; 100/100 scored"};
}

// 5. Successful calls are never repeated; counted at the model server.
Outcome no_retry_on_200() {
  TempDir home, benches;
  auto bench = dep::testing::arithmetic_benchmark("once", 60);
  dep::testing::write_benchmark(benches.path(), bench);
  std::map<std::string, std::string> answers;
  for (const auto& row : bench.rows) answers[dep::testing::prompt_for(bench, row)] = row.at("answer");

  std::mutex mu;
  std::map<std::string, int> received;
  httplib::Server model;
  model.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
    const std::string prompt = json::parse(req.body)["messages"][0]["content"];
    {
      std::lock_guard lk(mu);
      ++received[prompt];
    }
    const auto it = answers.find(prompt);
    json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", it == answers.end() ? "?" : it->second}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  const int port = model.bind_to_any_port("127.0.0.1");
  std::thread server([&] { model.listen_after_bind(); });
  model.wait_until_ready();

  ModelCard card;
  card.model_id = "chat";
  card.endpoint.kind = EndpointKind::http_chat;
  card.endpoint.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat";

  Counted counted;
  Orchestrator o = orchestrator(home.path(), steady_clock(), &counted);
  const EvaluationId id =
      o.create_evaluation(card, "once", "", ServerBinding::local(benches.path()), fast_config()).evaluation_id;
  RunOutcome out = o.run(id);
  model.stop();
  server.join();

  check(out.snapshot.state == LifecycleState::completed, "run ended " + std::string(to_string(out.snapshot.state)));
  check(received.size() == 60, std::to_string(received.size()) + " distinct prompts received");
  for (const auto& [prompt, n] : received) check(n == 1, "a prompt was received " + std::to_string(n) + " times");
  const auto per = counted.per_request();
  check(per.size() == 60, std::to_string(per.size()) + " sample ids dispatched");
  for (const auto& [sid, n] : per) check(n == 1, sid + " dispatched " + std::to_string(n) + " times");
  check(out.report->overall.at("acc") == 1.0, "acc " + std::to_string(out.report->overall.at("acc")));
  return {"60 samples, each received exactly once by the model server"};
}

// 6. Metrics agree with an independent reference.
Outcome metric_oracle_equivalence() {
  std::mt19937_64 rng(2026);
  const auto pairs = dep::oracle::random_pairs(rng, 1000);
  std::vector<metrics::AnswerPair> single;
  std::vector<metrics::MultiAnswerPair> multi;
  for (const auto& p : pairs) {
    single.push_back({p.prediction, p.golds.front()});
    multi.push_back({p.prediction, p.golds});
  }
  double worst = 0;
  auto compare = [&](double got, double want, const std::string& name) {
    worst = std::max(worst, std::abs(got - want));
    check(std::abs(got - want) <= 1e-12, name + ": " + std::to_string(got) + " vs " + std::to_string(want));
  };
  for (std::string_view name : {metrics::kAccuracy, metrics::kExactMatch, metrics::kTokenF1}) {
    const NormalizationSpec spec = metrics::default_normalization(name);
    compare(metrics::accuracy(single, spec).score, dep::oracle::mean_accuracy(pairs, spec), "acc");
    compare(metrics::exact_match(multi, spec).score, dep::oracle::mean_exact_match(pairs, spec), "em");
    compare(metrics::token_f1(multi, spec).score, dep::oracle::mean_token_f1(pairs, spec), "f1");
  }

  NormalizationSpec keep_articles;
  keep_articles.strip_articles = false;
  const std::vector<std::string> gold = {"cat sat down"};
  const double f1 = metrics::token_f1_score("the cat sat", gold, keep_articles);
  check(f1 == 2.0 / 3.0, "hand example gave " + std::to_string(f1));
  std::ostringstream d;
  d << "1000 pairs, max deviation " << worst << ", F1 example = 2/3";
  return {d.str()};
}

// 7. Local mount and HTTP binding produce the same report.
Outcome local_remote_parity() {
  TempDir home, benches;
  auto bench = dep::testing::arithmetic_benchmark("parity", 40);
  bench.metrics = json::array({"acc", "em", "f1"});
  dep::testing::write_benchmark(benches.path(), bench);
  const ModelCard model = scripted_card("m", dep::testing::answering_script(bench, 23, "12 apples"));
  Orchestrator o = orchestrator(home.path(), std::make_shared<VirtualClock>(), nullptr);

  const EvaluationId local_id =
      o.create_evaluation(model, "parity", "", ServerBinding::local(benches.path()), fast_config()).evaluation_id;
  RunOutcome local = o.run(local_id);

  HttpService http(BenchmarkService::from_directories({benches.path()}), std::nullopt);
  http.start("127.0.0.1", 0);
  const EvaluationId remote_id =
      o.create_evaluation(model, "parity", "", ServerBinding::remote(http.base_url()), fast_config()).evaluation_id;
  RunOutcome remote = o.run(remote_id);
  http.stop();

  check(local.report && remote.report, "missing report");
  check(same_results(*local.report, *remote.report), "reports differ");
  return {"acc " + std::to_string(local.report->overall.at("acc")) + " on both bindings, reports identical"};
}

// 8. The lifecycle validator matches the allowed set exactly.
Outcome lifecycle_suite() {
  using S = LifecycleState;
  const std::vector<std::pair<S, S>> allowed = {
      {S::running, S::paused}, {S::running, S::completed}, {S::running, S::failed},
      {S::paused, S::running}, {S::failed, S::running}};
  int pairs = 0;
  for (S from : kAllLifecycleStates) {
    for (S to : kAllLifecycleStates) {
      ++pairs;
      const bool expected = std::find(allowed.begin(), allowed.end(), std::pair{from, to}) != allowed.end();
      check(bool(validate_transition(from, to)) == expected,
            std::string(to_string(from)) + " -> " + std::string(to_string(to)) + " misclassified");
      if (from == S::completed) check(!validate_transition(from, to), "completed has an outgoing transition");
    }
  }
  check(pairs == 16, "grid has " + std::to_string(pairs) + " pairs");
  return {"16/16 pairs classified, completed is terminal"};
}

// 9. Rescans pick up added and removed packages.
Outcome discovery_plug_and_play() {
  TempDir benches;
  for (int i = 0; i < 3; ++i) {
    dep::testing::write_benchmark(benches / ("pkg" + std::to_string(i)),
                                  dep::testing::arithmetic_benchmark("set" + std::to_string(i), 4));
  }
  const std::size_t base = discover_datasets({benches.path()}).datasets.size();
  check(base == 3, "baseline " + std::to_string(base));
  dep::testing::write_benchmark(benches / "extra", dep::testing::arithmetic_benchmark("extra", 4));
  const std::size_t added = discover_datasets({benches.path()}).datasets.size();
  fs::remove_all(benches / "pkg1");
  fs::remove_all(benches / "extra");
  const std::size_t removed = discover_datasets({benches.path()}).datasets.size();
  check(added == base + 1, "after add " + std::to_string(added));
  check(removed == added - 2, "after removing two " + std::to_string(removed));
  return {"3 -> 4 -> 2 across rescans"};
}

// 10. One server with six packages: list, run, submit, report.
Outcome six_package_workflow() {
  TempDir home, benches;
  std::vector<dep::testing::ToyBenchmark> set;
  for (int i = 0; i < 6; ++i) {
    set.push_back(dep::testing::arithmetic_benchmark("toy" + std::to_string(i), 10 + i));
    dep::testing::write_benchmark(benches / ("toy" + std::to_string(i)), set.back());
  }
  auto wire = std::make_shared<WireLog>();
  HttpService http(BenchmarkService::from_directories({benches.path()}), std::nullopt);
  http.start("127.0.0.1", 0);

  auto endpoint = bind_endpoint(ServerBinding::remote(http.base_url()), wire);
  const DatasetList listed = endpoint->list_datasets();
  check(listed.datasets.size() == 6, "listed " + std::to_string(listed.datasets.size()));

  OrchestratorOptions opts;
  opts.home = home.path();
  opts.clock = std::make_shared<VirtualClock>();
  opts.wire_log = wire;
  Orchestrator o(opts);
  const EvaluationId id = o.create_evaluation(scripted_card("m", dep::testing::answering_script(set[3], 13)), "toy3", "",
                                              ServerBinding::remote(http.base_url()), fast_config())
                              .evaluation_id;
  RunOutcome out = o.run(id);
  http.stop();
  check(out.snapshot.state == LifecycleState::completed, "run ended " + std::string(to_string(out.snapshot.state)));
  check(out.report && out.report->overall.at("acc") == 1.0, "unexpected score");

  std::vector<std::string> steps;
  for (const auto& e : wire->entries()) {
    if (e.direction != WireDirection::client_to_server) continue;
    const std::string first_line = e.bytes.substr(0, e.bytes.find('\n'));
    std::string step;
    if (first_line.find("GET") == 0 && first_line.find("/samples") != std::string::npos) step = "samples";
    else if (first_line.find("GET") == 0 && first_line.find("/reports") != std::string::npos) step = "report";
    else if (first_line.find("GET") == 0 && first_line.find("/datasets") != std::string::npos) step = "list";
    else if (first_line.find("/submissions") != std::string::npos) step = "submit";
    else if (first_line.find("/evaluations") != std::string::npos) step = "open";
    if (!step.empty() && (steps.empty() || steps.back() != step)) steps.push_back(step);
  }
  auto pos = [&](const std::string& s) { return std::find(steps.begin(), steps.end(), s) - steps.begin(); };
  const auto n = static_cast<std::ptrdiff_t>(steps.size());
  check(pos("list") < n && pos("samples") < n && pos("submit") < n, "missing workflow steps");
  check(pos("list") < pos("samples") && pos("samples") < pos("submit"), "steps out of order");
  check(!out.report->evaluation_id.str().empty(), "report without evaluation id");
  std::string flow;
  for (const auto& s : steps) flow += (flow.empty() ? "" : " -> ") + s;
  return {"6 datasets listed; " + flow + "; acc 1"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"ground-truth isolation", ground_truth_isolation},
      {"resume equivalence", resume_equivalence},
      {"token-bucket timing", token_bucket_timing},
      {"congestion reaction", congestion_reaction},
      {"no retry on 200", no_retry_on_200},
      {"metric oracle equivalence", metric_oracle_equivalence},
      {"local/remote parity", local_remote_parity},
      {"lifecycle transitions", lifecycle_suite},
      {"discovery plug-and-play", discovery_plug_and_play},
      {"six-package workflow", six_package_workflow},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& [name, fn] = criteria[i];
    std::string verdict, detail;
    try {
      detail = fn().detail;
      verdict = "PASS";
    } catch (const std::exception& e) {
      detail = e.what();
      verdict = "FAIL";
      ++failures;
    }
    std::cout << verdict << "  " << (i + 1) << ". " << name << ": " << detail << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
