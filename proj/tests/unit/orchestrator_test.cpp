#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "dep/codec.hpp"
#include "dep/orchestrator.hpp"
#include "dep/service.hpp"
#include "fixtures.hpp"

namespace dep {
namespace {

using nlohmann::json;
using testing::CountingAdapter;
using testing::TempDir;

class RejectSubmissions final : public Carrier {
 public:
  explicit RejectSubmissions(std::shared_ptr<BenchmarkService> s) : inner_(std::move(s)) {}
  WireResponse exchange(const WireRequest& r) override {
    if (r.target.find("/submissions") != std::string::npos) {
      return {422, {}, encode_message(ErrorBody{StatusCode::unprocessable, "rejected", "predictions", {}})};
    }
    return inner_.exchange(r);
  }

 private:
  LocalCarrier inner_;
};

class OrchestratorTest : public ::testing::Test {
 protected:
  void SetUp() override {
    bench_ = testing::arithmetic_benchmark("arith", 100);
    testing::write_benchmark(bench_dir_.path(), bench_);
  }

  Orchestrator make(std::shared_ptr<Clock> clock = std::make_shared<VirtualClock>()) {
    OrchestratorOptions o;
    o.home = home_.path();
    o.clock = clock;
    o.seed = 42;
    o.adapter_factory = [this, clock](const ModelCard& card) {
      auto a = std::make_shared<CountingAdapter>(make_adapter(card, clock));
      adapters_.push_back(a);
      return a;
    };
    if (endpoint_factory_) o.endpoint_factory = endpoint_factory_;
    return Orchestrator(o);
  }

  RunConfig fast() const {
    RunConfig c;
    c.rate = 1e6;
    c.bucket_capacity = 1000;
    c.page_size = 16;
    return c;
  }

  EvaluationId create(Orchestrator& o, const json& script, RunConfig cfg) {
    return o.create_evaluation(scripted_card("model-x", script), "arith", "", ServerBinding::local(bench_dir_.path()),
                               cfg)
        .evaluation_id;
  }

  std::uint64_t successes() const {
    std::uint64_t n = 0;
    for (const auto& a : adapters_) n += a->successes();
    return n;
  }

  std::map<std::string, std::uint64_t> per_request() const {
    std::map<std::string, std::uint64_t> out;
    for (const auto& a : adapters_) {
      for (const auto& [k, v] : a->per_request()) out[k] += v;
    }
    return out;
  }

  std::vector<std::string> journal_lines(Orchestrator& o, const EvaluationId& id) {
    std::istringstream in(testing::read_file(o.eval_dir(id) / std::string(kJournalFile)));
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
  }

  TempDir home_;
  TempDir bench_dir_;
  testing::ToyBenchmark bench_;
  std::vector<std::shared_ptr<CountingAdapter>> adapters_;
  EndpointFactory endpoint_factory_;
};

TEST_F(OrchestratorTest, CreatesPausedTask) {
  Orchestrator o = make();
  EvaluationId id = create(o, testing::answering_script(bench_, 0), fast());
  TaskSnapshot s = o.status(id);
  EXPECT_EQ(s.state, LifecycleState::paused);
  EXPECT_EQ(s.dataset_version, "1.0.0");
  EXPECT_EQ(o.list().size(), 1u);
  EXPECT_TRUE(std::filesystem::exists(o.eval_dir(id) / std::string(kManifestFile)));
}

TEST_F(OrchestratorTest, UnknownDatasetOrTaskIsNotFound) {
  Orchestrator o = make();
  try {
    o.create_evaluation(scripted_card("m", {}), "missing", "", ServerBinding::local(bench_dir_.path()), fast());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.status(), StatusCode::not_found);
  }
  try {
    o.status(new_evaluation_id());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.status(), StatusCode::not_found);
  }
}

TEST_F(OrchestratorTest, FullRunCompletes) {
  Orchestrator o = make();
  EvaluationId id = create(o, testing::answering_script(bench_, 60), fast());
  RunOutcome out = o.run(id);
  EXPECT_EQ(out.snapshot.state, LifecycleState::completed);
  EXPECT_EQ(out.snapshot.progress, (Progress{100, 100, 100}));
  ASSERT_TRUE(out.report.has_value());
  EXPECT_DOUBLE_EQ(out.report->overall.at("acc"), 0.6);
  EXPECT_EQ(successes(), 100u);
  EXPECT_EQ(*o.report_bytes(id), encode_message(*out.report));

  RunOutcome again = o.run(id);
  EXPECT_EQ(again.snapshot.state, LifecycleState::completed);
  EXPECT_EQ(successes(), 100u);
  EXPECT_EQ(encode_message(*again.report), encode_message(*out.report));
  EXPECT_EQ(o.completed_reports().size(), 1u);
}

TEST_F(OrchestratorTest, InterruptThenResumeDispatchesOnlyTheRest) {
  Orchestrator o = make();
  EvaluationId id = create(o, testing::answering_script(bench_, 50), fast());
  std::uint64_t seen = 0;
  RunControl stop_at_40{[&] { return seen >= 40; }, [&](const Progress& p) { seen = p.generated; }};
  RunOutcome first = o.run(id, stop_at_40);
  EXPECT_EQ(first.snapshot.state, LifecycleState::paused);
  const std::uint64_t done = first.snapshot.progress.generated;
  EXPECT_GE(done, 40u);
  EXPECT_LT(done, 100u);
  EXPECT_EQ(successes(), done);

  RunOutcome second = o.resume(id);
  EXPECT_EQ(second.snapshot.state, LifecycleState::completed);
  EXPECT_EQ(successes(), 100u);
  for (const auto& [rid, n] : per_request()) EXPECT_EQ(n, 1u) << rid;
  EXPECT_DOUBLE_EQ(second.report->overall.at("acc"), 0.5);
}

TEST_F(OrchestratorTest, PauseRequestStopsARun) {
  Orchestrator o = make();
  EvaluationId id = create(o, testing::answering_script(bench_, 10), fast());
  bool asked = false;
  RunControl ctl{nullptr, [&](const Progress& p) {
                   if (!asked && p.generated >= 10) {
                     o.request_pause(id);
                     asked = true;
                   }
                 }};
  RunOutcome out = o.run(id, ctl);
  EXPECT_EQ(out.snapshot.state, LifecycleState::paused);
  EXPECT_FALSE(std::filesystem::exists(o.eval_dir(id) / std::string(kPauseRequestFile)));
  EXPECT_EQ(o.run(id).snapshot.state, LifecycleState::completed);
  EXPECT_THROW(o.request_pause(id), Error);
}

TEST_F(OrchestratorTest, RejectedSubmissionFails) {
  auto service = std::shared_ptr<BenchmarkService>(BenchmarkService::from_directories({bench_dir_.path()}));
  endpoint_factory_ = [service](const ServerBinding& b) {
    return std::make_unique<BenchmarkEndpoint>(b, std::make_unique<RejectSubmissions>(service));
  };
  Orchestrator o = make();
  EvaluationId id = create(o, testing::answering_script(bench_, 10), fast());
  RunOutcome out = o.run(id);
  EXPECT_EQ(out.snapshot.state, LifecycleState::failed);
  ASSERT_TRUE(out.snapshot.last_error.has_value());
  EXPECT_NE(out.snapshot.last_error->find("422"), std::string::npos);
  EXPECT_FALSE(out.report.has_value());
}

TEST_F(OrchestratorTest, PartialJournalLineIsRedispatched) {
  Orchestrator o = make();
  EvaluationId id = create(o, testing::answering_script(bench_, 100), fast());
  std::uint64_t seen = 0;
  o.run(id, {[&] { return seen >= 30; }, [&](const Progress& p) { seen = p.generated; }});
  const std::uint64_t first = successes();

  // Simulate a crash in the middle of writing the last generated sample.
  auto lines = journal_lines(o, id);
  std::size_t last = lines.size();
  while (last-- > 0 && lines[last].find("\"sample-generated\"") == std::string::npos) {
  }
  ASSERT_LT(last, lines.size());
  std::string text;
  for (std::size_t i = 0; i < last; ++i) text += lines[i] + "\n";
  text += lines[last].substr(0, lines[last].size() / 2);
  testing::write_file(o.eval_dir(id) / std::string(kJournalFile), text);
  const std::string lost = json::parse(lines[last])["record"]["sample_id"];

  EXPECT_EQ(o.status(id).progress.generated, first - 1);
  RunOutcome out = o.resume(id);
  EXPECT_EQ(out.snapshot.state, LifecycleState::completed);
  EXPECT_EQ(successes(), 101u);
  EXPECT_EQ(per_request().at(lost), 2u);
  EXPECT_DOUBLE_EQ(out.report->overall.at("acc"), 1.0);
}

TEST_F(OrchestratorTest, CorruptJournalFailsTheTask) {
  Orchestrator o = make();
  EvaluationId id = create(o, testing::answering_script(bench_, 1), fast());
  const auto file = o.eval_dir(id) / std::string(kJournalFile);
  testing::write_file(file, testing::read_file(file) + "not json at all\n");
  TaskSnapshot s = o.status(id);
  EXPECT_EQ(s.state, LifecycleState::failed);
  ASSERT_TRUE(s.last_error.has_value());
  EXPECT_NE(s.last_error->find("line 2"), std::string::npos);
  try {
    o.run(id);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.status(), StatusCode::unprocessable);
  }
}

TEST_F(OrchestratorTest, RateEventsVisibleDuringStorm) {
  Orchestrator o = make();
  json script = testing::answering_script(bench_, 100);
  script["faults"] = {{"429", 0.5}};
  script["seed"] = 3;
  EvaluationId id = create(o, script, fast());
  std::uint64_t max_seen = 0;
  RunOutcome out = o.run(id, {nullptr, [&](const Progress& p) {
                                if (p.generated % 20 == 0) max_seen = std::max(max_seen, o.status(id).rate_event_count);
                              }});
  EXPECT_GT(max_seen, 0u);
  EXPECT_EQ(out.snapshot.state, LifecycleState::completed);
  EXPECT_EQ(out.report->counts.scored, 100u);
  EXPECT_FALSE(out.snapshot.recent_rate_events.empty());
  EXPECT_LE(out.snapshot.recent_rate_events.size(), TaskState::kRecentRateEvents);
}

TEST_F(OrchestratorTest, BoundedRetryRecovers) {
  Orchestrator o = make();
  json script = testing::answering_script(bench_, 100);
  script["schedule"] = {503, 500, 503};
  EvaluationId id = create(o, script, fast());
  RunOutcome out = o.run(id);
  EXPECT_EQ(out.snapshot.state, LifecycleState::completed);
  EXPECT_DOUBLE_EQ(out.report->overall.at("acc"), 1.0);
}

TEST_F(OrchestratorTest, ExhaustedRetriesRecordFailure) {
  Orchestrator o = make();
  json script = testing::answering_script(bench_, 100);
  script[testing::prompt_for(bench_, bench_.rows[7])] = {{"status", 503}};
  EvaluationId id = create(o, script, fast());
  RunOutcome out = o.run(id);
  EXPECT_EQ(out.snapshot.state, LifecycleState::completed);
  EXPECT_EQ(out.report->counts.scored, 99u);
  EXPECT_EQ(per_request().at("q7"), 5u);
}

TEST_F(OrchestratorTest, NeverClassErrorIsNotRetried) {
  Orchestrator o = make();
  json script = testing::answering_script(bench_, 100);
  script[testing::prompt_for(bench_, bench_.rows[3])] = {{"status", 400}};
  EvaluationId id = create(o, script, fast());
  RunOutcome out = o.run(id);
  EXPECT_EQ(out.snapshot.state, LifecycleState::completed);
  EXPECT_EQ(per_request().at("q3"), 1u);
  EXPECT_EQ(out.report->counts.submitted, 100u);
  EXPECT_EQ(out.report->counts.scored, 99u);
}

TEST_F(OrchestratorTest, BatchedSubmissions) {
  Orchestrator o = make();
  RunConfig cfg = fast();
  cfg.submit_every = 25;
  EvaluationId id = create(o, testing::answering_script(bench_, 40), cfg);
  RunOutcome out = o.run(id);
  EXPECT_EQ(out.snapshot.state, LifecycleState::completed);
  EXPECT_DOUBLE_EQ(out.report->overall.at("acc"), 0.4);
  int submits = 0;
  for (const auto& l : journal_lines(o, id)) submits += l.find("\"submitted\"") != std::string::npos;
  EXPECT_GE(submits, 4);
}

TEST_F(OrchestratorTest, MissingBenchmarkDirectoryFailsTheRun) {
  Orchestrator o = make();
  EvaluationId id = create(o, testing::answering_script(bench_, 1), fast());
  std::filesystem::rename(bench_dir_.path(), bench_dir_.path().string() + ".moved");
  RunOutcome out = o.run(id);
  std::filesystem::rename(bench_dir_.path().string() + ".moved", bench_dir_.path());
  EXPECT_EQ(out.snapshot.state, LifecycleState::failed);
  EXPECT_NE(out.snapshot.last_error.value_or("").find("404"), std::string::npos);
  EXPECT_EQ(successes(), 0u);
  EXPECT_EQ(o.run(id).snapshot.state, LifecycleState::completed);
}

TEST_F(OrchestratorTest, WorksOnTheSteadyClock) {
  Orchestrator o = make(steady_clock());
  EvaluationId id = create(o, testing::answering_script(bench_, 100), fast());
  EXPECT_EQ(o.run(id).snapshot.state, LifecycleState::completed);
}

}  // namespace
}  // namespace dep
