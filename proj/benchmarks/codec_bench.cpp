#include <benchmark/benchmark.h>

#include "dep/codec.hpp"

namespace {

using namespace dep;

Submission submission(std::size_t n) {
  Submission s;
  s.evaluation_id = new_evaluation_id();
  for (std::size_t i = 0; i < n; ++i) {
    PredictionRecord p;
    p.sample_id = "sample-" + std::to_string(i);
    p.raw_output = "The answer is " + std::to_string(i * 7) + ".";
    p.latency_ms = static_cast<std::int64_t>(i % 300);
    s.predictions.push_back(std::move(p));
  }
  return s;
}

void BM_EncodeSubmission(benchmark::State& state) {
  const Submission s = submission(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(encode_message(s));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeSubmission)->Arg(16)->Arg(1024);

void BM_DecodeSubmission(benchmark::State& state) {
  const std::string bytes = encode_message(submission(static_cast<std::size_t>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(decode_message<Submission>(bytes));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(bytes.size()));
}
BENCHMARK(BM_DecodeSubmission)->Arg(16)->Arg(1024);

}  // namespace
