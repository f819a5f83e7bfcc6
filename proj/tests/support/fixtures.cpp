#include "fixtures.hpp"

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include "dep/benchmark.hpp"
#include "dep/codec.hpp"

namespace dep::testing {

namespace fs = std::filesystem;
using nlohmann::json;

TempDir::TempDir() {
  std::string tmpl = (fs::temp_directory_path() / "dep-test-XXXXXX").string();
  if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_file(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + file.string());
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_benchmark(const fs::path& dir, const ToyBenchmark& bench) {
  json card = {
      {"dataset_id", bench.dataset_id},
      {"version", bench.version},
      {"description", "toy benchmark " + bench.dataset_id},
      {"task_type", "qa"},
      {"subtasks", bench.subtasks},
      {"metrics", bench.metrics},
      {"sample_count", bench.declared_count.value_or(bench.rows.size())},
      {"data_format", "jsonl"},
      {"prompt_template_ref", "prompt.tmpl"},
  };
  json loader = {{"format", "jsonl"}, {"fields", {{"id", "id"}, {"gold", "answer"}, {"inputs", {"question"}}}}};
  if (bench.subtasks.size()) loader["fields"]["subtask"] = "topic";
  loader.update(bench.loader_extra);

  std::string data;
  for (const auto& row : bench.rows) data += row.dump() + "\n";

  write_file(dir / "dataset.card.json", card.dump(2));
  write_file(dir / "loader.json", loader.dump(2));
  write_file(dir / "prompt.tmpl", bench.prompt);
  write_file(dir / "data" / "samples.jsonl", data);
  return dir;
}

ToyBenchmark arithmetic_benchmark(std::string dataset_id, std::size_t n) {
  ToyBenchmark b;
  b.dataset_id = std::move(dataset_id);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = i, c = 2 * i + 1;
    b.rows.push_back({{"id", "q" + std::to_string(i)},
                      {"question", "What is " + std::to_string(a) + "+" + std::to_string(c) + "?"},
                      {"answer", std::to_string(a + c)}});
  }
  return b;
}

std::string prompt_for(const ToyBenchmark& bench, const json& row) {
  return PromptTemplate(bench.prompt).render({{"question", row.at("question").get<std::string>()}});
}

json answering_script(const ToyBenchmark& bench, std::size_t correct, const std::string& fallback) {
  json script = json::object();
  for (std::size_t i = 0; i < bench.rows.size() && i < correct; ++i) {
    const json& answer = bench.rows[i].at("answer");
    script[prompt_for(bench, bench.rows[i])] = answer.is_array() ? answer.front() : answer;
  }
  script["*"] = fallback;
  return script;
}

void write_model_card(const fs::path& file, const ModelCard& card) {
  write_file(file, to_json_value(card).dump(2));
}

CountingAdapter::CountingAdapter(std::shared_ptr<ModelAdapter> inner)
    : ModelAdapter(inner->card()), inner_(std::move(inner)) {}

std::map<std::string, std::uint64_t> CountingAdapter::per_request() const {
  std::lock_guard lk(mu_);
  return per_request_;
}

AdapterResponse CountingAdapter::do_generate(const InferenceRequest& request) {
  {
    std::lock_guard lk(mu_);
    ++per_request_[request.request_id];
  }
  AdapterResponse r = inner_->generate(request);
  if (r.ok()) ++successes_;
  return r;
}

std::string nonce(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (int i = 0; i < 16; ++i) out += kHex[rng() % 16];
  return out;
}

}  // namespace dep::testing
