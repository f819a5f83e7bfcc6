#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dep/adapter.hpp"
#include "dep/protocol.hpp"

namespace dep::testing {

// Directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

 private:
  std::filesystem::path path_;
};

void write_file(const std::filesystem::path& file, const std::string& text);
std::string read_file(const std::filesystem::path& file);

struct ToyBenchmark {
  std::string dataset_id = "toy";
  std::string version = "1.0.0";
  std::vector<nlohmann::json> rows;  // each needs "id", "question", "answer"
  nlohmann::json metrics = nlohmann::json::array({"acc"});
  std::string prompt = "Q: {question}\nA:";
  std::vector<std::string> subtasks;  // declared on the card
  nlohmann::json loader_extra = nlohmann::json::object();
  std::optional<std::uint64_t> declared_count;  // defaults to rows.size()
};

/// Writes a JSONL package into `dir` (created) and returns `dir`.
std::filesystem::path write_benchmark(const std::filesystem::path& dir, const ToyBenchmark& bench);

/// n addition questions; row i asks for i + (2i + 1).
ToyBenchmark arithmetic_benchmark(std::string dataset_id, std::size_t n);

/// Prompt the server renders for `row` under `bench`.
std::string prompt_for(const ToyBenchmark& bench, const nlohmann::json& row);

/// Script answering the first `correct` rows with their gold and every other
/// prompt with `fallback`.
nlohmann::json answering_script(const ToyBenchmark& bench, std::size_t correct, const std::string& fallback = "0");

void write_model_card(const std::filesystem::path& file, const ModelCard& card);

// Wraps another adapter and counts what reaches it, per request_id.
class CountingAdapter final : public ModelAdapter {
 public:
  explicit CountingAdapter(std::shared_ptr<ModelAdapter> inner);

  std::uint64_t successes() const noexcept { return successes_.load(); }
  std::map<std::string, std::uint64_t> per_request() const;

 protected:
  AdapterResponse do_generate(const InferenceRequest& request) override;

 private:
  std::shared_ptr<ModelAdapter> inner_;
  std::atomic<std::uint64_t> successes_{0};
  mutable std::mutex mu_;
  std::map<std::string, std::uint64_t> per_request_;
};

/// 16 lowercase hex characters from a seeded generator.
std::string nonce(std::uint64_t seed);

}  // namespace dep::testing
