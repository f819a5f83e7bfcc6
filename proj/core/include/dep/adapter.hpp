#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "dep/clock.hpp"
#include "dep/protocol.hpp"

namespace dep {

/// Base of every model binding. generate() never throws: failures on the
/// model side come back status-coded, and the response always carries the
/// model_id and latency in its metadata.
class ModelAdapter {
 public:
  explicit ModelAdapter(ModelCard card, std::shared_ptr<Clock> clock = steady_clock());
  virtual ~ModelAdapter() = default;

  ModelAdapter(const ModelAdapter&) = delete;
  ModelAdapter& operator=(const ModelAdapter&) = delete;

  AdapterResponse generate(const InferenceRequest& request);

  const ModelCard& card() const noexcept { return card_; }
  const std::string& model_id() const noexcept { return card_.model_id; }
  std::uint64_t call_count() const noexcept { return calls_.load(); }

 protected:
  virtual AdapterResponse do_generate(const InferenceRequest& request) = 0;

  Clock& clock() const noexcept { return *clock_; }
  std::shared_ptr<Clock> clock_ptr() const noexcept { return clock_; }

  static AdapterResponse success(std::string text);
  static AdapterResponse failure(StatusCode status, std::string error_log);

 private:
  ModelCard card_;
  std::shared_ptr<Clock> clock_;
  std::atomic<std::uint64_t> calls_{0};
};

// Scripted test double. Script shape:
//
//   {
//     "schedule": [429, 200, {"status": 500, "delay_ms": 5}],   consumed first, in call order
//     "faults": {"429": 0.3}, "seed": 7,                         seeded random fault injection
//     "delay_ms": 0,                                             default per-call delay
//     "*": {"status": 200, "text": "B"},                         prompt patterns ('*' wildcard)
//     "What is 2+2*": "4",                                       shorthand for a 200 with text
//     "hello": {"echo": true}
//   }
//
// A bare 200 in the schedule, or a call that falls through the schedule,
// is answered by the most specific matching pattern. Without any patterns
// the model echoes the prompt.
class ScriptedModel final : public ModelAdapter {
 public:
  struct Reply {
    StatusCode status = StatusCode::ok;
    std::optional<std::string> text;
    bool echo = false;
    std::optional<Duration> delay;
  };

  explicit ScriptedModel(ModelCard card, std::shared_ptr<Clock> clock = steady_clock());

  /// Validates a script without building a model; throws Error(unprocessable).
  static void validate_script(const nlohmann::json& script);

 protected:
  AdapterResponse do_generate(const InferenceRequest& request) override;

 private:
  Reply pick(const std::string& prompt);
  const Reply* match(const std::string& prompt) const;

  std::vector<std::optional<Reply>> schedule_;  // nullopt = defer to patterns
  std::vector<std::pair<std::string, Reply>> patterns_;
  std::vector<std::pair<StatusCode, double>> faults_;
  Duration default_delay_{0};

  std::mutex mu_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

/// Generic JSON chat-completion client: one user message out, one assistant
/// message back. Upstream 429s pass through untouched; no internal retries.
class HttpChatModel final : public ModelAdapter {
 public:
  explicit HttpChatModel(ModelCard card, std::shared_ptr<Clock> clock = steady_clock());

 protected:
  AdapterResponse do_generate(const InferenceRequest& request) override;

 private:
  std::string origin_;
  std::string path_;
};

using AdapterFactory = std::function<std::shared_ptr<ModelAdapter>(const ModelCard&)>;

std::shared_ptr<ModelAdapter> make_adapter(const ModelCard& card, std::shared_ptr<Clock> clock = steady_clock());

ModelCard scripted_card(std::string model_id, nlohmann::json script);

/// Maps one chat-completion HTTP exchange to an adapter outcome.
AdapterResponse interpret_chat_reply(int http_status, const std::string& body);

// Model discovery over *.model.json files.

struct DiscoveryWarning {
  std::filesystem::path file;
  std::string message;
};

struct ModelDiscovery {
  std::vector<ModelCard> models;  // sorted by model_id
  std::vector<DiscoveryWarning> warnings;
  std::map<std::string, std::filesystem::path> sources;
};

inline constexpr std::string_view kModelCardSuffix = ".model.json";

ModelCard load_model_card(const std::filesystem::path& file);

/// Recursively scans `dirs`. Malformed cards become warnings; the same
/// model_id in two files is an Error naming both paths.
ModelDiscovery discover_models(const std::vector<std::filesystem::path>& dirs);

}  // namespace dep
