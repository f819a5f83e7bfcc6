#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "dep/benchmark.hpp"
#include "dep/protocol.hpp"

namespace dep {

struct ServiceOptions {
  PackagePlugins plugins;
  bool persist_reports = true;  // <package>/runs/<evaluation_id>.report.json
};

// Hosts any number of benchmark packages, namespaced by dataset_id, and owns
// the evaluation contexts and the write-once report store.
//
// Submissions for one evaluation accumulate: non-final submissions stage
// predictions, the final one evaluates the staged union. Restaging an
// identical prediction is a no-op; a different one for the same sample is a
// conflict. After the report exists, a final submission whose union digest
// matches returns the stored report unchanged; any other payload is 409.
class BenchmarkService {
 public:
  explicit BenchmarkService(ServiceOptions options = {});
  ~BenchmarkService();

  BenchmarkService(const BenchmarkService&) = delete;
  BenchmarkService& operator=(const BenchmarkService&) = delete;

  /// Loads each directory as a package, or each package directly beneath it.
  static std::unique_ptr<BenchmarkService> from_directories(const std::vector<std::filesystem::path>& dirs,
                                                            ServiceOptions options = {});

  void add(BenchmarkPackage package);

  DatasetList list_datasets() const;
  SamplePage fetch_samples(const std::string& dataset_id, const std::string& version, std::uint64_t offset,
                           std::uint64_t limit) const;
  /// Idempotent for the same (id, dataset, model); returns the stored record.
  OpenEvaluation open_evaluation(const OpenEvaluation& request);
  SubmissionAck submit(const Submission& submission);
  EvaluationReport report(const EvaluationId& id) const;

  std::size_t dataset_count() const;
  const BenchmarkPackage& package(const std::string& dataset_id) const;

 private:
  struct Context;
  struct Hosted;

  Hosted& hosted_for(const std::string& dataset_id) const;
  std::shared_ptr<Context> context_for(const EvaluationId& id) const;
  void restore_contexts(Hosted& hosted);
  void persist(const Hosted& hosted, const Context& ctx) const;

  ServiceOptions options_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::unique_ptr<Hosted>> datasets_;
  std::map<EvaluationId, std::shared_ptr<Context>> contexts_;
};

/// SHA-256 over the canonical encoding of the predictions sorted by
/// sample_id, as lowercase hex.
std::string payload_digest(std::vector<PredictionRecord> predictions);

}  // namespace dep
