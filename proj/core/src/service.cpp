#include "dep/service.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "dep/codec.hpp"

namespace dep {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kDefaultPageLimit = 64;

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error(StatusCode::internal_error, "digest context allocation failed");
  bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
            EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 && EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error(StatusCode::internal_error, "digest computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0x0f]);
  }
  return out;
}

void write_atomically(const fs::path& file, const std::string& bytes) {
  fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(StatusCode::internal_error, "cannot write " + tmp.string());
    out << bytes;
  }
  fs::rename(tmp, file);
}

std::optional<std::string> slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string payload_digest(std::vector<PredictionRecord> predictions) {
  std::sort(predictions.begin(), predictions.end(),
            [](const PredictionRecord& a, const PredictionRecord& b) { return a.sample_id < b.sample_id; });
  json arr = json::array();
  for (const auto& p : predictions) arr.push_back(to_json_value(p));
  return sha256_hex(dump_compact(arr));
}

struct BenchmarkService::Context {
  std::mutex mu;
  OpenEvaluation open;
  std::map<std::string, PredictionRecord> staged;
  std::optional<std::string> digest;
  std::optional<EvaluationReport> report;
};

struct BenchmarkService::Hosted {
  explicit Hosted(BenchmarkPackage p) : pkg(std::move(p)) {}
  BenchmarkPackage pkg;
  std::mutex eval_mu;  // held during evaluation unless the card declares a pure evaluator
};

BenchmarkService::BenchmarkService(ServiceOptions options) : options_(std::move(options)) {}
BenchmarkService::~BenchmarkService() = default;

std::unique_ptr<BenchmarkService> BenchmarkService::from_directories(const std::vector<fs::path>& dirs,
                                                                     ServiceOptions options) {
  auto service = std::make_unique<BenchmarkService>(options);
  for (const auto& dir : dirs) {
    if (looks_like_package(dir)) {
      service->add(load_package(dir, options.plugins));
      continue;
    }
    if (!fs::is_directory(dir)) throw Error(StatusCode::not_found, "benchmark directory not found: " + dir.string());
    std::vector<fs::path> children;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_directory() && looks_like_package(e.path())) children.push_back(e.path());
    }
    std::sort(children.begin(), children.end());
    for (const auto& child : children) service->add(load_package(child, options.plugins));
  }
  return service;
}

void BenchmarkService::add(BenchmarkPackage package) {
  std::unique_lock lk(mu_);
  const std::string id = package.card().dataset_id;
  if (datasets_.count(id)) throw Error(StatusCode::conflict, "dataset '" + id + "' is already hosted");
  auto hosted = std::make_unique<Hosted>(std::move(package));
  if (options_.persist_reports) restore_contexts(*hosted);
  datasets_.emplace(id, std::move(hosted));
}

void BenchmarkService::restore_contexts(Hosted& hosted) {
  const fs::path runs = hosted.pkg.directory() / "runs";
  std::error_code ec;
  if (!fs::is_directory(runs, ec)) return;
  for (const auto& e : fs::directory_iterator(runs, ec)) {
    const std::string name = e.path().filename().string();
    const std::string suffix = ".context.json";
    if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
      continue;
    }
    try {
      json j = json::parse(slurp(e.path()).value_or(""));
      auto ctx = std::make_shared<Context>();
      ctx->open = from_json_value<OpenEvaluation>(j.at("open"), "open");
      if (j.contains("digest") && j["digest"].is_string()) ctx->digest = j["digest"].get<std::string>();
      for (const auto& p : j.value("staged", json::array())) {
        auto rec = from_json_value<PredictionRecord>(p, "staged");
        ctx->staged.emplace(rec.sample_id, std::move(rec));
      }
      fs::path report_file = runs / (ctx->open.evaluation_id.str() + ".report.json");
      if (auto text = slurp(report_file)) ctx->report = decode_message<EvaluationReport>(*text);
      contexts_[ctx->open.evaluation_id] = ctx;
    } catch (const std::exception& ex) {
      spdlog::warn("ignoring unreadable evaluation context {}: {}", e.path().string(), ex.what());
    }
  }
}

void BenchmarkService::persist(const Hosted& hosted, const Context& ctx) const {
  if (!options_.persist_reports) return;
  const fs::path runs = hosted.pkg.directory() / "runs";
  const std::string eid = ctx.open.evaluation_id.str();
  json j = json::object();
  j["open"] = to_json_value(ctx.open);
  if (ctx.digest) j["digest"] = *ctx.digest;
  json staged = json::array();
  for (const auto& [id, p] : ctx.staged) staged.push_back(to_json_value(p));
  j["staged"] = std::move(staged);
  write_atomically(runs / (eid + ".context.json"), dump_compact(j));
  if (ctx.report) write_atomically(runs / (eid + ".report.json"), encode_message(*ctx.report));
}

BenchmarkService::Hosted& BenchmarkService::hosted_for(const std::string& dataset_id) const {
  std::shared_lock lk(mu_);
  auto it = datasets_.find(dataset_id);
  if (it == datasets_.end()) throw Error(StatusCode::not_found, "dataset '" + dataset_id + "' not found");
  return *it->second;
}

std::shared_ptr<BenchmarkService::Context> BenchmarkService::context_for(const EvaluationId& id) const {
  std::shared_lock lk(mu_);
  auto it = contexts_.find(id);
  if (it == contexts_.end()) throw Error(StatusCode::not_found, "evaluation " + id.str() + " not found");
  return it->second;
}

std::size_t BenchmarkService::dataset_count() const {
  std::shared_lock lk(mu_);
  return datasets_.size();
}

const BenchmarkPackage& BenchmarkService::package(const std::string& dataset_id) const {
  return hosted_for(dataset_id).pkg;
}

DatasetList BenchmarkService::list_datasets() const {
  std::shared_lock lk(mu_);
  DatasetList list;
  for (const auto& [id, hosted] : datasets_) list.datasets.push_back(hosted->pkg.card());
  return list;
}

SamplePage BenchmarkService::fetch_samples(const std::string& dataset_id, const std::string& version,
                                           std::uint64_t offset, std::uint64_t limit) const {
  const Hosted& hosted = hosted_for(dataset_id);
  if (!version.empty() && version != hosted.pkg.card().version) {
    throw Error(StatusCode::not_found, "dataset '" + dataset_id + "' has no version '" + version + "'");
  }
  SamplePage page;
  page.dataset_id = dataset_id;
  page.offset = offset;
  page.total = hosted.pkg.size();
  page.samples = hosted.pkg.render_samples(offset, limit == 0 ? kDefaultPageLimit : limit);
  return page;
}

OpenEvaluation BenchmarkService::open_evaluation(const OpenEvaluation& request) {
  Hosted& hosted = hosted_for(request.dataset_id);
  if (!request.dataset_version.empty() && request.dataset_version != hosted.pkg.card().version) {
    throw Error(StatusCode::not_found,
                "dataset '" + request.dataset_id + "' has no version '" + request.dataset_version + "'");
  }
  std::unique_lock lk(mu_);
  auto it = contexts_.find(request.evaluation_id);
  if (it != contexts_.end()) {
    const OpenEvaluation& existing = it->second->open;
    if (existing.dataset_id != request.dataset_id || existing.model_id != request.model_id) {
      throw Error(StatusCode::conflict,
                  "evaluation " + request.evaluation_id.str() + " is already bound to another dataset or model");
    }
    return existing;
  }
  auto ctx = std::make_shared<Context>();
  ctx->open = request;
  ctx->open.dataset_version = hosted.pkg.card().version;
  ctx->open.extra = json::object();
  contexts_.emplace(request.evaluation_id, ctx);
  lk.unlock();
  std::lock_guard ctx_lock(ctx->mu);
  persist(hosted, *ctx);
  return ctx->open;
}

SubmissionAck BenchmarkService::submit(const Submission& submission) {
  auto ctx = context_for(submission.evaluation_id);
  std::lock_guard ctx_lock(ctx->mu);
  Hosted& hosted = hosted_for(ctx->open.dataset_id);
  const BenchmarkPackage& pkg = hosted.pkg;

  std::map<std::string, const PredictionRecord*> incoming;
  for (std::size_t i = 0; i < submission.predictions.size(); ++i) {
    const auto& p = submission.predictions[i];
    const std::string path = "predictions[" + std::to_string(i) + "].sample_id";
    if (!pkg.contains(p.sample_id)) {
      throw Error(StatusCode::unprocessable, "unknown sample_id '" + p.sample_id + "'", path);
    }
    if (!incoming.emplace(p.sample_id, &p).second) {
      throw Error(StatusCode::unprocessable, "duplicate sample_id '" + p.sample_id + "'", path);
    }
  }
  bool adds_new = false;
  for (const auto& [id, p] : incoming) {
    auto it = ctx->staged.find(id);
    if (it == ctx->staged.end()) {
      adds_new = true;
    } else if (!(it->second == *p)) {
      throw Error(StatusCode::conflict, "a different prediction for sample '" + id + "' was already submitted");
    }
  }

  SubmissionAck ack;
  ack.evaluation_id = submission.evaluation_id;
  if (ctx->report) {
    if (adds_new) throw Error(StatusCode::conflict, "evaluation " + submission.evaluation_id.str() + " is final");
    ack.staged = ctx->staged.size();
    if (submission.final) ack.report = ctx->report;
    return ack;
  }

  for (const auto& [id, p] : incoming) ctx->staged.emplace(id, *p);
  ack.staged = ctx->staged.size();
  if (!submission.final) {
    persist(hosted, *ctx);
    return ack;
  }

  std::vector<PredictionRecord> all;
  all.reserve(ctx->staged.size());
  for (const auto& [id, p] : ctx->staged) all.push_back(p);
  EvaluationReport report;
  if (pkg.card().pure_evaluator) {
    report = evaluate_submission(pkg, ctx->open.evaluation_id, ctx->open.model_id, all);
  } else {
    std::lock_guard eval_lock(hosted.eval_mu);
    report = evaluate_submission(pkg, ctx->open.evaluation_id, ctx->open.model_id, all);
  }
  ctx->digest = payload_digest(all);
  ctx->report = report;
  persist(hosted, *ctx);
  ack.report = std::move(report);
  return ack;
}

EvaluationReport BenchmarkService::report(const EvaluationId& id) const {
  auto ctx = context_for(id);
  std::lock_guard lk(ctx->mu);
  if (!ctx->report) throw Error(StatusCode::not_found, "no report yet for evaluation " + id.str());
  return *ctx->report;
}

}  // namespace dep
