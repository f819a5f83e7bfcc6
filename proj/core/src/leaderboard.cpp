#include <algorithm>
#include <set>

#include "dep/orchestrator.hpp"

namespace dep {

namespace fs = std::filesystem;
using nlohmann::json;

DatasetDiscovery discover_datasets(const std::vector<fs::path>& dirs, const PackagePlugins& plugins) {
  std::set<fs::path> package_dirs;
  for (const auto& root : dirs) {
    std::error_code ec;
    if (looks_like_package(root)) package_dirs.insert(root);
    if (!fs::is_directory(root, ec)) continue;
    fs::recursive_directory_iterator it(root, fs::directory_options::skip_permission_denied, ec);
    for (; !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
      if (it->is_directory(ec) && it->path().filename() == "runs") {
        it.disable_recursion_pending();
        continue;
      }
      if (it->path().filename() == kDatasetCardFile) package_dirs.insert(it->path().parent_path());
    }
  }

  DatasetDiscovery out;
  for (const auto& dir : package_dirs) {
    PackageCheck check = check_package(dir, plugins);
    if (!check.package) {
      for (const auto& d : check.diagnostics) out.warnings.push_back({dir, d.str()});
      continue;
    }
    const DatasetCard& card = check.package->card();
    if (auto prior = out.sources.find(card.dataset_id); prior != out.sources.end()) {
      out.warnings.push_back({dir, "dataset_id '" + card.dataset_id + "' already provided by " + prior->second.string()});
      continue;
    }
    out.sources.emplace(card.dataset_id, dir);
    out.datasets.push_back(card);
  }
  std::sort(out.datasets.begin(), out.datasets.end(),
            [](const DatasetCard& a, const DatasetCard& b) { return a.dataset_id < b.dataset_id; });
  return out;
}

Discovery discover(const std::vector<fs::path>& model_dirs, const std::vector<fs::path>& benchmark_dirs,
                   const PackagePlugins& plugins) {
  Discovery out;
  ModelDiscovery models = discover_models(model_dirs);
  DatasetDiscovery datasets = discover_datasets(benchmark_dirs, plugins);
  out.models = std::move(models.models);
  out.datasets = std::move(datasets.datasets);
  out.warnings = std::move(models.warnings);
  out.warnings.insert(out.warnings.end(), datasets.warnings.begin(), datasets.warnings.end());
  return out;
}

Leaderboard aggregate(const std::vector<EvaluationReport>& reports, const std::optional<LeaderboardColumn>& sort_by) {
  // Latest report per (model, dataset).
  std::map<std::string, std::map<std::string, const EvaluationReport*>> latest;
  for (const auto& r : reports) {
    const EvaluationReport*& slot = latest[r.model_id][r.dataset_id];
    if (!slot || std::tie(slot->generated_at, slot->evaluation_id) < std::tie(r.generated_at, r.evaluation_id)) {
      slot = &r;
    }
  }

  Leaderboard board;
  std::set<LeaderboardColumn> columns;
  for (const auto& [model, by_dataset] : latest) {
    for (const auto& [dataset, rep] : by_dataset) {
      for (const auto& [metric, value] : rep->overall) columns.insert({dataset, metric});
    }
  }
  board.columns.assign(columns.begin(), columns.end());

  for (const auto& [model, by_dataset] : latest) {
    LeaderboardRow row;
    row.model_id = model;
    for (const auto& col : board.columns) {
      std::optional<double> cell;
      if (auto d = by_dataset.find(col.dataset_id); d != by_dataset.end()) {
        if (auto m = d->second->overall.find(col.metric); m != d->second->overall.end()) cell = m->second;
      }
      row.cells.push_back(cell);
    }
    board.rows.push_back(std::move(row));
  }

  board.sort_column = sort_by;
  if (!board.sort_column && !board.columns.empty()) board.sort_column = board.columns.front();
  if (board.sort_column) {
    auto pos = std::find(board.columns.begin(), board.columns.end(), *board.sort_column);
    if (pos != board.columns.end()) {
      const std::size_t idx = static_cast<std::size_t>(pos - board.columns.begin());
      std::stable_sort(board.rows.begin(), board.rows.end(), [idx](const LeaderboardRow& a, const LeaderboardRow& b) {
        const auto& x = a.cells[idx];
        const auto& y = b.cells[idx];
        if (x.has_value() != y.has_value()) return x.has_value();
        if (x && *x != *y) return *x > *y;
        return a.model_id < b.model_id;
      });
    }
  }
  return board;
}

json Leaderboard::to_json() const {
  json cols = json::array();
  for (const auto& c : columns) cols.push_back({{"dataset_id", c.dataset_id}, {"metric", c.metric}});
  json rows_json = json::array();
  for (const auto& r : rows) {
    json scores = json::object();
    for (std::size_t i = 0; i < columns.size(); ++i) {
      scores[columns[i].label()] = r.cells[i] ? json(*r.cells[i]) : json(nullptr);
    }
    rows_json.push_back({{"model_id", r.model_id}, {"scores", scores}});
  }
  json j = {{"columns", cols}, {"rows", rows_json}};
  j["sort_column"] = sort_column ? json{{"dataset_id", sort_column->dataset_id}, {"metric", sort_column->metric}}
                                 : json(nullptr);
  return j;
}

}  // namespace dep
