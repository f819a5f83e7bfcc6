#include <algorithm>
#include <fstream>
#include <sstream>

#include "dep/adapter.hpp"
#include "dep/codec.hpp"

namespace dep {

namespace fs = std::filesystem;

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(StatusCode::not_found, "cannot read " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ModelCard load_model_card(const fs::path& file) {
  try {
    auto j = parse_message_json(read_file(file));
    ModelCard card = from_json_value<ModelCard>(j);
    if (card.endpoint.kind == EndpointKind::scripted) ScriptedModel::validate_script(card.endpoint.script);
    return card;
  } catch (const Error& e) {
    throw Error(e.status(), file.string() + ": " + e.what(), e.path());
  }
}

ModelDiscovery discover_models(const std::vector<fs::path>& dirs) {
  ModelDiscovery out;
  std::vector<fs::path> files;
  for (const auto& dir : dirs) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
      out.warnings.push_back({dir, "not a directory"});
      continue;
    }
    for (auto it = fs::recursive_directory_iterator(dir, fs::directory_options::skip_permission_denied, ec);
         it != fs::recursive_directory_iterator(); it.increment(ec)) {
      if (ec) break;
      if (it->is_regular_file() && ends_with(it->path().filename().string(), kModelCardSuffix)) {
        files.push_back(it->path());
      }
    }
  }
  std::sort(files.begin(), files.end());

  for (const auto& file : files) {
    ModelCard card;
    try {
      card = load_model_card(file);
    } catch (const Error& e) {
      out.warnings.push_back({file, e.what()});
      continue;
    }
    auto [it, inserted] = out.sources.emplace(card.model_id, file);
    if (!inserted) {
      throw Error(StatusCode::conflict, "duplicate model_id '" + card.model_id + "' in " + it->second.string() +
                                            " and " + file.string());
    }
    out.models.push_back(std::move(card));
  }
  std::sort(out.models.begin(), out.models.end(),
            [](const ModelCard& a, const ModelCard& b) { return a.model_id < b.model_id; });
  return out;
}

}  // namespace dep
