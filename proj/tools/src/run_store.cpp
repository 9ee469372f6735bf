#include "score_app/run_store.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>

#include "score/errors.hpp"
#include "score/serialize.hpp"

namespace score::app {

RunStore::RunStore(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path RunStore::default_root() {
  if (const char* env = std::getenv("SCORE_LAB_ROOT"); env && *env) return env;
  return "score-lab";
}

bool RunStore::valid_id(const std::string& id) {
  if (id.empty() || id.size() > 128 || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

std::vector<std::string> RunStore::list_runs() const {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(runs_dir(), ec)) {
    const auto id = entry.path().filename().string();
    if (entry.is_directory() && valid_id(id) && std::filesystem::exists(entry.path() / "manifest.json")) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool RunStore::has_run(const std::string& id) const {
  return valid_id(id) && std::filesystem::exists(runs_dir() / id / "manifest.json");
}

std::filesystem::path RunStore::run_dir(const std::string& id) const {
  if (!has_run(id)) throw NotFoundError("unknown run '" + id + "'");
  return runs_dir() / id;
}

std::string RunStore::manifest_bytes(const std::string& id) const { return read_file(run_dir(id) / "manifest.json"); }

std::filesystem::path RunStore::image_path(const std::string& id, const std::string& file) const {
  if (!valid_id(file)) throw NotFoundError("bad image name '" + file + "'");
  const auto path = run_dir(id) / "images" / file;
  if (!std::filesystem::is_regular_file(path)) throw NotFoundError("no image '" + file + "' in run '" + id + "'");
  return path;
}

DetectionRun RunStore::load_run(const std::string& id) const { return load_detection_run(run_dir(id)); }

std::filesystem::path RunStore::selection_path(const std::string& id) const { return run_dir(id) / "selection.json"; }

std::optional<StoredSelection> RunStore::selection(const std::string& id) const {
  const auto path = selection_path(id);
  if (!std::filesystem::exists(path)) return std::nullopt;
  const auto j = nlohmann::json::parse(read_file(path));
  return StoredSelection{selection_from_json(j.at("selection")), j.at("revision").get<std::uint64_t>()};
}

StoredSelection RunStore::put_selection(const std::string& id, Selection sel) {
  const auto run = load_run(id);
  if (sel.run_id.empty()) sel.run_id = run.run_id;
  validate_selection(run, sel);
  std::lock_guard lock(write_mutex_);
  const auto previous = selection(id);
  StoredSelection stored{std::move(sel), previous ? previous->revision + 1 : 1};
  const nlohmann::json j{{"revision", stored.revision}, {"selection", selection_to_json(stored.selection)}};
  write_file_atomic(selection_path(id), j.dump(2) + "\n");
  return stored;
}

}  // namespace score::app
