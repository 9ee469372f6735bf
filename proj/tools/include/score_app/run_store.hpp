#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "score/detection.hpp"

namespace score::app {

struct StoredSelection {
  Selection selection;
  std::uint64_t revision = 0;
};

/// Artifact root. Detection runs live in runs/<id>/ next to their
/// selection.json; every write goes through a temp file and a rename.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  // SCORE_LAB_ROOT, else ./score-lab.
  static std::filesystem::path default_root();

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path runs_dir() const { return root_ / "runs"; }
  std::filesystem::path datasets_dir() const { return root_ / "datasets"; }
  std::filesystem::path models_dir() const { return root_ / "models"; }
  std::filesystem::path reports_dir() const { return root_ / "reports"; }

  static bool valid_id(const std::string& id);
  std::vector<std::string> list_runs() const;
  bool has_run(const std::string& id) const;
  std::filesystem::path run_dir(const std::string& id) const;

  std::string manifest_bytes(const std::string& id) const;
  // Only plain file names inside the run's images/ directory resolve.
  std::filesystem::path image_path(const std::string& id, const std::string& file) const;
  DetectionRun load_run(const std::string& id) const;

  std::optional<StoredSelection> selection(const std::string& id) const;
  /// Validates against the run, then replaces the stored selection with the
  /// next revision. Writers are serialized.
  StoredSelection put_selection(const std::string& id, Selection selection);

 private:
  std::filesystem::path selection_path(const std::string& id) const;

  std::filesystem::path root_;
  mutable std::mutex write_mutex_;
};

}  // namespace score::app
