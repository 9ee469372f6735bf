#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "score/tensor.hpp"
#include "score/train.hpp"

namespace score {

// g = (y, s): class label and spurious attribute.
struct Group {
  std::size_t y = 0;
  int s = 0;

  auto operator<=>(const Group&) const = default;
  std::string to_string() const { return "(y=" + std::to_string(y) + ",s=" + std::to_string(s) + ")"; }
};

struct GroupedSample {
  std::int64_t id = 0;
  Tensor image;    // 3 x H x W in [0, 1]
  std::size_t y = 0;
  int s = 0;
  Tensor gt_mask;  // H x W, 1 on stamped patch pixels, all zero when s == 0

  Group group() const { return {y, s}; }
};

enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };

struct PatchSpec {
  std::size_t size = 6;
  Corner corner = Corner::TopLeft;
  std::array<float, 3> color{1.0f, 0.0f, 0.0f};
};

// Per-split class counts and p(s=1|y). `exact` assigns s=1 to exactly
// round(p * count) samples of each class instead of drawing Bernoulli(p).
struct SplitSpec {
  std::vector<std::size_t> class_counts;
  std::vector<double> p_spurious;
  bool exact = false;

  std::size_t total() const;
};

enum class Split { Train = 0, Val = 1, Test = 2 };
std::string to_string(Split split);

struct DatasetSpec {
  std::string name = "custom";
  std::size_t num_classes = 2;
  SplitSpec train;
  SplitSpec val;
  SplitSpec test;
  double contrast = 0.6;  // core shape intensity above background
  double noise = 0.1;     // background and shape pixel noise amplitude
  PatchSpec patch;
  std::uint64_t seed = 0;
  std::size_t image_size = 32;

  const SplitSpec& split(Split which) const;
  void validate() const;
};

class GroupedDataset {
 public:
  std::string split;
  std::size_t num_classes = 2;
  std::vector<GroupedSample> samples;  // ordered by ascending id

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  // Throws NotFoundError for unknown ids.
  const GroupedSample& by_id(std::int64_t id) const;
  bool contains(std::int64_t id) const;
  std::vector<Example> examples() const;
};

struct DatasetSplits {
  DatasetSpec spec;
  GroupedDataset train;
  GroupedDataset val;
  GroupedDataset test;
};

/// Renders one split. Class y is a core shape (0 disc, 1 square, 2 triangle,
/// 3 cross) at a random position; with probability p(s=1|y) a solid patch is
/// stamped in the configured corner and recorded in gt_mask.
///
/// Sample j of the class-major enumeration draws from its own stream
/// Rng(derive_seed(derive_seed(seed, split), j)); its first uniform decides s
/// in Bernoulli mode. The final order is a seeded permutation; ids are positions.
GroupedDataset generate_split(const DatasetSpec& spec, Split which);
DatasetSplits generate(const DatasetSpec& spec);

// WB95, WB100, ISIC-like, Knee-like (case-insensitive, '-'/'_' ignored).
DatasetSpec preset(std::string_view name);
std::vector<std::string> preset_names();

// Patch-free training split over all four core shapes, per_class each. A
// generic source of shape features, independent of any preset.
GroupedDataset shape_corpus(std::size_t per_class, std::uint64_t seed, std::size_t image_size = 32);

std::map<Group, std::size_t> group_counts(const GroupedDataset& dataset);
GroupedDataset spurious_free_view(const GroupedDataset& dataset);

nlohmann::json spec_to_json(const DatasetSpec& spec);
DatasetSpec spec_from_json(const nlohmann::json& j);

// <dir>/<split>/{images.scr1, masks.scr1, meta.json}
void save_dataset(const std::filesystem::path& dir, const DatasetSplits& splits);
DatasetSplits load_dataset(const std::filesystem::path& dir);

}  // namespace score
