#include "score/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "score/rng.hpp"
#include "score/serialize.hpp"

namespace score {
namespace {

constexpr std::size_t kMaxShapes = 4;

bool inside_shape(std::size_t shape, double dx, double dy, double r) {
  switch (shape) {
    case 0:  // disc
      return dx * dx + dy * dy <= r * r;
    case 1: {  // square of equal area
      const double h = r * 0.886;
      return std::abs(dx) <= h && std::abs(dy) <= h;
    }
    case 2:  // upward triangle
      return dy >= -r && dy <= r * 0.8 && std::abs(dx) <= (dy + r) * 0.6;
    default:  // plus sign
      return (std::abs(dx) <= r * 0.35 && std::abs(dy) <= r) || (std::abs(dy) <= r * 0.35 && std::abs(dx) <= r);
  }
}

struct Box {
  std::size_t y0, x0, y1, x1;  // half-open
};

Box patch_box(const PatchSpec& p, std::size_t n) {
  const std::size_t s = p.size;
  switch (p.corner) {
    case Corner::TopLeft: return {0, 0, s, s};
    case Corner::TopRight: return {0, n - s, s, n};
    case Corner::BottomLeft: return {n - s, 0, n, s};
    case Corner::BottomRight: return {n - s, n - s, n, n};
  }
  return {0, 0, s, s};
}

GroupedSample render(const DatasetSpec& spec, std::size_t y, Rng& rng, bool forced_s, bool use_forced, double p) {
  const std::size_t n = spec.image_size;
  GroupedSample out;
  out.y = y;
  // The first draw of every stream decides the attribute so the count is
  // reproducible from the seed alone.
  const double u = rng.uniform();
  out.s = use_forced ? (forced_s ? 1 : 0) : (u < p ? 1 : 0);
  out.image = Tensor({3, n, n});
  out.gt_mask = Tensor({n, n});

  for (auto& v : out.image.data()) v = static_cast<float>(spec.noise * rng.uniform());

  const double r = rng.uniform(4.0, 6.0);
  const Box pb = patch_box(spec.patch, n);
  const double lo = r + 1.0, hi = static_cast<double>(n) - r - 2.0;
  double cx = 0.0, cy = 0.0;
  for (int attempt = 0; attempt < 64; ++attempt) {
    cx = rng.uniform(lo, hi);
    cy = rng.uniform(lo, hi);
    // Keep the shape's bounding box one pixel clear of the patch region.
    const bool overlaps = cx + r + 1.0 >= static_cast<double>(pb.x0) && cx - r - 1.0 < static_cast<double>(pb.x1) &&
                          cy + r + 1.0 >= static_cast<double>(pb.y0) && cy - r - 1.0 < static_cast<double>(pb.y1);
    if (!overlaps) break;
  }
  for (std::size_t py = 0; py < n; ++py) {
    for (std::size_t px = 0; px < n; ++px) {
      if (!inside_shape(y, static_cast<double>(px) - cx, static_cast<double>(py) - cy, r)) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        auto& v = out.image.at(c, py, px);
        v = std::min(1.0f, v + static_cast<float>(spec.contrast));
      }
    }
  }
  if (out.s == 1) {
    for (std::size_t py = pb.y0; py < pb.y1; ++py) {
      for (std::size_t px = pb.x0; px < pb.x1; ++px) {
        for (std::size_t c = 0; c < 3; ++c) out.image.at(c, py, px) = spec.patch.color[c];
        out.gt_mask.at(py, px) = 1.0f;
      }
    }
  }
  return out;
}

std::string normalize_name(std::string_view name) {
  std::string out;
  for (char c : name) {
    if (c == '-' || c == '_' || c == ' ') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

SplitSpec balanced_eval_split(std::size_t per_class) {
  return SplitSpec{{per_class, per_class}, {0.5, 0.5}, true};
}

}  // namespace

std::size_t SplitSpec::total() const {
  std::size_t n = 0;
  for (auto c : class_counts) n += c;
  return n;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

const SplitSpec& DatasetSpec::split(Split which) const {
  switch (which) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return train;
}

void DatasetSpec::validate() const {
  if (num_classes < 2 || num_classes > kMaxShapes) {
    throw ConfigError("dataset: num_classes must be in [2, " + std::to_string(kMaxShapes) + "]");
  }
  if (image_size < 16) throw ConfigError("dataset: image_size must be >= 16");
  if (patch.size == 0 || patch.size * 3 > image_size) throw ConfigError("dataset: patch size out of range");
  if (!(contrast >= 0.0 && contrast <= 1.0) || !(noise >= 0.0 && noise <= 1.0)) {
    throw ConfigError("dataset: contrast and noise must lie in [0, 1]");
  }
  for (auto which : {Split::Train, Split::Val, Split::Test}) {
    const auto& s = split(which);
    const auto name = to_string(which);
    if (s.class_counts.size() != num_classes || s.p_spurious.size() != num_classes) {
      throw ConfigError("dataset: " + name + " split needs one count and one probability per class");
    }
    for (std::size_t y = 0; y < num_classes; ++y) {
      if (s.class_counts[y] == 0) {
        throw ConfigError("dataset: " + name + " split has an empty class " + std::to_string(y));
      }
      if (!(s.p_spurious[y] >= 0.0 && s.p_spurious[y] <= 1.0)) {
        throw ConfigError("dataset: p(s=1|y=" + std::to_string(y) + ") outside [0, 1] in " + name + " split");
      }
    }
  }
  // Worst-group accuracy needs every group in the test split.
  for (std::size_t y = 0; y < num_classes; ++y) {
    const auto ones = static_cast<std::size_t>(std::llround(test.p_spurious[y] * static_cast<double>(test.class_counts[y])));
    if (!test.exact || ones == 0 || ones == test.class_counts[y]) {
      throw ConfigError("dataset: test split must be exact and contain both s=0 and s=1 for class " + std::to_string(y));
    }
  }
}

const GroupedSample& GroupedDataset::by_id(std::int64_t id) const {
  auto it = std::lower_bound(samples.begin(), samples.end(), id,
                             [](const GroupedSample& s, std::int64_t v) { return s.id < v; });
  if (it == samples.end() || it->id != id) {
    throw NotFoundError("sample id " + std::to_string(id) + " not in " + split + " split");
  }
  return *it;
}

bool GroupedDataset::contains(std::int64_t id) const {
  auto it = std::lower_bound(samples.begin(), samples.end(), id,
                             [](const GroupedSample& s, std::int64_t v) { return s.id < v; });
  return it != samples.end() && it->id == id;
}

std::vector<Example> GroupedDataset::examples() const {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({&s.image, s.y});
  return out;
}

GroupedDataset generate_split(const DatasetSpec& spec, Split which) {
  spec.validate();
  const auto& split = spec.split(which);
  const std::uint64_t split_seed = derive_seed(spec.seed, static_cast<std::uint64_t>(which));
  std::vector<GroupedSample> samples;
  samples.reserve(split.total());
  std::size_t j = 0;
  for (std::size_t y = 0; y < spec.num_classes; ++y) {
    const std::size_t count = split.class_counts[y];
    const auto ones = static_cast<std::size_t>(std::llround(split.p_spurious[y] * static_cast<double>(count)));
    for (std::size_t k = 0; k < count; ++k, ++j) {
      Rng rng(derive_seed(split_seed, j));
      samples.push_back(render(spec, y, rng, k < ones, split.exact, split.p_spurious[y]));
    }
  }
  Rng order_rng(derive_seed(split_seed, 0x0D3E5ULL));
  const auto order = order_rng.permutation(samples.size());
  GroupedDataset ds;
  ds.split = to_string(which);
  ds.num_classes = spec.num_classes;
  ds.samples.reserve(samples.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    ds.samples.push_back(std::move(samples[order[pos]]));
    ds.samples.back().id = static_cast<std::int64_t>(pos);
  }
  return ds;
}

DatasetSplits generate(const DatasetSpec& spec) {
  spec.validate();
  return {spec, generate_split(spec, Split::Train), generate_split(spec, Split::Val), generate_split(spec, Split::Test)};
}

std::vector<std::string> preset_names() { return {"WB95", "WB100", "ISIC-like", "Knee-like"}; }

DatasetSpec preset(std::string_view name) {
  const auto key = normalize_name(name);
  DatasetSpec spec;
  spec.num_classes = 2;
  spec.val = balanced_eval_split(200);
  spec.test = balanced_eval_split(400);
  // Class 0 carries the shortcut in every regime. For the bird-like presets s
  // is the class-0 environment, so p(s=1|y=1) = 1 - p(aligned environment).
  if (key == "wb95") {
    spec.name = "WB95";
    spec.train = {{528, 1872}, {0.95, 0.05}, false};
  } else if (key == "wb100") {
    spec.name = "WB100";
    spec.train = {{552, 1848}, {1.0, 0.0}, false};
  } else if (key == "isiclike" || key == "isic") {
    spec.name = "ISIC-like";
    spec.train = {{3872, 528}, {0.47, 0.0}, false};
  } else if (key == "kneelike" || key == "knee") {
    spec.name = "Knee-like";
    spec.train = {{1000, 1000}, {0.50, 0.03}, false};
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (known: WB95, WB100, ISIC-like, Knee-like)");
  }
  return spec;
}

GroupedDataset shape_corpus(std::size_t per_class, std::uint64_t seed, std::size_t image_size) {
  DatasetSpec spec;
  spec.name = "shapes";
  spec.num_classes = 4;
  spec.seed = seed;
  spec.image_size = image_size;
  spec.train = {std::vector<std::size_t>(4, per_class), std::vector<double>(4, 0.0), true};
  // Never rendered; present only so the spec validates.
  spec.val = {std::vector<std::size_t>(4, 2), std::vector<double>(4, 0.5), true};
  spec.test = spec.val;
  return generate_split(spec, Split::Train);
}

std::map<Group, std::size_t> group_counts(const GroupedDataset& dataset) {
  std::map<Group, std::size_t> counts;
  for (const auto& s : dataset.samples) ++counts[s.group()];
  return counts;
}

GroupedDataset spurious_free_view(const GroupedDataset& dataset) {
  GroupedDataset out;
  out.split = dataset.split;
  out.num_classes = dataset.num_classes;
  for (const auto& s : dataset.samples) {
    if (s.s == 0) out.samples.push_back(s);
  }
  return out;
}

// Serialization -----------------------------------------------------------------

namespace {

nlohmann::json split_to_json(const SplitSpec& s) {
  return {{"class_counts", s.class_counts}, {"p_spurious", s.p_spurious}, {"exact", s.exact}};
}

SplitSpec split_from_json(const nlohmann::json& j) {
  return {j.at("class_counts").get<std::vector<std::size_t>>(), j.at("p_spurious").get<std::vector<double>>(),
          j.value("exact", false)};
}

std::string corner_name(Corner c) {
  switch (c) {
    case Corner::TopLeft: return "top-left";
    case Corner::TopRight: return "top-right";
    case Corner::BottomLeft: return "bottom-left";
    case Corner::BottomRight: return "bottom-right";
  }
  return "top-left";
}

Corner corner_from_name(const std::string& name) {
  for (auto c : {Corner::TopLeft, Corner::TopRight, Corner::BottomLeft, Corner::BottomRight}) {
    if (corner_name(c) == name) return c;
  }
  throw ConfigError("unknown patch corner '" + name + "'");
}

}  // namespace

nlohmann::json spec_to_json(const DatasetSpec& spec) {
  return {{"name", spec.name},
          {"num_classes", spec.num_classes},
          {"train", split_to_json(spec.train)},
          {"val", split_to_json(spec.val)},
          {"test", split_to_json(spec.test)},
          {"contrast", spec.contrast},
          {"noise", spec.noise},
          {"patch",
           {{"size", spec.patch.size}, {"corner", corner_name(spec.patch.corner)}, {"color", spec.patch.color}}},
          {"seed", spec.seed},
          {"image_size", spec.image_size}};
}

DatasetSpec spec_from_json(const nlohmann::json& j) {
  try {
    DatasetSpec spec;
    spec.name = j.value("name", "custom");
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    spec.train = split_from_json(j.at("train"));
    spec.val = split_from_json(j.at("val"));
    spec.test = split_from_json(j.at("test"));
    spec.contrast = j.at("contrast").get<double>();
    spec.noise = j.at("noise").get<double>();
    const auto& p = j.at("patch");
    spec.patch.size = p.at("size").get<std::size_t>();
    spec.patch.corner = corner_from_name(p.at("corner").get<std::string>());
    spec.patch.color = p.at("color").get<std::array<float, 3>>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.image_size = j.value("image_size", std::size_t{32});
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
}

void save_dataset(const std::filesystem::path& dir, const DatasetSplits& splits) {
  const std::size_t n = splits.spec.image_size;
  for (const GroupedDataset* ds : {&splits.train, &splits.val, &splits.test}) {
    const auto sub = dir / ds->split;
    std::vector<float> images, masks;
    images.reserve(ds->size() * 3 * n * n);
    masks.reserve(ds->size() * n * n);
    nlohmann::json meta;
    meta["split"] = ds->split;
    meta["num_classes"] = ds->num_classes;
    meta["spec"] = spec_to_json(splits.spec);
    auto& items = meta["samples"] = nlohmann::json::array();
    for (const auto& s : ds->samples) {
      images.insert(images.end(), s.image.data().begin(), s.image.data().end());
      masks.insert(masks.end(), s.gt_mask.data().begin(), s.gt_mask.data().end());
      items.push_back({{"id", s.id}, {"y", s.y}, {"s", s.s}, {"g", {s.y, s.s}}});
    }
    const std::size_t count = std::max<std::size_t>(ds->size(), 1);
    if (ds->empty()) {
      images.assign(3 * n * n, 0.0f);
      masks.assign(n * n, 0.0f);
    }
    save_tensor(sub / "images.scr1", Tensor({count, 3, n, n}, std::move(images)));
    save_tensor(sub / "masks.scr1", Tensor({count, n, n}, std::move(masks)));
    write_file_atomic(sub / "meta.json", meta.dump(2) + "\n");
  }
}

DatasetSplits load_dataset(const std::filesystem::path& dir) {
  DatasetSplits out;
  bool have_spec = false;
  for (auto which : {Split::Train, Split::Val, Split::Test}) {
    const auto sub = dir / to_string(which);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(read_file(sub / "meta.json"));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("dataset " + (sub / "meta.json").string() + ": " + e.what());
    }
    if (!have_spec) {
      out.spec = spec_from_json(meta.at("spec"));
      have_spec = true;
    }
    const auto images = load_tensor<float>(sub / "images.scr1");
    const auto masks = load_tensor<float>(sub / "masks.scr1");
    const std::size_t n = out.spec.image_size;
    GroupedDataset ds;
    ds.split = meta.at("split").get<std::string>();
    ds.num_classes = meta.at("num_classes").get<std::size_t>();
    const auto& items = meta.at("samples");
    if (!items.empty() && (images.dim(0) != items.size() || masks.dim(0) != items.size())) {
      throw IoError("dataset " + sub.string() + ": tensor count does not match meta.json");
    }
    std::size_t i = 0;
    for (const auto& it : items) {
      GroupedSample s;
      s.id = it.at("id").get<std::int64_t>();
      s.y = it.at("y").get<std::size_t>();
      s.s = it.at("s").get<int>();
      const auto img = images.data().subspan(i * 3 * n * n, 3 * n * n);
      const auto msk = masks.data().subspan(i * n * n, n * n);
      s.image = Tensor({3, n, n}, std::vector<float>(img.begin(), img.end()));
      s.gt_mask = Tensor({n, n}, std::vector<float>(msk.begin(), msk.end()));
      ds.samples.push_back(std::move(s));
      ++i;
    }
    switch (which) {
      case Split::Train: out.train = std::move(ds); break;
      case Split::Val: out.val = std::move(ds); break;
      case Split::Test: out.test = std::move(ds); break;
    }
  }
  return out;
}

}  // namespace score
