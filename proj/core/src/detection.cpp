#include "score/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "score/image_io.hpp"
#include "score/serialize.hpp"

namespace score {

bool DetectionRun::contains(std::int64_t sample_id) const {
  return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.sample_id == sample_id; });
}

const DetectionEntry& DetectionRun::entry(std::int64_t sample_id) const {
  for (const auto& e : entries) {
    if (e.sample_id == sample_id) return e;
  }
  throw NotFoundError("sample " + std::to_string(sample_id) + " is not part of detection run " + run_id);
}

std::string to_string(SelectionSource source) {
  switch (source) {
    case SelectionSource::Human: return "human";
    case SelectionSource::Oracle: return "oracle";
    case SelectionSource::File: return "file";
  }
  return "file";
}

SelectionSource selection_source_from_string(const std::string& name) {
  if (name == "human") return SelectionSource::Human;
  if (name == "oracle") return SelectionSource::Oracle;
  if (name == "file") return SelectionSource::File;
  throw ConfigError("unknown selection source '" + name + "'");
}

nlohmann::json selection_to_json(const Selection& s) {
  return {{"run_id", s.run_id}, {"class_id", s.class_id}, {"sample_ids", s.sample_ids}, {"source", to_string(s.source)}};
}

Selection selection_from_json(const nlohmann::json& j) {
  try {
    Selection s;
    s.run_id = j.at("run_id").get<std::string>();
    s.class_id = j.at("class_id").get<std::size_t>();
    s.sample_ids = j.at("sample_ids").get<std::vector<std::int64_t>>();
    s.source = selection_source_from_string(j.value("source", "file"));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("selection: ") + e.what());
  }
}

std::vector<RankedSample> top_activated(const Model& model, const GroupedDataset& dataset, std::size_t class_id,
                                        std::size_t n_ref) {
  if (class_id >= model.num_classes()) throw IndexError("top_activated: class " + std::to_string(class_id) + " out of range");
  std::vector<RankedSample> ranked;
  for (const auto& s : dataset.samples) {
    if (s.y != class_id) continue;
    ranked.push_back({s.id, model.forward(s.image).logits()[class_id]});
  }
  if (ranked.empty()) throw NotFoundError("top_activated: class " + std::to_string(class_id) + " has no samples");
  std::sort(ranked.begin(), ranked.end(), [](const RankedSample& a, const RankedSample& b) {
    return a.logit != b.logit ? a.logit > b.logit : a.sample_id < b.sample_id;
  });
  if (ranked.size() > n_ref) ranked.resize(n_ref);
  return ranked;
}

DetectionRun detect(const Model& model, const GroupedDataset& dataset, std::size_t class_id, std::size_t n_ref,
                    double mask_quantile, std::string run_id, float eps) {
  if (!(mask_quantile > 0.0 && mask_quantile <= 1.0)) throw ConfigError("detect: mask quantile must lie in (0, 1]");
  DetectionRun run;
  run.run_id = std::move(run_id);
  run.class_id = class_id;
  run.n_ref = n_ref;
  run.mask_quantile = mask_quantile;
  std::size_t rank = 0;
  for (const auto& r : top_activated(model, dataset, class_id, n_ref)) {
    const auto& sample = dataset.by_id(r.sample_id);
    const auto trace = model.forward(sample.image);
    const auto maps = lrp_backward(model, trace, class_id, eps, LrpPath::Fast, 0, r.sample_id);
    DetectionEntry e;
    e.sample_id = r.sample_id;
    e.rank = ++rank;
    e.logit = r.logit;
    e.heatmap = input_heatmap(maps);
    run.entries.push_back(std::move(e));
  }
  return run;
}

MaskedInput build_masked_input(const Tensor& image, const Heatmap& heatmap, double keep_fraction, float fill) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("masked input: keep fraction must lie in (0, 1]");
  if (image.rank() != 3 || image.dim(1) != heatmap.height || image.dim(2) != heatmap.width) {
    throw DimensionError("masked input: heatmap " + std::to_string(heatmap.height) + "x" + std::to_string(heatmap.width) +
                         " does not match image " + shape_string(image.shape()));
  }
  std::vector<float> positive;
  for (float v : heatmap.values) {
    if (v > 0.0f) positive.push_back(v);
  }
  if (positive.empty()) throw Error("no positive relevance to mask");
  const auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(positive.size()) - 1e-9));
  const std::size_t k = std::clamp<std::size_t>(keep, 1, positive.size());
  std::nth_element(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(k - 1), positive.end(),
                   std::greater<float>());
  const float threshold = positive[k - 1];

  MaskedInput out{Tensor(image.shape()), Tensor({heatmap.height, heatmap.width})};
  for (std::size_t y = 0; y < heatmap.height; ++y) {
    for (std::size_t x = 0; x < heatmap.width; ++x) {
      const float v = heatmap.at(y, x);
      const bool kept = v > 0.0f && v >= threshold;
      out.mask.at(y, x) = kept ? 1.0f : 0.0f;
      for (std::size_t c = 0; c < image.dim(0); ++c) out.masked.at(c, y, x) = kept ? image.at(c, y, x) : fill;
    }
  }
  return out;
}

MaskedInput build_gt_masked_input(const GroupedSample& sample, float fill) {
  const bool any = std::any_of(sample.gt_mask.data().begin(), sample.gt_mask.data().end(), [](float v) { return v > 0.0f; });
  if (!any) {
    throw SelectionError("sample " + std::to_string(sample.id) + " has an empty ground-truth mask", {sample.id});
  }
  MaskedInput out{Tensor(sample.image.shape()), sample.gt_mask};
  for (std::size_t c = 0; c < sample.image.dim(0); ++c)
    for (std::size_t y = 0; y < sample.image.dim(1); ++y)
      for (std::size_t x = 0; x < sample.image.dim(2); ++x)
        out.masked.at(c, y, x) = sample.gt_mask.at(y, x) > 0.0f ? sample.image.at(c, y, x) : fill;
  return out;
}

double mass_in_mask(const Heatmap& heatmap, const Tensor& gt_mask) {
  double inside = 0.0, total = 0.0;
  for (std::size_t y = 0; y < heatmap.height; ++y) {
    for (std::size_t x = 0; x < heatmap.width; ++x) {
      const double v = heatmap.at(y, x);
      if (v <= 0.0) continue;
      total += v;
      if (gt_mask.at(y, x) > 0.0f) inside += v;
    }
  }
  return total > 0.0 ? inside / total : 0.0;
}

SpuriousPositiveSet oracle_select(const DetectionRun& run, const GroupedDataset& dataset, double tau, std::size_t t_max) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("oracle_select: tau must lie in (0, 1]");
  SpuriousPositiveSet set;
  set.class_id = run.class_id;
  set.source = SelectionSource::Oracle;
  set.mask_quantile = run.mask_quantile;
  for (const auto& e : run.entries) {
    if (set.size() >= t_max) break;
    const auto& sample = dataset.by_id(e.sample_id);
    if (mass_in_mask(e.heatmap, sample.gt_mask) < tau) continue;
    set.sample_ids.push_back(e.sample_id);
    set.masked.push_back(build_masked_input(sample.image, e.heatmap, run.mask_quantile));
  }
  if (set.sample_ids.empty()) throw Error("no spurious-positive candidates at threshold " + std::to_string(tau));
  return set;
}

void validate_selection(const DetectionRun& run, const Selection& selection) {
  if (!selection.run_id.empty() && selection.run_id != run.run_id) {
    throw SelectionError("selection belongs to run '" + selection.run_id + "', not '" + run.run_id + "'", {});
  }
  if (selection.class_id != run.class_id) {
    throw SelectionError("selection class " + std::to_string(selection.class_id) + " differs from run class " +
                             std::to_string(run.class_id), {});
  }
  if (selection.sample_ids.empty()) throw SelectionError("empty selection", {});
  std::vector<std::int64_t> unknown;
  for (auto id : selection.sample_ids) {
    if (!run.contains(id)) unknown.push_back(id);
  }
  if (!unknown.empty()) {
    std::string list;
    for (auto id : unknown) list += (list.empty() ? "" : ", ") + std::to_string(id);
    throw SelectionError("sample ids not in run " + run.run_id + ": " + list, unknown);
  }
}

SpuriousPositiveSet ingest_selection(const DetectionRun& run, const GroupedDataset& dataset, const Selection& selection) {
  validate_selection(run, selection);
  SpuriousPositiveSet set;
  set.class_id = run.class_id;
  set.source = selection.source;
  set.mask_quantile = run.mask_quantile;
  std::set<std::int64_t> seen;
  for (auto id : selection.sample_ids) {
    if (!seen.insert(id).second) continue;
    set.sample_ids.push_back(id);
    set.masked.push_back(build_masked_input(dataset.by_id(id).image, run.entry(id).heatmap, run.mask_quantile));
  }
  return set;
}

nlohmann::json manifest_json(const DetectionRun& run) {
  nlohmann::json j;
  j["run_id"] = run.run_id;
  j["class_id"] = run.class_id;
  j["n_ref"] = run.n_ref;
  j["mask_quantile"] = run.mask_quantile;
  auto& entries = j["entries"] = nlohmann::json::array();
  for (const auto& e : run.entries) {
    entries.push_back({{"sample_id", e.sample_id},
                       {"rank", e.rank},
                       {"logit", e.logit},
                       {"original", e.original_ref},
                       {"heatmap", e.heatmap_ref},
                       {"overlay", e.overlay_ref}});
  }
  return j;
}

namespace {

std::string padded(std::int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld", static_cast<long long>(id));
  return buf;
}

}  // namespace

void export_review_bundle(DetectionRun& run, const GroupedDataset& dataset, const std::filesystem::path& dir) {
  for (auto& e : run.entries) {
    const auto& sample = dataset.by_id(e.sample_id);
    const auto stem = padded(e.sample_id);
    e.original_ref = stem + "_original.ppm";
    e.heatmap_ref = stem + "_heatmap.pgm";
    e.overlay_ref = stem + "_overlay.ppm";
    write_file_atomic(dir / "images" / e.original_ref, encode_ppm(sample.image));
    write_file_atomic(dir / "images" / e.heatmap_ref, encode_heatmap_pgm(e.heatmap));
    write_file_atomic(dir / "images" / e.overlay_ref, encode_overlay_ppm(sample.image, e.heatmap));
    save_tensor(dir / "heatmaps" / (stem + ".scr1"),
                Tensor({e.heatmap.height, e.heatmap.width}, e.heatmap.values));
  }
  nlohmann::json detection{{"run_id", run.run_id}, {"checkpoint", run.checkpoint_ref}};
  write_file_atomic(dir / "detection.json", detection.dump(2) + "\n");
  write_file_atomic(dir / "manifest.json", manifest_json(run).dump(2) + "\n");
}

DetectionRun load_detection_run(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  DetectionRun run;
  run.run_id = manifest.at("run_id").get<std::string>();
  run.class_id = manifest.at("class_id").get<std::size_t>();
  run.n_ref = manifest.at("n_ref").get<std::size_t>();
  run.mask_quantile = manifest.at("mask_quantile").get<double>();
  if (std::filesystem::exists(dir / "detection.json")) {
    const auto det = nlohmann::json::parse(read_file(dir / "detection.json"));
    run.checkpoint_ref = det.value("checkpoint", "");
  }
  for (const auto& j : manifest.at("entries")) {
    DetectionEntry e;
    e.sample_id = j.at("sample_id").get<std::int64_t>();
    e.rank = j.at("rank").get<std::size_t>();
    e.logit = j.at("logit").get<float>();
    e.original_ref = j.at("original").get<std::string>();
    e.heatmap_ref = j.at("heatmap").get<std::string>();
    e.overlay_ref = j.at("overlay").get<std::string>();
    const auto raw = load_tensor<float>(dir / "heatmaps" / (padded(e.sample_id) + ".scr1"));
    e.heatmap.height = raw.dim(0);
    e.heatmap.width = raw.dim(1);
    e.heatmap.values = raw.values();
    const auto [lo, hi] = std::minmax_element(e.heatmap.values.begin(), e.heatmap.values.end());
    e.heatmap.min = *lo;
    e.heatmap.max = *hi;
    run.entries.push_back(std::move(e));
  }
  return run;
}

}  // namespace score
