#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "score/lrp.hpp"
#include "score/network.hpp"
#include "score/synth.hpp"

namespace score {

struct RankedSample {
  std::int64_t sample_id = 0;
  float logit = 0.0f;
};

struct DetectionEntry {
  std::int64_t sample_id = 0;
  std::size_t rank = 0;  // 1-based
  float logit = 0.0f;
  Heatmap heatmap;
  std::string original_ref;
  std::string heatmap_ref;
  std::string overlay_ref;
};

struct DetectionRun {
  std::string run_id;
  std::string checkpoint_ref;
  std::size_t class_id = 0;
  std::size_t n_ref = 100;
  double mask_quantile = 0.1;
  std::vector<DetectionEntry> entries;  // logit descending

  bool contains(std::int64_t sample_id) const;
  const DetectionEntry& entry(std::int64_t sample_id) const;
};

enum class SelectionSource { Human, Oracle, File };
std::string to_string(SelectionSource source);
SelectionSource selection_source_from_string(const std::string& name);

struct MaskedInput {
  Tensor masked;  // image with suppressed pixels set to the fill value
  Tensor mask;    // H x W, 1 = kept
};

/// The spurious-positive pairs (m_i, x_i) for one class.
struct SpuriousPositiveSet {
  std::size_t class_id = 0;
  std::vector<std::int64_t> sample_ids;
  std::vector<MaskedInput> masked;
  SelectionSource source = SelectionSource::Oracle;
  double mask_quantile = 0.1;

  std::size_t size() const { return sample_ids.size(); }
};

// Selection file: {run_id, class_id, sample_ids, source}.
struct Selection {
  std::string run_id;
  std::size_t class_id = 0;
  std::vector<std::int64_t> sample_ids;
  SelectionSource source = SelectionSource::File;
};

nlohmann::json selection_to_json(const Selection& selection);
Selection selection_from_json(const nlohmann::json& j);

/// Samples of class y_k ordered by logit_{y_k} descending, ties by id, truncated to n_ref.
std::vector<RankedSample> top_activated(const Model& model, const GroupedDataset& dataset, std::size_t class_id,
                                        std::size_t n_ref);

/// Ranks, then computes an input heatmap for every ranked sample.
DetectionRun detect(const Model& model, const GroupedDataset& dataset, std::size_t class_id, std::size_t n_ref,
                    double mask_quantile, std::string run_id, float eps = 1e-6f);

/// Keeps the pixels holding the top-q fraction of positive relevance:
/// with P positive pixels, the ceil(q * P) largest values set the threshold
/// and every positive pixel at or above it is kept.
MaskedInput build_masked_input(const Tensor& image, const Heatmap& heatmap, double keep_fraction,
                               float fill = 0.0f);

// image * gt_mask; rejects samples without a spurious region.
MaskedInput build_gt_masked_input(const GroupedSample& sample, float fill = 0.0f);

// Fraction of positive relevance that falls inside the gt mask.
double mass_in_mask(const Heatmap& heatmap, const Tensor& gt_mask);

/// Picks ranked samples whose positive relevance mass inside gt_mask is at
/// least tau, up to t_max, in rank order.
SpuriousPositiveSet oracle_select(const DetectionRun& run, const GroupedDataset& dataset, double tau,
                                  std::size_t t_max);

/// Validates a human or file selection against the run and builds masks.
SpuriousPositiveSet ingest_selection(const DetectionRun& run, const GroupedDataset& dataset,
                                     const Selection& selection);

// Validation only; throws SelectionError listing offending ids.
void validate_selection(const DetectionRun& run, const Selection& selection);

nlohmann::json manifest_json(const DetectionRun& run);

/// Writes originals (PPM), heatmaps (PGM + SCR1), overlays (PPM) and manifest.json.
void export_review_bundle(DetectionRun& run, const GroupedDataset& dataset, const std::filesystem::path& dir);

// Reads a bundle back; heatmaps come from the raw SCR1 files.
DetectionRun load_detection_run(const std::filesystem::path& dir);

}  // namespace score
