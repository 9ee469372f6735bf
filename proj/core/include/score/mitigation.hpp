#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "score/detection.hpp"
#include "score/network.hpp"
#include "score/synth.hpp"

namespace score {

enum class RegularizerMode { BothTerms, PositiveOnly, None };
std::string to_string(RegularizerMode mode);
RegularizerMode regularizer_mode_from_string(const std::string& name);

struct FinetuneConfig {
  double alpha = 0.05;
  std::size_t epochs = 20;
  std::size_t ft_size = 1000;
  std::vector<std::size_t> layers;  // activation positions; empty means {penultimate}
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  RegularizerMode mode = RegularizerMode::BothTerms;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  float lrp_eps = 1e-6f;
  // Restore the epoch whose hook value (validation WGA) was highest.
  bool keep_best = false;

  void validate() const;
  std::vector<std::size_t> layer_set(const Model& model) const;
};

nlohmann::json finetune_config_to_json(const FinetuneConfig& cfg);

// r^l_i: relevance at `layer` for class y_k when only the masked input is seen.
Tensor spurious_relevance(const Model& model, const Tensor& masked_input, std::size_t class_id, std::size_t layer,
                          float eps = 1e-6f);
// One LRP pass serving several layers.
std::vector<Tensor> spurious_relevance(const Model& model, const Tensor& masked_input, std::size_t class_id,
                                       std::span<const std::size_t> layers, float eps = 1e-6f);

Tensor average_relevance(std::span<const Tensor> relevances);

// z = activation * ReLU(relevance)
Tensor contribution_embedding(const Tensor& activation, const Tensor& relevance);
double l1_norm(const Tensor& t);

/// Per-positive relevance vectors and their running average for one class.
class SpuriousRelevanceState {
 public:
  SpuriousRelevanceState(std::size_t class_id, std::vector<std::size_t> layers, std::vector<std::int64_t> positive_ids);

  std::size_t class_id() const { return class_id_; }
  const std::vector<std::size_t>& layers() const { return layers_; }
  const std::vector<std::int64_t>& positive_ids() const { return ids_; }
  std::optional<std::size_t> positive_index(std::int64_t sample_id) const;

  void set_relevance(std::size_t positive, std::vector<Tensor> per_layer);
  bool has_relevance(std::size_t positive) const { return !relevance_.at(positive).empty(); }
  const Tensor& relevance(std::size_t positive, std::size_t slot) const;

  // Recomputes the average from every stored per-positive vector.
  void refresh_average();
  const Tensor& average(std::size_t slot) const { return average_.at(slot); }

 private:
  std::size_t class_id_;
  std::vector<std::size_t> layers_;
  std::vector<std::int64_t> ids_;
  std::map<std::int64_t, std::size_t> index_;
  std::vector<std::vector<Tensor>> relevance_;
  std::vector<Tensor> average_;
};

// One batch member as the regularizer sees it.
struct RegularizerSample {
  std::int64_t sample_id = -1;
  std::size_t y = 0;
  std::span<const Tensor> activations;  // one per layer slot, aligned with the state's layers
};

struct RegularizerValue {
  double positive_term = 0.0;  // sum over in-batch positives of ||z_i||_1
  double average_term = 0.0;   // sum over other class-y_k samples of ||z_bar_j||_1
  double total() const { return positive_term + average_term; }
};

/// R^{y_k} for one batch. Samples of other classes contribute nothing;
/// PositiveOnly drops the average term, None returns zero.
RegularizerValue regularizer(std::span<const RegularizerSample> batch, const SpuriousRelevanceState& state,
                             RegularizerMode mode);

struct FinetuneSample {
  std::int64_t sample_id = -1;
  const Tensor* image = nullptr;
  std::size_t y = 0;
  bool positive = false;
};

struct FinetuneSet {
  std::vector<FinetuneSample> samples;

  std::map<std::size_t, std::size_t> class_counts() const;
};

/// Class-balanced D_ft: every positive pair plus ft_size / K - |I^{y_k}| seeded
/// draws per class (ft_size / K for classes without positives).
FinetuneSet build_finetune_set(const GroupedDataset& train, std::span<const SpuriousPositiveSet> positives,
                               std::size_t ft_size, std::size_t num_classes, std::uint64_t seed);
// Draws from `draw_source` (e.g. a validation split) while positives come from `positive_source`.
FinetuneSet build_finetune_set(const GroupedDataset& draw_source, const GroupedDataset& positive_source,
                               std::span<const SpuriousPositiveSet> positives, std::size_t ft_size,
                               std::size_t num_classes, std::uint64_t seed);

struct EpochCurve {
  double ce = 0.0;   // mean cross-entropy per sample
  double reg = 0.0;  // mean regularizer per batch (unweighted)
  double mean_z_bar = 0.0;  // mean ||z_bar||_1 over non-positive shortcut-class samples
  std::optional<double> wga_val;
};

struct FinetuneResult {
  std::vector<EpochCurve> curves;
  std::vector<Tensor> final_average;  // r_bar per layer slot for the first positive set
  std::optional<std::size_t> best_epoch;  // set when keep_best restored an earlier state
};

using EpochHook = std::function<std::optional<double>(const Model&, std::size_t epoch)>;

/// Minibatch SGD on CE + alpha * sum_k R^{y_k} over class-balanced batches.
///
/// Each iteration recomputes r_i for the positives in the batch from the
/// current model and refreshes r_bar from all stored r_i. Relevance vectors
/// are constants of the iteration; gradients flow through the activations.
FinetuneResult finetune_score(Model& model, const FinetuneSet& data, std::span<const SpuriousPositiveSet> positives,
                              const FinetuneConfig& cfg, const EpochHook& on_epoch = {});

// Replaces each masked input by the ground-truth-mask version.
SpuriousPositiveSet with_gt_masks(const SpuriousPositiveSet& positives, const GroupedDataset& dataset);

FinetuneResult finetune_with_gt_masks(Model& model, const FinetuneSet& data, const GroupedDataset& dataset,
                                      std::span<const SpuriousPositiveSet> positives, const FinetuneConfig& cfg,
                                      const EpochHook& on_epoch = {});

nlohmann::json curves_json(const FinetuneResult& result);

}  // namespace score
