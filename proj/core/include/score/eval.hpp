#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "score/mitigation.hpp"
#include "score/synth.hpp"
#include "score/train.hpp"

namespace score {

struct GroupReport {
  std::map<Group, double> group_accuracy;
  std::map<Group, std::size_t> group_count;
  std::map<std::size_t, double> class_accuracy;
  double wga = 0.0;
  double avg = 0.0;
  Group worst_group;
  nlohmann::json metadata = nlohmann::json::object();
};

// Every (y, s) for y < K and s in {0, 1}.
std::vector<Group> declared_groups(std::size_t num_classes);

/// Per-group accuracies over a group-complete set; an empty declared group
/// is an error naming it.
GroupReport evaluate(const Model& model, const GroupedDataset& dataset);
double wga(const Model& model, const GroupedDataset& dataset);
double avg_acc(const Model& model, const GroupedDataset& dataset);

// Minimum over the given accuracies; throws on an empty map.
double worst_group_accuracy(const std::map<Group, double>& accuracies);

nlohmann::json group_report_to_json(const GroupReport& report);
GroupReport group_report_from_json(const nlohmann::json& j);

/// Equal-size draw from every non-empty group of `dataset` (the smallest
/// group's count), seeded.
std::vector<Example> group_balanced_subset(const GroupedDataset& dataset, std::uint64_t seed);

/// Freezes everything but the final Dense layer and retrains it with CE.
Model baseline_last_layer_retrain(const Model& model, const std::vector<Example>& subset, std::size_t num_classes,
                                  const TrainConfig& cfg);

/// ERM on the s = 0 part of the training split.
Model baseline_spurious_free(const GroupedDataset& train, const TrainConfig& cfg);

struct PretrainConfig {
  std::size_t per_class = 1000;
  std::uint64_t corpus_seed = 7777;
  TrainConfig train{.epochs = 5, .seed = 7777};
};

/// PatchNet whose feature layers come from a four-shape classifier trained on
/// shape_corpus; only the final Dense layer is drawn fresh from `seed`. The
/// backbone is cached in `cache_dir` when given.
Model pretrained_patchnet(std::size_t num_classes, std::uint64_t seed, const PretrainConfig& cfg,
                          const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

enum class Method { Erm, Score, ScoreGt, LastLayer, SpuriousFree };
std::string to_string(Method method);

struct Recipe {
  std::string preset = "wb100";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  TrainConfig erm;
  std::size_t detect_class = 0;
  std::size_t n_ref = 100;
  double mask_quantile = 0.1;
  double tau = 0.2;
  std::size_t t_max = 50;
  FinetuneConfig finetune;
  std::vector<RegularizerMode> modes{RegularizerMode::BothTerms};
  bool gt_masks = false;
  bool last_layer = false;
  bool spurious_free = false;
  TrainConfig last_layer_cfg;
  TrainConfig spurious_free_cfg;
  std::optional<PretrainConfig> pretrain;  // ERM starts from a shape-pretrained backbone
  std::optional<std::filesystem::path> cache_dir;  // ERM checkpoints reused per (preset, seed, config)

  void validate() const;
};

// Default ERM/finetune settings tuned for a preset.
Recipe default_recipe(const std::string& preset);
// Three seeds instead of five.
Recipe quick(Recipe recipe);

nlohmann::json recipe_to_json(const Recipe& recipe);

struct SeedResult {
  std::uint64_t seed = 0;
  std::map<std::string, GroupReport> methods;  // "erm", "score:both", ...
  std::map<std::string, std::string> failures; // method or stage -> reason
  std::size_t positives = 0;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  std::size_t n = 0;
};
Aggregate aggregate(const std::vector<double>& values);

struct ExperimentReport {
  Recipe recipe;
  std::vector<SeedResult> seeds;

  bool partial() const;
  std::vector<std::string> method_names() const;
  // WGA or AVG values of `method` over the seeds that produced it.
  std::vector<double> values(const std::string& method, bool worst_group) const;
};

std::string method_key(Method method, RegularizerMode mode = RegularizerMode::BothTerms);

/// One seed: generate, ERM, detect, oracle-select, fine-tune per mode, evaluate.
SeedResult run_seed(const Recipe& recipe, std::uint64_t seed);
ExperimentReport run_experiment(const Recipe& recipe);

nlohmann::json report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& j);
// Plain-text table: one row per method, AVG and WGA as mean ± std in points.
std::string render_table(const ExperimentReport& report);

/// ERM for a preset and seed, loaded from `cache_dir` when present.
Model cached_erm(const DatasetSpec& spec, const GroupedDataset& train, const TrainConfig& cfg,
                 const std::optional<std::filesystem::path>& cache_dir,
                 const std::optional<PretrainConfig>& pretrain = std::nullopt);

}  // namespace score
