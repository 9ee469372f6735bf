#include <gtest/gtest.h>

#include "score/errors.hpp"
#include "score/eval.hpp"
#include "support.hpp"

namespace score {
namespace {

using testing::dense_layer;

// Predicts class 0 for positive inputs and class 1 otherwise.
Model sign_model() {
  std::vector<Layer<float>> layers{dense_layer<float>(1, 2, {1.0f, -1.0f})};
  return Model({1}, std::move(layers), 0);
}

void add(GroupedDataset& ds, Group g, bool correct) {
  GroupedSample s;
  s.id = static_cast<std::int64_t>(ds.samples.size());
  s.y = g.y;
  s.s = g.s;
  const bool predicts_zero = (g.y == 0) == correct;
  s.image = Tensor({1}, {predicts_zero ? 1.0f : -1.0f});
  ds.samples.push_back(s);
}

GroupedDataset with_accuracies(const std::vector<std::pair<Group, std::pair<int, int>>>& spec) {
  GroupedDataset ds;
  for (const auto& [g, counts] : spec) {
    for (int i = 0; i < counts.second; ++i) add(ds, g, i < counts.first);
  }
  return ds;
}

TEST(Metrics, WorstGroupIsTheMinimum) {
  auto ds = with_accuracies({{{0, 0}, {18, 20}}, {{0, 1}, {8, 20}}, {{1, 0}, {16, 20}}, {{1, 1}, {19, 20}}});
  auto r = evaluate(sign_model(), ds);
  EXPECT_DOUBLE_EQ(r.wga, 0.4);
  EXPECT_EQ(r.worst_group, (Group{0, 1}));
  EXPECT_DOUBLE_EQ(r.group_accuracy.at({1, 1}), 0.95);
  EXPECT_EQ(r.group_count.at({0, 0}), 20u);
  EXPECT_DOUBLE_EQ(worst_group_accuracy({{{0, 0}, 0.9}, {{0, 1}, 0.4}, {{1, 0}, 0.8}, {{1, 1}, 0.95}}), 0.4);
}

TEST(Metrics, AverageIsTotalCorrectOverTotal) {
  auto ds = with_accuracies({{{0, 0}, {3, 3}}, {{0, 1}, {1, 2}}, {{1, 0}, {2, 3}}, {{1, 1}, {2, 2}}});
  EXPECT_DOUBLE_EQ(avg_acc(sign_model(), ds), 0.8);
  auto r = evaluate(sign_model(), ds);
  EXPECT_DOUBLE_EQ(r.class_accuracy.at(0), 0.8);
}

TEST(Metrics, PerfectClassifier) {
  auto ds = with_accuracies({{{0, 0}, {2, 2}}, {{0, 1}, {3, 3}}, {{1, 0}, {1, 1}}, {{1, 1}, {4, 4}}});
  EXPECT_EQ(wga(sign_model(), ds), 1.0);
  EXPECT_EQ(avg_acc(sign_model(), ds), 1.0);
}

TEST(Metrics, EmptyDeclaredGroupIsNamed) {
  auto ds = with_accuracies({{{0, 0}, {2, 2}}, {{0, 1}, {3, 3}}, {{1, 0}, {1, 1}}});
  try {
    evaluate(sign_model(), ds);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("(y=1,s=1)"), std::string::npos);
  }
  EXPECT_THROW(worst_group_accuracy({}), ConfigError);
}

TEST(Metrics, WorstGroupNeverExceedsAverage) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<Group, std::pair<int, int>>> spec;
    for (auto g : declared_groups(2)) {
      const int n = 1 + static_cast<int>(rng.below(30));
      spec.push_back({g, {static_cast<int>(rng.below(static_cast<std::size_t>(n) + 1)), n}});
    }
    auto r = evaluate(sign_model(), with_accuracies(spec));
    EXPECT_LE(r.wga, r.avg + 1e-12);
  }
}

TEST(GroupReportJson, RoundTrip) {
  auto ds = with_accuracies({{{0, 0}, {18, 20}}, {{0, 1}, {8, 20}}, {{1, 0}, {16, 20}}, {{1, 1}, {19, 20}}});
  auto r = evaluate(sign_model(), ds);
  r.metadata = {{"seed", 3}};
  auto back = group_report_from_json(group_report_to_json(r));
  EXPECT_EQ(back.group_accuracy, r.group_accuracy);
  EXPECT_EQ(back.group_count, r.group_count);
  EXPECT_EQ(back.class_accuracy, r.class_accuracy);
  EXPECT_EQ(back.wga, r.wga);
  EXPECT_EQ(back.worst_group, r.worst_group);
  EXPECT_EQ(back.metadata, r.metadata);
}

TEST(Aggregate, PopulationStatistics) {
  auto a = aggregate({0.5, 0.7, 0.9});
  EXPECT_DOUBLE_EQ(a.mean, 0.7);
  EXPECT_NEAR(a.stddev, std::sqrt(0.08 / 3.0), 1e-12);
  EXPECT_EQ(a.n, 3u);
  EXPECT_EQ(aggregate({}).n, 0u);
}

ExperimentReport fake_report() {
  ExperimentReport rep;
  rep.recipe = default_recipe("wb100");
  for (std::uint64_t s = 1; s <= 3; ++s) {
    SeedResult sr;
    sr.seed = s;
    sr.positives = 10 * s;
    GroupReport erm;
    erm.wga = 0.0;
    erm.avg = 0.6;
    erm.group_accuracy = {{{0, 0}, 0.0}, {{0, 1}, 1.0}};
    erm.group_count = {{{0, 0}, 5}, {{0, 1}, 5}};
    erm.worst_group = {0, 0};
    sr.methods["erm"] = erm;
    GroupReport sc = erm;
    sc.wga = 0.6 + 0.1 * static_cast<double>(s);
    sc.avg = 0.9;
    sr.methods["score"] = sc;
    rep.seeds.push_back(sr);
  }
  rep.seeds[2].failures["score:none"] = "diverged";
  return rep;
}

TEST(Report, JsonRoundTripReproducesAggregates) {
  auto rep = fake_report();
  auto back = report_from_json(report_to_json(rep));
  EXPECT_EQ(back.values("score", true), rep.values("score", true));
  EXPECT_EQ(report_to_json(back), report_to_json(rep));
  EXPECT_TRUE(back.partial());
  EXPECT_EQ(back.seeds[1].positives, 20u);
  const auto j = report_to_json(rep);
  EXPECT_NEAR(j.at("summary").at("score").at("wga_mean").get<double>(), 0.8, 1e-12);
  EXPECT_GT(j.at("summary").at("score").at("wga_std").get<double>(), 0.0);
}

TEST(Report, TableListsMethodsAndFailures) {
  auto text = render_table(fake_report());
  EXPECT_NE(text.find("score"), std::string::npos);
  EXPECT_NE(text.find("80.0 +-"), std::string::npos);
  EXPECT_NE(text.find("seed 3 score:none: diverged"), std::string::npos);
}

TEST(Recipe, DefaultsAndValidation) {
  auto r = default_recipe("WB100");
  EXPECT_EQ(r.seeds.size(), 5u);
  EXPECT_EQ(r.finetune.alpha, 0.05);
  EXPECT_EQ(r.t_max, 50u);
  EXPECT_TRUE(r.pretrain.has_value());
  EXPECT_NO_THROW(r.validate());
  EXPECT_EQ(quick(r).seeds.size(), 3u);
  EXPECT_FALSE(default_recipe("ISIC-like").pretrain.has_value());
  EXPECT_EQ(default_recipe("knee").n_ref, 400u);
  r.seeds.clear();
  EXPECT_THROW(r.validate(), ConfigError);
  EXPECT_THROW(default_recipe("mnist"), ConfigError);
}

TEST(Recipe, JsonCarriesEveryKnob) {
  auto r = default_recipe("wb95");
  r.modes = {RegularizerMode::BothTerms, RegularizerMode::None};
  r.gt_masks = true;
  const auto j = recipe_to_json(r);
  auto back = report_from_json({{"recipe", j}, {"seeds", nlohmann::json::array()}}).recipe;
  EXPECT_EQ(recipe_to_json(back), j);
}

TEST(MethodKey, Names) {
  EXPECT_EQ(method_key(Method::Score), "score");
  EXPECT_EQ(method_key(Method::Score, RegularizerMode::PositiveOnly), "score:positive-only");
  EXPECT_EQ(method_key(Method::Erm, RegularizerMode::None), "erm");
  EXPECT_EQ(method_key(Method::SpuriousFree), "spurious-free");
}

TEST(Baselines, GroupBalancedSubsetUsesSmallestGroup) {
  auto ds = with_accuracies({{{0, 0}, {2, 7}}, {{0, 1}, {3, 3}}, {{1, 0}, {1, 9}}});
  auto subset = group_balanced_subset(ds, 1);
  EXPECT_EQ(subset.size(), 9u);
}

TEST(Baselines, ZeroEpochLastLayerLeavesModel) {
  auto ds = with_accuracies({{{0, 0}, {2, 2}}, {{1, 0}, {2, 2}}});
  TrainConfig cfg;
  cfg.epochs = 0;
  auto m = sign_model();
  EXPECT_TRUE(baseline_last_layer_retrain(m, ds.examples(), 2, cfg) == m);
  auto only0 = with_accuracies({{{0, 0}, {2, 2}}});
  EXPECT_THROW(baseline_last_layer_retrain(m, only0.examples(), 2, cfg), ConfigError);
}

TEST(Baselines, SpuriousFreeUnavailableOnFullyPatchedClass) {
  auto train = generate_split(preset("WB100"), Split::Train);
  try {
    baseline_spurious_free(train, TrainConfig{});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("unavailable"), std::string::npos);
  }
}

TEST(Baselines, SpuriousFreeViewOnIsicKeepsBenignAndAllMalignant) {
  auto train = generate_split(preset("ISIC-like"), Split::Train);
  auto view = spurious_free_view(train);
  auto counts = group_counts(train);
  auto view_counts = group_counts(view);
  EXPECT_EQ((view_counts[Group{1, 0}]), (counts[Group{1, 0}]) + (counts[Group{1, 1}]));
  EXPECT_EQ((view_counts[Group{0, 0}]), (counts[Group{0, 0}]));
  EXPECT_EQ(view_counts.count(Group{0, 1}), 0u);
}

TEST(CachedErm, SecondCallLoadsTheCheckpoint) {
  testing::TempDir dir;
  DatasetSpec spec;
  spec.image_size = 16;
  spec.patch.size = 4;
  spec.train = {{8, 8}, {1.0, 0.0}, true};
  spec.val = {{2, 2}, {0.5, 0.5}, true};
  spec.test = spec.val;
  auto train = generate_split(spec, Split::Train);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  // cached_erm builds 32 px models; the cache is what is under test here, so
  // a mismatched image size must fail loudly rather than be silently cached.
  EXPECT_THROW(cached_erm(spec, train, cfg, dir.path()), DimensionError);
  spec.image_size = 32;
  spec.patch.size = 6;
  train = generate_split(spec, Split::Train);
  auto a = cached_erm(spec, train, cfg, dir.path());
  auto b = cached_erm(spec, train, cfg, dir.path());
  EXPECT_TRUE(a == b);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) files += e.path().extension() == ".ckpt";
  EXPECT_EQ(files, 1u);
}

}  // namespace
}  // namespace score
