#include "score/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "score/detection.hpp"
#include "score/errors.hpp"
#include "score/rng.hpp"
#include "score/serialize.hpp"

namespace score {

std::vector<Group> declared_groups(std::size_t num_classes) {
  std::vector<Group> out;
  for (std::size_t y = 0; y < num_classes; ++y) {
    out.push_back({y, 0});
    out.push_back({y, 1});
  }
  return out;
}

GroupReport evaluate(const Model& model, const GroupedDataset& dataset) {
  if (dataset.samples.empty()) throw ConfigError("evaluate: empty dataset");
  std::map<Group, std::size_t> correct;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> per_class;
  GroupReport report;
  for (auto g : declared_groups(dataset.num_classes)) {
    report.group_count[g] = 0;
    correct[g] = 0;
  }
  std::size_t total_correct = 0;
  for (const auto& s : dataset.samples) {
    const bool ok = predict(model, s.image) == s.y;
    ++report.group_count[s.group()];
    correct[s.group()] += ok;
    auto& c = per_class[s.y];
    c.first += ok;
    ++c.second;
    total_correct += ok;
  }
  for (const auto& [g, n] : report.group_count) {
    if (n == 0) throw ConfigError("evaluate: group " + g.to_string() + " has no samples");
    report.group_accuracy[g] = static_cast<double>(correct[g]) / static_cast<double>(n);
  }
  for (const auto& [y, c] : per_class) {
    report.class_accuracy[y] = static_cast<double>(c.first) / static_cast<double>(c.second);
  }
  report.wga = worst_group_accuracy(report.group_accuracy);
  for (const auto& [g, a] : report.group_accuracy) {
    if (a == report.wga) {
      report.worst_group = g;
      break;
    }
  }
  report.avg = static_cast<double>(total_correct) / static_cast<double>(dataset.samples.size());
  return report;
}

double wga(const Model& model, const GroupedDataset& dataset) { return evaluate(model, dataset).wga; }

double avg_acc(const Model& model, const GroupedDataset& dataset) { return evaluate(model, dataset).avg; }

double worst_group_accuracy(const std::map<Group, double>& accuracies) {
  if (accuracies.empty()) throw ConfigError("worst-group accuracy of an empty group set");
  double worst = 1.0;
  for (const auto& [g, a] : accuracies) worst = std::min(worst, a);
  return worst;
}

namespace {

std::string group_key(const Group& g) { return std::to_string(g.y) + "," + std::to_string(g.s); }

Group parse_group_key(const std::string& key) {
  const auto comma = key.find(',');
  if (comma == std::string::npos) throw ConfigError("bad group key '" + key + "'");
  return {std::stoul(key.substr(0, comma)), std::stoi(key.substr(comma + 1))};
}

}  // namespace

nlohmann::json group_report_to_json(const GroupReport& report) {
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& [g, a] : report.group_accuracy) {
    groups[group_key(g)] = {{"accuracy", a}, {"count", report.group_count.at(g)}};
  }
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [y, a] : report.class_accuracy) classes[std::to_string(y)] = a;
  return {{"wga", report.wga},
          {"avg", report.avg},
          {"worst_group", group_key(report.worst_group)},
          {"groups", groups},
          {"classes", classes},
          {"metadata", report.metadata}};
}

GroupReport group_report_from_json(const nlohmann::json& j) {
  GroupReport r;
  r.wga = j.at("wga").get<double>();
  r.avg = j.at("avg").get<double>();
  r.worst_group = parse_group_key(j.at("worst_group").get<std::string>());
  for (const auto& [k, v] : j.at("groups").items()) {
    const auto g = parse_group_key(k);
    r.group_accuracy[g] = v.at("accuracy").get<double>();
    r.group_count[g] = v.at("count").get<std::size_t>();
  }
  for (const auto& [k, v] : j.at("classes").items()) r.class_accuracy[std::stoul(k)] = v.get<double>();
  r.metadata = j.value("metadata", nlohmann::json::object());
  return r;
}

std::vector<Example> group_balanced_subset(const GroupedDataset& dataset, std::uint64_t seed) {
  std::map<Group, std::vector<const GroupedSample*>> by_group;
  for (const auto& s : dataset.samples) by_group[s.group()].push_back(&s);
  if (by_group.empty()) throw ConfigError("group-balanced subset of an empty dataset");
  std::size_t smallest = dataset.samples.size();
  for (const auto& [g, v] : by_group) smallest = std::min(smallest, v.size());
  Rng rng(derive_seed(seed, 0xBA1));
  std::vector<Example> out;
  for (auto& [g, v] : by_group) {
    rng.shuffle(v.begin(), v.end());
    for (std::size_t i = 0; i < smallest; ++i) out.push_back({&v[i]->image, v[i]->y});
  }
  return out;
}

Model baseline_last_layer_retrain(const Model& model, const std::vector<Example>& subset, std::size_t num_classes,
                                  const TrainConfig& cfg) {
  std::set<std::size_t> present;
  for (const auto& ex : subset) present.insert(ex.label);
  for (std::size_t y = 0; y < num_classes; ++y) {
    if (!present.count(y)) throw ConfigError("last-layer retraining subset has no samples of class " + std::to_string(y));
  }
  Model out = model;
  if (cfg.epochs > 0) train_last_layer(out, subset, cfg);
  return out;
}

Model baseline_spurious_free(const GroupedDataset& train, const TrainConfig& cfg) {
  const auto view = spurious_free_view(train);
  std::vector<std::size_t> counts(train.num_classes, 0);
  for (const auto& s : view.samples) ++counts[s.y];
  for (std::size_t y = 0; y < counts.size(); ++y) {
    if (counts[y] == 0) {
      throw ConfigError("upper bound unavailable for this regime: class " + std::to_string(y) +
                        " has no spurious-free training samples");
    }
  }
  Model model = build_patchnet<float>(train.num_classes, cfg.seed);
  train_erm(model, view.examples(), cfg);
  return model;
}

std::string to_string(Method method) {
  switch (method) {
    case Method::Erm: return "erm";
    case Method::Score: return "score";
    case Method::ScoreGt: return "score-gt";
    case Method::LastLayer: return "last-layer";
    case Method::SpuriousFree: return "spurious-free";
  }
  return "erm";
}

std::string method_key(Method method, RegularizerMode mode) {
  if (method != Method::Score || mode == RegularizerMode::BothTerms) return to_string(method);
  return to_string(method) + ":" + to_string(mode);
}

void Recipe::validate() const {
  if (seeds.empty()) throw ConfigError("recipe: no seeds");
  if (modes.empty()) throw ConfigError("recipe: no regularizer modes");
  if (n_ref == 0 || t_max == 0) throw ConfigError("recipe: n_ref and t_max must be positive");
  if (!(mask_quantile > 0.0 && mask_quantile <= 1.0)) throw ConfigError("recipe: mask quantile must be in (0, 1]");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("recipe: tau must be in [0, 1]");
  erm.validate();
  finetune.validate();
  score::preset(this->preset);
}

Recipe default_recipe(const std::string& name) {
  Recipe r;
  r.preset = name;
  const auto spec = preset(name);
  r.erm.epochs = spec.name == "ISIC-like" ? 7 : spec.name == "Knee-like" ? 8 : 12;
  r.finetune.layers = {2};
  r.finetune.keep_best = true;
  r.last_layer_cfg.epochs = 100;
  r.last_layer_cfg.learning_rate = 0.05;
  r.spurious_free_cfg.epochs = 40;
  // The bird-like training splits never require the core shape, so those
  // features have to come from pretraining.
  if (spec.name == "WB95" || spec.name == "WB100") r.pretrain = PretrainConfig{};
  // Knee-like has few shortcut-dominated top activations; a deeper pool keeps t=200 reachable.
  if (spec.name == "Knee-like") r.n_ref = 400;
  return r;
}

Recipe quick(Recipe recipe) {
  if (recipe.seeds.size() > 3) recipe.seeds.resize(3);
  return recipe;
}

namespace {

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"seed", c.seed},                   {"weight_decay", c.weight_decay}, {"momentum", c.momentum}};
}

TrainConfig train_config_from(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.momentum = j.value("momentum", c.momentum);
  return c;
}

nlohmann::json pretrain_config_json(const PretrainConfig& c) {
  return {{"per_class", c.per_class}, {"corpus_seed", c.corpus_seed}, {"train", train_config_json(c.train)}};
}

FinetuneConfig finetune_config_from(const nlohmann::json& j) {
  FinetuneConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.epochs = j.value("epochs", c.epochs);
  c.ft_size = j.value("ft_size", c.ft_size);
  c.layers = j.value("layers", c.layers);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.mode = regularizer_mode_from_string(j.value("mode", std::string("both")));
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lrp_eps = j.value("lrp_eps", c.lrp_eps);
  c.keep_best = j.value("keep_best", c.keep_best);
  return c;
}

Recipe recipe_from_json(const nlohmann::json& j) {
  Recipe r;
  r.preset = j.at("preset").get<std::string>();
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.erm = train_config_from(j.at("erm"));
  r.detect_class = j.value("detect_class", r.detect_class);
  r.n_ref = j.value("n_ref", r.n_ref);
  r.mask_quantile = j.value("mask_quantile", r.mask_quantile);
  r.tau = j.value("tau", r.tau);
  r.t_max = j.value("t_max", r.t_max);
  r.finetune = finetune_config_from(j.at("finetune"));
  r.modes.clear();
  for (const auto& m : j.at("modes")) r.modes.push_back(regularizer_mode_from_string(m.get<std::string>()));
  r.gt_masks = j.value("gt_masks", false);
  r.last_layer = j.value("last_layer", false);
  r.spurious_free = j.value("spurious_free", false);
  if (j.contains("last_layer_cfg")) r.last_layer_cfg = train_config_from(j.at("last_layer_cfg"));
  if (j.contains("spurious_free_cfg")) r.spurious_free_cfg = train_config_from(j.at("spurious_free_cfg"));
  if (j.contains("pretrain") && !j.at("pretrain").is_null()) {
    const auto& p = j.at("pretrain");
    PretrainConfig c;
    c.per_class = p.value("per_class", c.per_class);
    c.corpus_seed = p.value("corpus_seed", c.corpus_seed);
    if (p.contains("train")) c.train = train_config_from(p.at("train"));
    r.pretrain = c;
  }
  return r;
}

// FNV-1a over the cache key text.
std::uint64_t fingerprint(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <class F>
bool guarded(SeedResult& out, const std::string& stage, F&& f) {
  try {
    f();
    return true;
  } catch (const std::exception& e) {
    out.failures[stage] = e.what();
    return false;
  }
}

}  // namespace

nlohmann::json recipe_to_json(const Recipe& r) {
  nlohmann::json modes = nlohmann::json::array();
  for (auto m : r.modes) modes.push_back(to_string(m));
  return {{"preset", r.preset},
          {"seeds", r.seeds},
          {"erm", train_config_json(r.erm)},
          {"detect_class", r.detect_class},
          {"n_ref", r.n_ref},
          {"mask_quantile", r.mask_quantile},
          {"tau", r.tau},
          {"t_max", r.t_max},
          {"finetune", finetune_config_to_json(r.finetune)},
          {"modes", modes},
          {"gt_masks", r.gt_masks},
          {"last_layer", r.last_layer},
          {"spurious_free", r.spurious_free},
          {"last_layer_cfg", train_config_json(r.last_layer_cfg)},
          {"spurious_free_cfg", train_config_json(r.spurious_free_cfg)},
          {"pretrain", r.pretrain ? pretrain_config_json(*r.pretrain) : nlohmann::json(nullptr)}};
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.n = values.size();
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  return a;
}

bool ExperimentReport::partial() const {
  return std::any_of(seeds.begin(), seeds.end(), [](const SeedResult& s) { return !s.failures.empty(); });
}

std::vector<std::string> ExperimentReport::method_names() const {
  std::vector<std::string> names;
  for (const auto& s : seeds) {
    for (const auto& [name, r] : s.methods) {
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    }
  }
  return names;
}

std::vector<double> ExperimentReport::values(const std::string& method, bool worst_group) const {
  std::vector<double> out;
  for (const auto& s : seeds) {
    auto it = s.methods.find(method);
    if (it != s.methods.end()) out.push_back(worst_group ? it->second.wga : it->second.avg);
  }
  return out;
}

Model pretrained_patchnet(std::size_t num_classes, std::uint64_t seed, const PretrainConfig& cfg,
                          const std::optional<std::filesystem::path>& cache_dir) {
  cfg.train.validate();
  if (cfg.per_class == 0) throw ConfigError("pretrain: per_class must be positive");
  std::filesystem::path path;
  Model backbone;
  if (cache_dir) {
    char name[64];
    std::snprintf(name, sizeof name, "pretrain-%016llx.ckpt",
                  static_cast<unsigned long long>(fingerprint(pretrain_config_json(cfg).dump())));
    path = *cache_dir / name;
  }
  if (!path.empty() && std::filesystem::exists(path)) {
    backbone = load_checkpoint(path);
  } else {
    const auto corpus = shape_corpus(cfg.per_class, cfg.corpus_seed);
    backbone = build_patchnet<float>(corpus.num_classes, cfg.train.seed);
    train_erm(backbone, corpus.examples(), cfg.train);
    if (!path.empty()) {
      std::filesystem::create_directories(*cache_dir);
      save_checkpoint(path, backbone);
    }
  }
  Model model = build_patchnet<float>(num_classes, seed);
  for (std::size_t i = 0; i + 1 < model.layers().size(); ++i) model.layers()[i] = backbone.layers()[i];
  return model;
}

Model cached_erm(const DatasetSpec& spec, const GroupedDataset& train, const TrainConfig& cfg,
                 const std::optional<std::filesystem::path>& cache_dir, const std::optional<PretrainConfig>& pretrain) {
  std::filesystem::path path;
  if (cache_dir) {
    std::string key = spec_to_json(spec).dump() + train_config_json(cfg).dump();
    if (pretrain) key += pretrain_config_json(*pretrain).dump();
    char name[64];
    std::snprintf(name, sizeof name, "erm-%016llx.ckpt", static_cast<unsigned long long>(fingerprint(key)));
    path = *cache_dir / name;
    if (std::filesystem::exists(path)) return load_checkpoint(path);
  }
  Model model = pretrain ? pretrained_patchnet(spec.num_classes, cfg.seed, *pretrain, cache_dir)
                         : build_patchnet<float>(spec.num_classes, cfg.seed);
  train_erm(model, train.examples(), cfg);
  if (cache_dir) {
    std::filesystem::create_directories(*cache_dir);
    save_checkpoint(path, model);
  }
  return model;
}

SeedResult run_seed(const Recipe& recipe, std::uint64_t seed) {
  SeedResult out;
  out.seed = seed;
  auto spec = preset(recipe.preset);
  spec.seed = seed;
  DatasetSplits data;
  if (!guarded(out, "generate", [&] { data = generate(spec); })) return out;
  auto erm_cfg = recipe.erm;
  erm_cfg.seed = seed;
  Model erm;
  if (!guarded(out, "erm", [&] { erm = cached_erm(spec, data.train, erm_cfg, recipe.cache_dir, recipe.pretrain); })) return out;
  auto tag = [&](GroupReport r, const std::string& method) {
    r.metadata = {{"seed", seed}, {"preset", spec.name}, {"method", method}};
    return r;
  };
  out.methods["erm"] = tag(evaluate(erm, data.test), "erm");

  std::vector<SpuriousPositiveSet> positives;
  const bool selected = guarded(out, "select", [&] {
    const auto run = detect(erm, data.train, recipe.detect_class, recipe.n_ref, recipe.mask_quantile,
                            "seed-" + std::to_string(seed), recipe.finetune.lrp_eps);
    positives.push_back(oracle_select(run, data.train, recipe.tau, recipe.t_max));
    out.positives = positives.front().size();
  });
  if (selected) {
    FinetuneSet ft;
    const EpochHook val_wga = [&](const Model& m, std::size_t) -> std::optional<double> { return wga(m, data.val); };
    if (guarded(out, "finetune-set", [&] {
          ft = build_finetune_set(data.train, positives, recipe.finetune.ft_size, spec.num_classes, seed);
        })) {
      for (auto mode : recipe.modes) {
        const auto key = method_key(Method::Score, mode);
        guarded(out, key, [&] {
          Model m = erm;
          auto cfg = recipe.finetune;
          cfg.seed = seed;
          cfg.mode = mode;
          finetune_score(m, ft, positives, cfg, val_wga);
          out.methods[key] = tag(evaluate(m, data.test), key);
        });
      }
      if (recipe.gt_masks) {
        const auto key = to_string(Method::ScoreGt);
        guarded(out, key, [&] {
          Model m = erm;
          auto cfg = recipe.finetune;
          cfg.seed = seed;
          cfg.mode = recipe.modes.front();
          finetune_with_gt_masks(m, ft, data.train, positives, cfg, val_wga);
          out.methods[key] = tag(evaluate(m, data.test), key);
        });
      }
    }
  }
  if (recipe.last_layer) {
    const auto key = to_string(Method::LastLayer);
    guarded(out, key, [&] {
      auto cfg = recipe.last_layer_cfg;
      cfg.seed = seed;
      const auto subset = group_balanced_subset(data.train, seed);
      out.methods[key] = tag(evaluate(baseline_last_layer_retrain(erm, subset, spec.num_classes, cfg), data.test), key);
    });
  }
  if (recipe.spurious_free) {
    const auto key = to_string(Method::SpuriousFree);
    auto cfg = recipe.spurious_free_cfg;
    cfg.seed = seed;
    guarded(out, key, [&] { out.methods[key] = tag(evaluate(baseline_spurious_free(data.train, cfg), data.test), key); });
  }
  return out;
}

ExperimentReport run_experiment(const Recipe& recipe) {
  recipe.validate();
  ExperimentReport report;
  report.recipe = recipe;
  for (auto seed : recipe.seeds) report.seeds.push_back(run_seed(recipe, seed));
  return report;
}

nlohmann::json report_to_json(const ExperimentReport& report) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : report.seeds) {
    nlohmann::json methods = nlohmann::json::object();
    for (const auto& [name, r] : s.methods) methods[name] = group_report_to_json(r);
    seeds.push_back({{"seed", s.seed}, {"positives", s.positives}, {"methods", methods}, {"failures", s.failures}});
  }
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& name : report.method_names()) {
    const auto w = aggregate(report.values(name, true));
    const auto a = aggregate(report.values(name, false));
    summary[name] = {{"wga_mean", w.mean}, {"wga_std", w.stddev}, {"avg_mean", a.mean}, {"avg_std", a.stddev}, {"n", w.n}};
  }
  return {{"recipe", recipe_to_json(report.recipe)}, {"partial", report.partial()}, {"seeds", seeds}, {"summary", summary}};
}

ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport report;
  report.recipe = recipe_from_json(j.at("recipe"));
  for (const auto& s : j.at("seeds")) {
    SeedResult r;
    r.seed = s.at("seed").get<std::uint64_t>();
    r.positives = s.value("positives", std::size_t{0});
    for (const auto& [name, g] : s.at("methods").items()) r.methods[name] = group_report_from_json(g);
    r.failures = s.value("failures", std::map<std::string, std::string>{});
    report.seeds.push_back(std::move(r));
  }
  return report;
}

std::string render_table(const ExperimentReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %16s %16s %6s\n", report.recipe.preset.c_str(), "AVG", "WGA", "seeds");
  os << line;
  for (const auto& name : report.method_names()) {
    const auto a = aggregate(report.values(name, false));
    const auto w = aggregate(report.values(name, true));
    std::snprintf(line, sizeof line, "%-22s %9.1f +- %4.1f %9.1f +- %4.1f %6zu\n", name.c_str(), 100.0 * a.mean,
                  100.0 * a.stddev, 100.0 * w.mean, 100.0 * w.stddev, w.n);
    os << line;
  }
  for (const auto& s : report.seeds) {
    for (const auto& [stage, reason] : s.failures) os << "seed " << s.seed << " " << stage << ": " << reason << "\n";
  }
  return os.str();
}

}  // namespace score
