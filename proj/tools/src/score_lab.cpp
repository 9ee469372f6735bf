// score-lab: command-line driver for every pipeline stage.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "score/detection.hpp"
#include "score/errors.hpp"
#include "score/eval.hpp"
#include "score/mitigation.hpp"
#include "score/serialize.hpp"
#include "score/synth.hpp"
#include "score/train.hpp"
#include "score_app/config.hpp"
#include "score_app/run_store.hpp"
#include "score_app/service.hpp"

namespace fs = std::filesystem;
using score::app::Config;
using score::app::RunStore;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::string root;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--config", c.config, "key=value config file; flags override it")->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "Output directory");
  sub->add_option("--root", c.root, "Artifact store root (default $SCORE_LAB_ROOT or ./score-lab)");
}

// Flag value, else config key, else fallback.
class Params {
 public:
  explicit Params(const Common& c) : common_(c) {
    if (!c.config.empty()) cfg_ = Config::load(c.config);
  }

  std::uint64_t seed() const { return common_.seed ? *common_.seed : cfg_.get_uint("seed", 0); }
  RunStore store() const {
    if (!common_.root.empty()) return RunStore(common_.root);
    return RunStore(cfg_.has("root") ? fs::path(*cfg_.get("root")) : RunStore::default_root());
  }
  std::optional<fs::path> out() const {
    if (!common_.out.empty()) return fs::path(common_.out);
    if (auto v = cfg_.get("out")) return fs::path(*v);
    return std::nullopt;
  }

  template <class T>
  T pick(const std::optional<T>& flag, const std::string& key, T fallback) const {
    if (flag) return *flag;
    if constexpr (std::is_same_v<T, std::string>) {
      return cfg_.get_string(key, fallback);
    } else if constexpr (std::is_same_v<T, bool>) {
      return cfg_.get_bool(key, fallback);
    } else if constexpr (std::is_floating_point_v<T>) {
      return static_cast<T>(cfg_.get_double(key, fallback));
    } else {
      return static_cast<T>(cfg_.get_uint(key, fallback));
    }
  }

  const Config& config() const { return cfg_; }

 private:
  const Common& common_;
  Config cfg_;
};

std::vector<std::uint64_t> parse_list(const std::string& text) {
  return Config::parse("v = " + text, "<list>").get_uint_list("v", {});
}

void write_json(const fs::path& path, const nlohmann::json& j) { score::write_file_atomic(path, j.dump(2) + "\n"); }

void say(const std::string& line) { std::cout << line << "\n"; }

// ---- gen-data ----------------------------------------------------------------

struct GenData {
  Common c;
  std::optional<std::string> preset;
};

int run_gen_data(const GenData& o) {
  Params p(o.c);
  auto spec = score::preset(p.pick(o.preset, "data.preset", std::string("wb100")));
  spec.seed = p.seed();
  const auto out = p.out().value_or(p.store().datasets_dir() / (spec.name + "-s" + std::to_string(spec.seed)));
  const auto data = score::generate(spec);
  score::save_dataset(out, data);
  const auto counts = score::group_counts(data.train);
  std::string summary;
  for (const auto& [g, n] : counts) summary += " " + g.to_string() + "=" + std::to_string(n);
  say("dataset " + out.string() + " train" + summary);
  return 0;
}

// ---- train ---------------------------------------------------------------------

struct TrainOpts {
  Common c;
  std::optional<std::string> data;
  std::optional<std::size_t> epochs, batch;
  std::optional<double> lr, momentum, weight_decay;
};

score::TrainConfig train_config(const Params& p, const TrainOpts& o, const std::string& section) {
  score::TrainConfig cfg;
  cfg.seed = p.seed();
  cfg.epochs = p.pick(o.epochs, section + ".epochs", cfg.epochs);
  cfg.batch_size = p.pick(o.batch, section + ".batch_size", cfg.batch_size);
  cfg.learning_rate = p.pick(o.lr, section + ".learning_rate", cfg.learning_rate);
  cfg.momentum = p.pick(o.momentum, section + ".momentum", cfg.momentum);
  cfg.weight_decay = p.pick(o.weight_decay, section + ".weight_decay", cfg.weight_decay);
  cfg.validate();
  return cfg;
}

fs::path require_path(const std::optional<std::string>& flag, const Params& p, const std::string& key,
                      const std::string& what) {
  const auto v = p.pick(flag, key, std::string());
  if (v.empty()) throw score::ConfigError("missing " + what + " (--" + what + " or '" + key + "')");
  return v;
}

int run_train(const TrainOpts& o) {
  Params p(o.c);
  const auto data_dir = require_path(o.data, p, "data.path", "data");
  const auto data = score::load_dataset(data_dir);
  const auto cfg = train_config(p, o, "train");
  const auto out = p.out().value_or(p.store().models_dir() / (data_dir.filename().string() + "-erm"));
  auto model = score::build_patchnet<float>(data.spec.num_classes, cfg.seed);
  const auto result = score::train_erm(model, data.train.examples(), cfg);
  score::save_checkpoint(out / "model.ckpt", model);
  const auto report = score::evaluate(model, data.test);
  write_json(out / "train.json", {{"dataset", data_dir.string()},
                                  {"epoch_loss", result.epoch_loss},
                                  {"test", score::group_report_to_json(report)}});
  char line[128];
  std::snprintf(line, sizeof line, "model %s  AVG %.3f  WGA %.3f", (out / "model.ckpt").c_str(), report.avg, report.wga);
  say(line);
  return 0;
}

// ---- detect --------------------------------------------------------------------

struct DetectOpts {
  Common c;
  std::optional<std::string> data, model, run_id;
  std::optional<std::size_t> class_id, n_ref;
  std::optional<double> quantile;
};

int run_detect(const DetectOpts& o) {
  Params p(o.c);
  const auto data_dir = require_path(o.data, p, "data.path", "data");
  const auto model_path = require_path(o.model, p, "detect.model", "model");
  const auto data = score::load_dataset(data_dir);
  const auto model = score::load_checkpoint(model_path);
  const auto k = p.pick(o.class_id, "detect.class", std::size_t{0});
  const auto n_ref = p.pick(o.n_ref, "detect.n_ref", std::size_t{100});
  const auto q = p.pick(o.quantile, "detect.mask_quantile", 0.1);
  auto id = p.pick(o.run_id, "detect.run_id", std::string());
  const auto out_flag = p.out();
  if (id.empty()) id = out_flag ? out_flag->filename().string() : data_dir.filename().string() + "-c" + std::to_string(k);
  if (!RunStore::valid_id(id)) throw score::ConfigError("run id '" + id + "' may only use letters, digits, '-', '_' and '.'");
  const auto out = out_flag.value_or(p.store().runs_dir() / id);
  auto run = score::detect(model, data.train, k, n_ref, q, id);
  run.checkpoint_ref = fs::absolute(model_path).string();
  score::export_review_bundle(run, data.train, out);
  say("run " + id + " with " + std::to_string(run.entries.size()) + " entries in " + out.string());
  return 0;
}

// ---- select --------------------------------------------------------------------

struct SelectOpts {
  Common c;
  std::optional<std::string> run, data, ids, file;
  std::optional<double> tau;
  std::optional<std::size_t> t_max;
  bool oracle = false;
};

int run_select(const SelectOpts& o) {
  Params p(o.c);
  auto store = p.store();
  const auto id = require_path(o.run, p, "select.run", "run").string();
  const auto run = store.load_run(id);
  score::Selection sel;
  sel.run_id = run.run_id;
  sel.class_id = run.class_id;
  if (o.oracle || p.config().get_bool("select.oracle", false)) {
    const auto data = score::load_dataset(require_path(o.data, p, "data.path", "data"));
    const auto set = score::oracle_select(run, data.train, p.pick(o.tau, "select.tau", 0.2),
                                          p.pick(o.t_max, "select.t_max", std::size_t{50}));
    sel.sample_ids = set.sample_ids;
    sel.source = score::SelectionSource::Oracle;
  } else if (o.file) {
    sel = score::selection_from_json(nlohmann::json::parse(score::read_file(*o.file)));
    sel.source = score::SelectionSource::File;
  } else if (o.ids) {
    for (auto v : parse_list(*o.ids)) sel.sample_ids.push_back(static_cast<std::int64_t>(v));
    sel.source = score::SelectionSource::File;
  } else {
    throw score::ConfigError("select needs --oracle, --ids or --file");
  }
  if (const auto out = p.out()) {
    score::validate_selection(run, sel);
    write_json(*out / "selection.json", {{"revision", 1}, {"selection", score::selection_to_json(sel)}});
    say("selection of " + std::to_string(sel.sample_ids.size()) + " ids in " + (*out / "selection.json").string());
    return 0;
  }
  const auto stored = store.put_selection(id, sel);
  say("selection of " + std::to_string(stored.selection.sample_ids.size()) + " ids, revision " +
      std::to_string(stored.revision));
  return 0;
}

// ---- serve ---------------------------------------------------------------------

struct ServeOpts {
  Common c;
  std::optional<std::string> host;
  std::optional<std::size_t> port;
};

int run_serve(const ServeOpts& o) {
  Params p(o.c);
  auto store = p.store();
  score::app::AnnotationService service(store);
  const auto host = p.pick(o.host, "serve.host", std::string("127.0.0.1"));
  const int port = service.bind(host, static_cast<int>(p.pick(o.port, "serve.port", std::size_t{8080})));
  if (port < 0) throw score::IoError("cannot bind " + host);
  say("serving " + store.root().string() + " on http://" + host + ":" + std::to_string(port));
  std::cout.flush();
  return service.listen_after_bind() ? 0 : 1;
}

// ---- finetune ------------------------------------------------------------------

struct FinetuneOpts {
  Common c;
  std::optional<std::string> data, model, run, mode, layers, selection;
  std::optional<double> alpha, lr, tau;
  std::optional<std::size_t> epochs, ft_size, batch, t_max;
  std::optional<bool> gt_masks, keep_best, oracle;
};

score::FinetuneConfig finetune_config(const Params& p, const FinetuneOpts& o) {
  score::FinetuneConfig cfg;
  cfg.seed = p.seed();
  cfg.alpha = p.pick(o.alpha, "finetune.alpha", cfg.alpha);
  cfg.epochs = p.pick(o.epochs, "finetune.epochs", cfg.epochs);
  cfg.ft_size = p.pick(o.ft_size, "finetune.ft_size", cfg.ft_size);
  cfg.learning_rate = p.pick(o.lr, "finetune.learning_rate", cfg.learning_rate);
  cfg.batch_size = p.pick(o.batch, "finetune.batch_size", cfg.batch_size);
  cfg.mode = score::regularizer_mode_from_string(p.pick(o.mode, "finetune.mode", std::string("both")));
  cfg.keep_best = p.pick(o.keep_best, "finetune.keep_best", cfg.keep_best);
  const auto layers = p.pick(o.layers, "finetune.layers", std::string());
  if (!layers.empty()) {
    for (auto v : parse_list(layers)) cfg.layers.push_back(static_cast<std::size_t>(v));
  }
  cfg.validate();
  return cfg;
}

int run_finetune(const FinetuneOpts& o) {
  Params p(o.c);
  auto store = p.store();
  const auto data_dir = require_path(o.data, p, "data.path", "data");
  const auto data = score::load_dataset(data_dir);
  auto model = score::load_checkpoint(require_path(o.model, p, "finetune.model", "model"));
  const auto cfg = finetune_config(p, o);
  const auto id = require_path(o.run, p, "finetune.run", "run").string();
  const auto run = store.load_run(id);

  score::SpuriousPositiveSet positives;
  if (p.pick(o.oracle, "finetune.oracle", false)) {
    positives = score::oracle_select(run, data.train, p.pick(o.tau, "select.tau", 0.2),
                                     p.pick(o.t_max, "select.t_max", std::size_t{50}));
  } else {
    score::Selection sel;
    if (o.selection) {
      sel = score::selection_from_json(nlohmann::json::parse(score::read_file(*o.selection)).at("selection"));
    } else {
      const auto stored = store.selection(id);
      if (!stored) throw score::NotFoundError("run '" + id + "' has no selection; run `select` first");
      sel = stored->selection;
    }
    positives = score::ingest_selection(run, data.train, sel);
  }
  std::vector<score::SpuriousPositiveSet> sets{positives};
  const auto ft = score::build_finetune_set(data.train, sets, cfg.ft_size, data.spec.num_classes, cfg.seed);
  const auto hook = [&](const score::Model& m, std::size_t) -> std::optional<double> {
    return score::evaluate(m, data.val).wga;
  };
  const bool gt = p.pick(o.gt_masks, "finetune.gt_masks", false);
  const auto result = gt ? score::finetune_with_gt_masks(model, ft, data.train, sets, cfg, hook)
                         : score::finetune_score(model, ft, sets, cfg, hook);
  const auto out = p.out().value_or(store.models_dir() / (id + "-score"));
  score::save_checkpoint(out / "model.ckpt", model);
  write_json(out / "curves.json", score::curves_json(result));
  auto config = score::finetune_config_to_json(cfg);
  config["run"] = id;
  config["dataset"] = data_dir.string();
  config["positives"] = positives.sample_ids;
  config["gt_masks"] = gt;
  if (result.best_epoch) config["best_epoch"] = *result.best_epoch + 1;
  write_json(out / "config.json", config);
  const auto report = score::evaluate(model, data.test);
  char line[160];
  std::snprintf(line, sizeof line, "model %s  %zu epochs  test AVG %.3f  WGA %.3f", (out / "model.ckpt").c_str(),
                result.curves.size(), report.avg, report.wga);
  say(line);
  return 0;
}

// ---- eval ----------------------------------------------------------------------

struct EvalOpts {
  Common c;
  std::optional<std::string> data, model, split;
};

int run_eval(const EvalOpts& o) {
  Params p(o.c);
  const auto data = score::load_dataset(require_path(o.data, p, "data.path", "data"));
  const auto model = score::load_checkpoint(require_path(o.model, p, "eval.model", "model"));
  const auto split = p.pick(o.split, "eval.split", std::string("test"));
  const score::GroupedDataset* ds = split == "test" ? &data.test : split == "val" ? &data.val
                                  : split == "train" ? &data.train : nullptr;
  if (!ds) throw score::ConfigError("unknown split '" + split + "' (train, val, test)");
  const auto report = score::evaluate(model, *ds);
  for (const auto& [g, a] : report.group_accuracy) {
    char line[96];
    std::snprintf(line, sizeof line, "%-12s %6.3f  (n=%zu)", g.to_string().c_str(), a, report.group_count.at(g));
    say(line);
  }
  char line[96];
  std::snprintf(line, sizeof line, "AVG %.3f  WGA %.3f", report.avg, report.wga);
  say(line);
  if (const auto out = p.out()) write_json(*out / "eval.json", score::group_report_to_json(report));
  return 0;
}

// ---- report --------------------------------------------------------------------

struct ReportOpts {
  Common c;
  std::optional<std::string> preset, seeds, modes, from;
  std::optional<bool> quick, gt_masks, last_layer, spurious_free;
  std::optional<std::size_t> t_max;
};

int run_report(const ReportOpts& o) {
  Params p(o.c);
  if (o.from) {
    const auto report = score::report_from_json(nlohmann::json::parse(score::read_file(*o.from)));
    std::cout << score::render_table(report);
    return 0;
  }
  auto recipe = score::default_recipe(p.pick(o.preset, "report.preset", std::string("wb100")));
  const auto seeds = p.pick(o.seeds, "report.seeds", std::string());
  if (!seeds.empty()) recipe.seeds = parse_list(seeds);
  if (p.pick(o.quick, "report.quick", false)) recipe = score::quick(recipe);
  const auto modes = p.pick(o.modes, "report.modes", std::string());
  if (!modes.empty()) {
    recipe.modes.clear();
    std::string rest = modes;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      recipe.modes.push_back(score::regularizer_mode_from_string(rest.substr(0, comma)));
      rest = comma == std::string::npos ? "" : rest.substr(comma + 1);
    }
  }
  recipe.t_max = p.pick(o.t_max, "report.t_max", recipe.t_max);
  recipe.gt_masks = p.pick(o.gt_masks, "report.gt_masks", recipe.gt_masks);
  recipe.last_layer = p.pick(o.last_layer, "report.last_layer", recipe.last_layer);
  recipe.spurious_free = p.pick(o.spurious_free, "report.spurious_free", recipe.spurious_free);
  const auto store = p.store();
  recipe.cache_dir = store.root() / "cache";
  const auto report = score::run_experiment(recipe);
  const auto out = p.out().value_or(store.reports_dir() / (recipe.preset + "-report"));
  write_json(out / "report.json", score::report_to_json(report));
  const auto table = score::render_table(report);
  score::write_file_atomic(out / "report.txt", table);
  std::cout << table;
  return report.partial() ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"score-lab: shortcut detection and SCORE fine-tuning on synthetic shortcut datasets"};
  app.require_subcommand(1);

  GenData gen;
  auto* g = app.add_subcommand("gen-data", "Generate a preset dataset");
  add_common(g, gen.c);
  g->add_option("--preset", gen.preset, "WB95, WB100, ISIC-like or Knee-like");

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "ERM training");
  add_common(t, tr.c);
  t->add_option("--data", tr.data, "Dataset directory");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch", tr.batch);
  t->add_option("--lr", tr.lr);
  t->add_option("--momentum", tr.momentum);
  t->add_option("--weight-decay", tr.weight_decay);

  DetectOpts de;
  auto* d = app.add_subcommand("detect", "Rank a class and export its LRP review bundle");
  add_common(d, de.c);
  d->add_option("--data", de.data, "Dataset directory");
  d->add_option("--model", de.model, "Checkpoint");
  d->add_option("--class", de.class_id, "Class y_k");
  d->add_option("--n-ref", de.n_ref, "Number of top-activated samples");
  d->add_option("--mask-quantile", de.quantile, "Kept fraction of positive relevance pixels");
  d->add_option("--run-id", de.run_id);

  SelectOpts se;
  auto* s = app.add_subcommand("select", "Record spurious-positive samples for a run");
  add_common(s, se.c);
  s->add_option("--run", se.run, "Run id in the store");
  s->add_option("--data", se.data, "Dataset directory (oracle mode)");
  s->add_flag("--oracle", se.oracle, "Select by ground-truth mask mass");
  s->add_option("--tau", se.tau, "Oracle mass threshold");
  s->add_option("--t-max", se.t_max, "Oracle selection cap");
  s->add_option("--ids", se.ids, "Comma-separated sample ids");
  s->add_option("--file", se.file, "Selection JSON file")->check(CLI::ExistingFile);

  ServeOpts sv;
  auto* v = app.add_subcommand("serve", "Serve review bundles and accept selections over HTTP");
  add_common(v, sv.c);
  v->add_option("--host", sv.host);
  v->add_option("--port", sv.port);

  FinetuneOpts fo;
  auto* f = app.add_subcommand("finetune", "SCORE fine-tuning");
  add_common(f, fo.c);
  f->add_option("--data", fo.data, "Dataset directory");
  f->add_option("--model", fo.model, "ERM checkpoint");
  f->add_option("--run", fo.run, "Detection run id");
  f->add_option("--selection", fo.selection, "Selection file instead of the stored one")->check(CLI::ExistingFile);
  f->add_option("--oracle", fo.oracle, "Oracle-select positives instead of reading a selection");
  f->add_option("--tau", fo.tau);
  f->add_option("--t-max", fo.t_max);
  f->add_option("--alpha", fo.alpha);
  f->add_option("--epochs", fo.epochs);
  f->add_option("--ft-size", fo.ft_size);
  f->add_option("--lr", fo.lr);
  f->add_option("--batch", fo.batch);
  f->add_option("--mode", fo.mode, "both, positive-only or none");
  f->add_option("--layers", fo.layers, "Comma-separated activation positions");
  f->add_option("--gt-masks", fo.gt_masks, "Use ground-truth masks for the positives");
  f->add_option("--keep-best", fo.keep_best, "Restore the epoch with the best validation WGA");

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "Group accuracies of a checkpoint");
  add_common(e, ev.c);
  e->add_option("--data", ev.data, "Dataset directory");
  e->add_option("--model", ev.model, "Checkpoint");
  e->add_option("--split", ev.split, "train, val or test");

  ReportOpts re;
  auto* r = app.add_subcommand("report", "Multi-seed experiment with baselines");
  add_common(r, re.c);
  r->add_option("--preset", re.preset);
  r->add_option("--seeds", re.seeds, "Comma-separated seeds");
  r->add_option("--quick", re.quick, "Three seeds");
  r->add_option("--modes", re.modes, "Comma-separated regularizer modes");
  r->add_option("--t-max", re.t_max);
  r->add_option("--gt-masks", re.gt_masks);
  r->add_option("--last-layer", re.last_layer);
  r->add_option("--spurious-free", re.spurious_free);
  r->add_option("--from", re.from, "Render an existing report.json")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return err.get_exit_code() == 0 ? 2 : err.get_exit_code();
  }

  try {
    if (g->parsed()) return run_gen_data(gen);
    if (t->parsed()) return run_train(tr);
    if (d->parsed()) return run_detect(de);
    if (s->parsed()) return run_select(se);
    if (v->parsed()) return run_serve(sv);
    if (f->parsed()) return run_finetune(fo);
    if (e->parsed()) return run_eval(ev);
    if (r->parsed()) return run_report(re);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
