#include "score/mitigation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "score/lrp.hpp"
#include "score/ops.hpp"
#include "score/rng.hpp"
#include "score/train.hpp"

namespace score {

std::string to_string(RegularizerMode mode) {
  switch (mode) {
    case RegularizerMode::BothTerms: return "both";
    case RegularizerMode::PositiveOnly: return "positive-only";
    case RegularizerMode::None: return "none";
  }
  return "none";
}

RegularizerMode regularizer_mode_from_string(const std::string& name) {
  if (name == "both" || name == "both-terms") return RegularizerMode::BothTerms;
  if (name == "positive-only" || name == "positive") return RegularizerMode::PositiveOnly;
  if (name == "none") return RegularizerMode::None;
  throw ConfigError("unknown regularizer mode '" + name + "' (both, positive-only, none)");
}

void FinetuneConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("finetune: alpha must be >= 0");
  if (batch_size == 0 || ft_size == 0) throw ConfigError("finetune: batch size and ft size must be positive");
  if (!(learning_rate >= 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("finetune: learning rate, momentum and weight decay must be >= 0");
  }
  if (!(lrp_eps >= 0.0f)) throw ConfigError("finetune: lrp eps must be >= 0");
}

std::vector<std::size_t> FinetuneConfig::layer_set(const Model& model) const {
  std::vector<std::size_t> out = layers.empty() ? std::vector<std::size_t>{model.penultimate()} : layers;
  for (auto p : out) {
    if (p == 0 || p >= model.num_layers()) {
      throw ConfigError("finetune: layer position " + std::to_string(p) + " is not a hidden activation");
    }
  }
  return out;
}

nlohmann::json finetune_config_to_json(const FinetuneConfig& cfg) {
  return {{"alpha", cfg.alpha},
          {"epochs", cfg.epochs},
          {"ft_size", cfg.ft_size},
          {"layers", cfg.layers},
          {"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed},
          {"mode", to_string(cfg.mode)},
          {"momentum", cfg.momentum},
          {"weight_decay", cfg.weight_decay},
          {"lrp_eps", cfg.lrp_eps},
          {"keep_best", cfg.keep_best}};
}

std::vector<Tensor> spurious_relevance(const Model& model, const Tensor& masked_input, std::size_t class_id,
                                       std::span<const std::size_t> layers, float eps) {
  if (layers.empty()) throw ConfigError("spurious_relevance: no layers requested");
  const std::size_t lowest = *std::min_element(layers.begin(), layers.end());
  const auto trace = model.forward(masked_input);
  const auto maps = lrp_backward(model, trace, class_id, eps, LrpPath::Fast, lowest);
  std::vector<Tensor> out;
  out.reserve(layers.size());
  for (auto p : layers) out.push_back(relevance_at_layer(maps, p).relevance);
  return out;
}

Tensor spurious_relevance(const Model& model, const Tensor& masked_input, std::size_t class_id, std::size_t layer,
                          float eps) {
  const std::size_t layers[] = {layer};
  return std::move(spurious_relevance(model, masked_input, class_id, layers, eps).front());
}

Tensor average_relevance(std::span<const Tensor> relevances) {
  if (relevances.empty()) throw ConfigError("average_relevance: empty positive set");
  Tensor sum(relevances.front().shape());
  for (const auto& r : relevances) {
    if (r.shape() != sum.shape()) throw DimensionError("average_relevance: mixed shapes");
    for (std::size_t i = 0; i < r.size(); ++i) sum[i] += r[i];
  }
  const auto n = static_cast<float>(relevances.size());
  for (auto& v : sum.data()) v /= n;
  return sum;
}

Tensor contribution_embedding(const Tensor& activation, const Tensor& relevance) {
  if (activation.shape() != relevance.shape()) {
    throw DimensionError("contribution_embedding: activation " + shape_string(activation.shape()) +
                         " vs relevance " + shape_string(relevance.shape()));
  }
  Tensor z(activation.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = activation[i] * std::max(relevance[i], 0.0f);
  return z;
}

double l1_norm(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data()) acc += std::abs(static_cast<double>(v));
  return acc;
}

// SpuriousRelevanceState ----------------------------------------------------------

SpuriousRelevanceState::SpuriousRelevanceState(std::size_t class_id, std::vector<std::size_t> layers,
                                               std::vector<std::int64_t> positive_ids)
    : class_id_(class_id), layers_(std::move(layers)), ids_(std::move(positive_ids)), relevance_(ids_.size()) {
  if (ids_.empty()) throw ConfigError("spurious relevance state: empty positive set");
  for (std::size_t i = 0; i < ids_.size(); ++i) index_[ids_[i]] = i;
}

std::optional<std::size_t> SpuriousRelevanceState::positive_index(std::int64_t sample_id) const {
  auto it = index_.find(sample_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void SpuriousRelevanceState::set_relevance(std::size_t positive, std::vector<Tensor> per_layer) {
  if (per_layer.size() != layers_.size()) throw DimensionError("spurious relevance state: wrong layer count");
  relevance_.at(positive) = std::move(per_layer);
}

const Tensor& SpuriousRelevanceState::relevance(std::size_t positive, std::size_t slot) const {
  const auto& r = relevance_.at(positive);
  if (r.empty()) throw NotFoundError("no relevance recorded for positive sample " + std::to_string(ids_.at(positive)));
  return r.at(slot);
}

void SpuriousRelevanceState::refresh_average() {
  average_.clear();
  for (std::size_t slot = 0; slot < layers_.size(); ++slot) {
    std::vector<Tensor> column;
    column.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) column.push_back(relevance(i, slot));
    average_.push_back(average_relevance(column));
  }
}

RegularizerValue regularizer(std::span<const RegularizerSample> batch, const SpuriousRelevanceState& state,
                             RegularizerMode mode) {
  RegularizerValue value;
  if (mode == RegularizerMode::None) return value;
  for (const auto& s : batch) {
    if (s.y != state.class_id()) continue;
    if (s.activations.size() != state.layers().size()) {
      throw DimensionError("regularizer: sample carries " + std::to_string(s.activations.size()) +
                           " activations for " + std::to_string(state.layers().size()) + " layers");
    }
    const auto pos = state.positive_index(s.sample_id);
    for (std::size_t slot = 0; slot < state.layers().size(); ++slot) {
      if (pos) {
        value.positive_term += l1_norm(contribution_embedding(s.activations[slot], state.relevance(*pos, slot)));
      } else if (mode == RegularizerMode::BothTerms) {
        value.average_term += l1_norm(contribution_embedding(s.activations[slot], state.average(slot)));
      }
    }
  }
  return value;
}

// Fine-tuning set ---------------------------------------------------------------------

std::map<std::size_t, std::size_t> FinetuneSet::class_counts() const {
  std::map<std::size_t, std::size_t> counts;
  for (const auto& s : samples) ++counts[s.y];
  return counts;
}

FinetuneSet build_finetune_set(const GroupedDataset& train, std::span<const SpuriousPositiveSet> positives,
                               std::size_t ft_size, std::size_t num_classes, std::uint64_t seed) {
  return build_finetune_set(train, train, positives, ft_size, num_classes, seed);
}

FinetuneSet build_finetune_set(const GroupedDataset& draw_source, const GroupedDataset& positive_source,
                               std::span<const SpuriousPositiveSet> positives, std::size_t ft_size,
                               std::size_t num_classes, std::uint64_t seed) {
  if (num_classes == 0) throw ConfigError("finetune set: num_classes must be positive");
  const std::size_t quota = ft_size / num_classes;
  const bool same_source = &draw_source == &positive_source;
  FinetuneSet out;
  Rng rng(derive_seed(seed, 0xF7));
  for (std::size_t y = 0; y < num_classes; ++y) {
    std::set<std::int64_t> chosen;
    for (const auto& set : positives) {
      if (set.class_id != y) continue;
      for (auto id : set.sample_ids) {
        if (!chosen.insert(id).second) continue;
        const auto& s = positive_source.by_id(id);
        out.samples.push_back({id, &s.image, s.y, true});
      }
    }
    if (chosen.size() > quota) {
      throw ConfigError("finetune set: class " + std::to_string(y) + " has " + std::to_string(chosen.size()) +
                        " positives but only " + std::to_string(quota) + " slots (|D_ft|/K)");
    }
    const std::size_t draws = quota - chosen.size();
    std::vector<const GroupedSample*> pool;
    for (const auto& s : draw_source.samples) {
      if (s.y == y && !(same_source && chosen.count(s.id))) pool.push_back(&s);
    }
    if (pool.size() < draws) {
      throw ConfigError("finetune set: class " + std::to_string(y) + " needs " + std::to_string(draws) +
                        " draws but only " + std::to_string(pool.size()) + " samples are available");
    }
    rng.shuffle(pool.begin(), pool.end());
    for (std::size_t i = 0; i < draws; ++i) {
      out.samples.push_back({pool[i]->id, &pool[i]->image, y, false});
    }
  }
  return out;
}

// Fine-tuning -------------------------------------------------------------------------

namespace {

// Batches with an equal share of every class present in the set.
std::vector<std::vector<std::size_t>> balanced_batches(const FinetuneSet& data, std::size_t batch_size, Rng& rng) {
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.samples.size(); ++i) by_class[data.samples[i].y].push_back(i);
  std::size_t longest = 0;
  for (auto& [y, idx] : by_class) {
    rng.shuffle(idx.begin(), idx.end());
    longest = std::max(longest, idx.size());
  }
  const std::size_t per_class = std::max<std::size_t>(1, batch_size / std::max<std::size_t>(1, by_class.size()));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < longest; start += per_class) {
    std::vector<std::size_t> batch;
    for (const auto& [y, idx] : by_class) {
      for (std::size_t k = start; k < std::min(idx.size(), start + per_class); ++k) batch.push_back(idx[k]);
    }
    if (!batch.empty()) batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace

FinetuneResult finetune_score(Model& model, const FinetuneSet& data, std::span<const SpuriousPositiveSet> positives,
                              const FinetuneConfig& cfg, const EpochHook& on_epoch) {
  cfg.validate();
  if (data.samples.empty()) throw ConfigError("finetune: empty fine-tuning set");
  const auto layers = cfg.layer_set(model);
  const bool regularize = cfg.mode != RegularizerMode::None && !positives.empty();

  std::vector<SpuriousRelevanceState> states;
  std::vector<std::map<std::int64_t, const MaskedInput*>> masked_by_id;
  for (const auto& set : positives) {
    if (set.sample_ids.size() != set.masked.size()) throw ConfigError("finetune: positive set ids and masks differ in size");
    states.emplace_back(set.class_id, layers, set.sample_ids);
    auto& lookup = masked_by_id.emplace_back();
    for (std::size_t i = 0; i < set.size(); ++i) lookup[set.sample_ids[i]] = &set.masked[i];
  }
  auto refresh = [&](std::size_t k, std::size_t i) {
    const auto& st = states[k];
    const auto* m = masked_by_id[k].at(st.positive_ids()[i]);
    states[k].set_relevance(i, spurious_relevance(model, m->masked, st.class_id(), layers, cfg.lrp_eps));
  };
  if (regularize) {
    for (std::size_t k = 0; k < states.size(); ++k) {
      for (std::size_t i = 0; i < states[k].positive_ids().size(); ++i) refresh(k, i);
      states[k].refresh_average();
    }
  }

  Sgd opt(model, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  Rng rng(derive_seed(cfg.seed, 0x5C0E));
  const auto alpha = static_cast<float>(cfg.alpha);
  FinetuneResult result;
  std::optional<Model> best;
  double best_value = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = balanced_batches(data, cfg.batch_size, rng);
    double ce_total = 0.0, reg_total = 0.0, zbar_total = 0.0;
    std::size_t zbar_count = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      if (regularize) {
        for (std::size_t k = 0; k < states.size(); ++k) {
          for (auto idx : batch) {
            const auto& s = data.samples[idx];
            if (auto pos = states[k].positive_index(s.sample_id); pos && s.positive) refresh(k, *pos);
          }
          states[k].refresh_average();
        }
      }
      try {
        auto grads = model.zero_gradients();
        const float inv_batch = 1.0f / static_cast<float>(batch.size());
        std::vector<ForwardTrace<float>> traces;
        std::vector<std::vector<Tensor>> acts(batch.size());
        std::vector<RegularizerSample> reg_view(batch.size());
        traces.reserve(batch.size());
        for (std::size_t j = 0; j < batch.size(); ++j) {
          const auto& s = data.samples[batch[j]];
          traces.push_back(model.forward(*s.image));
          for (auto p : layers) acts[j].push_back(traces.back().activation(p));
          // Drawn samples never count as positives, even when ids collide across splits.
          reg_view[j] = {s.positive ? s.sample_id : -1, s.y, acts[j]};
        }
        for (std::size_t j = 0; j < batch.size(); ++j) {
          const auto& s = data.samples[batch[j]];
          const auto& trace = traces[j];
          ce_total += ops::softmax_ce(trace.logits(), s.y);
          auto dlogits = ops::softmax_ce_backward(trace.logits(), s.y);
          for (auto& v : dlogits.data()) v *= inv_batch;

          std::vector<Injection<float>> injections;
          if (regularize) {
            for (std::size_t slot = 0; slot < layers.size(); ++slot) {
              Tensor g(acts[j][slot].shape());
              bool any = false;
              for (const auto& st : states) {
                if (s.y != st.class_id()) continue;
                const auto pos = s.positive ? st.positive_index(s.sample_id) : std::nullopt;
                const Tensor* r = nullptr;
                if (pos) {
                  r = &st.relevance(*pos, slot);
                } else if (cfg.mode == RegularizerMode::BothTerms) {
                  r = &st.average(slot);
                }
                if (!r) continue;
                const auto& f = acts[j][slot];
                for (std::size_t n = 0; n < g.size(); ++n) {
                  const float w = std::max((*r)[n], 0.0f);
                  const float sign = f[n] > 0.0f ? 1.0f : (f[n] < 0.0f ? -1.0f : 0.0f);
                  g[n] += alpha * w * sign;
                }
                any = true;
              }
              if (any && alpha != 0.0f) injections.push_back({layers[slot], std::move(g)});
            }
          }
          grads.accumulate(model.backward(trace, dlogits, injections));
        }
        if (regularize) {
          for (const auto& st : states) {
            const auto v = regularizer(reg_view, st, cfg.mode);
            reg_total += v.total();
            for (const auto& rs : reg_view) {
              if (rs.y != st.class_id() || st.positive_index(rs.sample_id)) continue;
              for (std::size_t slot = 0; slot < layers.size(); ++slot) {
                zbar_total += l1_norm(contribution_embedding(rs.activations[slot], st.average(slot)));
              }
              ++zbar_count;
            }
          }
        }
        opt.step(model, grads);
      } catch (const NumericError& e) {
        throw NumericError("finetune diverged at epoch " + std::to_string(epoch) + ", iteration " + std::to_string(b) +
                           ": " + e.what());
      }
    }
    EpochCurve curve;
    curve.ce = ce_total / static_cast<double>(data.samples.size());
    curve.reg = batches.empty() ? 0.0 : reg_total / static_cast<double>(batches.size());
    curve.mean_z_bar = zbar_count ? zbar_total / static_cast<double>(zbar_count) : 0.0;
    if (on_epoch) curve.wga_val = on_epoch(model, epoch);
    if (cfg.keep_best && curve.wga_val && (!best || *curve.wga_val > best_value)) {
      best = model;
      best_value = *curve.wga_val;
      result.best_epoch = epoch;
    }
    result.curves.push_back(curve);
  }
  if (best) model = std::move(*best);
  if (regularize) {
    for (std::size_t slot = 0; slot < layers.size(); ++slot) result.final_average.push_back(states.front().average(slot));
  }
  return result;
}

SpuriousPositiveSet with_gt_masks(const SpuriousPositiveSet& positives, const GroupedDataset& dataset) {
  SpuriousPositiveSet out = positives;
  for (std::size_t i = 0; i < out.size(); ++i) out.masked[i] = build_gt_masked_input(dataset.by_id(out.sample_ids[i]));
  return out;
}

FinetuneResult finetune_with_gt_masks(Model& model, const FinetuneSet& data, const GroupedDataset& dataset,
                                      std::span<const SpuriousPositiveSet> positives, const FinetuneConfig& cfg,
                                      const EpochHook& on_epoch) {
  std::vector<SpuriousPositiveSet> gt;
  for (const auto& set : positives) gt.push_back(with_gt_masks(set, dataset));
  return finetune_score(model, data, gt, cfg, on_epoch);
}

nlohmann::json curves_json(const FinetuneResult& result) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t e = 0; e < result.curves.size(); ++e) {
    const auto& c = result.curves[e];
    nlohmann::json entry{{"ce", c.ce}, {"reg", c.reg}, {"mean_z_bar", c.mean_z_bar}};
    entry["wga_val"] = c.wga_val ? nlohmann::json(*c.wga_val) : nlohmann::json(nullptr);
    j[std::to_string(e + 1)] = std::move(entry);
  }
  return j;
}

}  // namespace score
