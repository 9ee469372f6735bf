#include "score/train.hpp"

#include <cmath>
#include <string>

#include "score/ops.hpp"
#include "score/rng.hpp"

namespace score {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || batch_size == 0 || !(weight_decay >= 0.0) || !(momentum >= 0.0)) {
    throw ConfigError("train config: learning rate, batch size, weight decay and momentum must be valid");
  }
}

Sgd::Sgd(const Model& model, double learning_rate, double momentum, double weight_decay)
    : lr_(learning_rate),
      momentum_(momentum),
      weight_decay_(weight_decay),
      velocity_(model.zero_gradients()),
      trainable_(model.num_layers(), true) {}

void Sgd::step(Model& model, const Gradients<float>& grads) {
  const auto lr = static_cast<float>(lr_);
  const auto mu = static_cast<float>(momentum_);
  const auto wd = static_cast<float>(weight_decay_);
  auto update = [&](BasicTensor<float>& param, const BasicTensor<float>& g, BasicTensor<float>& v) {
    for (std::size_t j = 0; j < param.size(); ++j) {
      v[j] = mu * v[j] + g[j] + wd * param[j];
      param[j] -= lr * v[j];
    }
  };
  auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!trainable_[i]) continue;
    if (!layers[i].weight.empty()) update(layers[i].weight, grads.weight[i], velocity_.weight[i]);
    if (!layers[i].bias.empty()) update(layers[i].bias, grads.bias[i], velocity_.bias[i]);
  }
}

namespace {

// Non-finite forward or loss values mean the run diverged; name the epoch.
[[noreturn]] void diverged(std::size_t epoch, const NumericError& e) {
  throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
}

TrainResult run_ce_loop(Model& model, const std::vector<Example>& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  for (const auto& ex : data) {
    if (ex.label >= model.num_classes()) {
      throw IndexError("label " + std::to_string(ex.label) + " out of range for " +
                       std::to_string(model.num_classes()) + " classes");
    }
  }
  TrainResult result;
  Sgd opt(model, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  Rng rng(derive_seed(cfg.seed, 0xE44));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = rng.permutation(data.size());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      auto grads = model.zero_gradients();
      for (std::size_t b = start; b < end; ++b) {
        const auto& ex = data[order[b]];
        try {
          auto trace = model.forward(*ex.image);
          total += ops::softmax_ce(trace.logits(), ex.label);
          grads.accumulate(model.backward(trace, ops::softmax_ce_backward(trace.logits(), ex.label)));
        } catch (const NumericError& e) {
          diverged(epoch, e);
        }
      }
      grads.scale(1.0f / static_cast<float>(end - start));
      opt.step(model, grads);
    }
    const double mean = total / static_cast<double>(data.size());
    if (!std::isfinite(mean)) throw NumericError("training loss is NaN at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(mean);
  }
  return result;
}

}  // namespace

TrainResult train_erm(Model& model, const std::vector<Example>& data, const TrainConfig& cfg) {
  return run_ce_loop(model, data, cfg);
}

TrainResult train_last_layer(Model& model, const std::vector<Example>& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  const std::size_t last = model.num_layers() - 1;
  // The frozen feature extractor is evaluated once; only the head trains.
  std::vector<Tensor> features;
  features.reserve(data.size());
  for (const auto& ex : data) {
    if (ex.label >= model.num_classes()) throw IndexError("label " + std::to_string(ex.label) + " out of range");
    features.push_back(model.forward(*ex.image).activation(last));
  }
  const auto& head = model.layers()[last];
  const std::size_t in = head.spec.in, out = head.spec.out;
  Sgd opt(model, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  std::vector<bool> trainable(model.num_layers(), false);
  trainable.back() = true;
  opt.set_trainable(std::move(trainable));
  Rng rng(derive_seed(cfg.seed, 0xDF4));
  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = rng.permutation(data.size());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      auto grads = model.zero_gradients();
      auto& gw = grads.weight[last];
      auto& gb = grads.bias[last];
      for (std::size_t b = start; b < end; ++b) {
        const auto& f = features[order[b]];
        Tensor logits({out});
        for (std::size_t o = 0; o < out; ++o) {
          float acc = head.spec.bias ? head.bias[o] : 0.0f;
          for (std::size_t i = 0; i < in; ++i) acc += head.weight.at(o, i) * f[i];
          logits[o] = acc;
        }
        try {
          total += ops::softmax_ce(logits, data[order[b]].label);
        } catch (const NumericError& e) {
          diverged(epoch, e);
        }
        const auto d = ops::softmax_ce_backward(logits, data[order[b]].label);
        for (std::size_t o = 0; o < out; ++o) {
          for (std::size_t i = 0; i < in; ++i) gw.at(o, i) += d[o] * f[i];
          if (head.spec.bias) gb[o] += d[o];
        }
      }
      grads.scale(1.0f / static_cast<float>(end - start));
      opt.step(model, grads);
    }
    const double mean = total / static_cast<double>(data.size());
    if (!std::isfinite(mean)) throw NumericError("training loss is NaN at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(mean);
  }
  return result;
}

std::size_t predict(const Model& model, const Tensor& image) {
  const auto trace = model.forward(image);
  const auto& logits = trace.logits();
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return best;
}

}  // namespace score
