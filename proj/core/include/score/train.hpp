#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "score/network.hpp"

namespace score {

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 12;
  std::uint64_t seed = 0;
  double weight_decay = 1e-4;
  double momentum = 0.9;

  void validate() const;
};

struct Example {
  const Tensor* image = nullptr;
  std::size_t label = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

/// SGD with momentum and decoupled-from-nothing weight decay (PyTorch style):
/// v <- mu v + g + wd w, w <- w - lr v.
class Sgd {
 public:
  Sgd(const Model& model, double learning_rate, double momentum, double weight_decay);

  // Layers with trainable[i] == false are left untouched.
  void set_trainable(std::vector<bool> trainable) { trainable_ = std::move(trainable); }
  void step(Model& model, const Gradients<float>& grads);

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  Gradients<float> velocity_;
  std::vector<bool> trainable_;
};

/// Minibatch SGD on mean cross-entropy. Shuffling and nothing else draws
/// randomness; a fixed seed makes the run bit-reproducible.
TrainResult train_erm(Model& model, const std::vector<Example>& data, const TrainConfig& cfg);

// Same loop restricted to the final Dense layer.
TrainResult train_last_layer(Model& model, const std::vector<Example>& data, const TrainConfig& cfg);

std::size_t predict(const Model& model, const Tensor& image);

}  // namespace score
