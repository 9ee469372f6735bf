#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "score/tensor.hpp"

namespace score {

enum class LayerKind { Conv, ReLU, AvgPool2, GlobalAvgPool, Dense, Flatten };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::size_t in = 0;      // input channels (Conv) or features (Dense)
  std::size_t out = 0;     // filters (Conv) or features (Dense)
  std::size_t kernel = 0;  // square kernel side, Conv only
  bool bias = true;

  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, bool bias = true) {
    return {LayerKind::Conv, in, out, kernel, bias};
  }
  static LayerSpec dense(std::size_t in, std::size_t out, bool bias = true) {
    return {LayerKind::Dense, in, out, 0, bias};
  }
  static LayerSpec relu() { return {LayerKind::ReLU, 0, 0, 0, false}; }
  static LayerSpec avg_pool2() { return {LayerKind::AvgPool2, 0, 0, 0, false}; }
  static LayerSpec global_avg_pool() { return {LayerKind::GlobalAvgPool, 0, 0, 0, false}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 0, false}; }

  bool has_params() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

template <typename T>
struct Layer {
  LayerSpec spec;
  BasicTensor<T> weight;  // Conv: [F x C x k x k], Dense: [out x in]
  BasicTensor<T> bias;    // [F] or [out]; empty when spec.bias is false
};

template <typename T>
struct LayerRecord {
  BasicTensor<T> input;
  BasicTensor<T> pre_activation;  // equals input for parameter-free layers
  BasicTensor<T> output;
};

/// Everything a forward pass computed, one record per layer.
///
/// Activations are addressed by position: 0 is the network input and
/// position p > 0 is the output of layer p - 1. Relevance maps use the same
/// indexing.
template <typename T>
struct ForwardTrace {
  std::vector<LayerRecord<T>> layers;

  const BasicTensor<T>& logits() const { return layers.back().output; }
  const BasicTensor<T>& activation(std::size_t position) const {
    return position == 0 ? layers.front().input : layers.at(position - 1).output;
  }
};

// Per-layer parameter gradients; empty tensors for parameter-free layers.
template <typename T>
struct Gradients {
  std::vector<BasicTensor<T>> weight;
  std::vector<BasicTensor<T>> bias;

  void accumulate(const Gradients& other);
  void scale(T factor);
};

// An extra loss gradient entering at an activation position.
template <typename T>
struct Injection {
  std::size_t position;
  BasicTensor<T> gradient;
};

/// The layered classifier: an ordered list of layers applied in sequence.
template <typename T>
class LayerStack {
 public:
  LayerStack() = default;
  LayerStack(Shape input_shape, std::vector<Layer<T>> layers, std::size_t penultimate);

  ForwardTrace<T> forward(const BasicTensor<T>& x) const;

  // Backpropagates dL/dlogits plus any injected activation gradients.
  Gradients<T> backward(const ForwardTrace<T>& trace, const BasicTensor<T>& dlogits,
                        std::span<const Injection<T>> injections = {}) const;

  Gradients<T> zero_gradients() const;

  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_classes() const { return layers_.back().spec.out; }
  // Activation position of the feature vector that feeds the classifier.
  std::size_t penultimate() const { return penultimate_; }
  // Output shape at an activation position.
  Shape shape_at(std::size_t position) const;

  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::vector<Layer<T>>& layers() { return layers_; }

  template <typename U>
  LayerStack<U> cast() const {
    std::vector<Layer<U>> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) {
      Layer<U> c{l.spec, {}, {}};
      if (!l.weight.empty()) c.weight = l.weight.template cast<U>();
      if (!l.bias.empty()) c.bias = l.bias.template cast<U>();
      out.push_back(std::move(c));
    }
    return LayerStack<U>(input_shape_, std::move(out), penultimate_);
  }

  void zero_parameters();
  std::size_t parameter_count() const;

  friend bool operator==(const LayerStack& a, const LayerStack& b) {
    if (a.input_shape_ != b.input_shape_ || a.penultimate_ != b.penultimate_ ||
        a.layers_.size() != b.layers_.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (!(x.spec == y.spec) || !(x.weight == y.weight) || !(x.bias == y.bias)) return false;
    }
    return true;
  }

 private:
  void validate();

  Shape input_shape_;
  std::vector<Layer<T>> layers_;
  std::vector<Shape> shapes_;  // shapes_[p] = activation shape at position p
  std::size_t penultimate_ = 0;
};

using Model = LayerStack<float>;
using Model64 = LayerStack<double>;

/// Conv(3->8,3x3)+ReLU+AvgPool2 -> Conv(8->16,3x3)+ReLU+GlobalAvgPool -> Dense(16->K).
/// Kaiming-uniform weights, zero biases. The pooled 16-vector is the penultimate layer.
template <typename T = float>
LayerStack<T> build_patchnet(std::size_t num_classes, std::uint64_t seed, bool bias = true,
                             std::size_t image_size = 32);

// Kaiming-uniform weights for every parameterized layer, zero biases.
template <typename T>
void init_kaiming_uniform(LayerStack<T>& model, std::uint64_t seed);

// Model checkpoint: u32 LE header length, JSON header with layer specs and
// byte offsets, then the SCR1 parameter tensors back to back.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
std::string checkpoint_bytes(const Model& model);
Model load_checkpoint(const std::filesystem::path& path);
Model parse_checkpoint(const std::string& bytes);

}  // namespace score
