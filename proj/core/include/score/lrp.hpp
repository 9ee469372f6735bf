#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "score/network.hpp"

namespace score {

/// Relevance at one activation position (0 = input, num_layers = logits).
template <typename T>
struct RelevanceMap {
  std::size_t layer = 0;
  BasicTensor<T> relevance;
  std::size_t target_class = 0;
  std::int64_t sample_id = -1;
  T eps = T{0};

  bool computed() const { return !relevance.empty(); }
};

/// Channel-summed input relevance on the input's spatial grid.
struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;  // row-major H x W
  float min = 0.0f;
  float max = 0.0f;

  float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  float max_abs() const;
};

enum class LrpPath {
  Reference,  // explicit per-neuron contribution unrolling
  Fast,       // vectorized equivalent (input times back-projected ratios)
};

// Relevance bookkeeping for one layer step, in absolute and signed form.
struct LayerFlow {
  double inflow_abs = 0.0;   // sum_n |R_n| arriving at the layer output
  double outflow_abs = 0.0;  // sum_n |sum_m R_{m<-n}| leaving towards the input
  double inflow_sum = 0.0;   // sum_n R_n
  double outflow_sum = 0.0;  // sum_m R_m at the layer input
};

/// Redistributes R_n over incoming contributions a_mn:
/// R_{m<-n} = a_mn / (a_n + eps * sign(a_n)) * R_n with a_n = sum_m a_mn.
/// When |a_n| <= eps every message is zero and R_n is absorbed.
template <typename T>
std::vector<T> lrp_linear_messages(std::span<const T> contributions, T relevance, T eps);

/// Propagates the target logit from the output down to position `stop_at`.
///
/// Returns one map per activation position (size num_layers + 1). Maps below
/// `stop_at` are left empty. Biases take no share of the relevance.
template <typename T>
std::vector<RelevanceMap<T>> lrp_backward(const LayerStack<T>& model, const ForwardTrace<T>& trace,
                                          std::size_t target_class, T eps = T(1e-6),
                                          LrpPath path = LrpPath::Reference, std::size_t stop_at = 0,
                                          std::int64_t sample_id = -1, std::vector<LayerFlow>* flows = nullptr);

template <typename T>
const RelevanceMap<T>& relevance_at_layer(const std::vector<RelevanceMap<T>>& maps, std::size_t layer);

template <typename T>
Heatmap input_heatmap(const std::vector<RelevanceMap<T>>& maps);

Heatmap heatmap_from_relevance(const Tensor& input_relevance);

}  // namespace score
