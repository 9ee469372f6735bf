#include "score/lrp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "score/ops.hpp"

namespace score {
namespace {

template <typename T>
T stabilized(T a, T eps) {
  return a + (a > T{0} ? eps : (a < T{0} ? -eps : T{0}));
}

// Writes the messages of one neuron into `out`; returns their sum.
template <typename T>
T distribute(std::span<const T> contributions, T relevance, T eps, std::span<T> out) {
  T total{0};
  for (T a : contributions) total += a;
  if (std::abs(total) <= eps) {
    std::fill(out.begin(), out.end(), T{0});
    return T{0};
  }
  const T denom = stabilized(total, eps);
  T sent{0};
  for (std::size_t m = 0; m < contributions.size(); ++m) {
    out[m] = contributions[m] / denom * relevance;
    sent += out[m];
  }
  return sent;
}

template <typename T>
struct StepResult {
  BasicTensor<T> relevance;
  double outflow_abs = 0.0;
};

template <typename T>
StepResult<T> step_reference(const Layer<T>& layer, const LayerRecord<T>& rec, const BasicTensor<T>& r_out, T eps) {
  const auto& x = rec.input;
  StepResult<T> res{BasicTensor<T>(x.shape())};
  auto& r_in = res.relevance;
  std::vector<T> contrib;
  std::vector<T> msgs;
  auto emit = [&](T r_n) {
    msgs.resize(contrib.size());
    const T sent = distribute<T>(contrib, r_n, eps, msgs);
    res.outflow_abs += std::abs(static_cast<double>(sent));
  };
  switch (layer.spec.kind) {
    case LayerKind::Dense: {
      const std::size_t in = layer.spec.in, out = layer.spec.out;
      contrib.resize(in);
      for (std::size_t n = 0; n < out; ++n) {
        for (std::size_t m = 0; m < in; ++m) contrib[m] = x[m] * layer.weight.at(n, m);
        emit(r_out[n]);
        for (std::size_t m = 0; m < in; ++m) r_in[m] += msgs[m];
      }
      break;
    }
    case LayerKind::Conv: {
      const std::size_t channels = x.dim(0), k = layer.spec.kernel;
      const std::size_t filters = r_out.dim(0), oh = r_out.dim(1), ow = r_out.dim(2);
      const auto& w = layer.weight;
      contrib.resize(channels * k * k);
      for (std::size_t f = 0; f < filters; ++f) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            std::size_t m = 0;
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < k; ++j) contrib[m++] = x.at(c, oy + i, ox + j) * w[((f * channels + c) * k + i) * k + j];
            emit(r_out.at(f, oy, ox));
            m = 0;
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < k; ++j) r_in.at(c, oy + i, ox + j) += msgs[m++];
          }
        }
      }
      break;
    }
    case LayerKind::AvgPool2: {
      contrib.resize(4);
      for (std::size_t c = 0; c < r_out.dim(0); ++c) {
        for (std::size_t y = 0; y < r_out.dim(1); ++y) {
          for (std::size_t xx = 0; xx < r_out.dim(2); ++xx) {
            contrib[0] = x.at(c, 2 * y, 2 * xx) / T{4};
            contrib[1] = x.at(c, 2 * y, 2 * xx + 1) / T{4};
            contrib[2] = x.at(c, 2 * y + 1, 2 * xx) / T{4};
            contrib[3] = x.at(c, 2 * y + 1, 2 * xx + 1) / T{4};
            emit(r_out.at(c, y, xx));
            r_in.at(c, 2 * y, 2 * xx) += msgs[0];
            r_in.at(c, 2 * y, 2 * xx + 1) += msgs[1];
            r_in.at(c, 2 * y + 1, 2 * xx) += msgs[2];
            r_in.at(c, 2 * y + 1, 2 * xx + 1) += msgs[3];
          }
        }
      }
      break;
    }
    case LayerKind::GlobalAvgPool: {
      const std::size_t plane = x.dim(1) * x.dim(2);
      contrib.resize(plane);
      for (std::size_t c = 0; c < x.dim(0); ++c) {
        for (std::size_t p = 0; p < plane; ++p) contrib[p] = x[c * plane + p] / static_cast<T>(plane);
        emit(r_out[c]);
        for (std::size_t p = 0; p < plane; ++p) r_in[c * plane + p] += msgs[p];
      }
      break;
    }
    case LayerKind::ReLU:
      for (std::size_t i = 0; i < x.size(); ++i) {
        r_in[i] = rec.output[i] > T{0} ? r_out[i] : T{0};
        res.outflow_abs += std::abs(static_cast<double>(r_in[i]));
      }
      break;
    case LayerKind::Flatten:
      r_in = r_out.reshaped(x.shape());
      for (T v : r_in.data()) res.outflow_abs += std::abs(static_cast<double>(v));
      break;
  }
  return res;
}

// Per-neuron ratio s_n = R_n / stabilized(a_n); zero where absorbed.
template <typename T>
BasicTensor<T> ratios(const BasicTensor<T>& aggregate, const BasicTensor<T>& r_out, T eps, double& outflow_abs) {
  BasicTensor<T> s(aggregate.shape());
  for (std::size_t n = 0; n < s.size(); ++n) {
    const T a = aggregate[n];
    if (std::abs(a) <= eps) continue;
    s[n] = r_out[n] / stabilized(a, eps);
    outflow_abs += std::abs(static_cast<double>(a * s[n]));
  }
  return s;
}

template <typename T>
StepResult<T> step_fast(const Layer<T>& layer, const LayerRecord<T>& rec, const BasicTensor<T>& r_out, T eps) {
  const auto& x = rec.input;
  StepResult<T> res;
  switch (layer.spec.kind) {
    case LayerKind::Dense: {
      const auto col = x.reshaped({layer.spec.in, 1});
      const auto a = ops::matmul(layer.weight, col).reshaped({layer.spec.out});
      const auto s = ratios(a, r_out, eps, res.outflow_abs);
      auto back = ops::matmul_backward(layer.weight, col, s.reshaped({layer.spec.out, 1})).db;
      res.relevance = BasicTensor<T>(x.shape());
      for (std::size_t m = 0; m < x.size(); ++m) res.relevance[m] = x[m] * back[m];
      break;
    }
    case LayerKind::Conv: {
      const auto a = ops::conv2d(x, layer.weight);
      const auto s = ratios(a, r_out, eps, res.outflow_abs);
      auto back = ops::conv2d_backward(x, layer.weight, s).dx;
      for (std::size_t m = 0; m < x.size(); ++m) back[m] *= x[m];
      res.relevance = std::move(back);
      break;
    }
    case LayerKind::AvgPool2: {
      const auto a = ops::avg_pool2(x);
      const auto s = ratios(a, r_out, eps, res.outflow_abs);
      auto back = ops::avg_pool2_backward(x.shape(), s);
      for (std::size_t m = 0; m < x.size(); ++m) back[m] *= x[m];
      res.relevance = std::move(back);
      break;
    }
    case LayerKind::GlobalAvgPool: {
      const auto a = ops::global_avg_pool(x);
      const auto s = ratios(a, r_out, eps, res.outflow_abs);
      auto back = ops::global_avg_pool_backward(x.shape(), s);
      for (std::size_t m = 0; m < x.size(); ++m) back[m] *= x[m];
      res.relevance = std::move(back);
      break;
    }
    case LayerKind::ReLU:
    case LayerKind::Flatten:
      return step_reference(layer, rec, r_out, eps);
  }
  return res;
}

double abs_sum(const auto& t) {
  double acc = 0.0;
  for (auto v : t.data()) acc += std::abs(static_cast<double>(v));
  return acc;
}

double signed_sum(const auto& t) {
  double acc = 0.0;
  for (auto v : t.data()) acc += static_cast<double>(v);
  return acc;
}

}  // namespace

float Heatmap::max_abs() const { return std::max(std::abs(min), std::abs(max)); }

template <typename T>
std::vector<T> lrp_linear_messages(std::span<const T> contributions, T relevance, T eps) {
  if (eps < T{0}) throw ConfigError("lrp: eps must be non-negative");
  std::vector<T> out(contributions.size());
  distribute<T>(contributions, relevance, eps, out);
  return out;
}

template <typename T>
std::vector<RelevanceMap<T>> lrp_backward(const LayerStack<T>& model, const ForwardTrace<T>& trace,
                                          std::size_t target_class, T eps, LrpPath path, std::size_t stop_at,
                                          std::int64_t sample_id, std::vector<LayerFlow>* flows) {
  if (eps < T{0}) throw ConfigError("lrp: eps must be non-negative");
  const std::size_t n_layers = model.num_layers();
  if (trace.layers.size() != n_layers || trace.logits().size() != model.num_classes()) {
    throw DimensionError("lrp_backward: trace was not produced by this model");
  }
  if (target_class >= model.num_classes()) {
    throw IndexError("lrp_backward: target class " + std::to_string(target_class) + " out of range");
  }
  if (stop_at > n_layers) throw IndexError("lrp_backward: stop position out of range");

  std::vector<RelevanceMap<T>> maps(n_layers + 1);
  for (std::size_t p = 0; p <= n_layers; ++p) {
    maps[p].layer = p;
    maps[p].target_class = target_class;
    maps[p].sample_id = sample_id;
    maps[p].eps = eps;
  }
  BasicTensor<T> top(trace.logits().shape());
  top[target_class] = trace.logits()[target_class];
  maps[n_layers].relevance = std::move(top);
  if (flows) flows->assign(n_layers, LayerFlow{});

  for (std::size_t i = n_layers; i-- > stop_at;) {
    const auto& r_out = maps[i + 1].relevance;
    const auto& layer = model.layers()[i];
    const auto& rec = trace.layers[i];
    auto step = path == LrpPath::Reference ? step_reference(layer, rec, r_out, eps) : step_fast(layer, rec, r_out, eps);
    require_finite(step.relevance, "relevance");
    if (flows) {
      auto& f = (*flows)[i];
      f.inflow_abs = abs_sum(r_out);
      f.inflow_sum = signed_sum(r_out);
      f.outflow_abs = step.outflow_abs;
      f.outflow_sum = signed_sum(step.relevance);
    }
    maps[i].relevance = std::move(step.relevance);
  }
  return maps;
}

template <typename T>
const RelevanceMap<T>& relevance_at_layer(const std::vector<RelevanceMap<T>>& maps, std::size_t layer) {
  if (layer >= maps.size()) {
    throw IndexError("relevance_at_layer: position " + std::to_string(layer) + " out of range (" +
                     std::to_string(maps.size()) + " positions)");
  }
  if (!maps[layer].computed()) throw IndexError("relevance_at_layer: position " + std::to_string(layer) + " was not computed");
  return maps[layer];
}

Heatmap heatmap_from_relevance(const Tensor& r) {
  if (r.rank() != 3) throw DimensionError("heatmap: input relevance must be C x H x W, got " + shape_string(r.shape()));
  Heatmap h;
  h.height = r.dim(1);
  h.width = r.dim(2);
  h.values.assign(h.height * h.width, 0.0f);
  for (std::size_t c = 0; c < r.dim(0); ++c)
    for (std::size_t y = 0; y < h.height; ++y)
      for (std::size_t x = 0; x < h.width; ++x) h.values[y * h.width + x] += r.at(c, y, x);
  const auto [lo, hi] = std::minmax_element(h.values.begin(), h.values.end());
  h.min = *lo;
  h.max = *hi;
  return h;
}

template <typename T>
Heatmap input_heatmap(const std::vector<RelevanceMap<T>>& maps) {
  const auto& m = relevance_at_layer(maps, 0);
  return heatmap_from_relevance(m.relevance.template cast<float>());
}

template std::vector<float> lrp_linear_messages(std::span<const float>, float, float);
template std::vector<double> lrp_linear_messages(std::span<const double>, double, double);
template std::vector<RelevanceMap<float>> lrp_backward(const LayerStack<float>&, const ForwardTrace<float>&,
                                                       std::size_t, float, LrpPath, std::size_t, std::int64_t,
                                                       std::vector<LayerFlow>*);
template std::vector<RelevanceMap<double>> lrp_backward(const LayerStack<double>&, const ForwardTrace<double>&,
                                                        std::size_t, double, LrpPath, std::size_t, std::int64_t,
                                                        std::vector<LayerFlow>*);
template const RelevanceMap<float>& relevance_at_layer(const std::vector<RelevanceMap<float>>&, std::size_t);
template const RelevanceMap<double>& relevance_at_layer(const std::vector<RelevanceMap<double>>&, std::size_t);
template Heatmap input_heatmap(const std::vector<RelevanceMap<float>>&);
template Heatmap input_heatmap(const std::vector<RelevanceMap<double>>&);

}  // namespace score
