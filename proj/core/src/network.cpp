#include "score/network.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "score/ops.hpp"
#include "score/rng.hpp"
#include "score/serialize.hpp"

namespace score {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "Conv";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::AvgPool2: return "AvgPool2";
    case LayerKind::GlobalAvgPool: return "GlobalAvgPool";
    case LayerKind::Dense: return "Dense";
    case LayerKind::Flatten: return "Flatten";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::Conv, LayerKind::ReLU, LayerKind::AvgPool2, LayerKind::GlobalAvgPool,
                 LayerKind::Dense, LayerKind::Flatten}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown layer kind '" + name + "'");
}

template <typename T>
void Gradients<T>::accumulate(const Gradients& other) {
  for (std::size_t i = 0; i < weight.size(); ++i) {
    for (std::size_t j = 0; j < weight[i].size(); ++j) weight[i][j] += other.weight[i][j];
    for (std::size_t j = 0; j < bias[i].size(); ++j) bias[i][j] += other.bias[i][j];
  }
}

template <typename T>
void Gradients<T>::scale(T factor) {
  for (std::size_t i = 0; i < weight.size(); ++i) {
    for (auto& v : weight[i].data()) v *= factor;
    for (auto& v : bias[i].data()) v *= factor;
  }
}

template <typename T>
LayerStack<T>::LayerStack(Shape input_shape, std::vector<Layer<T>> layers, std::size_t penultimate)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), penultimate_(penultimate) {
  validate();
}

template <typename T>
void LayerStack<T>::validate() {
  if (layers_.empty()) throw ConfigError("layer stack is empty");
  shapes_.clear();
  shapes_.push_back(input_shape_);
  Shape s = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& l = layers_[i];
    const auto where = "layer " + std::to_string(i) + " (" + to_string(l.spec.kind) + ")";
    switch (l.spec.kind) {
      case LayerKind::Conv: {
        const std::size_t k = l.spec.kernel;
        if (s.size() != 3 || s[0] != l.spec.in || k == 0 || k > s[1] || k > s[2]) {
          throw DimensionError(where + ": cannot apply to input " + shape_string(s));
        }
        if (l.weight.empty()) l.weight = BasicTensor<T>({l.spec.out, l.spec.in, k, k});
        if (l.weight.shape() != Shape{l.spec.out, l.spec.in, k, k}) {
          throw DimensionError(where + ": weight shape " + shape_string(l.weight.shape()));
        }
        s = {l.spec.out, s[1] - k + 1, s[2] - k + 1};
        break;
      }
      case LayerKind::Dense: {
        if (shape_size(s) != l.spec.in || l.spec.out == 0) {
          throw DimensionError(where + ": expects " + std::to_string(l.spec.in) + " inputs, got " +
                               shape_string(s));
        }
        if (l.weight.empty()) l.weight = BasicTensor<T>({l.spec.out, l.spec.in});
        if (l.weight.shape() != Shape{l.spec.out, l.spec.in}) {
          throw DimensionError(where + ": weight shape " + shape_string(l.weight.shape()));
        }
        s = {l.spec.out};
        break;
      }
      case LayerKind::ReLU:
        break;
      case LayerKind::AvgPool2:
        if (s.size() != 3 || s[1] < 2 || s[2] < 2) throw DimensionError(where + ": input " + shape_string(s));
        s = {s[0], s[1] / 2, s[2] / 2};
        break;
      case LayerKind::GlobalAvgPool:
        if (s.size() != 3) throw DimensionError(where + ": input " + shape_string(s));
        s = {s[0]};
        break;
      case LayerKind::Flatten:
        s = {shape_size(s)};
        break;
    }
    if (l.spec.has_params()) {
      if (l.spec.bias && l.bias.empty()) l.bias = BasicTensor<T>({l.spec.out});
      if (!l.spec.bias) l.bias = BasicTensor<T>();
      if (l.spec.bias && l.bias.shape() != Shape{l.spec.out}) {
        throw DimensionError(where + ": bias shape " + shape_string(l.bias.shape()));
      }
    }
    shapes_.push_back(s);
  }
  if (layers_.back().spec.kind != LayerKind::Dense) {
    throw ConfigError("layer stack must end with a Dense layer producing logits");
  }
  if (penultimate_ > layers_.size()) throw ConfigError("penultimate position out of range");
}

template <typename T>
Shape LayerStack<T>::shape_at(std::size_t position) const {
  if (position >= shapes_.size()) throw IndexError("activation position " + std::to_string(position) + " out of range");
  return shapes_[position];
}

template <typename T>
ForwardTrace<T> LayerStack<T>::forward(const BasicTensor<T>& x) const {
  if (x.shape() != input_shape_) {
    throw DimensionError("forward: input " + shape_string(x.shape()) + " does not match model input " +
                         shape_string(input_shape_));
  }
  ForwardTrace<T> trace;
  trace.layers.reserve(layers_.size());
  const BasicTensor<T>* current = &x;
  for (const auto& l : layers_) {
    LayerRecord<T> rec;
    rec.input = *current;
    switch (l.spec.kind) {
      case LayerKind::Conv:
        rec.pre_activation = ops::conv2d(rec.input, l.weight);
        if (l.spec.bias) rec.pre_activation = ops::add_channel_bias(rec.pre_activation, l.bias);
        rec.output = rec.pre_activation;
        break;
      case LayerKind::Dense: {
        auto col = rec.input.reshaped({l.spec.in, 1});
        rec.pre_activation = ops::matmul(l.weight, col).reshaped({l.spec.out});
        if (l.spec.bias) {
          for (std::size_t o = 0; o < l.spec.out; ++o) rec.pre_activation[o] += l.bias[o];
        }
        rec.output = rec.pre_activation;
        break;
      }
      case LayerKind::ReLU:
        rec.pre_activation = rec.input;
        rec.output = ops::relu(rec.input);
        break;
      case LayerKind::AvgPool2:
        rec.pre_activation = ops::avg_pool2(rec.input);
        rec.output = rec.pre_activation;
        break;
      case LayerKind::GlobalAvgPool:
        rec.pre_activation = ops::global_avg_pool(rec.input);
        rec.output = rec.pre_activation;
        break;
      case LayerKind::Flatten:
        rec.pre_activation = rec.input.reshaped({rec.input.size()});
        rec.output = rec.pre_activation;
        break;
    }
    require_finite(rec.output, "forward activation");
    trace.layers.push_back(std::move(rec));
    current = &trace.layers.back().output;
  }
  return trace;
}

template <typename T>
Gradients<T> LayerStack<T>::zero_gradients() const {
  Gradients<T> g;
  for (const auto& l : layers_) {
    g.weight.push_back(l.weight.empty() ? BasicTensor<T>() : BasicTensor<T>(l.weight.shape()));
    g.bias.push_back(l.bias.empty() ? BasicTensor<T>() : BasicTensor<T>(l.bias.shape()));
  }
  return g;
}

template <typename T>
Gradients<T> LayerStack<T>::backward(const ForwardTrace<T>& trace, const BasicTensor<T>& dlogits,
                                     std::span<const Injection<T>> injections) const {
  if (trace.layers.size() != layers_.size()) throw DimensionError("backward: trace does not belong to this model");
  if (dlogits.shape() != trace.logits().shape()) {
    throw DimensionError("backward: logit gradient " + shape_string(dlogits.shape()));
  }
  Gradients<T> g;
  g.weight.resize(layers_.size());
  g.bias.resize(layers_.size());
  BasicTensor<T> d = dlogits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    for (const auto& inj : injections) {
      if (inj.position != i + 1) continue;
      if (inj.gradient.shape() != d.shape()) {
        throw DimensionError("backward: injected gradient " + shape_string(inj.gradient.shape()) +
                             " at position " + std::to_string(inj.position));
      }
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += inj.gradient[j];
    }
    const auto& l = layers_[i];
    const auto& rec = trace.layers[i];
    switch (l.spec.kind) {
      case LayerKind::Conv: {
        if (l.spec.bias) g.bias[i] = ops::channel_bias_backward(d);
        auto cg = ops::conv2d_backward(rec.input, l.weight, d);
        g.weight[i] = std::move(cg.dk);
        d = std::move(cg.dx);
        break;
      }
      case LayerKind::Dense: {
        if (l.spec.bias) g.bias[i] = d;
        auto mg = ops::matmul_backward(l.weight, rec.input.reshaped({l.spec.in, 1}), d.reshaped({l.spec.out, 1}));
        g.weight[i] = std::move(mg.da);
        d = mg.db.reshaped(rec.input.shape());
        break;
      }
      case LayerKind::ReLU:
        d = ops::relu_backward(rec.input, d);
        break;
      case LayerKind::AvgPool2:
        d = ops::avg_pool2_backward(rec.input.shape(), d);
        break;
      case LayerKind::GlobalAvgPool:
        d = ops::global_avg_pool_backward(rec.input.shape(), d);
        break;
      case LayerKind::Flatten:
        d = d.reshaped(rec.input.shape());
        break;
    }
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    require_finite(g.weight[i], "weight gradient");
    require_finite(g.bias[i], "bias gradient");
  }
  return g;
}

template <typename T>
void LayerStack<T>::zero_parameters() {
  for (auto& l : layers_) {
    for (auto& v : l.weight.data()) v = T{0};
    for (auto& v : l.bias.data()) v = T{0};
  }
}

template <typename T>
std::size_t LayerStack<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

template <typename T>
void init_kaiming_uniform(LayerStack<T>& model, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1417));
  for (auto& l : model.layers()) {
    if (!l.spec.has_params()) continue;
    const std::size_t fan_in = l.spec.kind == LayerKind::Conv ? l.spec.in * l.spec.kernel * l.spec.kernel : l.spec.in;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : l.weight.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& v : l.bias.data()) v = T{0};
  }
}

template <typename T>
LayerStack<T> build_patchnet(std::size_t num_classes, std::uint64_t seed, bool bias, std::size_t image_size) {
  if (num_classes < 2) throw ConfigError("build_patchnet: num_classes must be >= 2");
  std::vector<Layer<T>> layers;
  auto add = [&](LayerSpec s) { layers.push_back(Layer<T>{s, {}, {}}); };
  add(LayerSpec::conv(3, 8, 3, bias));
  add(LayerSpec::relu());
  add(LayerSpec::avg_pool2());
  add(LayerSpec::conv(8, 16, 3, bias));
  add(LayerSpec::relu());
  add(LayerSpec::global_avg_pool());
  add(LayerSpec::dense(16, num_classes, bias));
  LayerStack<T> model({3, image_size, image_size}, std::move(layers), 6);
  init_kaiming_uniform(model, seed);
  return model;
}

template struct Gradients<float>;
template struct Gradients<double>;
template class LayerStack<float>;
template class LayerStack<double>;
template void init_kaiming_uniform(LayerStack<float>&, std::uint64_t);
template void init_kaiming_uniform(LayerStack<double>&, std::uint64_t);
template LayerStack<float> build_patchnet<float>(std::size_t, std::uint64_t, bool, std::size_t);
template LayerStack<double> build_patchnet<double>(std::size_t, std::uint64_t, bool, std::size_t);

// Checkpoints -----------------------------------------------------------------

std::string checkpoint_bytes(const Model& model) {
  nlohmann::json header;
  header["format"] = "score-checkpoint-v1";
  header["dtype"] = "f32";
  header["input_shape"] = model.input_shape();
  header["penultimate"] = model.penultimate();
  std::string body;
  auto& layers = header["layers"] = nlohmann::json::array();
  for (const auto& l : model.layers()) {
    nlohmann::json j{{"kind", to_string(l.spec.kind)}, {"in", l.spec.in},         {"out", l.spec.out},
                     {"kernel", l.spec.kernel},        {"bias", l.spec.bias}};
    if (!l.weight.empty()) {
      j["weight_offset"] = body.size();
      body += to_scr1_bytes(l.weight);
    }
    if (!l.bias.empty()) {
      j["bias_offset"] = body.size();
      body += to_scr1_bytes(l.bias);
    }
    layers.push_back(std::move(j));
  }
  const std::string text = header.dump();
  std::string out(4, '\0');
  const auto n = static_cast<std::uint32_t>(text.size());
  for (int b = 0; b < 4; ++b) out[b] = static_cast<char>((n >> (8 * b)) & 0xFF);
  return out + text + body;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  write_file_atomic(path, checkpoint_bytes(model));
}

Model parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4) throw IoError("checkpoint: truncated");
  std::uint32_t n = 0;
  for (int b = 0; b < 4; ++b) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[b])) << (8 * b);
  if (bytes.size() < 4 + static_cast<std::size_t>(n)) throw IoError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(4, n));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != "score-checkpoint-v1") throw IoError("checkpoint: unknown format");
  const std::string body = bytes.substr(4 + n);
  auto tensor_at = [&](std::size_t offset) {
    if (offset >= body.size()) throw IoError("checkpoint: offset out of range");
    std::istringstream in(body.substr(offset), std::ios::binary);
    return read_scr1<float>(in);
  };
  std::vector<Layer<float>> layers;
  for (const auto& j : header.at("layers")) {
    Layer<float> l;
    l.spec.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    l.spec.in = j.at("in").get<std::size_t>();
    l.spec.out = j.at("out").get<std::size_t>();
    l.spec.kernel = j.at("kernel").get<std::size_t>();
    l.spec.bias = j.at("bias").get<bool>();
    if (j.contains("weight_offset")) l.weight = tensor_at(j["weight_offset"].get<std::size_t>());
    if (j.contains("bias_offset")) l.bias = tensor_at(j["bias_offset"].get<std::size_t>());
    layers.push_back(std::move(l));
  }
  return Model(header.at("input_shape").get<Shape>(), std::move(layers), header.at("penultimate").get<std::size_t>());
}

Model load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace score
