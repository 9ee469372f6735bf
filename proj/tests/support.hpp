#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "score/network.hpp"
#include "score/rng.hpp"
#include "score/tensor.hpp"

namespace score::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("score-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <typename T = float>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
Layer<T> dense_layer(std::size_t in, std::size_t out, std::vector<T> weight, std::vector<T> bias = {}) {
  Layer<T> l{LayerSpec::dense(in, out, !bias.empty()), BasicTensor<T>({out, in}, std::move(weight)), {}};
  if (!bias.empty()) l.bias = BasicTensor<T>({out}, std::move(bias));
  return l;
}

template <typename T>
Layer<T> plain_layer(LayerSpec spec) {
  return Layer<T>{spec, {}, {}};
}

// Dense(in->hidden)+ReLU+Dense(hidden->out) with seeded weights.
template <typename T>
LayerStack<T> two_layer_dense(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed,
                              bool bias = true) {
  std::vector<Layer<T>> layers;
  auto w1 = random_tensor<T>({hidden, in}, seed);
  auto w2 = random_tensor<T>({out, hidden}, seed + 1);
  layers.push_back(dense_layer<T>(in, hidden, w1.values(),
                                  bias ? random_tensor<T>({hidden}, seed + 2, -0.2, 0.2).values() : std::vector<T>{}));
  layers.push_back(plain_layer<T>(LayerSpec::relu()));
  layers.push_back(dense_layer<T>(hidden, out, w2.values(),
                                  bias ? random_tensor<T>({out}, seed + 3, -0.2, 0.2).values() : std::vector<T>{}));
  return LayerStack<T>({in}, std::move(layers), 2);
}

}  // namespace score::testing
