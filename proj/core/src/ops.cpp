#include "score/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace score::ops {
namespace {

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride) { return (in - k) / stride + 1; }

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
  BasicTensor<T> out({rows, cols});
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < inner; ++k) {
      const T s = av[r * inner + k];
      const T* brow = &bv[k * cols];
      T* orow = &o[r * cols];
      for (std::size_t c = 0; c < cols; ++c) orow[c] += s * brow[c];
    }
  }
  require_finite(out, "matmul");
  return out;
}

template <typename T>
MatmulGrads<T> matmul_backward(const BasicTensor<T>& a, const BasicTensor<T>& b,
                               const BasicTensor<T>& dout) {
  const std::size_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
  if (dout.shape() != Shape{rows, cols}) {
    throw DimensionError("matmul_backward: gradient shape " + shape_string(dout.shape()) +
                         " does not match output " + shape_string({rows, cols}));
  }
  MatmulGrads<T> g{BasicTensor<T>(a.shape()), BasicTensor<T>(b.shape())};
  auto da = g.da.data();
  auto db = g.db.data();
  auto av = a.data();
  auto bv = b.data();
  auto dv = dout.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < inner; ++k) {
      T acc{0};
      for (std::size_t c = 0; c < cols; ++c) acc += dv[r * cols + c] * bv[k * cols + c];
      da[r * inner + k] = acc;
      const T s = av[r * inner + k];
      for (std::size_t c = 0; c < cols; ++c) db[k * cols + c] += s * dv[r * cols + c];
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& k, std::size_t stride) {
  require_rank(x, 3, "conv2d input");
  require_rank(k, 4, "conv2d kernel");
  const std::size_t channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  const std::size_t filters = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (k.dim(1) != channels || kh > height || kw > width || stride == 0) {
    throw DimensionError("conv2d: kernel " + shape_string(k.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
  }
  const std::size_t oh = conv_out(height, kh, stride), ow = conv_out(width, kw, stride);
  BasicTensor<T> out({filters, oh, ow});
  auto o = out.data();
  auto xv = x.data();
  auto kv = k.data();
  for (std::size_t f = 0; f < filters; ++f) {
    T* plane = &o[f * oh * ow];
    for (std::size_t c = 0; c < channels; ++c) {
      const T* in = &xv[c * height * width];
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          const T w = kv[((f * channels + c) * kh + i) * kw + j];
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const T* row = in + (oy * stride + i) * width + j;
            T* orow = plane + oy * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) orow[ox] += w * row[ox * stride];
          }
        }
      }
    }
  }
  require_finite(out, "conv2d");
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& k,
                               const BasicTensor<T>& dout, std::size_t stride) {
  const std::size_t channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  const std::size_t filters = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = conv_out(height, kh, stride), ow = conv_out(width, kw, stride);
  if (dout.shape() != Shape{filters, oh, ow}) {
    throw DimensionError("conv2d_backward: gradient shape " + shape_string(dout.shape()) +
                         " does not match output " + shape_string({filters, oh, ow}));
  }
  Conv2dGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(k.shape())};
  auto dx = g.dx.data();
  auto dk = g.dk.data();
  auto xv = x.data();
  auto kv = k.data();
  auto dv = dout.data();
  for (std::size_t f = 0; f < filters; ++f) {
    const T* gplane = &dv[f * oh * ow];
    for (std::size_t c = 0; c < channels; ++c) {
      const T* in = &xv[c * height * width];
      T* din = &dx[c * height * width];
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          const std::size_t widx = ((f * channels + c) * kh + i) * kw + j;
          const T w = kv[widx];
          T acc{0};
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const T* row = in + (oy * stride + i) * width + j;
            T* drow = din + (oy * stride + i) * width + j;
            const T* grow = gplane + oy * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              acc += grow[ox] * row[ox * stride];
              drow[ox * stride] += w * grow[ox];
            }
          }
          dk[widx] = acc;
        }
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& b) {
  require_rank(x, 3, "add_channel_bias");
  if (b.rank() != 1 || b.dim(0) != x.dim(0)) {
    throw DimensionError("add_channel_bias: bias " + shape_string(b.shape()) + " vs input " +
                         shape_string(x.shape()));
  }
  BasicTensor<T> out = x;
  const std::size_t plane = x.dim(1) * x.dim(2);
  auto o = out.data();
  for (std::size_t c = 0; c < x.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) o[c * plane + i] += b[c];
  }
  return out;
}

template <typename T>
BasicTensor<T> channel_bias_backward(const BasicTensor<T>& dout) {
  BasicTensor<T> db({dout.dim(0)});
  const std::size_t plane = dout.dim(1) * dout.dim(2);
  for (std::size_t c = 0; c < dout.dim(0); ++c) {
    T acc{0};
    for (std::size_t i = 0; i < plane; ++i) acc += dout[c * plane + i];
    db[c] = acc;
  }
  return db;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dout) {
  if (x.shape() != dout.shape()) {
    throw DimensionError("relu_backward: " + shape_string(x.shape()) + " vs " + shape_string(dout.shape()));
  }
  BasicTensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dout[i] : T{0};
  return dx;
}

template <typename T>
BasicTensor<T> avg_pool2(const BasicTensor<T>& x) {
  require_rank(x, 3, "avg_pool2");
  const std::size_t channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  if (height < 2 || width < 2) throw DimensionError("avg_pool2: input too small " + shape_string(x.shape()));
  const std::size_t oh = height / 2, ow = width / 2;
  BasicTensor<T> out({channels, oh, ow});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T s = x.at(c, 2 * y, 2 * xx) + x.at(c, 2 * y, 2 * xx + 1) + x.at(c, 2 * y + 1, 2 * xx) +
                    x.at(c, 2 * y + 1, 2 * xx + 1);
        out.at(c, y, xx) = s / T{4};
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> avg_pool2_backward(const Shape& input_shape, const BasicTensor<T>& dout) {
  BasicTensor<T> dx(input_shape);
  for (std::size_t c = 0; c < dout.dim(0); ++c) {
    for (std::size_t y = 0; y < dout.dim(1); ++y) {
      for (std::size_t xx = 0; xx < dout.dim(2); ++xx) {
        const T g = dout.at(c, y, xx) / T{4};
        dx.at(c, 2 * y, 2 * xx) += g;
        dx.at(c, 2 * y, 2 * xx + 1) += g;
        dx.at(c, 2 * y + 1, 2 * xx) += g;
        dx.at(c, 2 * y + 1, 2 * xx + 1) += g;
      }
    }
  }
  return dx;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank(x, 3, "global_avg_pool");
  const std::size_t plane = x.dim(1) * x.dim(2);
  BasicTensor<T> out({x.dim(0)});
  for (std::size_t c = 0; c < x.dim(0); ++c) {
    T acc{0};
    for (std::size_t i = 0; i < plane; ++i) acc += x[c * plane + i];
    out[c] = acc / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape, const BasicTensor<T>& dout) {
  BasicTensor<T> dx(input_shape);
  const std::size_t plane = input_shape[1] * input_shape[2];
  for (std::size_t c = 0; c < input_shape[0]; ++c) {
    const T g = dout[c] / static_cast<T>(plane);
    for (std::size_t i = 0; i < plane; ++i) dx[c * plane + i] = g;
  }
  return dx;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  T peak = -std::numeric_limits<T>::infinity();
  for (T v : logits.data()) peak = std::max(peak, v);
  BasicTensor<T> p = logits;
  T total{0};
  for (auto& v : p.data()) {
    v = std::exp(v - peak);
    total += v;
  }
  for (auto& v : p.data()) v /= total;
  return p;
}

template <typename T>
T softmax_ce(const BasicTensor<T>& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw IndexError("softmax_ce: label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  T peak = -std::numeric_limits<T>::infinity();
  for (T v : logits.data()) peak = std::max(peak, v);
  T total{0};
  for (T v : logits.data()) total += std::exp(v - peak);
  const T loss = std::log(total) + peak - logits[label];
  if (!std::isfinite(loss)) throw NumericError("softmax_ce: non-finite loss");
  return loss;
}

template <typename T>
BasicTensor<T> softmax_ce_backward(const BasicTensor<T>& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw IndexError("softmax_ce_backward: label " + std::to_string(label) + " out of range");
  }
  BasicTensor<T> g = softmax(logits);
  g[label] -= T{1};
  return g;
}

#define SCORE_INSTANTIATE_OPS(T)                                                                     \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template MatmulGrads<T> matmul_backward(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                          const BasicTensor<T>&);                                    \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t);         \
  template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                          const BasicTensor<T>&, std::size_t);                       \
  template BasicTensor<T> add_channel_bias(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> channel_bias_backward(const BasicTensor<T>&);                              \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                               \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> avg_pool2(const BasicTensor<T>&);                                          \
  template BasicTensor<T> avg_pool2_backward(const Shape&, const BasicTensor<T>&);                   \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                    \
  template BasicTensor<T> global_avg_pool_backward(const Shape&, const BasicTensor<T>&);             \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                            \
  template T softmax_ce(const BasicTensor<T>&, std::size_t);                                         \
  template BasicTensor<T> softmax_ce_backward(const BasicTensor<T>&, std::size_t);

SCORE_INSTANTIATE_OPS(float)
SCORE_INSTANTIATE_OPS(double)

#undef SCORE_INSTANTIATE_OPS

}  // namespace score::ops
