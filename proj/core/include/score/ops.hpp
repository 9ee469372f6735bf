#pragma once

#include <cstddef>

#include "score/tensor.hpp"

// Forward kernels and their gradient rules for the fixed layer set.
// Every kernel is a deterministic single-threaded loop nest; these are the
// reference implementations the rest of the library is checked against.
namespace score::ops {

template <typename T>
struct MatmulGrads {
  BasicTensor<T> da;
  BasicTensor<T> db;
};

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dk;
};

// [r x k] . [k x c] -> [r x c]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
MatmulGrads<T> matmul_backward(const BasicTensor<T>& a, const BasicTensor<T>& b,
                               const BasicTensor<T>& dout);

// Valid cross-correlation: x [C x H x W], k [F x C x kh x kw] -> [F x H' x W'].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& k, std::size_t stride = 1);
template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& k,
                               const BasicTensor<T>& dout, std::size_t stride = 1);

// Adds b[c] to every element of channel c of x [C x H x W].
template <typename T>
BasicTensor<T> add_channel_bias(const BasicTensor<T>& x, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> channel_bias_backward(const BasicTensor<T>& dout);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dout);

// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
template <typename T>
BasicTensor<T> avg_pool2(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> avg_pool2_backward(const Shape& input_shape, const BasicTensor<T>& dout);

// [C x H x W] -> [C]
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape, const BasicTensor<T>& dout);

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);
template <typename T>
T softmax_ce(const BasicTensor<T>& logits, std::size_t label);
// d loss / d logits = softmax(logits) - onehot(label)
template <typename T>
BasicTensor<T> softmax_ce_backward(const BasicTensor<T>& logits, std::size_t label);

}  // namespace score::ops
