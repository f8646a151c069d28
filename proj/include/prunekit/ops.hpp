// SPDX-License-Identifier: Apache-2.0
//
// Forward and backward kernels for the layer kinds the toolkit supports.
// Every kernel is instantiated for float (training) and double (gradient and
// equivalence oracles). Reductions always run in a fixed row-major order so
// results are bit-reproducible on a given build.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "prunekit/tensor.hpp"

namespace prunekit {

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Output spatial extent of a convolution; throws ConfigError when the extent
/// is not a positive integer.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Cross-correlation of input [B,Cin,H,W] with weight [Cout,Cin,M,K], zero
/// padded, no bias.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, Conv2dGeometry geom);

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;   // empty when not requested
  Tensor<T> weight;  // empty when not requested
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& weight,
                               Conv2dGeometry geom, bool need_input_grad = true,
                               bool need_weight_grad = true);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

/// Passes the gradient where input > 0; the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input);

/// input [B,D] times weight [O,D] transposed.
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weight);

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& weight);

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// 2x2 window, stride 2. Ties go to the row-major earliest element.
template <typename T>
MaxPoolResult<T> maxpool2x2_forward(const Tensor<T>& input);

template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& grad_out, std::span<const std::size_t> argmax, const Shape& input_shape);

/// y = scale[c] * x + shift[c] over axis 1 of [B,C,...].
template <typename T>
Tensor<T> frozen_affine_forward(const Tensor<T>& input, std::span<const T> scale, std::span<const T> shift);

template <typename T>
Tensor<T> frozen_affine_backward(const Tensor<T>& grad_out, std::span<const T> scale);

/// Softmax with max subtraction.
template <typename T>
std::vector<T> softmax(std::span<const T> logits);

/// Softmax of a rank-1 tensor (one spatial site's channel vector).
template <typename T>
Tensor<T> softmax_channel(const Tensor<T>& x);

template <typename T>
struct LossAndGrad {
  T value{};
  Tensor<T> grad;
};

/// Mean over the batch of -log softmax(logits)[label]. grad is d(value)/d(logits).
template <typename T>
LossAndGrad<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Channel-wise multiply over axis 1 of [B,C,...].
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& input, std::span<const T> factors);

/// Dense C[m,n] (+)= A[m,k] * B[k,n], all row-major.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

}  // namespace prunekit
