// SPDX-License-Identifier: Apache-2.0
#include "prunekit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace prunekit {

namespace {

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + to_string(shape));
  }
}

struct ConvDims {
  std::size_t batch, cin, h, w, cout, kh, kw, oh, ow;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& weight, Conv2dGeometry geom) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  if (geom.stride == 0) throw ConfigError("conv2d stride must be positive");
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d weight expects " + std::to_string(weight.dim(1)) + " input channels, input " +
                     to_string(input.shape()) + " has " + std::to_string(input.dim(1)));
  }
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0};
  d.oh = conv_output_extent(d.h, d.kh, geom.stride, geom.pad);
  d.ow = conv_output_extent(d.w, d.kw, geom.stride, geom.pad);
  return d;
}

// cols[(c*kh + i)*kw + j, oy*ow + ox] = x[c, oy*s + i - pad, ox*s + j - pad]
template <typename T>
void im2col(const T* x, const ConvDims& d, Conv2dGeometry g, T* cols) {
  const std::size_t hw = d.oh * d.ow;
  for (std::size_t c = 0; c < d.cin; ++c) {
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        T* row = cols + ((c * d.kh + i) * d.kw + j) * hw;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          T* dst = row + oy * d.ow;
          if (iy < 0 || iy >= static_cast<long>(d.h)) {
            std::fill(dst, dst + d.ow, T{0});
            continue;
          }
          const T* src = x + (c * d.h + static_cast<std::size_t>(iy)) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(d.w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvDims& d, Conv2dGeometry g, T* x) {
  const std::size_t hw = d.oh * d.ow;
  for (std::size_t c = 0; c < d.cin; ++c) {
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        const T* row = cols + ((c * d.kh + i) * d.kw + j) * hw;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          T* dst = x + (c * d.h + static_cast<std::size_t>(iy)) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(d.w)) dst[ix] += row[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  }
  return t;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ConfigError("stride must be positive");
  const std::size_t padded = in + 2 * pad;
  if (kernel == 0 || padded < kernel) {
    throw ConfigError("kernel extent " + std::to_string(kernel) + " does not fit padded input extent " +
                      std::to_string(padded));
  }
  if ((padded - kernel) % stride != 0) {
    throw ConfigError("output extent (" + std::to_string(in) + " + 2*" + std::to_string(pad) + " - " +
                      std::to_string(kernel) + ")/" + std::to_string(stride) + " + 1 is not integral");
  }
  return (padded - kernel) / stride + 1;
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, Conv2dGeometry geom) {
  const ConvDims d = conv_dims(input, weight, geom);
  const std::size_t patch = d.cin * d.kh * d.kw;
  const std::size_t hw = d.oh * d.ow;
  Tensor<T> out({d.batch, d.cout, d.oh, d.ow});
  std::vector<T> cols(patch * hw);
  for (std::size_t b = 0; b < d.batch; ++b) {
    im2col(input.data().data() + b * d.cin * d.h * d.w, d, geom, cols.data());
    gemm(d.cout, hw, patch, weight.data().data(), cols.data(), out.data().data() + b * d.cout * hw, false);
  }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& weight,
                               Conv2dGeometry geom, bool need_input_grad,
                               bool need_weight_grad) {
  const ConvDims d = conv_dims(input, weight, geom);
  const Shape expected{d.batch, d.cout, d.oh, d.ow};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv2d grad_out is " + to_string(grad_out.shape()) + ", forward output is " + to_string(expected));
  }
  const std::size_t patch = d.cin * d.kh * d.kw;
  const std::size_t hw = d.oh * d.ow;
  Conv2dGrads<T> g;
  if (need_weight_grad) g.weight = Tensor<T>(weight.shape());
  if (need_input_grad) g.input = Tensor<T>(input.shape());
  std::vector<T> cols(patch * hw);
  std::vector<T> grad_cols(need_input_grad ? patch * hw : 0);
  const std::vector<T> weight_t = need_input_grad ? transpose(weight.data().data(), d.cout, patch) : std::vector<T>{};
  for (std::size_t b = 0; b < d.batch; ++b) {
    const T* gout = grad_out.data().data() + b * d.cout * hw;
    if (need_weight_grad) {
      im2col(input.data().data() + b * d.cin * d.h * d.w, d, geom, cols.data());
      const std::vector<T> cols_t = transpose(cols.data(), patch, hw);
      gemm(d.cout, patch, hw, gout, cols_t.data(), g.weight.data().data(), true);
    }
    if (need_input_grad) {
      gemm(patch, hw, d.cout, weight_t.data(), gout, grad_cols.data(), false);
      col2im(grad_cols.data(), d, geom, g.input.data().data() + b * d.cin * d.h * d.w);
    }
  }
  return g;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? input[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input) {
  if (grad_out.shape() != input.shape()) throw ShapeError("relu backward shape mismatch");
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? grad_out[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weight) {
  require_rank(input.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("linear weight expects " + std::to_string(weight.dim(1)) + " features, input has " +
                     std::to_string(input.dim(1)));
  }
  const std::size_t batch = input.dim(0), in = input.dim(1), out_dim = weight.dim(0);
  Tensor<T> out({batch, out_dim});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* x = input.data().data() + b * in;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const T* w = weight.data().data() + o * in;
      T acc{0};
      for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
      out[b * out_dim + o] = acc;
    }
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& weight) {
  require_rank(grad_out.shape(), 2, "linear grad_out");
  const std::size_t batch = input.dim(0), in = input.dim(1), out_dim = weight.dim(0);
  if (grad_out.dim(0) != batch || grad_out.dim(1) != out_dim) throw ShapeError("linear backward shape mismatch");
  LinearGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weight.shape())};
  // grad_input = grad_out * W ; grad_weight = grad_out^T * input
  gemm(batch, in, out_dim, grad_out.data().data(), weight.data().data(), g.input.data().data(), false);
  const std::vector<T> gout_t = transpose(grad_out.data().data(), batch, out_dim);
  gemm(out_dim, in, batch, gout_t.data(), input.data().data(), g.weight.data().data(), false);
  return g;
}

template <typename T>
MaxPoolResult<T> maxpool2x2_forward(const Tensor<T>& input) {
  require_rank(input.shape(), 4, "maxpool input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0) {
    throw ConfigError("maxpool2x2 needs even spatial extents, got " + to_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  MaxPoolResult<T> r{Tensor<T>({n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x, ++o) {
        std::size_t best = base + (2 * y) * w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * y + dy) * w + 2 * x + dx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        r.output[o] = input[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2x2_backward(const Tensor<T>& grad_out, std::span<const std::size_t> argmax, const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) throw ShapeError("maxpool backward: argmax/grad size mismatch");
  Tensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

template <typename T>
Tensor<T> frozen_affine_forward(const Tensor<T>& input, std::span<const T> scale, std::span<const T> shift) {
  if (input.rank() < 2) throw ShapeError("frozen_affine expects [B,C,...], got " + to_string(input.shape()));
  const std::size_t c = input.dim(1);
  if (scale.size() != c || shift.size() != c) {
    throw ShapeError("frozen_affine has " + std::to_string(scale.size()) + " scales for " + std::to_string(c) + " channels");
  }
  const std::size_t inner = input.size() / (input.dim(0) * c);
  Tensor<T> out(input.shape());
  std::size_t i = 0;
  for (std::size_t b = 0; b < input.dim(0); ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t k = 0; k < inner; ++k, ++i) out[i] = scale[ch] * input[i] + shift[ch];
    }
  }
  return out;
}

template <typename T>
Tensor<T> frozen_affine_backward(const Tensor<T>& grad_out, std::span<const T> scale) {
  const std::vector<T> zeros(scale.size(), T{0});
  return frozen_affine_forward<T>(grad_out, scale, zeros);
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& input, std::span<const T> factors) {
  const std::vector<T> zeros(factors.size(), T{0});
  return frozen_affine_forward<T>(input, factors, zeros);
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.size());
  if (logits.empty()) return p;
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum{0};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (T& v : p) v /= sum;
  return p;
}

template <typename T>
Tensor<T> softmax_channel(const Tensor<T>& x) {
  require_rank(x.shape(), 1, "softmax_channel");
  return Tensor<T>(x.shape(), softmax<T>(x.data()));
}

template <typename T>
LossAndGrad<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "cross_entropy logits");
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  if (labels.size() != batch) throw ShapeError("cross_entropy: label count does not match batch");
  if (batch == 0) throw ShapeError("cross_entropy on an empty batch");
  LossAndGrad<T> r{T{0}, Tensor<T>(logits.shape())};
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ConfigError("label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    auto row = logits.data().subspan(b * k, k);
    const T mx = *std::max_element(row.begin(), row.end());
    T sum{0};
    for (T v : row) sum += std::exp(v - mx);
    const T log_z = mx + std::log(sum);
    total += static_cast<double>(log_z - row[label]);
    for (std::size_t j = 0; j < k; ++j) {
      const T p = std::exp(row[j] - log_z);
      r.grad[b * k + j] = (p - (j == static_cast<std::size_t>(label) ? T{1} : T{0})) / static_cast<T>(batch);
    }
  }
  r.value = static_cast<T>(total / static_cast<double>(batch));
  return r;
}

#define PRUNEKIT_INSTANTIATE_OPS(T)                                                                              \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);                    \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, Conv2dGeometry);                      \
  template Conv2dGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dGeometry, \
                                             bool, bool);                                                              \
  template Tensor<T> relu_forward<T>(const Tensor<T>&);                                                          \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> linear_forward<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template LinearGrads<T> linear_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template MaxPoolResult<T> maxpool2x2_forward<T>(const Tensor<T>&);                                             \
  template Tensor<T> maxpool2x2_backward<T>(const Tensor<T>&, std::span<const std::size_t>, const Shape&);       \
  template Tensor<T> frozen_affine_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>);        \
  template Tensor<T> frozen_affine_backward<T>(const Tensor<T>&, std::span<const T>);                            \
  template Tensor<T> scale_channels<T>(const Tensor<T>&, std::span<const T>);                                    \
  template std::vector<T> softmax<T>(std::span<const T>);                                                        \
  template Tensor<T> softmax_channel<T>(const Tensor<T>&);                                                       \
  template LossAndGrad<T> cross_entropy<T>(const Tensor<T>&, std::span<const int>);

PRUNEKIT_INSTANTIATE_OPS(float)
PRUNEKIT_INSTANTIATE_OPS(double)

#undef PRUNEKIT_INSTANTIATE_OPS

}  // namespace prunekit
