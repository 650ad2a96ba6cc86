#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctxgan/tensor.hpp"

namespace ctxgan {

// Differentiable operations. Every op records a backward closure when any
// input requires grad; otherwise it is a plain forward computation. Shapes are
// checked eagerly and violations throw DimensionError.

// -- elementwise -----------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// x[..., c] + bias[c]
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
/// scale * x + shift, with compile-time constants.
template <typename T> Tensor<T> affine(const Tensor<T>& x, T scale, T shift = T(0));
/// x * s where s is a one-element tensor on the tape.
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s);

template <typename T> Tensor<T> lrelu(const Tensor<T>& x, T slope);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
/// log(1 + exp(x)), evaluated without overflow.
template <typename T> Tensor<T> softplus(const Tensor<T>& x);
/// Throws DomainError for any non-positive input.
template <typename T> Tensor<T> log(const Tensor<T>& x);
/// log(max(x, floor)); zero gradient where the floor is active.
template <typename T> Tensor<T> log_clamped(const Tensor<T>& x, T floor);

// -- reductions and layout -------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Shares storage with the input.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Half-open [begin, end) along one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
/// Flat-index gather into a rank-1 result.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::size_t> flat_indices);

// -- convolution -----------------------------------------------------------

enum class Padding { same, valid };

/// input [N,H,W,C], kernel [k,k,C,F] -> [N,Ho,Wo,F].
/// same: Ho = ceil(H/stride), pad_total = max((Ho-1)*stride + k - H, 0),
/// split with the smaller half on top/left. valid: Ho = (H-k)/stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride,
                 Padding padding);

/// input [N,H,W,C], kernel [k,k,F,C] -> [N,H*stride,W*stride,F].
/// Defined as the exact adjoint of conv2d(., kernel, stride, same) acting on
/// [N,H*stride,W*stride,F], so the output size doubles exactly at stride 2
/// without any output-padding parameter.
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride);

// -- normalization ---------------------------------------------------------

template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;

  RunningStats() = default;
  explicit RunningStats(std::size_t channels) : mean(channels, T(0)), var(channels, T(1)) {}
};

enum class BatchNormMode { train, infer };

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// Batch statistics over every axis but the last. When `running` is non-null
/// the running mean and (unbiased) variance are updated by EMA.
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          RunningStats<T>* running, BatchNormOptions options = {});

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const RunningStats<T>& running, BatchNormOptions options = {});

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormMode mode, RunningStats<T>& running, BatchNormOptions options = {});

}  // namespace ctxgan
