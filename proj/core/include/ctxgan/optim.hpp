#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ctxgan/tensor.hpp"

namespace ctxgan {

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::int64_t step = 0;
};

template <typename T>
AdamState<T> make_adam_state(std::span<const Tensor<T>> params, AdamOptions options = {});

/// One bias-corrected Adam update of every parameter from its accumulated
/// grad (a parameter without a grad is treated as having a zero gradient).
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

struct MomentumOptions {
  double learning_rate = 0.01;
  double momentum = 0.9;
};

/// Heavy-ball descent: v <- momentum * v + g, x <- x - learning_rate * v.
template <typename T>
struct MomentumState {
  MomentumOptions options;
  std::vector<std::vector<T>> velocity;
};

template <typename T>
MomentumState<T> make_momentum_state(std::span<const std::size_t> sizes,
                                     MomentumOptions options = {});

template <typename T>
void momentum_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads,
                   MomentumState<T>& state);

/// Single-array convenience form.
template <typename T>
void momentum_step(std::span<T> param, std::span<const T> grad, MomentumState<T>& state);

}  // namespace ctxgan
