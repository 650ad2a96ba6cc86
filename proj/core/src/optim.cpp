#include "ctxgan/optim.hpp"

#include <cmath>
#include <string>

#include "ctxgan/errors.hpp"

namespace ctxgan {

template <typename T>
AdamState<T> make_adam_state(std::span<const Tensor<T>> params, AdamOptions options) {
  AdamState<T> state;
  state.options = options;
  for (const Tensor<T>& p : params) {
    state.first_moment.emplace_back(p.size(), T(0));
    state.second_moment.emplace_back(p.size(), T(0));
  }
  return state;
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  if (params.size() != state.first_moment.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != state.first_moment[i].size()) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " has " +
                           std::to_string(params[i].size()) + " values, moments have " +
                           std::to_string(state.first_moment[i].size()));
    }
  }
  const AdamOptions& o = state.options;
  ++state.step;
  const double correction1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_data();
    auto grad = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      const double m_new = o.beta1 * m[j] + (1.0 - o.beta1) * g;
      const double v_new = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
      m[j] = static_cast<T>(m_new);
      v[j] = static_cast<T>(v_new);
      const double m_hat = m_new / correction1;
      const double v_hat = v_new / correction2;
      values[j] = static_cast<T>(values[j] - o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon));
    }
  }
}

template <typename T>
MomentumState<T> make_momentum_state(std::span<const std::size_t> sizes, MomentumOptions options) {
  MomentumState<T> state;
  state.options = options;
  for (std::size_t n : sizes) state.velocity.emplace_back(n, T(0));
  return state;
}

template <typename T>
void momentum_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads,
                   MomentumState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.velocity.size()) {
    throw DimensionError("momentum_step: parameter/gradient/state counts differ");
  }
  const auto mu = static_cast<T>(state.options.momentum);
  const auto lr = static_cast<T>(state.options.learning_rate);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& vel = state.velocity[i];
    if (params[i].size() != vel.size() || grads[i].size() != vel.size()) {
      throw DimensionError("momentum_step: array " + std::to_string(i) + " size mismatch");
    }
    for (std::size_t j = 0; j < vel.size(); ++j) {
      vel[j] = mu * vel[j] + grads[i][j];
      params[i][j] -= lr * vel[j];
    }
  }
}

template <typename T>
void momentum_step(std::span<T> param, std::span<const T> grad, MomentumState<T>& state) {
  const std::span<T> p[] = {param};
  const std::span<const T> g[] = {grad};
  momentum_step<T>(std::span<const std::span<T>>(p), std::span<const std::span<const T>>(g), state);
}

#define CTXGAN_INSTANTIATE_OPTIM(T)                                                           \
  template AdamState<T> make_adam_state(std::span<const Tensor<T>>, AdamOptions);             \
  template void adam_step(std::span<Tensor<T>>, AdamState<T>&);                               \
  template MomentumState<T> make_momentum_state(std::span<const std::size_t>, MomentumOptions); \
  template void momentum_step(std::span<const std::span<T>>,                                  \
                              std::span<const std::span<const T>>, MomentumState<T>&);        \
  template void momentum_step(std::span<T>, std::span<const T>, MomentumState<T>&);

CTXGAN_INSTANTIATE_OPTIM(float)
CTXGAN_INSTANTIATE_OPTIM(double)

}  // namespace ctxgan
