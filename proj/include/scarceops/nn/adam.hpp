#pragma once

#include <cmath>
#include <vector>

#include "scarceops/nn/tensor.hpp"

namespace scarceops::nn {

// One Adam coordinate update with bias correction. The float32 optimizer and
// the 64-bit verification path in the tests instantiate the same formula.
template <typename T>
inline void adam_update(T& theta, T g, T& m, T& v, long t, T lr, T beta1,
                        T beta2, T eps) {
  m = beta1 * m + (T(1) - beta1) * g;
  v = beta2 * v + (T(1) - beta2) * g * g;
  const T m_hat = m / (T(1) - std::pow(beta1, static_cast<T>(t)));
  const T v_hat = v / (T(1) - std::pow(beta2, static_cast<T>(t)));
  theta -= lr * m_hat / (std::sqrt(v_hat) + eps);
}

// Moment buffers for a fixed parameter list. m and v are zero-initialized
// lazily on the first step; t counts completed steps.
struct AdamState {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  long t = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

// Applies one Adam step to every parameter. Every parameter must carry a
// populated gradient; grads are left untouched.
void adam_step(const std::vector<TensorPtr>& params, AdamState& state);

}  // namespace scarceops::nn
