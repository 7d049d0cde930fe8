#include "scarceops/nn/adam.hpp"

namespace scarceops::nn {

void adam_step(const std::vector<TensorPtr>& params, AdamState& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
      state.m[p].assign(params[p]->numel(), 0.0f);
      state.v[p].assign(params[p]->numel(), 0.0f);
    }
  }
  if (state.m.size() != params.size())
    throw ValidationError("adam_step: parameter list changed size");

  for (size_t p = 0; p < params.size(); ++p) {
    const auto& t = params[p];
    if (!t->has_grad())
      throw ValidationError(
          "adam_step: missing gradient for parameter " +
          (t->name.empty() ? "#" + std::to_string(p) : t->name));
    if (state.m[p].size() != t->numel())
      throw ValidationError("adam_step: moment buffer size mismatch for " +
                            t->name);
  }

  state.t += 1;
  for (size_t p = 0; p < params.size(); ++p) {
    auto& t = *params[p];
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (size_t i = 0; i < t.numel(); ++i) {
      adam_update(t.data[i], t.grad[i], m[i], v[i], state.t,
                  state.learning_rate, state.beta1, state.beta2,
                  state.epsilon);
    }
  }
}

}  // namespace scarceops::nn
