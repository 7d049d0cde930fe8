#include "scarceops/nn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace scarceops::nn {

size_t Tensor::numel_of(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimension must be positive, got " + std::to_string(d));
    n *= static_cast<size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape_, bool requires_grad_, std::string name_)
    : shape(std::move(shape_)),
      requires_grad(requires_grad_),
      name(std::move(name_)) {
  data.assign(numel_of(shape), 0.0f);
}

TensorPtr Tensor::zeros(std::vector<int> shape, bool requires_grad,
                        std::string name) {
  return std::make_shared<Tensor>(std::move(shape), requires_grad,
                                  std::move(name));
}

TensorPtr Tensor::full(std::vector<int> shape, float value, bool requires_grad,
                       std::string name) {
  auto t = zeros(std::move(shape), requires_grad, std::move(name));
  for (auto& v : t->data) v = value;
  return t;
}

TensorPtr Tensor::from(std::vector<int> shape, std::vector<float> values,
                       bool requires_grad, std::string name) {
  if (numel_of(shape) != values.size())
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  auto t = std::make_shared<Tensor>(std::move(shape), requires_grad,
                                    std::move(name));
  t->data = std::move(values);
  return t;
}

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
}

void Tensor::zero_grad() {
  if (!grad.empty()) grad.assign(data.size(), 0.0f);
}

void Tensor::check_finite(const char* what) const {
  for (float v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value in ") + what +
                         (name.empty() ? "" : " (" + name + ")"));
    }
  }
}

void Tape::backward(const TensorPtr& loss) {
  if (!loss) throw ValidationError("backward: null loss tensor");
  if (loss->numel() != 1)
    throw DimensionError("backward expects a scalar loss, got shape " +
                         shape_str(loss->shape));
  loss->ensure_grad();
  loss->grad[0] = 1.0f;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (!it->output->has_grad()) continue;  // not on the path to the loss
    it->backward();
    for (const auto& in : it->inputs) {
      if (!in->has_grad()) continue;
      for (float g : in->grad) {
        if (!std::isfinite(g))
          throw NumericError(std::string("non-finite gradient out of ") +
                             it->name);
      }
    }
  }
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace scarceops::nn
