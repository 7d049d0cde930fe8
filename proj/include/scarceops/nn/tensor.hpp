#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "scarceops/errors.hpp"

namespace scarceops::nn {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major float32 tensor. `grad` stays empty until a backward pass
// (or ensure_grad) allocates it; when present it always matches data.size().
class Tensor {
public:
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::string name;

  Tensor() = default;
  Tensor(std::vector<int> shape_, bool requires_grad_ = false,
         std::string name_ = "");

  static TensorPtr zeros(std::vector<int> shape, bool requires_grad = false,
                         std::string name = "");
  static TensorPtr full(std::vector<int> shape, float value,
                        bool requires_grad = false, std::string name = "");
  static TensorPtr from(std::vector<int> shape, std::vector<float> values,
                        bool requires_grad = false, std::string name = "");

  size_t numel() const { return data.size(); }
  int dim(size_t i) const { return shape.at(i); }
  size_t ndim() const { return shape.size(); }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad();
  void zero_grad();
  void drop_grad() { grad.clear(); }

  // Throws NumericError naming `what` if any element is NaN/Inf.
  void check_finite(const char* what) const;

  static size_t numel_of(const std::vector<int>& shape);
};

struct TapeOp {
  const char* name;
  std::vector<TensorPtr> inputs;
  TensorPtr output;
  std::function<void()> backward;  // accumulates output.grad into input grads
};

// Reverse-mode tape. Operations append themselves in execution order, so the
// tape is topologically sorted by construction; backward() replays it in
// reverse. One tape per training session, never shared across threads.
class Tape {
public:
  void record(TapeOp op) { ops_.push_back(std::move(op)); }

  // Seeds grad(loss) = 1 and replays all recorded ops in reverse order.
  // `loss` must be a scalar (numel == 1).
  void backward(const TensorPtr& loss);

  size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

private:
  std::vector<TapeOp> ops_;
};

std::string shape_str(const std::vector<int>& shape);

}  // namespace scarceops::nn
