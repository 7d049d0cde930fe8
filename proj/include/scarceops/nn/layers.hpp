#pragma once

#include <string>
#include <vector>

#include "scarceops/nn/ops.hpp"
#include "scarceops/nn/rng.hpp"

namespace scarceops::nn {

struct ForwardCtx {
  Tape* tape = nullptr;
  bool training = false;
  // Gradient checks probe a pure function: they run training-mode batch norm
  // with the running-stat update frozen.
  bool update_running = true;
};

// Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in).
void kaiming_uniform(Tensor& t, int fan_in, Pcg32& rng);

struct Conv2d {
  TensorPtr weight;  // [F,C,kh,kw]
  TensorPtr bias;    // null when use_bias == false
  int stride = 1;
  int padding = 0;

  Conv2d(int in_ch, int out_ch, int ksize, int stride, int padding,
         bool use_bias, Pcg32& rng, const std::string& name);
  TensorPtr forward(const TensorPtr& x, const ForwardCtx& ctx) const;
  void collect_params(std::vector<TensorPtr>& out) const;
  void collect_state(std::vector<TensorPtr>& out) const;
};

struct ConvTranspose2d {
  TensorPtr weight;  // [C,F,kh,kw]
  TensorPtr bias;
  int stride = 1;
  int padding = 0;

  ConvTranspose2d(int in_ch, int out_ch, int ksize, int stride, int padding,
                  bool use_bias, Pcg32& rng, const std::string& name);
  TensorPtr forward(const TensorPtr& x, const ForwardCtx& ctx) const;
  void collect_params(std::vector<TensorPtr>& out) const;
  void collect_state(std::vector<TensorPtr>& out) const;
};

struct BatchNorm2d {
  TensorPtr gamma;         // ones
  TensorPtr beta;          // zeros
  TensorPtr running_mean;  // zeros, not trainable
  TensorPtr running_var;   // ones, not trainable
  float momentum = 0.1f;
  float eps = 1e-5f;

  BatchNorm2d(int channels, const std::string& name);
  TensorPtr forward(const TensorPtr& x, const ForwardCtx& ctx) const;
  void collect_params(std::vector<TensorPtr>& out) const;
  void collect_state(std::vector<TensorPtr>& out) const;
};

struct Linear {
  TensorPtr weight;  // [D_out,D_in]
  TensorPtr bias;

  Linear(int in_dim, int out_dim, bool use_bias, Pcg32& rng,
         const std::string& name);
  TensorPtr forward(const TensorPtr& x, const ForwardCtx& ctx) const;
  void collect_params(std::vector<TensorPtr>& out) const;
  void collect_state(std::vector<TensorPtr>& out) const;
};

// Standard two-conv residual block. Convolutions carry no bias (the following
// batch norm absorbs it); a 1x1 projection matches shape when stride or
// channel count changes.
struct BasicBlock {
  Conv2d conv1;
  BatchNorm2d bn1;
  Conv2d conv2;
  BatchNorm2d bn2;
  std::unique_ptr<Conv2d> down_conv;
  std::unique_ptr<BatchNorm2d> down_bn;

  BasicBlock(int in_ch, int out_ch, int stride, Pcg32& rng,
             const std::string& name);
  TensorPtr forward(const TensorPtr& x, const ForwardCtx& ctx) const;
  void collect_params(std::vector<TensorPtr>& out) const;
  void collect_state(std::vector<TensorPtr>& out) const;
};

}  // namespace scarceops::nn
