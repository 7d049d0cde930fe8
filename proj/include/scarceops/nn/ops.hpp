#pragma once

#include "scarceops/nn/tensor.hpp"

namespace scarceops::nn {

// All operations run the forward pass eagerly and, when `tape` is non-null,
// record a backward rule. Passing nullptr gives plain inference.

// input [N,C,H,W], kernel [F,C,kh,kw], bias [F] or null.
// H' = floor((H + 2*padding - kh) / stride) + 1 (likewise W').
TensorPtr conv2d(const TensorPtr& input, const TensorPtr& kernel,
                 const TensorPtr& bias, int stride, int padding, Tape* tape);

// input [N,C,H,W], kernel [C,F,kh,kw], bias [F] or null.
// H' = (H - 1) * stride - 2*padding + kh.
TensorPtr conv_transpose2d(const TensorPtr& input, const TensorPtr& kernel,
                           const TensorPtr& bias, int stride, int padding,
                           Tape* tape);

// Per-channel affine batch normalization over [N,C,H,W].
// training: normalize with batch statistics; running stats move by
// `momentum` iff update_running (gradient checks freeze them).
// eval: normalize with the running stats.
TensorPtr batch_norm2d(const TensorPtr& input, const TensorPtr& gamma,
                       const TensorPtr& beta, const TensorPtr& running_mean,
                       const TensorPtr& running_var, float momentum, float eps,
                       bool training, bool update_running, Tape* tape);

// input [N,D_in], weight [D_out,D_in], bias [D_out] or null.
TensorPtr linear(const TensorPtr& input, const TensorPtr& weight,
                 const TensorPtr& bias, Tape* tape);

TensorPtr relu(const TensorPtr& input, Tape* tape);
TensorPtr sigmoid(const TensorPtr& input, Tape* tape);

// [N,C,H,W] -> [N,C], mean over the spatial axes.
TensorPtr global_avg_pool2d(const TensorPtr& input, Tape* tape);

TensorPtr add(const TensorPtr& a, const TensorPtr& b, Tape* tape);

// Same numel, new shape; data is copied.
TensorPtr reshape(const TensorPtr& input, std::vector<int> shape, Tape* tape);

// Mean of squared elementwise differences -> scalar [1].
TensorPtr mse_loss(const TensorPtr& prediction, const TensorPtr& target,
                   Tape* tape);

// Sum of all elements -> scalar [1].
TensorPtr sum_all(const TensorPtr& input, Tape* tape);

}  // namespace scarceops::nn
