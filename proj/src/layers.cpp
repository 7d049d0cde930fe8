#include "scarceops/nn/layers.hpp"

#include <cmath>

namespace scarceops::nn {

void kaiming_uniform(Tensor& t, int fan_in, Pcg32& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
}

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int stride_, int padding_,
               bool use_bias, Pcg32& rng, const std::string& name)
    : stride(stride_), padding(padding_) {
  weight = Tensor::zeros({out_ch, in_ch, ksize, ksize}, true, name + ".weight");
  kaiming_uniform(*weight, in_ch * ksize * ksize, rng);
  if (use_bias) bias = Tensor::zeros({out_ch}, true, name + ".bias");
}

TensorPtr Conv2d::forward(const TensorPtr& x, const ForwardCtx& ctx) const {
  return conv2d(x, weight, bias, stride, padding, ctx.tape);
}

void Conv2d::collect_params(std::vector<TensorPtr>& out) const {
  out.push_back(weight);
  if (bias) out.push_back(bias);
}

void Conv2d::collect_state(std::vector<TensorPtr>& out) const {
  collect_params(out);
}

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch, int ksize, int stride_,
                                 int padding_, bool use_bias, Pcg32& rng,
                                 const std::string& name)
    : stride(stride_), padding(padding_) {
  weight = Tensor::zeros({in_ch, out_ch, ksize, ksize}, true, name + ".weight");
  kaiming_uniform(*weight, in_ch * ksize * ksize, rng);
  if (use_bias) bias = Tensor::zeros({out_ch}, true, name + ".bias");
}

TensorPtr ConvTranspose2d::forward(const TensorPtr& x,
                                   const ForwardCtx& ctx) const {
  return conv_transpose2d(x, weight, bias, stride, padding, ctx.tape);
}

void ConvTranspose2d::collect_params(std::vector<TensorPtr>& out) const {
  out.push_back(weight);
  if (bias) out.push_back(bias);
}

void ConvTranspose2d::collect_state(std::vector<TensorPtr>& out) const {
  collect_params(out);
}

BatchNorm2d::BatchNorm2d(int channels, const std::string& name) {
  gamma = Tensor::full({channels}, 1.0f, true, name + ".gamma");
  beta = Tensor::zeros({channels}, true, name + ".beta");
  running_mean = Tensor::zeros({channels}, false, name + ".running_mean");
  running_var = Tensor::full({channels}, 1.0f, false, name + ".running_var");
}

TensorPtr BatchNorm2d::forward(const TensorPtr& x,
                               const ForwardCtx& ctx) const {
  return batch_norm2d(x, gamma, beta, running_mean, running_var, momentum, eps,
                      ctx.training, ctx.training && ctx.update_running,
                      ctx.tape);
}

void BatchNorm2d::collect_params(std::vector<TensorPtr>& out) const {
  out.push_back(gamma);
  out.push_back(beta);
}

void BatchNorm2d::collect_state(std::vector<TensorPtr>& out) const {
  out.push_back(gamma);
  out.push_back(beta);
  out.push_back(running_mean);
  out.push_back(running_var);
}

Linear::Linear(int in_dim, int out_dim, bool use_bias, Pcg32& rng,
               const std::string& name) {
  weight = Tensor::zeros({out_dim, in_dim}, true, name + ".weight");
  kaiming_uniform(*weight, in_dim, rng);
  if (use_bias) bias = Tensor::zeros({out_dim}, true, name + ".bias");
}

TensorPtr Linear::forward(const TensorPtr& x, const ForwardCtx& ctx) const {
  return linear(x, weight, bias, ctx.tape);
}

void Linear::collect_params(std::vector<TensorPtr>& out) const {
  out.push_back(weight);
  if (bias) out.push_back(bias);
}

void Linear::collect_state(std::vector<TensorPtr>& out) const {
  collect_params(out);
}

BasicBlock::BasicBlock(int in_ch, int out_ch, int stride, Pcg32& rng,
                       const std::string& name)
    : conv1(in_ch, out_ch, 3, stride, 1, false, rng, name + ".conv1"),
      bn1(out_ch, name + ".bn1"),
      conv2(out_ch, out_ch, 3, 1, 1, false, rng, name + ".conv2"),
      bn2(out_ch, name + ".bn2") {
  if (stride != 1 || in_ch != out_ch) {
    down_conv = std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, 0, false,
                                         rng, name + ".down");
    down_bn = std::make_unique<BatchNorm2d>(out_ch, name + ".down_bn");
  }
}

TensorPtr BasicBlock::forward(const TensorPtr& x, const ForwardCtx& ctx) const {
  auto y = relu(bn1.forward(conv1.forward(x, ctx), ctx), ctx.tape);
  y = bn2.forward(conv2.forward(y, ctx), ctx);
  TensorPtr skip = x;
  if (down_conv) skip = down_bn->forward(down_conv->forward(x, ctx), ctx);
  return relu(add(y, skip, ctx.tape), ctx.tape);
}

void BasicBlock::collect_params(std::vector<TensorPtr>& out) const {
  conv1.collect_params(out);
  bn1.collect_params(out);
  conv2.collect_params(out);
  bn2.collect_params(out);
  if (down_conv) {
    down_conv->collect_params(out);
    down_bn->collect_params(out);
  }
}

void BasicBlock::collect_state(std::vector<TensorPtr>& out) const {
  conv1.collect_state(out);
  bn1.collect_state(out);
  conv2.collect_state(out);
  bn2.collect_state(out);
  if (down_conv) {
    down_conv->collect_state(out);
    down_bn->collect_state(out);
  }
}

}  // namespace scarceops::nn
