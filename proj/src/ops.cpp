#include "scarceops/nn/ops.hpp"

#include <cmath>
#include <cstddef>

namespace scarceops::nn {

namespace {

inline size_t idx4(int n, int c, int h, int w, int C, int H, int W) {
  return ((static_cast<size_t>(n) * C + c) * H + h) * W + w;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

void require_4d(const TensorPtr& t, const char* what) {
  require(t && t->ndim() == 4, std::string(what) + " must be 4-D, got " +
                                   (t ? shape_str(t->shape) : "null"));
}

void record(Tape* tape, const char* name, std::vector<TensorPtr> inputs,
            TensorPtr output, std::function<void()> fn) {
  if (!tape) return;
  tape->record(TapeOp{name, std::move(inputs), std::move(output), std::move(fn)});
}

}  // namespace

TensorPtr conv2d(const TensorPtr& input, const TensorPtr& kernel,
                 const TensorPtr& bias, int stride, int padding, Tape* tape) {
  require_4d(input, "conv2d input");
  require_4d(kernel, "conv2d kernel");
  const int N = input->dim(0), C = input->dim(1), H = input->dim(2),
            W = input->dim(3);
  const int F = kernel->dim(0), KC = kernel->dim(1), KH = kernel->dim(2),
            KW = kernel->dim(3);
  require(KC == C, "conv2d channel mismatch: input C=" + std::to_string(C) +
                       " vs kernel C=" + std::to_string(KC));
  require(stride >= 1, "conv2d stride must be >= 1");
  require(padding >= 0, "conv2d padding must be >= 0");
  require(KH <= H + 2 * padding && KW <= W + 2 * padding,
          "conv2d kernel " + shape_str(kernel->shape) +
              " exceeds padded input " + shape_str(input->shape));
  if (bias)
    require(bias->ndim() == 1 && bias->dim(0) == F,
            "conv2d bias must be [F=" + std::to_string(F) + "], got " +
                shape_str(bias->shape));
  const int HO = (H + 2 * padding - KH) / stride + 1;
  const int WO = (W + 2 * padding - KW) / stride + 1;

  auto out = Tensor::zeros({N, F, HO, WO});
  const float* x = input->data.data();
  const float* k = kernel->data.data();
  float* y = out->data.data();
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f) {
      const float b = bias ? bias->data[f] : 0.0f;
      for (int oh = 0; oh < HO; ++oh)
        for (int ow = 0; ow < WO; ++ow) {
          float acc = b;
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < KH; ++i) {
              const int h = oh * stride - padding + i;
              if (h < 0 || h >= H) continue;
              for (int j = 0; j < KW; ++j) {
                const int w = ow * stride - padding + j;
                if (w < 0 || w >= W) continue;
                acc += x[idx4(n, c, h, w, C, H, W)] *
                       k[idx4(f, c, i, j, C, KH, KW)];
              }
            }
          y[idx4(n, f, oh, ow, F, HO, WO)] = acc;
        }
    }
  out->check_finite("conv2d output");

  std::vector<TensorPtr> ins{input, kernel};
  if (bias) ins.push_back(bias);
  record(tape, "conv2d", ins, out,
         [input, kernel, bias, out, stride, padding, N, C, H, W, F, KH, KW, HO,
          WO]() {
           input->ensure_grad();
           kernel->ensure_grad();
           if (bias) bias->ensure_grad();
           const float* x = input->data.data();
           const float* k = kernel->data.data();
           const float* gy = out->grad.data();
           float* gx = input->grad.data();
           float* gk = kernel->grad.data();
           for (int n = 0; n < N; ++n)
             for (int f = 0; f < F; ++f)
               for (int oh = 0; oh < HO; ++oh)
                 for (int ow = 0; ow < WO; ++ow) {
                   const float g = gy[idx4(n, f, oh, ow, F, HO, WO)];
                   if (bias) bias->grad[f] += g;
                   for (int c = 0; c < C; ++c)
                     for (int i = 0; i < KH; ++i) {
                       const int h = oh * stride - padding + i;
                       if (h < 0 || h >= H) continue;
                       for (int j = 0; j < KW; ++j) {
                         const int w = ow * stride - padding + j;
                         if (w < 0 || w >= W) continue;
                         gx[idx4(n, c, h, w, C, H, W)] +=
                             g * k[idx4(f, c, i, j, C, KH, KW)];
                         gk[idx4(f, c, i, j, C, KH, KW)] +=
                             g * x[idx4(n, c, h, w, C, H, W)];
                       }
                     }
                 }
         });
  return out;
}

TensorPtr conv_transpose2d(const TensorPtr& input, const TensorPtr& kernel,
                           const TensorPtr& bias, int stride, int padding,
                           Tape* tape) {
  require_4d(input, "conv_transpose2d input");
  require_4d(kernel, "conv_transpose2d kernel");
  const int N = input->dim(0), C = input->dim(1), H = input->dim(2),
            W = input->dim(3);
  const int KC = kernel->dim(0), F = kernel->dim(1), KH = kernel->dim(2),
            KW = kernel->dim(3);
  require(KC == C,
          "conv_transpose2d channel mismatch: input C=" + std::to_string(C) +
              " vs kernel C=" + std::to_string(KC));
  require(stride >= 1, "conv_transpose2d stride must be >= 1");
  require(padding >= 0 && padding < KH && padding < KW,
          "conv_transpose2d requires 0 <= padding < kernel size");
  if (bias)
    require(bias->ndim() == 1 && bias->dim(0) == F,
            "conv_transpose2d bias must be [F=" + std::to_string(F) +
                "], got " + shape_str(bias->shape));
  const int HO = (H - 1) * stride - 2 * padding + KH;
  const int WO = (W - 1) * stride - 2 * padding + KW;
  require(HO > 0 && WO > 0, "conv_transpose2d output would be empty");

  auto out = Tensor::zeros({N, F, HO, WO});
  const float* x = input->data.data();
  const float* k = kernel->data.data();
  float* y = out->data.data();
  if (bias) {
    for (int n = 0; n < N; ++n)
      for (int f = 0; f < F; ++f) {
        float* row = y + idx4(n, f, 0, 0, F, HO, WO);
        for (int i = 0; i < HO * WO; ++i) row[i] = bias->data[f];
      }
  }
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const float v = x[idx4(n, c, h, w, C, H, W)];
          for (int f = 0; f < F; ++f)
            for (int i = 0; i < KH; ++i) {
              const int oh = h * stride - padding + i;
              if (oh < 0 || oh >= HO) continue;
              for (int j = 0; j < KW; ++j) {
                const int ow = w * stride - padding + j;
                if (ow < 0 || ow >= WO) continue;
                y[idx4(n, f, oh, ow, F, HO, WO)] +=
                    v * k[idx4(c, f, i, j, F, KH, KW)];
              }
            }
        }
  out->check_finite("conv_transpose2d output");

  std::vector<TensorPtr> ins{input, kernel};
  if (bias) ins.push_back(bias);
  record(tape, "conv_transpose2d", ins, out,
         [input, kernel, bias, out, stride, padding, N, C, H, W, F, KH, KW, HO,
          WO]() {
           input->ensure_grad();
           kernel->ensure_grad();
           if (bias) bias->ensure_grad();
           const float* x = input->data.data();
           const float* k = kernel->data.data();
           const float* gy = out->grad.data();
           float* gx = input->grad.data();
           float* gk = kernel->grad.data();
           if (bias) {
             for (int n = 0; n < N; ++n)
               for (int f = 0; f < F; ++f) {
                 const float* row = gy + idx4(n, f, 0, 0, F, HO, WO);
                 for (int i = 0; i < HO * WO; ++i) bias->grad[f] += row[i];
               }
           }
           for (int n = 0; n < N; ++n)
             for (int c = 0; c < C; ++c)
               for (int h = 0; h < H; ++h)
                 for (int w = 0; w < W; ++w) {
                   const float v = x[idx4(n, c, h, w, C, H, W)];
                   float gacc = 0.0f;
                   for (int f = 0; f < F; ++f)
                     for (int i = 0; i < KH; ++i) {
                       const int oh = h * stride - padding + i;
                       if (oh < 0 || oh >= HO) continue;
                       for (int j = 0; j < KW; ++j) {
                         const int ow = w * stride - padding + j;
                         if (ow < 0 || ow >= WO) continue;
                         const float g = gy[idx4(n, f, oh, ow, F, HO, WO)];
                         gacc += g * k[idx4(c, f, i, j, F, KH, KW)];
                         gk[idx4(c, f, i, j, F, KH, KW)] += g * v;
                       }
                     }
                   gx[idx4(n, c, h, w, C, H, W)] += gacc;
                 }
         });
  return out;
}

TensorPtr batch_norm2d(const TensorPtr& input, const TensorPtr& gamma,
                       const TensorPtr& beta, const TensorPtr& running_mean,
                       const TensorPtr& running_var, float momentum, float eps,
                       bool training, bool update_running, Tape* tape) {
  require_4d(input, "batch_norm2d input");
  const int N = input->dim(0), C = input->dim(1), H = input->dim(2),
            W = input->dim(3);
  require(gamma->numel() == static_cast<size_t>(C) &&
              beta->numel() == static_cast<size_t>(C),
          "batch_norm2d gamma/beta must have length C=" + std::to_string(C));
  require(running_mean->numel() == static_cast<size_t>(C) &&
              running_var->numel() == static_cast<size_t>(C),
          "batch_norm2d running stats must have length C=" + std::to_string(C));
  require(eps > 0.0f, "batch_norm2d eps must be positive");
  const size_t per_channel = static_cast<size_t>(N) * H * W;

  std::vector<float> mean(C), inv_std(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w)
            s += input->data[idx4(n, c, h, w, C, H, W)];
      const double mu = s / static_cast<double>(per_channel);
      double sq = 0.0;
      for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const double d = input->data[idx4(n, c, h, w, C, H, W)] - mu;
            sq += d * d;
          }
      const double var = sq / static_cast<double>(per_channel);
      mean[c] = static_cast<float>(mu);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
      if (update_running) {
        running_mean->data[c] =
            (1.0f - momentum) * running_mean->data[c] + momentum * mean[c];
        running_var->data[c] = (1.0f - momentum) * running_var->data[c] +
                               momentum * static_cast<float>(var);
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean->data[c];
      inv_std[c] = 1.0f / std::sqrt(running_var->data[c] + eps);
    }
  }

  auto out = Tensor::zeros(input->shape);
  auto xhat = std::make_shared<std::vector<float>>(input->numel());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const size_t i = idx4(n, c, h, w, C, H, W);
          const float xh = (input->data[i] - mean[c]) * inv_std[c];
          (*xhat)[i] = xh;
          out->data[i] = gamma->data[c] * xh + beta->data[c];
        }
  out->check_finite("batch_norm2d output");

  record(tape, "batch_norm2d", {input, gamma, beta}, out,
         [input, gamma, beta, out, xhat, inv_std, training, N, C, H, W,
          per_channel]() {
           input->ensure_grad();
           gamma->ensure_grad();
           beta->ensure_grad();
           const float* gy = out->grad.data();
           for (int c = 0; c < C; ++c) {
             double sum_gy = 0.0, sum_gy_xh = 0.0;
             for (int n = 0; n < N; ++n)
               for (int h = 0; h < H; ++h)
                 for (int w = 0; w < W; ++w) {
                   const size_t i = idx4(n, c, h, w, C, H, W);
                   sum_gy += gy[i];
                   sum_gy_xh += gy[i] * (*xhat)[i];
                 }
             gamma->grad[c] += static_cast<float>(sum_gy_xh);
             beta->grad[c] += static_cast<float>(sum_gy);
             const float m = static_cast<float>(per_channel);
             const float mean_gy = static_cast<float>(sum_gy) / m;
             const float mean_gy_xh = static_cast<float>(sum_gy_xh) / m;
             for (int n = 0; n < N; ++n)
               for (int h = 0; h < H; ++h)
                 for (int w = 0; w < W; ++w) {
                   const size_t i = idx4(n, c, h, w, C, H, W);
                   if (training) {
                     input->grad[i] +=
                         gamma->data[c] * inv_std[c] *
                         (gy[i] - mean_gy - (*xhat)[i] * mean_gy_xh);
                   } else {
                     input->grad[i] += gamma->data[c] * inv_std[c] * gy[i];
                   }
                 }
           }
         });
  return out;
}

TensorPtr linear(const TensorPtr& input, const TensorPtr& weight,
                 const TensorPtr& bias, Tape* tape) {
  require(input->ndim() == 2, "linear input must be [N,D_in], got " +
                                  shape_str(input->shape));
  require(weight->ndim() == 2, "linear weight must be [D_out,D_in], got " +
                                   shape_str(weight->shape));
  const int N = input->dim(0), DI = input->dim(1);
  const int DO = weight->dim(0), WDI = weight->dim(1);
  require(DI == WDI, "linear inner dimension mismatch: input D_in=" +
                         std::to_string(DI) + " vs weight D_in=" +
                         std::to_string(WDI));
  if (bias)
    require(bias->numel() == static_cast<size_t>(DO),
            "linear bias must be [D_out=" + std::to_string(DO) + "]");

  auto out = Tensor::zeros({N, DO});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < DO; ++o) {
      float acc = bias ? bias->data[o] : 0.0f;
      const float* xrow = input->data.data() + static_cast<size_t>(n) * DI;
      const float* wrow = weight->data.data() + static_cast<size_t>(o) * DI;
      for (int i = 0; i < DI; ++i) acc += xrow[i] * wrow[i];
      out->data[static_cast<size_t>(n) * DO + o] = acc;
    }
  out->check_finite("linear output");

  std::vector<TensorPtr> ins{input, weight};
  if (bias) ins.push_back(bias);
  record(tape, "linear", ins, out, [input, weight, bias, out, N, DI, DO]() {
    input->ensure_grad();
    weight->ensure_grad();
    if (bias) bias->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < DO; ++o) {
        const float g = out->grad[static_cast<size_t>(n) * DO + o];
        if (bias) bias->grad[o] += g;
        const float* xrow = input->data.data() + static_cast<size_t>(n) * DI;
        const float* wrow = weight->data.data() + static_cast<size_t>(o) * DI;
        float* gxrow = input->grad.data() + static_cast<size_t>(n) * DI;
        float* gwrow = weight->grad.data() + static_cast<size_t>(o) * DI;
        for (int i = 0; i < DI; ++i) {
          gxrow[i] += g * wrow[i];
          gwrow[i] += g * xrow[i];
        }
      }
  });
  return out;
}

TensorPtr relu(const TensorPtr& input, Tape* tape) {
  auto out = Tensor::zeros(input->shape);
  for (size_t i = 0; i < input->numel(); ++i)
    out->data[i] = input->data[i] > 0.0f ? input->data[i] : 0.0f;
  out->check_finite("relu output");
  record(tape, "relu", {input}, out, [input, out]() {
    input->ensure_grad();
    for (size_t i = 0; i < input->numel(); ++i)
      if (input->data[i] > 0.0f) input->grad[i] += out->grad[i];
  });
  return out;
}

TensorPtr sigmoid(const TensorPtr& input, Tape* tape) {
  auto out = Tensor::zeros(input->shape);
  for (size_t i = 0; i < input->numel(); ++i)
    out->data[i] = 1.0f / (1.0f + std::exp(-input->data[i]));
  out->check_finite("sigmoid output");
  record(tape, "sigmoid", {input}, out, [input, out]() {
    input->ensure_grad();
    for (size_t i = 0; i < input->numel(); ++i) {
      const float s = out->data[i];
      input->grad[i] += out->grad[i] * s * (1.0f - s);
    }
  });
  return out;
}

TensorPtr global_avg_pool2d(const TensorPtr& input, Tape* tape) {
  require_4d(input, "global_avg_pool2d input");
  const int N = input->dim(0), C = input->dim(1), H = input->dim(2),
            W = input->dim(3);
  const float inv = 1.0f / static_cast<float>(H * W);
  auto out = Tensor::zeros({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) s += input->data[idx4(n, c, h, w, C, H, W)];
      out->data[static_cast<size_t>(n) * C + c] =
          static_cast<float>(s) * inv;
    }
  out->check_finite("global_avg_pool2d output");
  record(tape, "global_avg_pool2d", {input}, out, [input, out, N, C, H, W,
                                                   inv]() {
    input->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const float g = out->grad[static_cast<size_t>(n) * C + c] * inv;
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w)
            input->grad[idx4(n, c, h, w, C, H, W)] += g;
      }
  });
  return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  require(a->shape == b->shape, "add shape mismatch: " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape));
  auto out = Tensor::zeros(a->shape);
  for (size_t i = 0; i < a->numel(); ++i)
    out->data[i] = a->data[i] + b->data[i];
  out->check_finite("add output");
  record(tape, "add", {a, b}, out, [a, b, out]() {
    a->ensure_grad();
    b->ensure_grad();
    for (size_t i = 0; i < out->numel(); ++i) {
      a->grad[i] += out->grad[i];
      b->grad[i] += out->grad[i];
    }
  });
  return out;
}

TensorPtr reshape(const TensorPtr& input, std::vector<int> shape, Tape* tape) {
  require(Tensor::numel_of(shape) == input->numel(),
          "reshape to " + shape_str(shape) + " changes numel of " +
              shape_str(input->shape));
  auto out = Tensor::zeros(shape);
  out->data = input->data;
  record(tape, "reshape", {input}, out, [input, out]() {
    input->ensure_grad();
    for (size_t i = 0; i < input->numel(); ++i)
      input->grad[i] += out->grad[i];
  });
  return out;
}

TensorPtr mse_loss(const TensorPtr& prediction, const TensorPtr& target,
                   Tape* tape) {
  require(prediction->shape == target->shape,
          "mse_loss shape mismatch: " + shape_str(prediction->shape) + " vs " +
              shape_str(target->shape));
  const size_t n = prediction->numel();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(prediction->data[i]) -
                     static_cast<double>(target->data[i]);
    acc += d * d;
  }
  auto out = Tensor::from({1}, {static_cast<float>(acc / n)});
  out->check_finite("mse_loss output");
  record(tape, "mse_loss", {prediction, target}, out,
         [prediction, target, out, n]() {
           prediction->ensure_grad();
           target->ensure_grad();
           const float g = out->grad[0] * 2.0f / static_cast<float>(n);
           for (size_t i = 0; i < n; ++i) {
             const float d = prediction->data[i] - target->data[i];
             prediction->grad[i] += g * d;
             target->grad[i] -= g * d;
           }
         });
  return out;
}

TensorPtr sum_all(const TensorPtr& input, Tape* tape) {
  double acc = 0.0;
  for (float v : input->data) acc += v;
  auto out = Tensor::from({1}, {static_cast<float>(acc)});
  out->check_finite("sum_all output");
  record(tape, "sum_all", {input}, out, [input, out]() {
    input->ensure_grad();
    for (size_t i = 0; i < input->numel(); ++i)
      input->grad[i] += out->grad[0];
  });
  return out;
}

}  // namespace scarceops::nn
