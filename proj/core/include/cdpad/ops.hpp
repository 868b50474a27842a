#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "cdpad/error.hpp"
#include "cdpad/tensor.hpp"

namespace cdpad {

/// Spatial tensors are NHWC; a rank-3 tensor is treated as a single-sample
/// batch. Gradient conventions: grad_input outputs are assigned, parameter
/// gradients (weights/bias/scale/shift) are accumulated so a step can sum
/// contributions before the optimizer consumes them.

struct Nhwc {
  int n, h, w, c;
  bool batched;
};

template <class T>
inline Nhwc as_nhwc(const TensorT<T>& t) {
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
  fail(ErrorCode::ShapeMismatch,
       "expected rank-3 or rank-4 spatial tensor, got " + shape_string(t.shape));
}

inline std::vector<int> nhwc_shape(const Nhwc& d, int channels) {
  if (d.batched) return {d.n, d.h, d.w, channels};
  return {d.h, d.w, channels};
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

inline int conv_out_dim(int dim, int kernel, int stride, int padding) {
  return (dim + 2 * padding - kernel) / stride + 1;
}

/// 2-d convolution, weights (k,k,Cin,Cout), bias (Cout).
template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weights,
                  const TensorT<T>& bias, int stride, int padding) {
  require(stride >= 1 && padding >= 0, ErrorCode::InvalidArgument,
          "conv2d requires stride >= 1 and padding >= 0");
  require(weights.rank() == 4, ErrorCode::ShapeMismatch,
          "conv2d weights must be (k,k,Cin,Cout)");
  const Nhwc d = as_nhwc(input);
  const int k = weights.dim(0);
  const int cin = weights.dim(2);
  const int cout = weights.dim(3);
  require(weights.dim(1) == k, ErrorCode::ShapeMismatch,
          "conv2d kernel must be square");
  require(d.c == cin, ErrorCode::ShapeMismatch,
          "conv2d input channels " + std::to_string(d.c) +
              " do not match kernel Cin " + std::to_string(cin));
  require(bias.rank() == 1 && bias.dim(0) == cout, ErrorCode::ShapeMismatch,
          "conv2d bias must be (Cout)");
  const int oh = conv_out_dim(d.h, k, stride, padding);
  const int ow = conv_out_dim(d.w, k, stride, padding);
  require(oh >= 1 && ow >= 1, ErrorCode::ShapeMismatch,
          "conv2d output would be empty");

  Nhwc od = d;
  od.h = oh;
  od.w = ow;
  TensorT<T> out(nhwc_shape(od, cout));
  const T* in = input.data.data();
  const T* w = weights.data.data();
  const T* b = bias.data.data();
  T* o = out.data.data();

  for (int n = 0; n < d.n; ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T* orow = o + ((static_cast<std::int64_t>(n) * oh + oy) * ow + ox) * cout;
        for (int co = 0; co < cout; ++co) orow[co] = b[co];
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= d.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= d.w) continue;
            const T* irow =
                in + ((static_cast<std::int64_t>(n) * d.h + iy) * d.w + ix) * cin;
            const T* wrow = w + (static_cast<std::int64_t>(ky) * k + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const T v = irow[ci];
              const T* wc = wrow + static_cast<std::int64_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) orow[co] += v * wc[co];
            }
          }
        }
      }
    }
  }
  return out;
}

template <class T>
void conv2d_backward(const TensorT<T>& input, const TensorT<T>& weights,
                     int stride, int padding, const TensorT<T>& grad_out,
                     std::type_identity_t<TensorT<T>>* grad_input,
                     std::type_identity_t<TensorT<T>>* grad_weights,
                     std::type_identity_t<TensorT<T>>* grad_bias) {
  const Nhwc d = as_nhwc(input);
  const int k = weights.dim(0);
  const int cin = weights.dim(2);
  const int cout = weights.dim(3);
  const int oh = conv_out_dim(d.h, k, stride, padding);
  const int ow = conv_out_dim(d.w, k, stride, padding);
  require(as_nhwc(grad_out).c == cout && as_nhwc(grad_out).h == oh &&
              as_nhwc(grad_out).w == ow,
          ErrorCode::ShapeMismatch, "conv2d_backward grad_out shape mismatch");

  if (grad_input) {
    grad_input->shape = input.shape;
    grad_input->data.assign(input.data.size(), T(0));
  }
  if (grad_weights) {
    require(grad_weights->same_shape(weights), ErrorCode::ShapeMismatch,
            "conv2d_backward grad_weights shape mismatch");
  }
  if (grad_bias) {
    require(grad_bias->numel() == cout, ErrorCode::ShapeMismatch,
            "conv2d_backward grad_bias shape mismatch");
  }

  const T* in = input.data.data();
  const T* w = weights.data.data();
  const T* g = grad_out.data.data();
  T* gi = grad_input ? grad_input->data.data() : nullptr;
  T* gw = grad_weights ? grad_weights->data.data() : nullptr;
  T* gb = grad_bias ? grad_bias->data.data() : nullptr;

  for (int n = 0; n < d.n; ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const T* grow =
            g + ((static_cast<std::int64_t>(n) * oh + oy) * ow + ox) * cout;
        if (gb) {
          for (int co = 0; co < cout; ++co) gb[co] += grow[co];
        }
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= d.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= d.w) continue;
            const std::int64_t ibase =
                ((static_cast<std::int64_t>(n) * d.h + iy) * d.w + ix) * cin;
            const std::int64_t wbase =
                (static_cast<std::int64_t>(ky) * k + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const T* wc = w + wbase + static_cast<std::int64_t>(ci) * cout;
              if (gw) {
                T* gwc = gw + wbase + static_cast<std::int64_t>(ci) * cout;
                const T v = in[ibase + ci];
                for (int co = 0; co < cout; ++co) gwc[co] += v * grow[co];
              }
              if (gi) {
                T acc = T(0);
                for (int co = 0; co < cout; ++co) acc += wc[co] * grow[co];
                gi[ibase + ci] += acc;
              }
            }
          }
        }
      }
    }
  }
}

inline std::int64_t conv2d_param_count(int kernel, int cin, int cout) {
  return static_cast<std::int64_t>(kernel) * kernel * cin * cout + cout;
}

// ---------------------------------------------------------------------------
// max pooling, ceil mode
// ---------------------------------------------------------------------------

inline int pool_out_dim_ceil(int dim, int window, int stride) {
  if (dim <= window) return 1;
  return (dim - window + stride - 1) / stride + 1;
}

/// Ceil-mode max pooling; window cells past the border are ignored.
/// argmax (if given) records the flat input index feeding each output cell.
template <class T>
TensorT<T> maxpool2d_ceil(const TensorT<T>& input, int window = 2,
                          int stride = 2,
                          std::vector<std::int64_t>* argmax = nullptr) {
  const Nhwc d = as_nhwc(input);
  require(input.all_finite(), ErrorCode::InvalidArgument,
          "maxpool2d_ceil requires finite input");
  const int oh = pool_out_dim_ceil(d.h, window, stride);
  const int ow = pool_out_dim_ceil(d.w, window, stride);
  Nhwc od = d;
  od.h = oh;
  od.w = ow;
  TensorT<T> out(nhwc_shape(od, d.c));
  if (argmax) argmax->assign(out.data.size(), -1);

  const T* in = input.data.data();
  T* o = out.data.data();
  for (int n = 0; n < d.n; ++n) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const std::int64_t obase =
            ((static_cast<std::int64_t>(n) * oh + oy) * ow + ox) * d.c;
        for (int c = 0; c < d.c; ++c) {
          T best = T(0);
          std::int64_t best_idx = -1;
          for (int ky = 0; ky < window; ++ky) {
            const int iy = oy * stride + ky;
            if (iy >= d.h) break;
            for (int kx = 0; kx < window; ++kx) {
              const int ix = ox * stride + kx;
              if (ix >= d.w) break;
              const std::int64_t idx =
                  ((static_cast<std::int64_t>(n) * d.h + iy) * d.w + ix) * d.c + c;
              if (best_idx < 0 || in[idx] > best) {
                best = in[idx];
                best_idx = idx;
              }
            }
          }
          o[obase + c] = best;
          if (argmax) (*argmax)[static_cast<std::size_t>(obase + c)] = best_idx;
        }
      }
    }
  }
  return out;
}

template <class T>
TensorT<T> maxpool2d_ceil_backward(const std::vector<std::int64_t>& argmax,
                                   const std::vector<int>& input_shape,
                                   const TensorT<T>& grad_out) {
  require(argmax.size() == grad_out.data.size(), ErrorCode::ShapeMismatch,
          "maxpool backward argmax/grad size mismatch");
  TensorT<T> grad_in(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= 0) grad_in.data[static_cast<std::size_t>(argmax[i])] += grad_out.data[i];
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

/// Affine map; input (n) or (N,n), weights (n,m), bias (m).
template <class T>
TensorT<T> linear(const TensorT<T>& input, const TensorT<T>& weights,
                  const TensorT<T>& bias) {
  require(weights.rank() == 2, ErrorCode::ShapeMismatch,
          "linear weights must be (n,m)");
  const int n_in = weights.dim(0);
  const int m = weights.dim(1);
  require(bias.rank() == 1 && bias.dim(0) == m, ErrorCode::ShapeMismatch,
          "linear bias must be (m)");
  const bool batched = input.rank() == 2;
  require(batched || input.rank() == 1, ErrorCode::ShapeMismatch,
          "linear input must be rank 1 or 2");
  const int batch = batched ? input.dim(0) : 1;
  require(input.dim(batched ? 1 : 0) == n_in, ErrorCode::ShapeMismatch,
          "linear input length " + std::to_string(input.dim(batched ? 1 : 0)) +
              " does not match weight rows " + std::to_string(n_in));

  TensorT<T> out(batched ? std::vector<int>{batch, m} : std::vector<int>{m});
  const T* x = input.data.data();
  const T* w = weights.data.data();
  T* o = out.data.data();
  for (int bidx = 0; bidx < batch; ++bidx) {
    T* orow = o + static_cast<std::int64_t>(bidx) * m;
    for (int j = 0; j < m; ++j) orow[j] = bias.data[static_cast<std::size_t>(j)];
    const T* xrow = x + static_cast<std::int64_t>(bidx) * n_in;
    for (int i = 0; i < n_in; ++i) {
      const T v = xrow[i];
      const T* wrow = w + static_cast<std::int64_t>(i) * m;
      for (int j = 0; j < m; ++j) orow[j] += v * wrow[j];
    }
  }
  return out;
}

template <class T>
void linear_backward(const TensorT<T>& input, const TensorT<T>& weights,
                     const TensorT<T>& grad_out,
                     std::type_identity_t<TensorT<T>>* grad_input,
                     std::type_identity_t<TensorT<T>>* grad_weights,
                     std::type_identity_t<TensorT<T>>* grad_bias) {
  const int n_in = weights.dim(0);
  const int m = weights.dim(1);
  const bool batched = input.rank() == 2;
  const int batch = batched ? input.dim(0) : 1;
  require(grad_out.numel() == static_cast<std::int64_t>(batch) * m,
          ErrorCode::ShapeMismatch, "linear_backward grad_out mismatch");

  if (grad_input) {
    grad_input->shape = input.shape;
    grad_input->data.assign(input.data.size(), T(0));
  }
  const T* x = input.data.data();
  const T* w = weights.data.data();
  const T* g = grad_out.data.data();
  for (int bidx = 0; bidx < batch; ++bidx) {
    const T* grow = g + static_cast<std::int64_t>(bidx) * m;
    const T* xrow = x + static_cast<std::int64_t>(bidx) * n_in;
    if (grad_bias) {
      for (int j = 0; j < m; ++j) grad_bias->data[static_cast<std::size_t>(j)] += grow[j];
    }
    for (int i = 0; i < n_in; ++i) {
      const T* wrow = w + static_cast<std::int64_t>(i) * m;
      if (grad_weights) {
        T* gwrow = grad_weights->data.data() + static_cast<std::int64_t>(i) * m;
        const T v = xrow[i];
        for (int j = 0; j < m; ++j) gwrow[j] += v * grow[j];
      }
      if (grad_input) {
        T acc = T(0);
        for (int j = 0; j < m; ++j) acc += wrow[j] * grow[j];
        grad_input->data[static_cast<std::size_t>(
            static_cast<std::int64_t>(bidx) * n_in + i)] += acc;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

enum class BatchNormMode { Train, Eval };

template <class T>
struct BatchNormCache {
  TensorT<T> normalized;       // x-hat
  std::vector<T> inv_std;      // per channel
  std::int64_t count = 0;      // N*H*W
  BatchNormMode mode = BatchNormMode::Train;
};

/// Per-channel batch normalization over N*H*W. Train mode uses batch
/// statistics and updates the running buffers with momentum; eval mode
/// normalizes with the running statistics.
template <class T>
TensorT<T> batchnorm2d(const TensorT<T>& input, const TensorT<T>& scale,
                       const TensorT<T>& shift, BatchNormMode mode,
                       TensorT<T>& running_mean, TensorT<T>& running_var,
                       T epsilon = T(1e-5), T momentum = T(0.1),
                       BatchNormCache<T>* cache = nullptr) {
  const Nhwc d = as_nhwc(input);
  require(scale.numel() == d.c && shift.numel() == d.c &&
              running_mean.numel() == d.c && running_var.numel() == d.c,
          ErrorCode::ShapeMismatch, "batchnorm2d per-channel parameter mismatch");
  const std::int64_t m = static_cast<std::int64_t>(d.n) * d.h * d.w;

  std::vector<T> mean(static_cast<std::size_t>(d.c), T(0));
  std::vector<T> var(static_cast<std::size_t>(d.c), T(0));
  if (mode == BatchNormMode::Train) {
    const T* in = input.data.data();
    for (std::int64_t p = 0; p < m; ++p) {
      const T* row = in + p * d.c;
      for (int c = 0; c < d.c; ++c) mean[static_cast<std::size_t>(c)] += row[c];
    }
    for (int c = 0; c < d.c; ++c) mean[static_cast<std::size_t>(c)] /= static_cast<T>(m);
    for (std::int64_t p = 0; p < m; ++p) {
      const T* row = in + p * d.c;
      for (int c = 0; c < d.c; ++c) {
        const T dv = row[c] - mean[static_cast<std::size_t>(c)];
        var[static_cast<std::size_t>(c)] += dv * dv;
      }
    }
    for (int c = 0; c < d.c; ++c) var[static_cast<std::size_t>(c)] /= static_cast<T>(m);
    for (int c = 0; c < d.c; ++c) {
      running_mean.data[static_cast<std::size_t>(c)] =
          (T(1) - momentum) * running_mean.data[static_cast<std::size_t>(c)] +
          momentum * mean[static_cast<std::size_t>(c)];
      running_var.data[static_cast<std::size_t>(c)] =
          (T(1) - momentum) * running_var.data[static_cast<std::size_t>(c)] +
          momentum * var[static_cast<std::size_t>(c)];
    }
  } else {
    for (int c = 0; c < d.c; ++c) {
      mean[static_cast<std::size_t>(c)] = running_mean.data[static_cast<std::size_t>(c)];
      var[static_cast<std::size_t>(c)] = running_var.data[static_cast<std::size_t>(c)];
    }
  }

  std::vector<T> inv_std(static_cast<std::size_t>(d.c));
  for (int c = 0; c < d.c; ++c) {
    inv_std[static_cast<std::size_t>(c)] =
        T(1) / std::sqrt(var[static_cast<std::size_t>(c)] + epsilon);
  }

  TensorT<T> out(input.shape);
  TensorT<T> normalized(input.shape);
  const T* in = input.data.data();
  T* o = out.data.data();
  T* nh = normalized.data.data();
  for (std::int64_t p = 0; p < m; ++p) {
    const T* row = in + p * d.c;
    T* orow = o + p * d.c;
    T* nrow = nh + p * d.c;
    for (int c = 0; c < d.c; ++c) {
      const std::size_t cc = static_cast<std::size_t>(c);
      const T xhat = (row[c] - mean[cc]) * inv_std[cc];
      nrow[c] = xhat;
      orow[c] = scale.data[cc] * xhat + shift.data[cc];
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->count = m;
    cache->mode = mode;
  }
  return out;
}

template <class T>
void batchnorm2d_backward(const BatchNormCache<T>& cache, const TensorT<T>& scale,
                          const TensorT<T>& grad_out,
                          std::type_identity_t<TensorT<T>>* grad_input,
                          std::type_identity_t<TensorT<T>>* grad_scale,
                          std::type_identity_t<TensorT<T>>* grad_shift) {
  const Nhwc d = as_nhwc(cache.normalized);
  const std::int64_t m = cache.count;
  const T* g = grad_out.data.data();
  const T* nh = cache.normalized.data.data();

  std::vector<T> sum_g(static_cast<std::size_t>(d.c), T(0));
  std::vector<T> sum_gx(static_cast<std::size_t>(d.c), T(0));
  for (std::int64_t p = 0; p < m; ++p) {
    const T* grow = g + p * d.c;
    const T* nrow = nh + p * d.c;
    for (int c = 0; c < d.c; ++c) {
      sum_g[static_cast<std::size_t>(c)] += grow[c];
      sum_gx[static_cast<std::size_t>(c)] += grow[c] * nrow[c];
    }
  }
  if (grad_scale) {
    for (int c = 0; c < d.c; ++c)
      grad_scale->data[static_cast<std::size_t>(c)] += sum_gx[static_cast<std::size_t>(c)];
  }
  if (grad_shift) {
    for (int c = 0; c < d.c; ++c)
      grad_shift->data[static_cast<std::size_t>(c)] += sum_g[static_cast<std::size_t>(c)];
  }
  if (!grad_input) return;

  grad_input->shape = cache.normalized.shape;
  grad_input->data.assign(cache.normalized.data.size(), T(0));
  T* gi = grad_input->data.data();
  const T inv_m = T(1) / static_cast<T>(m);
  for (std::int64_t p = 0; p < m; ++p) {
    const T* grow = g + p * d.c;
    const T* nrow = nh + p * d.c;
    T* girow = gi + p * d.c;
    for (int c = 0; c < d.c; ++c) {
      const std::size_t cc = static_cast<std::size_t>(c);
      const T a = scale.data[cc] * cache.inv_std[cc];
      if (cache.mode == BatchNormMode::Train) {
        girow[c] = a * (grow[c] - sum_g[cc] * inv_m - nrow[c] * sum_gx[cc] * inv_m);
      } else {
        girow[c] = a * grow[c];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// pointwise activations
// ---------------------------------------------------------------------------

enum class Pointwise { Relu, Sigmoid };

template <class T>
TensorT<T> pointwise(const TensorT<T>& input, Pointwise kind) {
  TensorT<T> out;
  out.shape = input.shape;
  out.data.resize(input.data.size());
  if (kind == Pointwise::Relu) {
    for (std::size_t i = 0; i < input.data.size(); ++i)
      out.data[i] = input.data[i] > T(0) ? input.data[i] : T(0);
  } else {
    for (std::size_t i = 0; i < input.data.size(); ++i)
      out.data[i] = T(1) / (T(1) + std::exp(-input.data[i]));
  }
  return out;
}

/// Backward from the op's own output (both activations admit it).
template <class T>
TensorT<T> pointwise_backward(const TensorT<T>& output, Pointwise kind,
                              const TensorT<T>& grad_out) {
  require(output.same_shape(grad_out), ErrorCode::ShapeMismatch,
          "pointwise_backward shape mismatch");
  TensorT<T> grad_in;
  grad_in.shape = output.shape;
  grad_in.data.resize(output.data.size());
  if (kind == Pointwise::Relu) {
    for (std::size_t i = 0; i < output.data.size(); ++i)
      grad_in.data[i] = output.data[i] > T(0) ? grad_out.data[i] : T(0);
  } else {
    for (std::size_t i = 0; i < output.data.size(); ++i) {
      const T y = output.data[i];
      grad_in.data[i] = grad_out.data[i] * y * (T(1) - y);
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// channel concatenation
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& inputs) {
  require(!inputs.empty(), ErrorCode::InvalidArgument,
          "concat_channels needs at least one input");
  const Nhwc d0 = as_nhwc(*inputs[0]);
  int total_c = 0;
  for (const TensorT<T>* t : inputs) {
    const Nhwc d = as_nhwc(*t);
    require(d.n == d0.n && d.h == d0.h && d.w == d0.w, ErrorCode::ShapeMismatch,
            "concat_channels spatial dims differ");
    total_c += d.c;
  }
  TensorT<T> out(nhwc_shape(d0, total_c));
  const std::int64_t positions = static_cast<std::int64_t>(d0.n) * d0.h * d0.w;
  T* o = out.data.data();
  for (std::int64_t p = 0; p < positions; ++p) {
    T* orow = o + p * total_c;
    int offset = 0;
    for (const TensorT<T>* t : inputs) {
      const int c = as_nhwc(*t).c;
      const T* row = t->data.data() + p * c;
      std::copy(row, row + c, orow + offset);
      offset += c;
    }
  }
  return out;
}

template <class T>
std::vector<TensorT<T>> concat_channels_backward(
    const TensorT<T>& grad_out, const std::vector<std::vector<int>>& input_shapes) {
  const Nhwc d = as_nhwc(grad_out);
  std::vector<TensorT<T>> grads;
  grads.reserve(input_shapes.size());
  int total_c = 0;
  for (const auto& s : input_shapes) {
    grads.emplace_back(s);
    total_c += as_nhwc(grads.back()).c;
  }
  require(total_c == d.c, ErrorCode::ShapeMismatch,
          "concat_channels_backward channel total mismatch");
  const std::int64_t positions = static_cast<std::int64_t>(d.n) * d.h * d.w;
  const T* g = grad_out.data.data();
  for (std::int64_t p = 0; p < positions; ++p) {
    const T* grow = g + p * d.c;
    int offset = 0;
    for (auto& gi : grads) {
      const int c = as_nhwc(gi).c;
      std::copy(grow + offset, grow + offset + c, gi.data.data() + p * c);
      offset += c;
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// max-feature-map
// ---------------------------------------------------------------------------

/// Splits the trailing dimension in half and takes the elementwise max;
/// halves channel count for NHWC tensors and length for vectors. The winner
/// mask routes the gradient (ties go to the first half).
template <class T>
TensorT<T> mfm(const TensorT<T>& input, std::vector<std::uint8_t>* winners = nullptr) {
  require(input.rank() >= 1, ErrorCode::ShapeMismatch, "mfm needs rank >= 1");
  const int last = input.dim(input.rank() - 1);
  require(last % 2 == 0, ErrorCode::ShapeMismatch,
          "mfm requires an even trailing dimension, got " + std::to_string(last));
  const int half = last / 2;
  std::vector<int> out_shape = input.shape;
  out_shape.back() = half;
  TensorT<T> out(out_shape);
  const std::int64_t rows = input.numel() / last;
  if (winners) winners->assign(out.data.size(), 0);

  const T* in = input.data.data();
  T* o = out.data.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* a = in + r * last;
    const T* b = a + half;
    T* orow = o + r * half;
    for (int c = 0; c < half; ++c) {
      if (b[c] > a[c]) {
        orow[c] = b[c];
        if (winners) (*winners)[static_cast<std::size_t>(r * half + c)] = 1;
      } else {
        orow[c] = a[c];
      }
    }
  }
  return out;
}

template <class T>
TensorT<T> mfm_backward(const std::vector<std::uint8_t>& winners,
                        const std::vector<int>& input_shape,
                        const TensorT<T>& grad_out) {
  TensorT<T> grad_in(input_shape);
  const int last = input_shape.back();
  const int half = last / 2;
  require(static_cast<std::int64_t>(winners.size()) == grad_out.numel(),
          ErrorCode::ShapeMismatch, "mfm_backward winner mask mismatch");
  const std::int64_t rows = grad_in.numel() / last;
  for (std::int64_t r = 0; r < rows; ++r) {
    for (int c = 0; c < half; ++c) {
      const std::size_t oi = static_cast<std::size_t>(r * half + c);
      const std::int64_t target = r * last + c + (winners[oi] ? half : 0);
      grad_in.data[static_cast<std::size_t>(target)] = grad_out.data[oi];
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// binary cross entropy
// ---------------------------------------------------------------------------

template <class T>
inline T bce_clamp(T p) {
  const T lo = T(1e-7);
  const T hi = T(1) - T(1e-7);
  return p < lo ? lo : (p > hi ? hi : p);
}

/// Supports soft labels in [0,1]; predictions clamped for numeric safety.
template <class T>
T bce_loss(T prediction, T label) {
  const T p = bce_clamp(prediction);
  return -(label * std::log(p) + (T(1) - label) * std::log(T(1) - p));
}

/// Mean BCE over matching prediction/label tensors.
template <class T>
T bce_loss_batch(const TensorT<T>& predictions, const TensorT<T>& labels) {
  require(predictions.numel() == labels.numel(), ErrorCode::ShapeMismatch,
          "bce_loss_batch size mismatch");
  require(predictions.numel() > 0, ErrorCode::InvalidArgument,
          "bce_loss_batch on empty batch");
  T total = T(0);
  for (std::int64_t i = 0; i < predictions.numel(); ++i)
    total += bce_loss(predictions.data[static_cast<std::size_t>(i)],
                      labels.data[static_cast<std::size_t>(i)]);
  return total / static_cast<T>(predictions.numel());
}

/// d(mean BCE)/d predictions.
template <class T>
TensorT<T> bce_loss_backward(const TensorT<T>& predictions, const TensorT<T>& labels) {
  TensorT<T> grad;
  grad.shape = predictions.shape;
  grad.data.resize(predictions.data.size());
  const T inv_n = T(1) / static_cast<T>(predictions.numel());
  for (std::size_t i = 0; i < predictions.data.size(); ++i) {
    const T p = bce_clamp(predictions.data[i]);
    const T y = labels.data[i];
    grad.data[i] = (p - y) / (p * (T(1) - p)) * inv_n;
  }
  return grad;
}

}  // namespace cdpad
