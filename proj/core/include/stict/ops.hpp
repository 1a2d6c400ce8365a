#pragma once

#include <optional>
#include <span>
#include <vector>

#include "stict/autograd.hpp"

namespace stict {

/// Floor (and 1 - ceiling) applied to logarithm inputs.
inline constexpr double kLogEpsilon = 1e-7;

enum class BinaryKind { Add, Subtract, Multiply };
enum class UnaryKind { Sigmoid, Exp, Log, Relu };
enum class ResampleMode { Nearest, Bilinear };
enum class ReduceKind { Sum, Mean };

struct Rational {
  int num = 1;
  int den = 1;
};

// ---------------------------------------------------------------------------
// Plain tensor kernels (no tape). The differentiable ops below are built on
// these, and other modules use them directly for gradient-free work.
// ---------------------------------------------------------------------------

/// `b` must equal `a` in shape, or be N x 1 x H x W against an N x C x H x W `a`.
template <typename T>
Tensor<T> elementwise(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> elementwise(BinaryKind kind, const Tensor<T>& a, T b);
template <typename T>
Tensor<T> elementwise(UnaryKind kind, const Tensor<T>& a);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias, int stride,
                 int padding);

/// Bilinear mode samples at src = (dst + 0.5) * in / out - 0.5 (align-corners false),
/// negative coordinates clamped to 0 and the upper neighbour clamped to the last index.
/// Example: upsampling the row [0, 1] by 2 gives [0, 0.25, 0.75, 1].
/// Nearest mode takes src = floor(dst * in / out).
template <typename T>
Tensor<T> resize(const Tensor<T>& input, int out_h, int out_w, ResampleMode mode);

/// Output extents are floor(in * factor), at least 1.
template <typename T>
Tensor<T> resample(const Tensor<T>& input, Rational factor, ResampleMode mode);

/// Empty `axes` reduces over every axis and yields a rank-0 tensor.
template <typename T>
Tensor<T> reduce(const Tensor<T>& input, ReduceKind kind, std::vector<int> axes = {});

/// out(n, c, p) = in(n, c, source[n * H * W + p]); `source` holds flat spatial indices.
template <typename T>
Tensor<T> gather_pixels(const Tensor<T>& input, std::span<const int> source);

/// Backward warping: out(p) = bilinear sample of `map` at p + flow(p), with the
/// sample coordinate clamped to the image. flow is N x 2 x H x W, channel 0 = u (x), 1 = v (y).
template <typename T>
Tensor<T> warp(const Tensor<T>& map, const Tensor<T>& flow);

// ---------------------------------------------------------------------------
// Differentiable ops.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> elementwise(BinaryKind kind, Var<T> a, Var<T> b);
template <typename T>
Var<T> elementwise(BinaryKind kind, Var<T> a, T b);
template <typename T>
Var<T> elementwise(UnaryKind kind, Var<T> a);

template <typename T>
Var<T> add(Var<T> a, Var<T> b) { return elementwise(BinaryKind::Add, a, b); }
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) { return elementwise(BinaryKind::Subtract, a, b); }
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) { return elementwise(BinaryKind::Multiply, a, b); }
template <typename T>
Var<T> add(Var<T> a, T b) { return elementwise(BinaryKind::Add, a, b); }
template <typename T>
Var<T> mul(Var<T> a, T b) { return elementwise(BinaryKind::Multiply, a, b); }
template <typename T>
Var<T> sigmoid(Var<T> a) { return elementwise(UnaryKind::Sigmoid, a); }
template <typename T>
Var<T> exp(Var<T> a) { return elementwise(UnaryKind::Exp, a); }
template <typename T>
Var<T> log(Var<T> a) { return elementwise(UnaryKind::Log, a); }
template <typename T>
Var<T> relu(Var<T> a) { return elementwise(UnaryKind::Relu, a); }

/// s - a
template <typename T>
Var<T> rsub(T s, Var<T> a);

template <typename T>
Var<T> pow(Var<T> a, T exponent);

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::optional<Var<T>> bias, int stride, int padding);

template <typename T>
Var<T> resize(Var<T> input, int out_h, int out_w, ResampleMode mode);
template <typename T>
Var<T> resample(Var<T> input, Rational factor, ResampleMode mode);

template <typename T>
Var<T> reduce(Var<T> input, ReduceKind kind, std::vector<int> axes = {});
template <typename T>
Var<T> sum(Var<T> input) { return reduce(input, ReduceKind::Sum); }
template <typename T>
Var<T> mean(Var<T> input) { return reduce(input, ReduceKind::Mean); }

template <typename T>
Var<T> gather_pixels(Var<T> input, std::vector<int> source);

/// Differentiable in `map` only; the flow is data.
template <typename T>
Var<T> warp(Var<T> map, const Tensor<T>& flow);

/// Batch-statistics normalization over (N, H, W) per channel, followed by the
/// affine gamma/beta. Writes the biased batch mean/variance when requested.
template <typename T>
Var<T> batch_norm_train(Var<T> input, Var<T> gamma, Var<T> beta, T eps, Tensor<T>* batch_mean = nullptr,
                        Tensor<T>* batch_var = nullptr);

/// Normalization with fixed statistics.
template <typename T>
Var<T> batch_norm_fixed(Var<T> input, Var<T> gamma, Var<T> beta, const Tensor<T>& mean, const Tensor<T>& var,
                        T eps);

/// Copy of the value with no gradient path.
template <typename T>
Var<T> detach(Var<T> a) {
  return a.tape->constant(a.value());
}

/// Mean squared error over all elements.
template <typename T>
Var<T> mse(Var<T> a, Var<T> b);

}  // namespace stict
