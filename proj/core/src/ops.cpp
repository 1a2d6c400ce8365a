#include "stict/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace stict {
namespace {

enum class Broadcast { Same, Channel };

template <typename T>
Broadcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (a.rank() == 4 && b.rank() == 4 && b.dim(1) == 1 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
      a.dim(3) == b.dim(3)) {
    return Broadcast::Channel;
  }
  throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                   shape_string(b.shape()));
}

template <typename T>
T apply_binary(BinaryKind kind, T x, T y) {
  switch (kind) {
    case BinaryKind::Add: return x + y;
    case BinaryKind::Subtract: return x - y;
    case BinaryKind::Multiply: return x * y;
  }
  return T{0};
}

template <typename T>
T clamp_log_input(T x) {
  const T lo = static_cast<T>(kLogEpsilon);
  const T hi = T{1} - static_cast<T>(kLogEpsilon);
  return std::min(std::max(x, lo), hi);
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// Bilinear source coordinate for align-corners-false resizing.
struct Tap {
  int i0;
  int i1;
  double frac;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
  }
  return taps;
}

std::vector<int> nearest_taps(int in, int out) {
  std::vector<int> idx(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    idx[static_cast<std::size_t>(o)] =
        std::min(static_cast<int>((static_cast<long long>(o) * in) / out), in - 1);
  }
  return idx;
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int batch, cin, h, w, cout, k, stride, pad, oh, ow;
  int patch() const { return cin * k * k; }
  int pixels() const { return oh * ow; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int padding) {
  require_rank4(input, "conv2d input");
  require_rank4(kernel, "conv2d kernel");
  if (kernel.dim(2) != kernel.dim(3) || kernel.dim(2) % 2 == 0) {
    throw ShapeError("conv2d: kernel spatial extent must be square and odd, got " + shape_string(kernel.shape()));
  }
  if (input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: channel mismatch, input " + shape_string(input.shape()) + " kernel " +
                     shape_string(kernel.shape()));
  }
  if (stride <= 0 || padding < 0) throw ShapeError("conv2d: stride must be positive and padding non-negative");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = kernel.dim(0);
  g.k = kernel.dim(2);
  g.stride = stride;
  g.pad = padding;
  const int nh = g.h + 2 * padding - g.k;
  const int nw = g.w + 2 * padding - g.k;
  if (nh < 0 || nw < 0) {
    throw ShapeError("conv2d: non-positive output extent for input " + shape_string(input.shape()));
  }
  g.oh = nh / stride + 1;
  g.ow = nw / stride + 1;
  return g;
}

// col is (cin*k*k) x (oh*ow), row-major.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const int p = g.pixels();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * p;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, T{0});
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const int p = g.pixels();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * p;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = img + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          const T* src = row + oy * g.ow;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

std::vector<int> normalize_axes(std::vector<int> axes, int rank) {
  if (axes.empty()) {
    axes.resize(static_cast<std::size_t>(rank));
    std::iota(axes.begin(), axes.end(), 0);
  }
  for (int& a : axes) {
    if (a < 0) a += rank;
    if (a < 0 || a >= rank) throw ShapeError("reduce: axis out of range for rank " + std::to_string(rank));
  }
  std::sort(axes.begin(), axes.end());
  if (std::adjacent_find(axes.begin(), axes.end()) != axes.end()) throw ShapeError("reduce: repeated axis");
  return axes;
}

// Maps every input flat index to its output flat index.
std::vector<std::size_t> reduce_index_map(const Shape& in, const std::vector<int>& axes, Shape& out_shape) {
  std::vector<bool> reduced(in.size(), false);
  for (int a : axes) reduced[static_cast<std::size_t>(a)] = true;
  out_shape.clear();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!reduced[i]) out_shape.push_back(in[i]);
  }
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> map(n);
  std::vector<int> idx(in.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < in.size(); ++d) {
      if (!reduced[d]) o = o * static_cast<std::size_t>(in[d]) + static_cast<std::size_t>(idx[d]);
    }
    map[flat] = o;
    for (int d = static_cast<int>(in.size()) - 1; d >= 0; --d) {
      if (++idx[static_cast<std::size_t>(d)] < in[static_cast<std::size_t>(d)]) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
  return map;
}

struct WarpTap {
  int x0, x1, y0, y1;
  double fx, fy;
};

template <typename T>
WarpTap warp_tap(int x, int y, T u, T v, int w, int h) {
  double sx = static_cast<double>(x) + static_cast<double>(u);
  double sy = static_cast<double>(y) + static_cast<double>(v);
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  WarpTap t{};
  t.x0 = static_cast<int>(std::floor(sx));
  t.y0 = static_cast<int>(std::floor(sy));
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.fx = sx - t.x0;
  t.fy = sy - t.y0;
  return t;
}

template <typename T>
void check_warp_shapes(const Tensor<T>& map, const Tensor<T>& flow) {
  require_rank4(map, "warp map");
  require_rank4(flow, "warp flow");
  if (flow.dim(0) != map.dim(0) || flow.dim(1) != 2 || flow.dim(2) != map.dim(2) || flow.dim(3) != map.dim(3)) {
    throw ShapeError("warp: flow " + shape_string(flow.shape()) + " does not match map " +
                     shape_string(map.shape()));
  }
  if (!flow.all_finite()) throw NumericalError("warp: non-finite flow");
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor kernels
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> elementwise(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast bc = broadcast_kind(a, b, "elementwise");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  if (bc == Broadcast::Same) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply_binary(kind, x[i], y[i]);
    return out;
  }
  const std::size_t n = static_cast<std::size_t>(a.dim(0));
  const std::size_t c = static_cast<std::size_t>(a.dim(1));
  const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) o[base + p] = apply_binary(kind, x[base + p], y[i * hw + p]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(BinaryKind kind, const Tensor<T>& a, T b) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply_binary(kind, x[i], b);
  return out;
}

template <typename T>
Tensor<T> elementwise(UnaryKind kind, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  switch (kind) {
    case UnaryKind::Sigmoid:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = sigmoid_scalar(x[i]);
      break;
    case UnaryKind::Exp:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(x[i]);
      break;
    case UnaryKind::Log:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(clamp_log_input(x[i]));
      break;
    case UnaryKind::Relu:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > T{0} ? x[i] : T{0};
      break;
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias, int stride,
                 int padding) {
  const ConvGeometry g = conv_geometry(input, kernel, stride, padding);
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias " + shape_string(bias->shape()) + " does not match " +
                     std::to_string(g.cout) + " output channels");
  }
  Tensor<T> out(Shape{g.batch, g.cout, g.oh, g.ow});
  std::vector<T> col(static_cast<std::size_t>(g.patch()) * g.pixels());
  ConstMatMap<T> wmat(kernel.data().data(), g.cout, g.patch());
  ConstMatMap<T> cmat(col.data(), g.patch(), g.pixels());
  const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
  const std::size_t out_stride = static_cast<std::size_t>(g.cout) * g.pixels();
  for (int n = 0; n < g.batch; ++n) {
    im2col(input.data().data() + n * in_stride, g, col.data());
    MatMap<T> omat(out.data().data() + n * out_stride, g.cout, g.pixels());
    omat.noalias() = wmat * cmat;
    if (bias != nullptr) {
      for (int c = 0; c < g.cout; ++c) omat.row(c).array() += (*bias)[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

template <typename T>
Tensor<T> resize(const Tensor<T>& input, int out_h, int out_w, ResampleMode mode) {
  require_rank4(input, "resample");
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resample: non-positive output extent");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (out_h == h && out_w == w) return input;
  Tensor<T> out(Shape{n, c, out_h, out_w});
  if (mode == ResampleMode::Nearest) {
    const auto ys = nearest_taps(h, out_h);
    const auto xs = nearest_taps(w, out_w);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < out_h; ++y)
          for (int x = 0; x < out_w; ++x)
            out.at(i, ch, y, x) = input.at(i, ch, ys[static_cast<std::size_t>(y)], xs[static_cast<std::size_t>(x)]);
    return out;
  }
  const auto ys = bilinear_taps(h, out_h);
  const auto xs = bilinear_taps(w, out_w);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < out_h; ++y) {
        const Tap& ty = ys[static_cast<std::size_t>(y)];
        const T fy = static_cast<T>(ty.frac);
        for (int x = 0; x < out_w; ++x) {
          const Tap& tx = xs[static_cast<std::size_t>(x)];
          const T fx = static_cast<T>(tx.frac);
          const T top = (T{1} - fx) * input.at(i, ch, ty.i0, tx.i0) + fx * input.at(i, ch, ty.i0, tx.i1);
          const T bot = (T{1} - fx) * input.at(i, ch, ty.i1, tx.i0) + fx * input.at(i, ch, ty.i1, tx.i1);
          out.at(i, ch, y, x) = (T{1} - fy) * top + fy * bot;
        }
      }
  return out;
}

namespace {
int scaled_extent(int in, Rational f) {
  if (f.num <= 0 || f.den <= 0) throw ShapeError("resample: factor must be positive");
  const long long v = (static_cast<long long>(in) * f.num) / f.den;
  return static_cast<int>(std::max<long long>(1, v));
}
}  // namespace

template <typename T>
Tensor<T> resample(const Tensor<T>& input, Rational factor, ResampleMode mode) {
  require_rank4(input, "resample");
  return resize(input, scaled_extent(input.dim(2), factor), scaled_extent(input.dim(3), factor), mode);
}

template <typename T>
Tensor<T> reduce(const Tensor<T>& input, ReduceKind kind, std::vector<int> axes) {
  axes = normalize_axes(std::move(axes), input.rank());
  Shape out_shape;
  const auto map = reduce_index_map(input.shape(), axes, out_shape);
  Tensor<T> out(out_shape);
  auto o = out.data();
  auto x = input.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[map[i]] += x[i];
  if (kind == ReduceKind::Mean) {
    const T count = static_cast<T>(input.size() / out.size());
    for (auto& v : o) v /= count;
  }
  return out;
}

template <typename T>
Tensor<T> gather_pixels(const Tensor<T>& input, std::span<const int> source) {
  require_rank4(input, "gather_pixels");
  const int n = input.dim(0), c = input.dim(1);
  const std::size_t hw = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  if (source.size() != n * hw) {
    throw ShapeError("gather_pixels: index map has " + std::to_string(source.size()) + " entries, expected " +
                     std::to_string(n * hw));
  }
  Tensor<T> out(input.shape());
  auto o = out.data();
  auto x = input.data();
  for (int i = 0; i < n; ++i) {
    const int* src = source.data() + i * hw;
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        const int s = src[p];
        if (s < 0 || static_cast<std::size_t>(s) >= hw) throw ShapeError("gather_pixels: index out of range");
        o[base + p] = x[base + static_cast<std::size_t>(s)];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> warp(const Tensor<T>& map, const Tensor<T>& flow) {
  check_warp_shapes(map, flow);
  const int n = map.dim(0), c = map.dim(1), h = map.dim(2), w = map.dim(3);
  Tensor<T> out(map.shape());
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const WarpTap t = warp_tap(x, y, flow.at(i, 0, y, x), flow.at(i, 1, y, x), w, h);
        const T fx = static_cast<T>(t.fx), fy = static_cast<T>(t.fy);
        for (int ch = 0; ch < c; ++ch) {
          const T top = (T{1} - fx) * map.at(i, ch, t.y0, t.x0) + fx * map.at(i, ch, t.y0, t.x1);
          const T bot = (T{1} - fx) * map.at(i, ch, t.y1, t.x0) + fx * map.at(i, ch, t.y1, t.x1);
          out.at(i, ch, y, x) = (T{1} - fy) * top + fy * bot;
        }
      }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> elementwise(BinaryKind kind, Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "elementwise");
  Tensor<T> value = elementwise(kind, a.value(), b.value());
  const Broadcast bc = broadcast_kind(a.value(), b.value(), "elementwise");
  return tape.record(std::move(value), {a, b}, [kind, a, b, bc](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(a.id);
    const Tensor<T>& bv = t.value(b.id);
    if (t.requires_grad(a.id)) {
      if (kind == BinaryKind::Multiply) {
        t.accumulate(a.id, elementwise(BinaryKind::Multiply, g, bv));
      } else {
        t.accumulate(a.id, g);
      }
    }
    if (t.requires_grad(b.id)) {
      Tensor<T> gb = g;
      if (kind == BinaryKind::Multiply) gb = elementwise(BinaryKind::Multiply, g, av);
      if (kind == BinaryKind::Subtract) gb = elementwise(BinaryKind::Multiply, g, T{-1});
      if (bc == Broadcast::Channel) gb = reduce(gb, ReduceKind::Sum, {1}).reshaped(bv.shape());
      t.accumulate(b.id, std::move(gb));
    }
  });
}

template <typename T>
Var<T> elementwise(BinaryKind kind, Var<T> a, T b) {
  Tensor<T> value = elementwise(kind, a.value(), b);
  return a.tape->record(std::move(value), {a}, [kind, a, b](Tape<T>& t, const Tensor<T>& g) {
    if (kind == BinaryKind::Multiply) {
      t.accumulate(a.id, elementwise(BinaryKind::Multiply, g, b));
    } else {
      t.accumulate(a.id, g);
    }
  });
}

template <typename T>
Var<T> elementwise(UnaryKind kind, Var<T> a) {
  Tensor<T> value = elementwise(kind, a.value());
  if (a.tape->tracks_branches() && (kind == UnaryKind::Relu || kind == UnaryKind::Log)) {
    const T lo = static_cast<T>(kLogEpsilon), hi = T{1} - lo;
    for (const T x : a.value().data()) {
      if (kind == UnaryKind::Relu) {
        a.tape->note_branch(x > T{0});
      } else {
        a.tape->note_branch(x > lo);
        a.tape->note_branch(x < hi);
      }
    }
  }
  return a.tape->record(std::move(value), {a}, [kind, a](Tape<T>& t, const Tensor<T>& g) {
    const auto x = t.value(a.id).data();
    const auto gd = g.data();
    Tensor<T> ga(g.shape());
    auto o = ga.data();
    switch (kind) {
      case UnaryKind::Sigmoid:
        for (std::size_t i = 0; i < o.size(); ++i) {
          const T s = sigmoid_scalar(x[i]);
          o[i] = gd[i] * s * (T{1} - s);
        }
        break;
      case UnaryKind::Exp:
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = gd[i] * std::exp(x[i]);
        break;
      case UnaryKind::Log: {
        const T lo = static_cast<T>(kLogEpsilon);
        const T hi = T{1} - static_cast<T>(kLogEpsilon);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = (x[i] > lo && x[i] < hi) ? gd[i] / x[i] : T{0};
        break;
      }
      case UnaryKind::Relu:
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > T{0} ? gd[i] : T{0};
        break;
    }
    t.accumulate(a.id, std::move(ga));
  });
}

template <typename T>
Var<T> rsub(T s, Var<T> a) {
  Tensor<T> value(a.shape());
  auto o = value.data();
  auto x = a.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = s - x[i];
  return a.tape->record(std::move(value), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, elementwise(BinaryKind::Multiply, g, T{-1}));
  });
}

template <typename T>
Var<T> pow(Var<T> a, T exponent) {
  Tensor<T> value(a.shape());
  auto o = value.data();
  auto x = a.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::pow(x[i], exponent);
  return a.tape->record(std::move(value), {a}, [a, exponent](Tape<T>& t, const Tensor<T>& g) {
    const auto xv = t.value(a.id).data();
    const auto gd = g.data();
    Tensor<T> ga(g.shape());
    auto out = ga.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gd[i] * exponent * std::pow(xv[i], exponent - T{1});
    t.accumulate(a.id, std::move(ga));
  });
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, std::optional<Var<T>> bias, int stride, int padding) {
  Tape<T>& tape = same_tape(input, kernel, "conv2d");
  if (bias) same_tape(input, *bias, "conv2d");
  Tensor<T> value = conv2d(input.value(), kernel.value(), bias ? &bias->value() : nullptr, stride, padding);
  const int bias_id = bias ? bias->id : -1;
  auto backward = [input, kernel, bias_id, stride, padding](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = t.value(input.id);
    const Tensor<T>& w = t.value(kernel.id);
    const ConvGeometry geo = conv_geometry(x, w, stride, padding);
    const bool need_x = t.requires_grad(input.id);
    const bool need_w = t.requires_grad(kernel.id);
    Tensor<T> gx(x.shape());
    Tensor<T> gw(w.shape());
    std::vector<T> col(static_cast<std::size_t>(geo.patch()) * geo.pixels());
    std::vector<T> dcol(col.size());
    ConstMatMap<T> wmat(w.data().data(), geo.cout, geo.patch());
    MatMap<T> gwmat(gw.data().data(), geo.cout, geo.patch());
    const std::size_t in_stride = static_cast<std::size_t>(geo.cin) * geo.h * geo.w;
    const std::size_t out_stride = static_cast<std::size_t>(geo.cout) * geo.pixels();
    for (int n = 0; n < geo.batch; ++n) {
      ConstMatMap<T> gmat(g.data().data() + n * out_stride, geo.cout, geo.pixels());
      if (need_w) {
        im2col(x.data().data() + n * in_stride, geo, col.data());
        ConstMatMap<T> cmat(col.data(), geo.patch(), geo.pixels());
        gwmat.noalias() += gmat * cmat.transpose();
      }
      if (need_x) {
        MatMap<T> dmat(dcol.data(), geo.patch(), geo.pixels());
        dmat.noalias() = wmat.transpose() * gmat;
        col2im(dcol.data(), geo, gx.data().data() + n * in_stride);
      }
    }
    if (need_x) t.accumulate(input.id, std::move(gx));
    if (need_w) t.accumulate(kernel.id, std::move(gw));
    if (bias_id >= 0 && t.requires_grad(bias_id)) {
      Tensor<T> gb(Shape{geo.cout});
      for (int n = 0; n < geo.batch; ++n)
        for (int c = 0; c < geo.cout; ++c) {
          T s{0};
          const T* row = g.data().data() + n * out_stride + static_cast<std::size_t>(c) * geo.pixels();
          for (int p = 0; p < geo.pixels(); ++p) s += row[p];
          gb[static_cast<std::size_t>(c)] += s;
        }
      t.accumulate(bias_id, std::move(gb));
    }
  };
  if (bias) return tape.record(std::move(value), {input, kernel, *bias}, std::move(backward));
  return tape.record(std::move(value), {input, kernel}, std::move(backward));
}

namespace {

template <typename T>
Tensor<T> resize_backward(const Tensor<T>& g, const Shape& in_shape, ResampleMode mode) {
  Tensor<T> gx(in_shape);
  const int n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
  const int oh = g.dim(2), ow = g.dim(3);
  if (mode == ResampleMode::Nearest) {
    const auto ys = nearest_taps(h, oh);
    const auto xs = nearest_taps(w, ow);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x)
            gx.at(i, ch, ys[static_cast<std::size_t>(y)], xs[static_cast<std::size_t>(x)]) += g.at(i, ch, y, x);
    return gx;
  }
  const auto ys = bilinear_taps(h, oh);
  const auto xs = bilinear_taps(w, ow);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y) {
        const Tap& ty = ys[static_cast<std::size_t>(y)];
        const T fy = static_cast<T>(ty.frac);
        for (int x = 0; x < ow; ++x) {
          const Tap& tx = xs[static_cast<std::size_t>(x)];
          const T fx = static_cast<T>(tx.frac);
          const T v = g.at(i, ch, y, x);
          gx.at(i, ch, ty.i0, tx.i0) += (T{1} - fy) * (T{1} - fx) * v;
          gx.at(i, ch, ty.i0, tx.i1) += (T{1} - fy) * fx * v;
          gx.at(i, ch, ty.i1, tx.i0) += fy * (T{1} - fx) * v;
          gx.at(i, ch, ty.i1, tx.i1) += fy * fx * v;
        }
      }
  return gx;
}

}  // namespace

template <typename T>
Var<T> resize(Var<T> input, int out_h, int out_w, ResampleMode mode) {
  Tensor<T> value = resize(input.value(), out_h, out_w, mode);
  return input.tape->record(std::move(value), {input}, [input, mode](Tape<T>& t, const Tensor<T>& g) {
    const Shape& in_shape = t.value(input.id).shape();
    if (g.shape() == in_shape) {
      t.accumulate(input.id, g);
      return;
    }
    t.accumulate(input.id, resize_backward(g, in_shape, mode));
  });
}

template <typename T>
Var<T> resample(Var<T> input, Rational factor, ResampleMode mode) {
  require_rank4(input.value(), "resample");
  return resize(input, scaled_extent(input.value().dim(2), factor), scaled_extent(input.value().dim(3), factor),
                mode);
}

template <typename T>
Var<T> reduce(Var<T> input, ReduceKind kind, std::vector<int> axes) {
  axes = normalize_axes(std::move(axes), input.value().rank());
  Tensor<T> value = reduce(input.value(), kind, axes);
  return input.tape->record(std::move(value), {input}, [input, kind, axes](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = t.value(input.id);
    Shape out_shape;
    const auto map = reduce_index_map(x.shape(), axes, out_shape);
    Tensor<T> gx(x.shape());
    auto o = gx.data();
    auto gd = g.data();
    const T scale = kind == ReduceKind::Mean ? T{1} / static_cast<T>(x.size() / g.size()) : T{1};
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = gd[map[i]] * scale;
    t.accumulate(input.id, std::move(gx));
  });
}

template <typename T>
Var<T> gather_pixels(Var<T> input, std::vector<int> source) {
  Tensor<T> value = gather_pixels(input.value(), std::span<const int>(source));
  return input.tape->record(std::move(value), {input}, [input, source = std::move(source)](
                                                           Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = t.value(input.id);
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    Tensor<T> gx(x.shape());
    auto o = gx.data();
    auto gd = g.data();
    for (int i = 0; i < n; ++i) {
      const int* src = source.data() + i * hw;
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) o[base + static_cast<std::size_t>(src[p])] += gd[base + p];
      }
    }
    t.accumulate(input.id, std::move(gx));
  });
}

template <typename T>
Var<T> warp(Var<T> map, const Tensor<T>& flow) {
  Tensor<T> value = warp(map.value(), flow);
  return map.tape->record(std::move(value), {map}, [map, flow](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& m = t.value(map.id);
    const int n = m.dim(0), c = m.dim(1), h = m.dim(2), w = m.dim(3);
    Tensor<T> gm(m.shape());
    for (int i = 0; i < n; ++i)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const WarpTap tp = warp_tap(x, y, flow.at(i, 0, y, x), flow.at(i, 1, y, x), w, h);
          const T fx = static_cast<T>(tp.fx), fy = static_cast<T>(tp.fy);
          for (int ch = 0; ch < c; ++ch) {
            const T v = g.at(i, ch, y, x);
            gm.at(i, ch, tp.y0, tp.x0) += (T{1} - fy) * (T{1} - fx) * v;
            gm.at(i, ch, tp.y0, tp.x1) += (T{1} - fy) * fx * v;
            gm.at(i, ch, tp.y1, tp.x0) += fy * (T{1} - fx) * v;
            gm.at(i, ch, tp.y1, tp.x1) += fy * fx * v;
          }
        }
    t.accumulate(map.id, std::move(gm));
  });
}

namespace {

template <typename T>
void check_bn_shapes(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  require_rank4(x, "batch_norm");
  const Shape expect{x.dim(1)};
  if (gamma.shape() != expect || beta.shape() != expect) {
    throw ShapeError("batch_norm: affine parameters must have shape " + shape_string(expect));
  }
}

// Shared backward for y = gamma * xhat + beta given xhat and 1/std per channel.
// When `batch_stats` is set, the mean/variance depend on x and contribute.
template <typename T>
void bn_backward(Tape<T>& t, const Tensor<T>& g, int x_id, int gamma_id, int beta_id, const Tensor<T>& xhat,
                 const std::vector<T>& inv_std, bool batch_stats) {
  const Tensor<T>& gamma = t.value(gamma_id);
  const int n = xhat.dim(0), c = xhat.dim(1);
  const std::size_t hw = static_cast<std::size_t>(xhat.dim(2)) * xhat.dim(3);
  const T count = static_cast<T>(n * hw);
  Tensor<T> ggamma(gamma.shape());
  Tensor<T> gbeta(gamma.shape());
  Tensor<T> gx(xhat.shape());
  for (int ch = 0; ch < c; ++ch) {
    T sum_g{0}, sum_gx{0};
    for (int i = 0; i < n; ++i) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        sum_g += g[base + p];
        sum_gx += g[base + p] * xhat[base + p];
      }
    }
    ggamma[static_cast<std::size_t>(ch)] = sum_gx;
    gbeta[static_cast<std::size_t>(ch)] = sum_g;
    const T scale = gamma[static_cast<std::size_t>(ch)] * inv_std[static_cast<std::size_t>(ch)];
    const T mean_g = sum_g / count;
    const T mean_gx = sum_gx / count;
    for (int i = 0; i < n; ++i) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        gx[base + p] = batch_stats ? scale * (g[base + p] - mean_g - xhat[base + p] * mean_gx) : scale * g[base + p];
      }
    }
  }
  if (t.requires_grad(x_id)) t.accumulate(x_id, std::move(gx));
  if (t.requires_grad(gamma_id)) t.accumulate(gamma_id, std::move(ggamma));
  if (t.requires_grad(beta_id)) t.accumulate(beta_id, std::move(gbeta));
}

template <typename T>
Var<T> bn_apply(Var<T> input, Var<T> gamma, Var<T> beta, const std::vector<T>& mean, const std::vector<T>& var,
                T eps, bool batch_stats) {
  Tape<T>& tape = same_tape(input, gamma, "batch_norm");
  same_tape(input, beta, "batch_norm");
  const Tensor<T>& x = input.value();
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> inv_std(static_cast<std::size_t>(c));
  Tensor<T> xhat(x.shape());
  Tensor<T> y(x.shape());
  for (int ch = 0; ch < c; ++ch) {
    const std::size_t cc = static_cast<std::size_t>(ch);
    inv_std[cc] = T{1} / std::sqrt(var[cc] + eps);
    const T gm = gamma.value()[cc], bt = beta.value()[cc];
    for (int i = 0; i < n; ++i) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        const T xh = (x[base + p] - mean[cc]) * inv_std[cc];
        xhat[base + p] = xh;
        y[base + p] = gm * xh + bt;
      }
    }
  }
  return tape.record(std::move(y), {input, gamma, beta},
                     [x_id = input.id, g_id = gamma.id, b_id = beta.id, xhat = std::move(xhat),
                      inv_std = std::move(inv_std), batch_stats](Tape<T>& t, const Tensor<T>& g) {
                       bn_backward(t, g, x_id, g_id, b_id, xhat, inv_std, batch_stats);
                     });
}

}  // namespace

template <typename T>
Var<T> batch_norm_train(Var<T> input, Var<T> gamma, Var<T> beta, T eps, Tensor<T>* batch_mean,
                        Tensor<T>* batch_var) {
  const Tensor<T>& x = input.value();
  check_bn_shapes(x, gamma.value(), beta.value());
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const T count = static_cast<T>(n * hw);
  std::vector<T> mean(static_cast<std::size_t>(c), T{0});
  std::vector<T> var(static_cast<std::size_t>(c), T{0});
  for (int ch = 0; ch < c; ++ch) {
    const std::size_t cc = static_cast<std::size_t>(ch);
    T s{0};
    for (int i = 0; i < n; ++i) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) s += x[base + p];
    }
    mean[cc] = s / count;
    T v{0};
    for (int i = 0; i < n; ++i) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        const T d = x[base + p] - mean[cc];
        v += d * d;
      }
    }
    var[cc] = v / count;
  }
  if (batch_mean) *batch_mean = Tensor<T>(Shape{c}, mean);
  if (batch_var) *batch_var = Tensor<T>(Shape{c}, var);
  return bn_apply(input, gamma, beta, mean, var, eps, true);
}

template <typename T>
Var<T> batch_norm_fixed(Var<T> input, Var<T> gamma, Var<T> beta, const Tensor<T>& mean, const Tensor<T>& var,
                        T eps) {
  check_bn_shapes(input.value(), gamma.value(), beta.value());
  if (mean.shape() != gamma.shape() || var.shape() != gamma.shape()) {
    throw ShapeError("batch_norm: running statistics shape mismatch");
  }
  return bn_apply(input, gamma, beta, mean.values(), var.values(), eps, false);
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b, "mse");
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const auto x = a.value().data();
  const auto y = b.value().data();
  T s{0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T d = x[i] - y[i];
    s += d * d;
  }
  const T count = static_cast<T>(x.size());
  return tape.record(Tensor<T>::scalar(s / count), {a, b}, [a, b, count](Tape<T>& t, const Tensor<T>& g) {
    const auto xv = t.value(a.id).data();
    const auto yv = t.value(b.id).data();
    const T k = T{2} * g.item() / count;
    Tensor<T> ga(t.value(a.id).shape());
    auto o = ga.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = k * (xv[i] - yv[i]);
    if (t.requires_grad(b.id)) t.accumulate(b.id, elementwise(BinaryKind::Multiply, ga, T{-1}));
    if (t.requires_grad(a.id)) t.accumulate(a.id, std::move(ga));
  });
}

#define STICT_INSTANTIATE_OPS(T)                                                                            \
  template Tensor<T> elementwise(BinaryKind, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> elementwise(BinaryKind, const Tensor<T>&, T);                                          \
  template Tensor<T> elementwise(UnaryKind, const Tensor<T>&);                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int, int);                \
  template Tensor<T> resize(const Tensor<T>&, int, int, ResampleMode);                                      \
  template Tensor<T> resample(const Tensor<T>&, Rational, ResampleMode);                                    \
  template Tensor<T> reduce(const Tensor<T>&, ReduceKind, std::vector<int>);                                \
  template Tensor<T> gather_pixels(const Tensor<T>&, std::span<const int>);                                 \
  template Tensor<T> warp(const Tensor<T>&, const Tensor<T>&);                                              \
  template Var<T> elementwise(BinaryKind, Var<T>, Var<T>);                                                  \
  template Var<T> elementwise(BinaryKind, Var<T>, T);                                                       \
  template Var<T> elementwise(UnaryKind, Var<T>);                                                           \
  template Var<T> rsub(T, Var<T>);                                                                          \
  template Var<T> pow(Var<T>, T);                                                                           \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, int, int);                                  \
  template Var<T> resize(Var<T>, int, int, ResampleMode);                                                   \
  template Var<T> resample(Var<T>, Rational, ResampleMode);                                                 \
  template Var<T> reduce(Var<T>, ReduceKind, std::vector<int>);                                             \
  template Var<T> gather_pixels(Var<T>, std::vector<int>);                                                  \
  template Var<T> warp(Var<T>, const Tensor<T>&);                                                           \
  template Var<T> batch_norm_train(Var<T>, Var<T>, Var<T>, T, Tensor<T>*, Tensor<T>*);                      \
  template Var<T> batch_norm_fixed(Var<T>, Var<T>, Var<T>, const Tensor<T>&, const Tensor<T>&, T);          \
  template Var<T> mse(Var<T>, Var<T>);

STICT_INSTANTIATE_OPS(float)
STICT_INSTANTIATE_OPS(double)

}  // namespace stict
