#pragma once

// Brute-force reference implementations. Each one is written from the definition,
// without sharing code or loop structure with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "stict/tensor.hpp"

namespace stict::oracle {

/// Direct convolution with zero padding: out = b + sum over (c, ky, kx) of in * K.
inline Tensor<double> conv2d(const Tensor<double>& in, const Tensor<double>& k, const Tensor<double>* bias, int stride,
                             int pad) {
  const int n = in.dim(0), cin = in.dim(1), h = in.dim(2), w = in.dim(3);
  const int cout = k.dim(0), ks = k.dim(2);
  const int oh = (h + 2 * pad - ks) / stride + 1, ow = (w + 2 * pad - ks) / stride + 1;
  Tensor<double> out(Shape{n, cout, oh, ow});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < cout; ++o)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          double s = bias != nullptr ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
          for (int c = 0; c < cin; ++c)
            for (int ky = 0; ky < ks; ++ky)
              for (int kx = 0; kx < ks; ++kx) {
                const int iy = y * stride - pad + ky, ix = x * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                s += in.at(b, c, iy, ix) * k.at(o, c, ky, kx);
              }
          out.at(b, o, y, x) = s;
        }
  return out;
}

/// Bilinear sample as a tent-kernel sum over every pixel, at a coordinate clamped to the grid.
inline double tent_sample(const Tensor<double>& map, int b, int c, double sx, double sy) {
  const int h = map.dim(2), w = map.dim(3);
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  double s = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double wx = std::max(0.0, 1.0 - std::abs(sx - x));
      const double wy = std::max(0.0, 1.0 - std::abs(sy - y));
      s += wx * wy * map.at(b, c, y, x);
    }
  return s;
}

/// Backward warp: out(p) = map(p + flow(p)).
inline Tensor<double> warp(const Tensor<double>& map, const Tensor<double>& flow) {
  Tensor<double> out(map.shape());
  for (int b = 0; b < map.dim(0); ++b)
    for (int c = 0; c < map.dim(1); ++c)
      for (int y = 0; y < map.dim(2); ++y)
        for (int x = 0; x < map.dim(3); ++x)
          out.at(b, c, y, x) = tent_sample(map, b, c, x + flow.at(b, 0, y, x), y + flow.at(b, 1, y, x));
  return out;
}

/// Half-pixel-centre bilinear resize.
inline Tensor<double> resize_bilinear(const Tensor<double>& in, int oh, int ow) {
  Tensor<double> out(Shape{in.dim(0), in.dim(1), oh, ow});
  const double ry = static_cast<double>(in.dim(2)) / oh, rx = static_cast<double>(in.dim(3)) / ow;
  for (int b = 0; b < in.dim(0); ++b)
    for (int c = 0; c < in.dim(1); ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) out.at(b, c, y, x) = tent_sample(in, b, c, (x + 0.5) * rx - 0.5, (y + 0.5) * ry - 0.5);
  return out;
}

/// Least-correlated in-window partner, found by scanning the whole image in raster order.
/// Returns flat window offsets per (n, y, x).
inline std::vector<int> lcs_offsets(const Tensor<double>& f, int window) {
  const int n = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3), r = window / 2;
  std::vector<int> out;
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double best = std::numeric_limits<double>::infinity();
        int best_q = -1;
        for (int qy = 0; qy < h; ++qy)
          for (int qx = 0; qx < w; ++qx) {
            if (std::max(std::abs(qy - y), std::abs(qx - x)) > r || (qy == y && qx == x)) continue;
            double dot = 0;
            for (int ch = 0; ch < c; ++ch) dot += f.at(b, ch, y, x) * f.at(b, ch, qy, qx);
            if (dot < best) {
              best = dot;
              best_q = (qy - y + r) * window + (qx - x + r);
            }
          }
        out.push_back(best_q);
      }
  return out;
}

/// lambda * f + (1 - lambda) * f(partner), partner given as window offsets.
inline Tensor<double> shuffle_mix(const Tensor<double>& f, const std::vector<int>& offsets,
                                  const std::vector<double>& lambda, int window) {
  const int r = window / 2;
  Tensor<double> out(f.shape());
  std::size_t i = 0;
  for (int b = 0; b < f.dim(0); ++b)
    for (int y = 0; y < f.dim(2); ++y)
      for (int x = 0; x < f.dim(3); ++x, ++i) {
        const int py = y + offsets[i] / window - r, px = x + offsets[i] % window - r;
        for (int c = 0; c < f.dim(1); ++c)
          out.at(b, c, y, x) = lambda[i] * f.at(b, c, y, x) + (1 - lambda[i]) * f.at(b, c, py, px);
      }
  return out;
}

inline double clamped_log(double v) { return std::log(std::clamp(v, 1e-7, 1 - 1e-7)); }

/// Position-aware weighted BCE + weighted IoU, averaged over the batch.
inline double ppa_loss(const Tensor<double>& p, const Tensor<double>& g, int window, double factor) {
  const int n = p.dim(0), c = p.dim(1), h = p.dim(2), w = p.dim(3), r = window / 2;
  double total = 0;
  for (int b = 0; b < n; ++b) {
    double wsum = 0, wbce = 0, inter = 0, uni = 0;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double box = 0;
          int cnt = 0;
          for (int yy = y - r; yy <= y + r; ++yy)
            for (int xx = x - r; xx <= x + r; ++xx)
              if (yy >= 0 && yy < h && xx >= 0 && xx < w) {
                box += g.at(b, ch, yy, xx);
                ++cnt;
              }
          const double gv = g.at(b, ch, y, x), pv = p.at(b, ch, y, x);
          const double wt = 1 + factor * std::abs(box / cnt - gv);
          wsum += wt;
          wbce -= wt * (gv * clamped_log(pv) + (1 - gv) * clamped_log(1 - pv));
          inter += wt * pv * gv;
          uni += wt * (pv + gv - pv * gv);
        }
    total += wbce / wsum + 1 - inter / uni;
  }
  return total / n;
}

struct Counts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Counts count(const Tensor<float>& pred, const Tensor<float>& gt, double thr) {
  Counts k;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool pos = pred[i] >= thr, truth = gt[i] > 0.5f;
    if (pos && truth) ++k.tp;
    if (pos && !truth) ++k.fp;
    if (!pos && truth) ++k.fn;
    if (!pos && !truth) ++k.tn;
  }
  return k;
}

struct Scores {
  double mae = 0, fbeta = 0, iou = 0;
  std::optional<double> ber;  // empty for single-class frames
};

inline Scores scores(const Tensor<float>& pred, const Tensor<float>& gt, double thr, double beta2) {
  Scores s;
  for (std::size_t i = 0; i < pred.size(); ++i) s.mae += std::abs(static_cast<double>(pred[i]) - gt[i]);
  s.mae /= static_cast<double>(pred.size());
  const Counts k = count(pred, gt, thr);
  const double tp = k.tp, fp = k.fp, tn = k.tn, fn = k.fn;
  const double precision = tp + fp > 0 ? tp / (tp + fp) : 0;
  const double recall = tp + fn > 0 ? tp / (tp + fn) : 0;
  s.fbeta = precision + recall > 0 ? (1 + beta2) * precision * recall / (beta2 * precision + recall) : 0;
  s.iou = tp + fp + fn > 0 ? tp / (tp + fp + fn) : 0;
  if (tp + fn > 0 && tn + fp > 0) s.ber = 100 * (0.5 * fn / (tp + fn) + 0.5 * fp / (tn + fp));
  return s;
}

}  // namespace stict::oracle
