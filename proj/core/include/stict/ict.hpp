#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stict/ops.hpp"

namespace stict {

/// Spatial interpolation scheme: LCS partner (SI), random in-window partner in feature
/// space (RI-feature), or random in-window partner applied to the RGB frame (RI-rgb).
enum class MixScheme : std::uint8_t { Spatial, RandomFeature, RandomRgb };

const char* scheme_name(MixScheme s);
MixScheme parse_scheme(const std::string& s);

/// Per-pixel recipe for spatial interpolation.
struct MixPlan {
  int batch = 0;
  int height = 0;
  int width = 0;
  int window = 3;  // d, odd
  MixScheme scheme = MixScheme::Spatial;
  /// Raster index into the d x d window centred on each pixel, per (n, y, x).
  std::vector<int> offset;
  /// Interpolation coefficient lambda_s in [0, 1], per (n, y, x).
  std::vector<double> lambda;

  /// Flat spatial index (y * W + x) of each pixel's partner, per (n, y, x).
  std::vector<int> partner_indices() const;

  /// lambda as an N x 1 x H x W tensor.
  template <typename T>
  Tensor<T> lambda_map() const;

  /// Throws ValidationError on out-of-window, centre, or out-of-bounds partners, or lambda outside [0, 1].
  void validate() const;
};

/// Local Correlation Shuffle: each pixel's partner is the in-bounds, non-centre pixel of its
/// d x d window with minimum correlation F(p) . F(p'). Ties go to the smallest raster offset.
/// lambda is drawn i.i.d. uniform [0, 1] per pixel after all partners are chosen.
template <typename T>
MixPlan lcs_plan(const Tensor<T>& feature, int window, std::mt19937_64& rng);

/// Uniformly random in-window partner (the random-interpolation ablations).
MixPlan random_plan(int batch, int height, int width, int window, MixScheme scheme, std::mt19937_64& rng);

/// out(p) = feature(partner(p)) over all channels.
template <typename T>
Tensor<T> apply_shuffle(const Tensor<T>& feature, const MixPlan& plan);
template <typename T>
Var<T> apply_shuffle(Var<T> feature, const MixPlan& plan);

/// lambda * feature + (1 - lambda) * shuffled, lambda N x 1 x H x W broadcast over channels.
template <typename T>
Tensor<T> mix(const Tensor<T>& feature, const Tensor<T>& shuffled, const Tensor<T>& lambda);
template <typename T>
Var<T> mix(Var<T> feature, Var<T> shuffled, const Tensor<T>& lambda);

/// Throws unless flow is N x 2 x H x W, finite, and spatially matches `frame`.
template <typename T>
void validate_flow(const Tensor<T>& flow, const Tensor<T>& frame);

/// (x^{t-k}, x^t, x^{t+k}) with flows from the middle frame to its neighbours.
template <typename T>
struct FrameTriplet {
  Tensor<T> prev;
  Tensor<T> current;
  Tensor<T> next;
  Tensor<T> flow_bwd;  // F_{t -> t-k}
  Tensor<T> flow_fwd;  // F_{t -> t+k}
  double lambda_t = 0.5;
  int k = 1;

  void validate() const;
};

/// lambda_t * warp(pred_prev, F_{t->t-k}) + (1 - lambda_t) * warp(pred_next, F_{t->t+k}).
template <typename T>
Tensor<T> temporal_target(const Tensor<T>& pred_prev, const Tensor<T>& pred_next, const Tensor<T>& flow_bwd,
                          const Tensor<T>& flow_fwd, double lambda_t);
template <typename T>
Tensor<T> temporal_target(const Tensor<T>& pred_prev, const Tensor<T>& pred_next, const FrameTriplet<T>& triplet);

}  // namespace stict
