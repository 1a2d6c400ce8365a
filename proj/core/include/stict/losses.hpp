#pragma once

#include <array>
#include <optional>

#include "stict/sanet.hpp"

namespace stict {

struct LossWeights {
  double beta_max = 1.0;
  int t_max = 10;
  double eta_sic = 1.0;
  double eta_tic = 1.0;
  double eta_sc = 1.0;

  void validate() const;
};

struct LossBreakdown {
  double sup = 0;
  double sic = 0;
  double tic = 0;
  double sc = 0;
  double beta = 0;
  double total = 0;
};

/// Pixel-position-aware loss settings: w = 1 + factor * |boxmean_window(gt) - gt|.
struct PpaOptions {
  int window = 31;
  double factor = 5.0;
};

/// Weight map for the PPA loss; the box mean is taken over the in-bounds part of the window.
template <typename T>
Tensor<T> ppa_weights(const Tensor<T>& gt, const PpaOptions& options);

/// Weighted BCE plus weighted IoU, computed per sample and averaged over the batch:
///   sum(w * bce) / sum(w) + 1 - sum(w * p * g) / sum(w * (p + g - p * g)).
/// Throws ValidationError if gt is not binary.
template <typename T>
Var<T> ppa_loss(Var<T> pred, const Tensor<T>& gt, const PpaOptions& options = {});

/// sum_i 2^-i (L^{d,i} + L^{r,i}) + (L^d + L^r) / 2 over already computed component losses.
template <typename T>
Var<T> weighted_supervised_sum(const std::array<Var<T>, 3>& decoder_scales, Var<T> decoder,
                               const std::array<Var<T>, 3>& refiner_scales, Var<T> refiner);
double weighted_supervised_sum(const std::array<double, 3>& decoder_scales, double decoder,
                               const std::array<double, 3>& refiner_scales, double refiner);

/// PPA loss on all eight maps combined with the deep-supervision weights.
template <typename T>
Var<T> supervised_loss(const ModelOutputs<T>& outputs, const Tensor<T>& gt, const PpaOptions& options = {});

/// Spatial interpolation consistency: mse(student, lambda * teacher + (1 - lambda) * teacher_shuffled).
/// `lambda` may be coarser than the maps (it is nearest-upsampled by an integer factor).
template <typename T>
Var<T> sic_loss(Var<T> student_mix_pred, const Tensor<T>& teacher_pred, const Tensor<T>& teacher_shuffled_pred,
                const Tensor<T>& lambda);

/// Blended teacher target used by sic_loss.
template <typename T>
Tensor<T> sic_target(const Tensor<T>& teacher_pred, const Tensor<T>& teacher_shuffled_pred, const Tensor<T>& lambda);

/// Temporal interpolation consistency: mse(student, target).
template <typename T>
Var<T> tic_loss(Var<T> student_pred, const Tensor<T>& temporal_target);

/// Scale consistency: (1/3) sum_s mse(student_s, mean of the teacher's three maps).
template <typename T>
Var<T> sc_loss(const std::array<Var<T>, 3>& student_scales, const std::array<Tensor<T>, 3>& teacher_scales);

/// Gaussian ramp-up beta(t) = beta_max * exp(-5 (1 - t / t_max)^2), beta_max for t >= t_max.
double ramp(double t, const LossWeights& weights);

/// Assembles the total; throws NumericalError naming the first non-finite term.
LossBreakdown total_loss(double sup, double sic, double tic, double sc, double beta, const LossWeights& weights);

}  // namespace stict
