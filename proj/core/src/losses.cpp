#include "stict/losses.hpp"

#include <cmath>

namespace stict {

void LossWeights::validate() const {
  if (beta_max < 0 || eta_sic < 0 || eta_tic < 0 || eta_sc < 0) {
    throw ValidationError("loss weights must be non-negative");
  }
  if (t_max <= 0) throw ValidationError("ramp-up length t_max must be positive");
}

namespace {

template <typename T>
void check_binary(const Tensor<T>& gt, const char* what) {
  for (T v : gt.data()) {
    if (v != T{0} && v != T{1}) throw ValidationError(std::string(what) + ": ground truth must be binary (0/1)");
  }
}

// Nearest-upsample an N x 1 x h x w map to N x 1 x H x W when H, W are integer multiples.
template <typename T>
Tensor<T> match_lambda(const Tensor<T>& lambda, const Shape& target) {
  require_rank4(lambda, "lambda");
  if (lambda.shape() == target) return lambda;
  if (lambda.dim(0) != target[0] || lambda.dim(1) != 1 || target[2] % lambda.dim(2) != 0 ||
      target[3] % lambda.dim(3) != 0) {
    throw ShapeError("lambda map " + shape_string(lambda.shape()) + " cannot be matched to " + shape_string(target));
  }
  return resize(lambda, target[2], target[3], ResampleMode::Nearest);
}

}  // namespace

template <typename T>
Tensor<T> ppa_weights(const Tensor<T>& gt, const PpaOptions& options) {
  require_rank4(gt, "ppa_weights");
  if (options.window < 1 || options.window % 2 == 0) throw ValidationError("ppa window must be odd and positive");
  const int n = gt.dim(0), c = gt.dim(1), h = gt.dim(2), w = gt.dim(3);
  const int r = options.window / 2;
  Tensor<T> out(gt.shape());
  // Integral image per plane.
  std::vector<double> integral(static_cast<std::size_t>(h + 1) * (w + 1));
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      std::fill(integral.begin(), integral.end(), 0.0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          integral[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] =
              static_cast<double>(gt.at(i, ch, y, x)) + integral[static_cast<std::size_t>(y) * (w + 1) + x + 1] +
              integral[static_cast<std::size_t>(y + 1) * (w + 1) + x] - integral[static_cast<std::size_t>(y) * (w + 1) + x];
        }
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int y0 = std::max(0, y - r), y1 = std::min(h, y + r + 1);
          const int x0 = std::max(0, x - r), x1 = std::min(w, x + r + 1);
          const double s = integral[static_cast<std::size_t>(y1) * (w + 1) + x1] -
                           integral[static_cast<std::size_t>(y0) * (w + 1) + x1] -
                           integral[static_cast<std::size_t>(y1) * (w + 1) + x0] +
                           integral[static_cast<std::size_t>(y0) * (w + 1) + x0];
          const double mean = s / ((y1 - y0) * (x1 - x0));
          out.at(i, ch, y, x) =
              static_cast<T>(1.0 + options.factor * std::abs(mean - static_cast<double>(gt.at(i, ch, y, x))));
        }
    }
  return out;
}

template <typename T>
Var<T> ppa_loss(Var<T> pred, const Tensor<T>& gt, const PpaOptions& options) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("ppa_loss: prediction " + shape_string(pred.shape()) + " vs ground truth " +
                     shape_string(gt.shape()));
  }
  check_binary(gt, "ppa_loss");
  Tape<T>& tape = *pred.tape;
  const Tensor<T> w = ppa_weights(gt, options);
  const Tensor<T> not_gt = elementwise(BinaryKind::Subtract, Tensor<T>(gt.shape(), T{1}), gt);
  const std::vector<int> per_sample{1, 2, 3};

  // Weighted BCE, per sample.
  Var<T> log_p = log(pred);
  Var<T> log_q = log(rsub(T{1}, pred));
  Var<T> bce = add(mul(log_p, tape.constant(elementwise(BinaryKind::Multiply, w, gt))),
                   mul(log_q, tape.constant(elementwise(BinaryKind::Multiply, w, not_gt))));
  Var<T> w_sum = tape.constant(reduce(w, ReduceKind::Sum, per_sample));
  Var<T> wbce = mul(mul(reduce(bce, ReduceKind::Sum, per_sample), pow(w_sum, T{-1})), T{-1});

  // Weighted IoU, per sample.
  const Tensor<T> w_gt = elementwise(BinaryKind::Multiply, w, gt);
  Var<T> inter = reduce(mul(pred, tape.constant(w_gt)), ReduceKind::Sum, per_sample);
  Var<T> uni = add(reduce(mul(pred, tape.constant(elementwise(BinaryKind::Multiply, w, not_gt))), ReduceKind::Sum,
                          per_sample),
                   tape.constant(reduce(w_gt, ReduceKind::Sum, per_sample)));
  Var<T> wiou = rsub(T{1}, mul(inter, pow(uni, T{-1})));
  return mean(add(wbce, wiou));
}

template <typename T>
Var<T> weighted_supervised_sum(const std::array<Var<T>, 3>& decoder_scales, Var<T> decoder,
                               const std::array<Var<T>, 3>& refiner_scales, Var<T> refiner) {
  Var<T> total = mul(add(decoder, refiner), T{0.5});
  T w{0.5};
  for (std::size_t i = 0; i < 3; ++i, w *= T{0.5}) {
    total = add(total, mul(add(decoder_scales[i], refiner_scales[i]), w));
  }
  return total;
}

double weighted_supervised_sum(const std::array<double, 3>& decoder_scales, double decoder,
                               const std::array<double, 3>& refiner_scales, double refiner) {
  double total = 0.5 * (decoder + refiner);
  double w = 0.5;
  for (std::size_t i = 0; i < 3; ++i, w *= 0.5) total += w * (decoder_scales[i] + refiner_scales[i]);
  return total;
}

template <typename T>
Var<T> supervised_loss(const ModelOutputs<T>& outputs, const Tensor<T>& gt, const PpaOptions& options) {
  std::array<Var<T>, 3> d, r;
  for (std::size_t i = 0; i < 3; ++i) {
    d[i] = ppa_loss(outputs.decoder_scales[i], gt, options);
    // Refiner maps aliasing decoder maps (refiner disabled) reuse the same loss node.
    r[i] = outputs.refiner_scales[i].id == outputs.decoder_scales[i].id ? d[i]
                                                                         : ppa_loss(outputs.refiner_scales[i], gt, options);
  }
  Var<T> ld = ppa_loss(outputs.decoder, gt, options);
  Var<T> lr = outputs.refiner.id == outputs.decoder.id ? ld : ppa_loss(outputs.refiner, gt, options);
  return weighted_supervised_sum(d, ld, r, lr);
}

template <typename T>
Tensor<T> sic_target(const Tensor<T>& teacher_pred, const Tensor<T>& teacher_shuffled_pred, const Tensor<T>& lambda) {
  if (teacher_pred.shape() != teacher_shuffled_pred.shape()) {
    throw ShapeError("sic: teacher maps differ in shape");
  }
  const Tensor<T> lam = match_lambda(lambda, teacher_pred.shape());
  for (T v : lam.data()) {
    if (!(v >= T{0} && v <= T{1})) throw ValidationError("sic: lambda outside [0, 1]");
  }
  const Tensor<T> rest = elementwise(BinaryKind::Subtract, Tensor<T>(lam.shape(), T{1}), lam);
  return elementwise(BinaryKind::Add, elementwise(BinaryKind::Multiply, teacher_pred, lam),
                     elementwise(BinaryKind::Multiply, teacher_shuffled_pred, rest));
}

template <typename T>
Var<T> sic_loss(Var<T> student_mix_pred, const Tensor<T>& teacher_pred, const Tensor<T>& teacher_shuffled_pred,
                const Tensor<T>& lambda) {
  if (student_mix_pred.shape() != teacher_pred.shape()) {
    throw ShapeError("sic_loss: student " + shape_string(student_mix_pred.shape()) + " vs teacher " +
                     shape_string(teacher_pred.shape()));
  }
  return mse(student_mix_pred,
             student_mix_pred.tape->constant(sic_target(teacher_pred, teacher_shuffled_pred, lambda)));
}

template <typename T>
Var<T> tic_loss(Var<T> student_pred, const Tensor<T>& temporal_target) {
  if (student_pred.shape() != temporal_target.shape()) {
    throw ShapeError("tic_loss: student " + shape_string(student_pred.shape()) + " vs target " +
                     shape_string(temporal_target.shape()));
  }
  return mse(student_pred, student_pred.tape->constant(temporal_target));
}

template <typename T>
Var<T> sc_loss(const std::array<Var<T>, 3>& student_scales, const std::array<Tensor<T>, 3>& teacher_scales) {
  const Shape& shape = teacher_scales[0].shape();
  for (const auto& t : teacher_scales) {
    if (t.shape() != shape) throw ShapeError("sc_loss: teacher maps differ in shape");
  }
  // Mean anchored on the first map, so three identical maps average to exactly that map.
  Tensor<T> avg = teacher_scales[0];
  {
    auto a = avg.data();
    auto b = teacher_scales[1].data();
    auto c = teacher_scales[2].data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += ((b[i] - a[i]) + (c[i] - a[i])) / T{3};
  }
  Tape<T>& tape = *student_scales[0].tape;
  Var<T> target = tape.constant(std::move(avg));
  Var<T> total = mse(student_scales[0], target);
  for (std::size_t s = 1; s < 3; ++s) total = add(total, mse(student_scales[s], target));
  return mul(total, T{1} / T{3});
}

double ramp(double t, const LossWeights& weights) {
  if (t >= weights.t_max) return weights.beta_max;
  const double phase = 1.0 - std::max(t, 0.0) / weights.t_max;
  return weights.beta_max * std::exp(-5.0 * phase * phase);
}

LossBreakdown total_loss(double sup, double sic, double tic, double sc, double beta, const LossWeights& weights) {
  const std::pair<const char*, double> parts[] = {{"L_sup", sup}, {"L_sic", sic}, {"L_tic", tic}, {"L_sc", sc},
                                                  {"beta", beta}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite loss term ") + name);
  }
  LossBreakdown b{sup, sic, tic, sc, beta, 0};
  b.total = sup + beta * (weights.eta_sic * sic + weights.eta_tic * tic + weights.eta_sc * sc);
  if (!std::isfinite(b.total)) throw NumericalError("non-finite loss term L_total");
  return b;
}

#define STICT_INSTANTIATE_LOSSES(T)                                                                           \
  template Tensor<T> ppa_weights(const Tensor<T>&, const PpaOptions&);                                        \
  template Var<T> ppa_loss(Var<T>, const Tensor<T>&, const PpaOptions&);                                      \
  template Var<T> weighted_supervised_sum(const std::array<Var<T>, 3>&, Var<T>, const std::array<Var<T>, 3>&, \
                                          Var<T>);                                                            \
  template Var<T> supervised_loss(const ModelOutputs<T>&, const Tensor<T>&, const PpaOptions&);               \
  template Tensor<T> sic_target(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Var<T> sic_loss(Var<T>, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Var<T> tic_loss(Var<T>, const Tensor<T>&);                                                         \
  template Var<T> sc_loss(const std::array<Var<T>, 3>&, const std::array<Tensor<T>, 3>&);

STICT_INSTANTIATE_LOSSES(float)
STICT_INSTANTIATE_LOSSES(double)

}  // namespace stict
