#include "stict/ict.hpp"

#include <limits>

namespace stict {

const char* scheme_name(MixScheme s) {
  switch (s) {
    case MixScheme::Spatial: return "SI";
    case MixScheme::RandomFeature: return "RI-feature";
    case MixScheme::RandomRgb: return "RI-rgb";
  }
  return "?";
}

MixScheme parse_scheme(const std::string& s) {
  if (s == "SI") return MixScheme::Spatial;
  if (s == "RI-feature") return MixScheme::RandomFeature;
  if (s == "RI-rgb") return MixScheme::RandomRgb;
  throw ValidationError("unknown interpolation scheme '" + s + "' (expected SI, RI-feature or RI-rgb)");
}

namespace {

void check_window(int window, int height, int width) {
  if (window % 2 == 0 || window < 3) throw ValidationError("window d must be odd and >= 3, got " + std::to_string(window));
  if (window > height || window > width) {
    throw ValidationError("window d=" + std::to_string(window) + " exceeds feature extent " + std::to_string(height) +
                          "x" + std::to_string(width));
  }
}

void draw_lambdas(MixPlan& plan, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  plan.lambda.resize(plan.offset.size());
  for (auto& l : plan.lambda) l = uni(rng);
}

}  // namespace

std::vector<int> MixPlan::partner_indices() const {
  const int r = window / 2;
  std::vector<int> out(offset.size());
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  for (std::size_t i = 0; i < offset.size(); ++i) {
    const int p = static_cast<int>(i % hw);
    const int y = p / width + offset[i] / window - r;
    const int x = p % width + offset[i] % window - r;
    out[i] = y * width + x;
  }
  return out;
}

template <typename T>
Tensor<T> MixPlan::lambda_map() const {
  std::vector<T> v(lambda.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(lambda[i]);
  return Tensor<T>(Shape{batch, 1, height, width}, std::move(v));
}

void MixPlan::validate() const {
  const std::size_t n = static_cast<std::size_t>(batch) * height * width;
  if (offset.size() != n || lambda.size() != n) throw ValidationError("mix plan: size mismatch");
  const int r = window / 2;
  const int centre = r * window + r;
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  for (std::size_t i = 0; i < n; ++i) {
    const int o = offset[i];
    if (o < 0 || o >= window * window || o == centre) throw ValidationError("mix plan: invalid partner offset");
    const int p = static_cast<int>(i % hw);
    const int y = p / width + o / window - r;
    const int x = p % width + o % window - r;
    if (y < 0 || y >= height || x < 0 || x >= width) throw ValidationError("mix plan: partner out of bounds");
    if (!(lambda[i] >= 0.0 && lambda[i] <= 1.0)) throw ValidationError("mix plan: lambda outside [0, 1]");
  }
}

template <typename T>
MixPlan lcs_plan(const Tensor<T>& feature, int window, std::mt19937_64& rng) {
  require_rank4(feature, "lcs_plan");
  const int n = feature.dim(0), c = feature.dim(1), h = feature.dim(2), w = feature.dim(3);
  check_window(window, h, w);
  MixPlan plan;
  plan.batch = n;
  plan.height = h;
  plan.width = w;
  plan.window = window;
  plan.scheme = MixScheme::Spatial;
  plan.offset.resize(static_cast<std::size_t>(n) * h * w);
  const int r = window / 2;
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double best = std::numeric_limits<double>::infinity();
        int best_offset = -1;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if ((dy == 0 && dx == 0) || yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            double corr = 0;
            for (int ch = 0; ch < c; ++ch) {
              corr += static_cast<double>(feature.at(i, ch, y, x)) * static_cast<double>(feature.at(i, ch, yy, xx));
            }
            if (corr < best) {
              best = corr;
              best_offset = (dy + r) * window + (dx + r);
            }
          }
        plan.offset[(static_cast<std::size_t>(i) * h + y) * w + x] = best_offset;
      }
  draw_lambdas(plan, rng);
  return plan;
}

MixPlan random_plan(int batch, int height, int width, int window, MixScheme scheme, std::mt19937_64& rng) {
  check_window(window, height, width);
  MixPlan plan;
  plan.batch = batch;
  plan.height = height;
  plan.width = width;
  plan.window = window;
  plan.scheme = scheme;
  plan.offset.resize(static_cast<std::size_t>(batch) * height * width);
  const int r = window / 2;
  std::vector<int> candidates;
  for (int i = 0; i < batch; ++i)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        candidates.clear();
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if ((dy == 0 && dx == 0) || yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
            candidates.push_back((dy + r) * window + (dx + r));
          }
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        plan.offset[(static_cast<std::size_t>(i) * height + y) * width + x] = candidates[pick(rng)];
      }
  draw_lambdas(plan, rng);
  return plan;
}

namespace {
template <typename T>
void check_plan_extent(const Tensor<T>& feature, const MixPlan& plan) {
  require_rank4(feature, "apply_shuffle");
  if (feature.dim(0) != plan.batch || feature.dim(2) != plan.height || feature.dim(3) != plan.width) {
    throw ShapeError("apply_shuffle: plan for " + std::to_string(plan.batch) + "x" + std::to_string(plan.height) +
                     "x" + std::to_string(plan.width) + " applied to " + shape_string(feature.shape()));
  }
}

template <typename T>
void check_lambda(const Tensor<T>& lambda) {
  for (T v : lambda.data()) {
    if (!(v >= T{0} && v <= T{1})) throw ValidationError("mix: lambda outside [0, 1]");
  }
}
}  // namespace

template <typename T>
Tensor<T> apply_shuffle(const Tensor<T>& feature, const MixPlan& plan) {
  check_plan_extent(feature, plan);
  const auto idx = plan.partner_indices();
  return gather_pixels(feature, std::span<const int>(idx));
}

template <typename T>
Var<T> apply_shuffle(Var<T> feature, const MixPlan& plan) {
  check_plan_extent(feature.value(), plan);
  return gather_pixels(feature, plan.partner_indices());
}

template <typename T>
Tensor<T> mix(const Tensor<T>& feature, const Tensor<T>& shuffled, const Tensor<T>& lambda) {
  if (feature.shape() != shuffled.shape()) {
    throw ShapeError("mix: shape mismatch " + shape_string(feature.shape()) + " vs " + shape_string(shuffled.shape()));
  }
  check_lambda(lambda);
  const Tensor<T> one_minus = elementwise(BinaryKind::Subtract, Tensor<T>(lambda.shape(), T{1}), lambda);
  return elementwise(BinaryKind::Add, elementwise(BinaryKind::Multiply, feature, lambda),
                     elementwise(BinaryKind::Multiply, shuffled, one_minus));
}

template <typename T>
Var<T> mix(Var<T> feature, Var<T> shuffled, const Tensor<T>& lambda) {
  if (feature.shape() != shuffled.shape()) {
    throw ShapeError("mix: shape mismatch " + shape_string(feature.shape()) + " vs " + shape_string(shuffled.shape()));
  }
  check_lambda(lambda);
  Tape<T>& tape = *feature.tape;
  Var<T> lam = tape.constant(lambda);
  Var<T> rest = tape.constant(elementwise(BinaryKind::Subtract, Tensor<T>(lambda.shape(), T{1}), lambda));
  return add(mul(feature, lam), mul(shuffled, rest));
}

template <typename T>
void validate_flow(const Tensor<T>& flow, const Tensor<T>& frame) {
  require_rank4(flow, "flow");
  require_rank4(frame, "frame");
  if (flow.dim(0) != frame.dim(0) || flow.dim(1) != 2 || flow.dim(2) != frame.dim(2) || flow.dim(3) != frame.dim(3)) {
    throw ShapeError("flow " + shape_string(flow.shape()) + " does not fit frame " + shape_string(frame.shape()));
  }
  if (!flow.all_finite()) throw NumericalError("flow contains non-finite values");
}

template <typename T>
void FrameTriplet<T>::validate() const {
  if (prev.shape() != current.shape() || next.shape() != current.shape()) {
    throw ShapeError("triplet frames differ in shape");
  }
  validate_flow(flow_bwd, current);
  validate_flow(flow_fwd, current);
  if (!(lambda_t >= 0.0 && lambda_t <= 1.0)) throw ValidationError("triplet: lambda_t outside [0, 1]");
  if (k <= 0) throw ValidationError("triplet: k must be positive");
}

template <typename T>
Tensor<T> temporal_target(const Tensor<T>& pred_prev, const Tensor<T>& pred_next, const Tensor<T>& flow_bwd,
                          const Tensor<T>& flow_fwd, double lambda_t) {
  if (pred_prev.shape() != pred_next.shape()) {
    throw ShapeError("temporal_target: prediction shapes differ " + shape_string(pred_prev.shape()) + " vs " +
                     shape_string(pred_next.shape()));
  }
  const T lt = static_cast<T>(lambda_t);
  const Tensor<T> a = warp(pred_prev, flow_bwd);
  const Tensor<T> b = warp(pred_next, flow_fwd);
  return elementwise(BinaryKind::Add, elementwise(BinaryKind::Multiply, a, lt),
                     elementwise(BinaryKind::Multiply, b, T{1} - lt));
}

template <typename T>
Tensor<T> temporal_target(const Tensor<T>& pred_prev, const Tensor<T>& pred_next, const FrameTriplet<T>& triplet) {
  return temporal_target(pred_prev, pred_next, triplet.flow_bwd, triplet.flow_fwd, triplet.lambda_t);
}

#define STICT_INSTANTIATE_ICT(T)                                                                         \
  template Tensor<T> MixPlan::lambda_map<T>() const;                                                     \
  template MixPlan lcs_plan(const Tensor<T>&, int, std::mt19937_64&);                                    \
  template Tensor<T> apply_shuffle(const Tensor<T>&, const MixPlan&);                                    \
  template Var<T> apply_shuffle(Var<T>, const MixPlan&);                                                 \
  template Tensor<T> mix(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Var<T> mix(Var<T>, Var<T>, const Tensor<T>&);                                                 \
  template void validate_flow(const Tensor<T>&, const Tensor<T>&);                                       \
  template struct FrameTriplet<T>;                                                                       \
  template Tensor<T> temporal_target(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                     double);                                                            \
  template Tensor<T> temporal_target(const Tensor<T>&, const Tensor<T>&, const FrameTriplet<T>&);

STICT_INSTANTIATE_ICT(float)
STICT_INSTANTIATE_ICT(double)

}  // namespace stict
