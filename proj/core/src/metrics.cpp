#include "stict/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "stict/ops.hpp"
#include "stict/parallel.hpp"

namespace stict {
namespace {

double ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

void require_same(const Tensor<float>& pred, const Tensor<float>& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("prediction shape " + shape_string(pred.shape()) + " differs from ground truth " +
                     shape_string(gt.shape()));
  }
}

// Mean over finite entries; NaN if none.
double finite_mean(const std::vector<double>& v) {
  double sum = 0;
  int n = 0;
  for (double x : v) {
    if (std::isfinite(x)) {
      sum += x;
      ++n;
    }
  }
  return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

ConfusionCounts confusion(const Tensor<float>& pred, const Tensor<float>& gt, double threshold) {
  require_same(pred, gt);
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const float g = gt[i];
    if (g != 0.0f && g != 1.0f) throw ValidationError("ground truth is not binary at element " + std::to_string(i));
    const bool positive = pred[i] >= threshold;
    if (g == 1.0f) {
      positive ? ++c.tp : ++c.fn;
    } else {
      positive ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

FrameMetrics compute_from_counts(const ConfusionCounts& c, double mae, double beta2) {
  FrameMetrics m;
  m.mae = mae;
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  const double p = ratio(tp, tp + fp), r = ratio(tp, tp + fn);
  m.fbeta = ratio((1 + beta2) * p * r, beta2 * p + r);
  m.iou = ratio(tp, tp + fp + fn);
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0) {
    m.ber_flagged = true;
    m.ber = std::numeric_limits<double>::quiet_NaN();
  } else {
    m.ber = 100.0 * (1.0 - 0.5 * (tp / (tp + fn) + tn / (tn + fp)));
  }
  return m;
}

FrameMetrics compute(const Tensor<float>& pred, const Tensor<float>& gt, double threshold, double beta2) {
  const ConfusionCounts c = confusion(pred, gt, threshold);
  double abs_sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) abs_sum += std::abs(static_cast<double>(pred[i]) - gt[i]);
  return compute_from_counts(c, abs_sum / static_cast<double>(pred.size()), beta2);
}

double temporal_stability(const std::vector<Tensor<float>>& preds, const std::vector<Tensor<float>>& flow_fwd) {
  if (preds.size() < 2) return 0.0;
  if (flow_fwd.size() + 1 != preds.size()) throw ValidationError("temporal diagnostic needs T-1 forward flows");
  double total = 0;
  for (std::size_t t = 0; t + 1 < preds.size(); ++t) {
    const Tensor<float> warped = warp(preds[t + 1], flow_fwd[t]);
    double s = 0;
    for (std::size_t i = 0; i < warped.size(); ++i) s += std::abs(static_cast<double>(warped[i]) - preds[t][i]);
    total += s / static_cast<double>(warped.size());
  }
  return total / static_cast<double>(preds.size() - 1);
}

MetricReport evaluate(const std::vector<Video>& videos, const VideoPredictor& predict, const EvalOptions& options) {
  if (videos.empty()) throw ValidationError("evaluation needs at least one video");
  for (const auto& v : videos) {
    if (!v.has_masks()) throw ValidationError("video " + v.id + " has no masks; it cannot be evaluated");
  }
  MetricReport report;
  for (const auto& v : videos) {
    const auto preds = predict(v);
    if (preds.size() != v.frames.size()) throw ValidationError("video " + v.id + ": prediction count differs");
    std::vector<FrameMetrics> frames(preds.size());
    parallel_for(preds.size(), [&](std::size_t t) {
      frames[t] = compute(preds[t], v.masks[t], options.threshold, options.beta2);
    });
    VideoMetrics vm;
    vm.id = v.id;
    vm.frames = static_cast<int>(frames.size());
    std::vector<double> bers;
    for (const auto& f : frames) {
      vm.mae += f.mae;
      vm.fbeta += f.fbeta;
      vm.iou += f.iou;
      if (f.ber_flagged) ++vm.flagged;
      bers.push_back(f.ber);
    }
    vm.mae /= vm.frames;
    vm.fbeta /= vm.frames;
    vm.iou /= vm.frames;
    vm.ber = finite_mean(bers);
    vm.temporal = v.has_flows() ? temporal_stability(preds, v.flow_fwd) : std::numeric_limits<double>::quiet_NaN();
    report.flagged += vm.flagged;
    report.videos.push_back(std::move(vm));
  }
  std::vector<double> bers, temporals;
  for (const auto& vm : report.videos) {
    report.mae += vm.mae;
    report.fbeta += vm.fbeta;
    report.iou += vm.iou;
    bers.push_back(vm.ber);
    temporals.push_back(vm.temporal);
  }
  const double n = static_cast<double>(report.videos.size());
  report.mae /= n;
  report.fbeta /= n;
  report.iou /= n;
  report.ber = finite_mean(bers);
  report.temporal = finite_mean(temporals);
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string MetricReport::to_csv() const {
  std::string out = "video,frames,flagged,mae,fbeta,iou,ber,temporal\n";
  auto row = [&](const std::string& id, int frames, int flag, double a, double b, double c, double d, double e) {
    out += id + "," + std::to_string(frames) + "," + std::to_string(flag) + "," + fmt(a) + "," + fmt(b) + "," +
           fmt(c) + "," + fmt(d) + "," + fmt(e) + "\n";
  };
  int total_frames = 0;
  for (const auto& v : videos) {
    row(v.id, v.frames, v.flagged, v.mae, v.fbeta, v.iou, v.ber, v.temporal);
    total_frames += v.frames;
  }
  row("mean", total_frames, flagged, mae, fbeta, iou, ber, temporal);
  return out;
}

std::string MetricReport::to_text() const {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %7s %7s %10s %10s %10s %10s %10s\n", "video", "frames", "flagged", "MAE",
                "Fbeta", "IoU", "BER", "temporal");
  out += buf;
  int total_frames = 0;
  auto row = [&](const std::string& id, int frames, int flag, double a, double b, double c, double d, double e) {
    std::snprintf(buf, sizeof buf, "%-10s %7d %7d %10.4f %10.4f %10.4f %10.3f %10.5f\n", id.c_str(), frames, flag, a,
                  b, c, d, e);
    out += buf;
  };
  for (const auto& v : videos) {
    row(v.id, v.frames, v.flagged, v.mae, v.fbeta, v.iou, v.ber, v.temporal);
    total_frames += v.frames;
  }
  row("mean", total_frames, flagged, mae, fbeta, iou, ber, temporal);
  return out;
}

}  // namespace stict
