#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stict/data.hpp"

namespace stict {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
};

/// A pixel is predicted positive iff pred >= threshold. Throws ValidationError if gt is not binary.
ConfusionCounts confusion(const Tensor<float>& pred, const Tensor<float>& gt, double threshold = 0.5);

struct FrameMetrics {
  double mae = 0;
  double fbeta = 0;
  double iou = 0;
  double ber = 0;
  /// The frame holds a single ground-truth class, so BER is undefined and excluded from means.
  bool ber_flagged = false;
};

/// MAE on the continuous map; F-beta, IoU and BER on the thresholded map. Zero
/// denominators give 0 for precision, recall, F-beta and IoU.
FrameMetrics compute(const Tensor<float>& pred, const Tensor<float>& gt, double threshold = 0.5, double beta2 = 0.3);
FrameMetrics compute_from_counts(const ConfusionCounts& c, double mae, double beta2 = 0.3);

struct VideoMetrics {
  std::string id;
  int frames = 0;
  int flagged = 0;
  double mae = 0;
  double fbeta = 0;
  double iou = 0;
  double ber = 0;       // NaN when every frame was flagged
  double temporal = 0;  // mean over t of mean |warp(pred_{t+1}, F_{t->t+1}) - pred_t|
};

struct MetricReport {
  std::vector<VideoMetrics> videos;
  double mae = 0;
  double fbeta = 0;
  double iou = 0;
  double ber = 0;
  double temporal = 0;
  int flagged = 0;

  std::string to_csv() const;
  std::string to_text() const;
};

struct EvalOptions {
  double threshold = 0.5;
  double beta2 = 0.3;
};

/// Per-frame predictions (each 1 x 1 x H x W) for one video.
using VideoPredictor = std::function<std::vector<Tensor<float>>(const Video&)>;

/// Frame, then video, then dataset averaging. Throws ValidationError on a video without masks.
MetricReport evaluate(const std::vector<Video>& videos, const VideoPredictor& predict, const EvalOptions& options = {});

/// Temporal-stability diagnostic for one sequence of predictions.
double temporal_stability(const std::vector<Tensor<float>>& preds, const std::vector<Tensor<float>>& flow_fwd);

}  // namespace stict
