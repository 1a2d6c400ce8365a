#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stict/data.hpp"
#include "stict/ict.hpp"
#include "stict/losses.hpp"

namespace stict {

struct TrainConfig {
  double ema_decay = 0.999;
  double learning_rate = 3e-3;
  int epochs = 10;
  int labeled_batch = 4;
  int unlabeled_batch = 4;
  int k = 1;
  double lambda_t = 0.5;
  int window = 3;  // d
  LossWeights weights;
  ModelConfig model;
  MixScheme scheme = MixScheme::Spatial;
  bool use_sc = true;
  bool use_tic = true;
  bool use_sic = true;
  /// SIC on all three triplet frames (averaged) or on the middle frame only.
  bool sic_all_frames = true;
  int ppa_window = 7;
  double ppa_factor = 5.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  bool any_unsupervised() const { return use_sc || use_tic || use_sic; }
  PpaOptions ppa() const { return {ppa_window, ppa_factor}; }
  void validate() const;
};

/// Adam moments, one pair per student parameter.
struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
};

/// Student, teacher, optimizer state, counters and the run's random stream.
struct TrainerState {
  explicit TrainerState(const TrainConfig& config);

  SaNet<float> student;
  SaNet<float> teacher;
  AdamState adam;
  int epoch = 0;           // completed epochs
  std::uint64_t step = 0;  // completed optimizer steps
  std::mt19937_64 rng;
};

/// teacher = eta * teacher + (1 - eta) * student for every parameter; the teacher's
/// running statistics are overwritten with the student's.
template <typename T>
void ema_update(SaNet<T>& teacher, SaNet<T>& student, double eta);
void ema_update(TrainerState& state, double eta);

/// lr0 * (1 - epoch / epochs).
double learning_rate(const TrainConfig& config, int epoch);

/// One Adam step on the student from the gradients it currently holds.
void adam_step(TrainerState& state, const TrainConfig& config, double lr);

struct LabeledBatch {
  Tensor<float> images;  // N x 3 x H x W
  Tensor<float> masks;   // N x 1 x H x W
};

/// One optimizer step. `triplets` may be null only when every unsupervised loss is off.
LossBreakdown train_step(TrainerState& state, const LabeledBatch& labeled, const FrameTriplet<float>* triplets,
                         const TrainConfig& config);

/// F_{from -> to}, composed from adjacent flows when |to - from| > 1.
Tensor<float> flow_between(const Video& video, int from, int to);

/// Batches the triplets (video, t) with neighbours t -/+ k.
FrameTriplet<float> make_triplets(const std::vector<Video>& videos, const std::vector<std::pair<int, int>>& picks,
                                  int k, double lambda_t);

struct StepLog {
  std::uint64_t step = 0;
  int epoch = 0;
  LossBreakdown loss;
};

struct EpochSummary {
  int epoch = 0;
  int steps = 0;
  double mean_sup = 0;
  double mean_total = 0;
};

/// Runs one epoch (index state.epoch) and increments state.epoch. Labeled order and
/// triplet order are reshuffled from state.rng at the start of the epoch.
EpochSummary train_epoch(TrainerState& state, const Dataset& data, const TrainConfig& config,
                         const std::function<void(const StepLog&)>& on_step = {});

/// CSV columns: step, epoch, L_sup, L_sic, L_tic, L_sc, beta, L_total.
std::string log_header();
std::string log_row(const StepLog& log);

/// Normalization statistics used for inference: unlabeled if they were ever updated, else labeled.
Domain inference_domain(SaNet<float>& model);

/// Final refined map per frame (1 x 1 x H x W), frames processed independently.
std::vector<Tensor<float>> predict_frames(SaNet<float>& model, const std::vector<Tensor<float>>& frames,
                                          Domain domain);

void save_checkpoint(const TrainerState& state, const std::filesystem::path& path);
/// Restores into a state built from the expected configuration. Throws FormatError on a
/// malformed file and ValidationError naming the first parameter that does not match.
void load_checkpoint(TrainerState& state, const std::filesystem::path& path);

}  // namespace stict
