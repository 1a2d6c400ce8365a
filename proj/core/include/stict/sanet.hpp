#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stict/ops.hpp"

namespace stict {

/// Which normalization statistics a pass reads and updates.
enum class Domain : std::uint8_t { Labeled = 0, Unlabeled = 1 };

enum class NormMode {
  Train,       ///< batch statistics; updates the domain's running statistics
  BatchStats,  ///< batch statistics; running statistics untouched (teacher passes)
  Running,     ///< the domain's running statistics (inference)
};

const char* domain_name(Domain d);

/// Channel plan and the cumulative ablation toggles (ED, +FFM, +Refiner, +DAM).
struct ModelConfig {
  std::array<int, 4> channels{16, 32, 64, 128};
  bool ffm = true;
  bool refiner = true;
  bool dam = true;

  /// Throws ValidationError if the refiner is on without FFM, or DAM without the refiner.
  void validate() const;

  static ModelConfig ed();
  static ModelConfig ed_ffm();
  static ModelConfig ed_ffm_refiner();
  static ModelConfig full();

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct FeaturePyramid {
  /// levels[i] has spatial extent input / 2^(i+1) and channels[i] channels.
  std::array<Var<T>, 4> levels;
};

/// The eight deeply supervised probability maps, each N x 1 x H x W at input size.
template <typename T>
struct ModelOutputs {
  std::array<Var<T>, 3> decoder_scales;  // o^{d,1..3}
  Var<T> decoder;                        // o^d
  std::array<Var<T>, 3> refiner_scales;  // o^{r,1..3}
  Var<T> refiner;                        // o^r
  Var<T> deepest;                        // the level-4 feature the maps were decoded from
};

template <typename T>
struct PassContext {
  Tape<T>& tape;
  Domain domain = Domain::Labeled;
  NormMode mode = NormMode::Train;
};

/// Running mean/variance for one normalization layer and one domain.
template <typename T>
struct NormStats {
  Tensor<T> mean;
  Tensor<T> var;
  std::uint64_t updates = 0;
};

template <typename T>
class Conv {
 public:
  Conv() = default;
  Conv(std::string name, int cin, int cout, int k, int stride, bool bias, std::mt19937_64& rng);

  Var<T> operator()(PassContext<T>& ctx, Var<T> x);
  void visit(const std::function<void(Parameter<T>&)>& f);

  Parameter<T> weight;
  Parameter<T> bias;
  bool has_bias = false;
  int stride = 1;
  int padding = 0;
};

/// Batch normalization with one running-statistics set per domain.
template <typename T>
class Norm {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  Norm() = default;
  Norm(std::string name, int channels);

  Var<T> operator()(PassContext<T>& ctx, Var<T> x);
  void visit(const std::function<void(Parameter<T>&)>& f);

  Parameter<T> gamma;
  Parameter<T> beta;
  std::string name;
  std::array<NormStats<T>, 2> stats;
};

/// Gated fusion of a coarse (high-level) and a fine (low-level) feature:
///   h = relu(conv(up2(high))), l = relu(conv(low)), a = sigmoid(conv(h + l)),
///   out = a*h + a*l + l.
template <typename T>
class Ffm {
 public:
  Ffm() = default;
  Ffm(const std::string& name, int high_ch, int low_ch, std::mt19937_64& rng);

  Var<T> operator()(PassContext<T>& ctx, Var<T> high, Var<T> low);
  void visit(const std::function<void(Parameter<T>&)>& f);

  Conv<T> high_conv;
  Conv<T> low_conv;
  Conv<T> gate_conv;
};

/// Baseline fusion used when FFM is disabled: relu(conv(proj(up2(high)) + low)).
template <typename T>
class PlainFuse {
 public:
  PlainFuse() = default;
  PlainFuse(const std::string& name, int high_ch, int low_ch, std::mt19937_64& rng);

  Var<T> operator()(PassContext<T>& ctx, Var<T> high, Var<T> low);
  void visit(const std::function<void(Parameter<T>&)>& f);

  Conv<T> proj;
  Conv<T> conv;
};

/// Detail attention: a = sigmoid(conv1x1(upsample(highest))), out = a * conv(lowest) + lowest.
template <typename T>
class Dam {
 public:
  Dam() = default;
  Dam(const std::string& name, int highest_ch, int lowest_ch, std::mt19937_64& rng);

  Var<T> operator()(PassContext<T>& ctx, Var<T> highest, Var<T> lowest);
  void visit(const std::function<void(Parameter<T>&)>& f);

  Conv<T> gate_conv;
  Conv<T> detail_conv;
};

/// The scale-aware network: encoder, decoder, optional refiner with DAM.
template <typename T>
class SaNet {
 public:
  SaNet(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }

  /// Trainable parameters in a fixed order; disabled modules contribute none.
  std::vector<Parameter<T>*> parameters();
  std::vector<Norm<T>*> norms();

  /// frame: N x 3 x H x W with H, W divisible by 16.
  FeaturePyramid<T> encode(PassContext<T>& ctx, const Tensor<T>& frame);

  /// Everything after the level-4 attachment point. `deep` replaces levels[3] of `skips`.
  ModelOutputs<T> decode_from_deep(PassContext<T>& ctx, Var<T> deep, const FeaturePyramid<T>& skips, int out_h,
                                   int out_w);

  ModelOutputs<T> forward(PassContext<T>& ctx, const Tensor<T>& frame);

  /// Copies parameter values and running statistics into a model of another precision.
  template <typename U>
  SaNet<U> cast() const;

  template <typename U>
  friend class SaNet;

 private:
  struct Head {
    Conv<T> conv;
    Var<T> operator()(PassContext<T>& ctx, Var<T> x, int out_h, int out_w);
  };
  struct Block {  // conv3x3 -> norm -> relu
    Conv<T> conv;
    Norm<T> norm;
    Var<T> operator()(PassContext<T>& ctx, Var<T> x);
  };

  Var<T> fuse(PassContext<T>& ctx, int level, Var<T> high, Var<T> low);
  void visit_blocks(const std::function<void(Block&)>& f);

  ModelConfig config_;
  std::array<std::array<Block, 2>, 4> encoder_;
  std::array<Ffm<T>, 3> dec_ffm_;        // fuse into levels 1..3 (index = level - 1)
  std::array<PlainFuse<T>, 3> dec_plain_;
  Block dec_final_;
  std::array<Head, 3> dec_heads_;
  Head dec_head_;

  Dam<T> dam_;
  Conv<T> feedback_;                     // decoder pre-final feature -> refiner level 3
  std::array<Ffm<T>, 2> ref_ffm_;        // fuse into levels 1..2
  std::array<Conv<T>, 2> ref_up_;        // bottom-up: level 1 -> levels 2, 3
  Block ref_final_;
  std::array<Head, 3> ref_heads_;
  Head ref_head_;
};

extern template class SaNet<float>;
extern template class SaNet<double>;
extern template class Ffm<float>;
extern template class Ffm<double>;
extern template class Dam<float>;
extern template class Dam<double>;

}  // namespace stict
