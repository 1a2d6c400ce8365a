#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "stict/tensor.hpp"

namespace stict {

enum class TextureFamily : std::uint8_t { Smooth, Stripes, Checker };
enum class ShapeKind : std::uint8_t { Disk, Rectangle, Triangle };
enum class TrajectoryKind : std::uint8_t { Static, Linear, Sinusoidal };

const char* texture_name(TextureFamily f);
const char* shape_name(ShapeKind s);
const char* trajectory_name(TrajectoryKind t);
TextureFamily parse_texture(const std::string& s);
ShapeKind parse_shape(const std::string& s);
TrajectoryKind parse_trajectory(const std::string& s);

/// Distribution over scenes for one domain. Sizes are in pixels; the shadow is the
/// occluder translated by the light offset, whose length is a multiple of the size.
struct SceneSpec {
  int width = 64;
  int height = 64;
  int frames = 24;
  TextureFamily texture = TextureFamily::Smooth;
  std::vector<ShapeKind> shapes{ShapeKind::Disk, ShapeKind::Rectangle};
  int min_occluders = 1;
  int max_occluders = 2;
  double min_size = 5.0;
  double max_size = 9.0;
  double min_shadow_length = 1.3;  // x size
  double max_shadow_length = 2.2;  // x size
  double min_darkening = 0.35;
  double max_darkening = 0.7;
  /// Probability that a scene uses darkening 1.0 (mask present, shadow invisible).
  double hard_case_fraction = 0.0;
  std::vector<TrajectoryKind> trajectories{TrajectoryKind::Linear, TrajectoryKind::Sinusoidal};
  double max_speed = 1.5;  // px/frame (linear) or amplitude * 2pi / period (sinusoidal)

  void validate() const;

  static SceneSpec labeled_domain();
  static SceneSpec video_domain();
};

struct Occluder {
  ShapeKind kind = ShapeKind::Disk;
  double cx = 0;
  double cy = 0;
  double size = 1;  // radius, half-extent, or half-base
  double aspect = 1;  // rectangles: half-height = size * aspect
  std::array<float, 3> color{0.5f, 0.5f, 0.5f};

  bool contains(double x, double y) const;
};

/// One concrete scene. Occluder positions are at t = 0; all occluders and their shadows
/// share the trajectory displacement.
struct Scene {
  int width = 64;
  int height = 64;
  int frames = 1;
  TextureFamily texture = TextureFamily::Smooth;
  std::uint64_t texture_seed = 0;
  std::array<float, 3> palette_a{0.8f, 0.8f, 0.8f};
  std::array<float, 3> palette_b{0.6f, 0.6f, 0.6f};
  std::vector<Occluder> occluders;
  double light_dx = 10;
  double light_dy = 0;
  double darkening = 0.5;
  TrajectoryKind trajectory = TrajectoryKind::Static;
  double vx = 0;  // linear: velocity; sinusoidal: amplitude
  double vy = 0;
  double period = 12;  // sinusoidal, in frames

  std::array<double, 2> displacement(int t) const;
  /// Throws ValidationError if some occluder or its shadow leaves the frame entirely at some t.
  void validate() const;
};

Scene sample_scene(const SceneSpec& spec, std::mt19937_64& rng);

struct LabeledSample {
  Tensor<float> image;  // 1 x 3 x H x W in [0, 1]
  Tensor<float> mask;   // 1 x 1 x H x W in {0, 1}
};

struct Video {
  std::string id;
  std::vector<Tensor<float>> frames;    // T of 1 x 3 x H x W
  std::vector<Tensor<float>> masks;     // T, or empty for unlabeled videos
  std::vector<Tensor<float>> flow_fwd;  // T - 1; entry t is F_{t -> t+1}
  std::vector<Tensor<float>> flow_bwd;  // T - 1; entry t - 1 is F_{t -> t-1}

  int length() const { return static_cast<int>(frames.size()); }
  bool has_masks() const { return !masks.empty(); }
  bool has_flows() const { return !flow_fwd.empty(); }
  void validate() const;
};

/// Frame t of a scene: background darkened inside the mask, occluders drawn opaque.
LabeledSample render(const Scene& scene, int t);
/// All frames of a scene with exact masks and flows. Requires frames >= 3.
Video render_video(const Scene& scene, std::string id);

/// n independent stills; item i draws from its own stream seeded by (rng(), i).
std::vector<LabeledSample> gen_labeled(const SceneSpec& spec, int n, std::mt19937_64& rng);
Video gen_video(const SceneSpec& spec, std::mt19937_64& rng, std::string id = "v000");
/// count videos with ids v000, v001, ..., generated in parallel from per-item streams.
std::vector<Video> gen_videos(const SceneSpec& spec, int count, std::mt19937_64& rng);

struct Dataset {
  std::vector<LabeledSample> labeled;
  std::vector<Video> videos;
};

/// Layout: root/labeled/{images,masks}/%05d.{ppm,pgm} and
/// root/videos/<id>/{frames,masks,flow_fwd,flow_bwd}/%05d.{ppm,pgm,flo}; flow_fwd files are
/// indexed by source frame 0..T-2, flow_bwd by source frame 1..T-1.
void write_labeled(const std::filesystem::path& root, const std::vector<LabeledSample>& samples);
void write_video(const std::filesystem::path& video_dir, const Video& video);
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);

/// Loads one video directory; flows are required unless `require_flows` is false.
Video load_video(const std::filesystem::path& video_dir, bool require_flows = true);
/// Either part may be absent, but not both.
Dataset load_dataset(const std::filesystem::path& root);

/// Concatenates 1 x C x H x W tensors along the batch axis.
template <typename T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& items);

}  // namespace stict
