#include "stict/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include "stict/image_io.hpp"
#include "stict/parallel.hpp"

namespace stict {
namespace fs = std::filesystem;

const char* texture_name(TextureFamily f) {
  switch (f) {
    case TextureFamily::Smooth: return "smooth";
    case TextureFamily::Stripes: return "stripes";
    case TextureFamily::Checker: return "checker";
  }
  return "?";
}

const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::Disk: return "disk";
    case ShapeKind::Rectangle: return "rectangle";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

const char* trajectory_name(TrajectoryKind t) {
  switch (t) {
    case TrajectoryKind::Static: return "static";
    case TrajectoryKind::Linear: return "linear";
    case TrajectoryKind::Sinusoidal: return "sinusoidal";
  }
  return "?";
}

TextureFamily parse_texture(const std::string& s) {
  for (auto f : {TextureFamily::Smooth, TextureFamily::Stripes, TextureFamily::Checker})
    if (s == texture_name(f)) return f;
  throw ValidationError("unknown texture family '" + s + "' (smooth, stripes, checker)");
}

ShapeKind parse_shape(const std::string& s) {
  for (auto k : {ShapeKind::Disk, ShapeKind::Rectangle, ShapeKind::Triangle})
    if (s == shape_name(k)) return k;
  throw ValidationError("unknown shape '" + s + "' (disk, rectangle, triangle)");
}

TrajectoryKind parse_trajectory(const std::string& s) {
  for (auto t : {TrajectoryKind::Static, TrajectoryKind::Linear, TrajectoryKind::Sinusoidal})
    if (s == trajectory_name(t)) return t;
  throw ValidationError("unknown trajectory '" + s + "' (static, linear, sinusoidal)");
}

void SceneSpec::validate() const {
  if (width <= 0 || height <= 0) throw ValidationError("scene resolution must be positive");
  if (frames <= 0) throw ValidationError("scene frame count must be positive");
  if (shapes.empty()) throw ValidationError("scene shape family is empty");
  if (trajectories.empty()) throw ValidationError("scene trajectory family is empty");
  if (min_occluders < 1 || max_occluders < min_occluders) throw ValidationError("occluder count range is invalid");
  if (!(min_size > 0) || max_size < min_size) throw ValidationError("occluder size range is invalid");
  if (!(min_shadow_length > 0) || max_shadow_length < min_shadow_length)
    throw ValidationError("shadow length range is invalid");
  if (!(min_darkening > 0) || max_darkening < min_darkening || max_darkening >= 1)
    throw ValidationError("darkening range must lie in (0, 1)");
  if (!(hard_case_fraction >= 0 && hard_case_fraction <= 1))
    throw ValidationError("hard_case_fraction must lie in [0, 1]");
  if (!(max_speed >= 0)) throw ValidationError("max_speed must be non-negative");
  if (max_size * (1 + max_shadow_length) + 4 > std::min(width, height))
    throw ValidationError("degenerate scene spec: occluder plus shadow does not fit in the frame");
}

SceneSpec SceneSpec::labeled_domain() { return SceneSpec{}; }

SceneSpec SceneSpec::video_domain() {
  SceneSpec s;
  s.texture = TextureFamily::Stripes;
  s.shapes = {ShapeKind::Disk, ShapeKind::Triangle};
  s.min_darkening = 0.4;
  s.max_darkening = 0.75;
  return s;
}

bool Occluder::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  switch (kind) {
    case ShapeKind::Disk: return dx * dx + dy * dy <= size * size;
    case ShapeKind::Rectangle: return std::abs(dx) <= size && std::abs(dy) <= size * aspect;
    case ShapeKind::Triangle: return dy >= -size && dy <= size && std::abs(dx) <= (dy + size) / 2;
  }
  return false;
}

std::array<double, 2> Scene::displacement(int t) const {
  switch (trajectory) {
    case TrajectoryKind::Static: return {0, 0};
    case TrajectoryKind::Linear: return {vx * t, vy * t};
    case TrajectoryKind::Sinusoidal: {
      const double s = std::sin(2 * std::numbers::pi * t / period);
      return {vx * s, vy * s};
    }
  }
  return {0, 0};
}

void Scene::validate() const {
  if (occluders.empty()) throw ValidationError("scene has no occluders");
  if (trajectory == TrajectoryKind::Sinusoidal && !(period > 0)) throw ValidationError("sinusoid period must be positive");
  auto inside = [&](double x, double y) { return x >= 0 && x <= width && y >= 0 && y <= height; };
  for (int t = 0; t < frames; ++t) {
    const auto d = displacement(t);
    for (const auto& o : occluders) {
      if (!inside(o.cx + d[0], o.cy + d[1]) || !inside(o.cx + d[0] + light_dx, o.cy + d[1] + light_dy)) {
        throw ValidationError("degenerate scene: an occluder or its shadow leaves the frame at t = " +
                              std::to_string(t));
      }
    }
  }
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

template <typename E>
E pick(const std::vector<E>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

// Background intensity s(x, y) in [0, 1]; the colour is palette_a + s * (palette_b - palette_a).
class Texture {
 public:
  explicit Texture(const Scene& scene) : family_(scene.texture) {
    std::mt19937_64 rng(scene.texture_seed);
    for (auto& w : waves_) {
      const double f = uniform(rng, 0.02, 0.08), a = uniform(rng, 0, 2 * std::numbers::pi);
      w = {f * std::cos(a), f * std::sin(a), uniform(rng, 0, 2 * std::numbers::pi)};
    }
    const double angle = uniform(rng, 0, std::numbers::pi);
    const double period = family_ == TextureFamily::Stripes ? uniform(rng, 6, 12) : uniform(rng, 5, 10);
    stripe_ = {std::cos(angle) / period, std::sin(angle) / period, uniform(rng, 0, 2 * std::numbers::pi)};
    cell_ = period;
    offset_ = {uniform(rng, 0, cell_), uniform(rng, 0, cell_)};
  }

  double operator()(double x, double y) const {
    switch (family_) {
      case TextureFamily::Smooth: {
        double s = 0;
        for (const auto& w : waves_) s += std::sin(2 * std::numbers::pi * (w[0] * x + w[1] * y) + w[2]);
        return 0.5 + 0.5 * s / 3;
      }
      case TextureFamily::Stripes:
        return 0.5 + 0.5 * std::sin(2 * std::numbers::pi * (stripe_[0] * x + stripe_[1] * y) + stripe_[2]);
      case TextureFamily::Checker: {
        const auto i = static_cast<long>(std::floor((x + offset_[0]) / cell_));
        const auto j = static_cast<long>(std::floor((y + offset_[1]) / cell_));
        return ((i + j) & 1) ? 1.0 : 0.0;
      }
    }
    return 0;
  }

 private:
  TextureFamily family_;
  std::array<std::array<double, 3>, 3> waves_{};
  std::array<double, 3> stripe_{};
  double cell_ = 8;
  std::array<double, 2> offset_{};
};

std::mt19937_64 item_stream(std::uint64_t base, std::size_t i) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(static_cast<std::uint64_t>(i) >> 32)};
  return std::mt19937_64(seq);
}

std::string index_name(int i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d.%s", i, ext);
  return buf;
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

// Files named NNNNN.ext in dir, keyed by index.
std::map<int, fs::path> indexed_files(const fs::path& dir, const std::string& ext) {
  std::map<int, fs::path> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    const auto& p = entry.path();
    const std::string stem = p.stem().string();
    if (p.extension() != ext || stem.size() != 5 || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
    out.emplace(std::stoi(stem), p);
  }
  if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
  return out;
}

// Loads dir/first..last (inclusive) and rejects gaps or extras, naming the video and index.
template <typename Reader>
std::vector<Tensor<float>> load_sequence(const fs::path& dir, const std::string& ext, int first, int last,
                                         const std::string& video, Reader read) {
  const auto files = indexed_files(dir, ext);
  for (int i = first; i <= last; ++i) {
    if (!files.count(i)) {
      throw ValidationError("video " + video + ": missing " + dir.filename().string() + "/" +
                            index_name(i, ext.c_str() + 1));
    }
  }
  for (const auto& [i, p] : files) {
    if (i < first || i > last) {
      throw ValidationError("video " + video + ": unexpected " + dir.filename().string() + "/" +
                            p.filename().string() + " (count mismatch with frames)");
    }
  }
  std::vector<Tensor<float>> out(static_cast<std::size_t>(last - first + 1));
  parallel_for(out.size(), [&](std::size_t k) { out[k] = read(files.at(first + static_cast<int>(k))); });
  return out;
}

}  // namespace

Scene sample_scene(const SceneSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  constexpr double kMargin = 2.0;
  for (int attempt = 0; attempt < 256; ++attempt) {
    Scene s;
    s.width = spec.width;
    s.height = spec.height;
    s.frames = spec.frames;
    s.texture = spec.texture;
    s.texture_seed = rng();
    for (int c = 0; c < 3; ++c) {
      s.palette_a[c] = static_cast<float>(uniform(rng, 0.55, 0.95));
      s.palette_b[c] = static_cast<float>(std::max(0.05, s.palette_a[c] - uniform(rng, 0.05, 0.3)));
    }
    const int count = std::uniform_int_distribution<int>(spec.min_occluders, spec.max_occluders)(rng);
    const double base_size = uniform(rng, spec.min_size, spec.max_size);
    const double length = base_size * uniform(rng, spec.min_shadow_length, spec.max_shadow_length);
    const double light_angle = uniform(rng, 0, 2 * std::numbers::pi);
    s.light_dx = length * std::cos(light_angle);
    s.light_dy = length * std::sin(light_angle);
    s.darkening = std::bernoulli_distribution(spec.hard_case_fraction)(rng)
                      ? 1.0
                      : uniform(rng, spec.min_darkening, spec.max_darkening);

    s.trajectory = spec.frames == 1 ? TrajectoryKind::Static : pick(spec.trajectories, rng);
    const double dir = uniform(rng, 0, 2 * std::numbers::pi);
    if (s.trajectory == TrajectoryKind::Linear) {
      const double speed = uniform(rng, 0.5, 1.0) * spec.max_speed;
      s.vx = speed * std::cos(dir);
      s.vy = speed * std::sin(dir);
    } else if (s.trajectory == TrajectoryKind::Sinusoidal) {
      s.period = uniform(rng, 8, 16);
      const double amp = uniform(rng, 0.5, 1.0) * spec.max_speed * s.period / (2 * std::numbers::pi);
      s.vx = amp * std::cos(dir);
      s.vy = amp * std::sin(dir);
    }
    std::array<double, 2> dmin{0, 0}, dmax{0, 0};
    for (int t = 0; t < s.frames; ++t) {
      const auto d = s.displacement(t);
      for (int a = 0; a < 2; ++a) {
        dmin[a] = std::min(dmin[a], d[a]);
        dmax[a] = std::max(dmax[a], d[a]);
      }
    }
    const double lo_x = kMargin - std::min(0.0, s.light_dx) - dmin[0];
    const double hi_x = s.width - kMargin - std::max(0.0, s.light_dx) - dmax[0];
    const double lo_y = kMargin - std::min(0.0, s.light_dy) - dmin[1];
    const double hi_y = s.height - kMargin - std::max(0.0, s.light_dy) - dmax[1];
    if (lo_x > hi_x || lo_y > hi_y) continue;

    for (int i = 0; i < count; ++i) {
      Occluder o;
      o.kind = pick(spec.shapes, rng);
      o.size = i == 0 ? base_size : uniform(rng, spec.min_size, spec.max_size);
      o.aspect = o.kind == ShapeKind::Rectangle ? uniform(rng, 0.6, 1.4) : 1.0;
      o.cx = uniform(rng, lo_x, hi_x);
      o.cy = uniform(rng, lo_y, hi_y);
      for (auto& c : o.color) c = static_cast<float>(uniform(rng, 0.05, 0.95));
      s.occluders.push_back(o);
    }
    s.validate();
    return s;
  }
  throw ValidationError("degenerate scene spec: cannot keep occluders and shadows in frame");
}

LabeledSample render(const Scene& scene, int t) {
  if (t < 0 || t >= scene.frames) throw ValidationError("frame index out of range");
  const Texture texture(scene);
  const auto d = scene.displacement(t);
  LabeledSample out{Tensor<float>(Shape{1, 3, scene.height, scene.width}),
                    Tensor<float>(Shape{1, 1, scene.height, scene.width})};
  for (int y = 0; y < scene.height; ++y) {
    for (int x = 0; x < scene.width; ++x) {
      const double px = x + 0.5 - d[0], py = y + 0.5 - d[1];
      const Occluder* top = nullptr;
      bool shadow = false;
      for (const auto& o : scene.occluders) {
        if (o.contains(px, py)) top = &o;
        if (o.contains(px - scene.light_dx, py - scene.light_dy)) shadow = true;
      }
      const bool in_mask = shadow && top == nullptr;
      out.mask.at(0, 0, y, x) = in_mask ? 1.0f : 0.0f;
      const double s = texture(x + 0.5, y + 0.5);
      for (int c = 0; c < 3; ++c) {
        double v;
        if (top != nullptr) {
          v = top->color[c];
        } else {
          v = scene.palette_a[c] + s * (scene.palette_b[c] - scene.palette_a[c]);
          if (in_mask) v *= scene.darkening;
        }
        out.image.at(0, c, y, x) = static_cast<float>(v);
      }
    }
  }
  return out;
}

Video render_video(const Scene& scene, std::string id) {
  if (scene.frames < 3) throw ValidationError("videos need at least 3 frames");
  scene.validate();
  Video v;
  v.id = std::move(id);
  const int h = scene.height, w = scene.width, n = scene.frames;
  for (int t = 0; t < n; ++t) {
    auto s = render(scene, t);
    v.frames.push_back(std::move(s.image));
    v.masks.push_back(std::move(s.mask));
  }
  // Flow from frame t is the rigid step of the occluder+shadow support at t, zero elsewhere.
  auto flow_from = [&](int t, int to) {
    Tensor<float> f(Shape{1, 2, h, w});
    const auto d = scene.displacement(t), e = scene.displacement(to);
    const auto u = static_cast<float>(e[0] - d[0]), vv = static_cast<float>(e[1] - d[1]);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double px = x + 0.5 - d[0], py = y + 0.5 - d[1];
        bool support = false;
        for (const auto& o : scene.occluders) {
          if (o.contains(px, py) || o.contains(px - scene.light_dx, py - scene.light_dy)) {
            support = true;
            break;
          }
        }
        if (support) {
          f.at(0, 0, y, x) = u;
          f.at(0, 1, y, x) = vv;
        }
      }
    }
    return f;
  };
  for (int t = 0; t + 1 < n; ++t) v.flow_fwd.push_back(flow_from(t, t + 1));
  for (int t = 1; t < n; ++t) v.flow_bwd.push_back(flow_from(t, t - 1));
  return v;
}

void Video::validate() const {
  if (frames.size() < 3) throw ValidationError("video " + id + ": needs at least 3 frames");
  const Shape& s = frames.front().shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != 3) throw ValidationError("video " + id + ": frames must be 1x3xHxW");
  auto check = [&](const std::vector<Tensor<float>>& v, int channels, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i].shape() != Shape{1, channels, s[2], s[3]}) {
        throw ValidationError("video " + id + ": " + what + " " + std::to_string(i) + " has shape " +
                              shape_string(v[i].shape()));
      }
    }
  };
  check(frames, 3, "frame");
  check(masks, 1, "mask");
  check(flow_fwd, 2, "forward flow");
  check(flow_bwd, 2, "backward flow");
  if (!masks.empty() && masks.size() != frames.size())
    throw ValidationError("video " + id + ": mask count differs from frame count");
  if (flow_fwd.size() != flow_bwd.size() || (!flow_fwd.empty() && flow_fwd.size() + 1 != frames.size()))
    throw ValidationError("video " + id + ": needs T-1 flows per direction");
}

std::vector<LabeledSample> gen_labeled(const SceneSpec& spec, int n, std::mt19937_64& rng) {
  if (n <= 0) throw ValidationError("gen_labeled needs n > 0");
  SceneSpec still = spec;
  still.frames = 1;
  still.validate();
  const std::uint64_t base = rng();
  std::vector<LabeledSample> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), [&](std::size_t i) {
    auto item_rng = item_stream(base, i);
    out[i] = render(sample_scene(still, item_rng), 0);
  });
  return out;
}

Video gen_video(const SceneSpec& spec, std::mt19937_64& rng, std::string id) {
  if (spec.frames < 3) throw ValidationError("videos need at least 3 frames");
  return render_video(sample_scene(spec, rng), std::move(id));
}

std::vector<Video> gen_videos(const SceneSpec& spec, int count, std::mt19937_64& rng) {
  if (count < 0) throw ValidationError("video count must be non-negative");
  if (spec.frames < 3) throw ValidationError("videos need at least 3 frames");
  const std::uint64_t base = rng();
  std::vector<Video> out(static_cast<std::size_t>(count));
  parallel_for(out.size(), [&](std::size_t i) {
    auto item_rng = item_stream(base, i);
    char id[16];
    std::snprintf(id, sizeof id, "v%03zu", i);
    out[i] = gen_video(spec, item_rng, id);
  });
  return out;
}

void write_labeled(const fs::path& root, const std::vector<LabeledSample>& samples) {
  make_dirs(root / "labeled" / "images");
  make_dirs(root / "labeled" / "masks");
  parallel_for(samples.size(), [&](std::size_t i) {
    write_ppm(root / "labeled" / "images" / index_name(static_cast<int>(i), "ppm"), samples[i].image);
    write_pgm(root / "labeled" / "masks" / index_name(static_cast<int>(i), "pgm"), samples[i].mask);
  });
}

void write_video(const fs::path& dir, const Video& video) {
  video.validate();
  make_dirs(dir / "frames");
  if (video.has_masks()) make_dirs(dir / "masks");
  if (video.has_flows()) {
    make_dirs(dir / "flow_fwd");
    make_dirs(dir / "flow_bwd");
  }
  for (int t = 0; t < video.length(); ++t) {
    write_ppm(dir / "frames" / index_name(t, "ppm"), video.frames[t]);
    if (video.has_masks()) write_pgm(dir / "masks" / index_name(t, "pgm"), video.masks[t]);
    if (video.has_flows() && t + 1 < video.length()) {
      write_flo(dir / "flow_fwd" / index_name(t, "flo"), video.flow_fwd[t]);
      write_flo(dir / "flow_bwd" / index_name(t + 1, "flo"), video.flow_bwd[t]);
    }
  }
}

void write_dataset(const fs::path& root, const Dataset& dataset) {
  if (!dataset.labeled.empty()) write_labeled(root, dataset.labeled);
  for (const auto& v : dataset.videos) write_video(root / "videos" / v.id, v);
}

Video load_video(const fs::path& dir, bool require_flows) {
  Video v;
  v.id = dir.filename().string();
  if (v.id.empty()) v.id = dir.parent_path().filename().string();
  if (!fs::is_directory(dir / "frames")) throw IoError("video " + v.id + ": no frames/ directory in " + dir.string());
  const auto frame_files = indexed_files(dir / "frames", ".ppm");
  const int n = frame_files.empty() ? 0 : frame_files.rbegin()->first + 1;
  if (n < 3) throw ValidationError("video " + v.id + ": needs at least 3 frames");
  v.frames = load_sequence(dir / "frames", ".ppm", 0, n - 1, v.id, read_ppm);
  if (fs::is_directory(dir / "masks")) v.masks = load_sequence(dir / "masks", ".pgm", 0, n - 1, v.id, read_mask);
  const bool has_flow_dirs = fs::is_directory(dir / "flow_fwd") || fs::is_directory(dir / "flow_bwd");
  if (require_flows || has_flow_dirs) {
    for (const char* sub : {"flow_fwd", "flow_bwd"}) {
      if (!fs::is_directory(dir / sub)) throw ValidationError("video " + v.id + ": missing " + sub + "/ directory");
    }
    v.flow_fwd = load_sequence(dir / "flow_fwd", ".flo", 0, n - 2, v.id, read_flo);
    v.flow_bwd = load_sequence(dir / "flow_bwd", ".flo", 1, n - 1, v.id, read_flo);
  }
  v.validate();
  return v;
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
  Dataset ds;
  const fs::path images = root / "labeled" / "images", masks = root / "labeled" / "masks";
  const bool has_labeled = fs::is_directory(images);
  const bool has_videos = fs::is_directory(root / "videos");
  if (!has_labeled && !has_videos) throw ValidationError("dataset " + root.string() + " has neither labeled/ nor videos/");
  if (has_labeled) {
    const auto files = indexed_files(images, ".ppm");
    std::vector<fs::path> image_paths;
    for (const auto& [i, p] : files) {
      if (!fs::exists(masks / index_name(i, "pgm"))) {
        throw ValidationError("labeled image " + p.filename().string() + " has no mask " +
                              (masks / index_name(i, "pgm")).string());
      }
      image_paths.push_back(p);
    }
    ds.labeled.resize(image_paths.size());
    parallel_for(image_paths.size(), [&](std::size_t k) {
      auto& s = ds.labeled[k];
      s.image = read_ppm(image_paths[k]);
      s.mask = read_mask(masks / (image_paths[k].stem().string() + ".pgm"));
      if (s.mask.dim(2) != s.image.dim(2) || s.mask.dim(3) != s.image.dim(3)) {
        throw ValidationError("labeled image " + image_paths[k].filename().string() + ": mask size differs");
      }
    });
  }
  if (has_videos) {
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root / "videos"))
      if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) ds.videos.push_back(load_video(d));
  }
  return ds;
}

template <typename T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& items) {
  if (items.empty()) throw ShapeError("stack_batch needs at least one item");
  const Shape& s = items.front()->shape();
  if (s.size() != 4 || s[0] != 1) throw ShapeError("stack_batch items must be 1xCxHxW, got " + shape_string(s));
  Shape out_shape = s;
  out_shape[0] = static_cast<int>(items.size());
  std::vector<T> data;
  data.reserve(shape_numel(out_shape));
  for (const auto* t : items) {
    if (t->shape() != s) throw ShapeError("stack_batch items differ in shape");
    data.insert(data.end(), t->values().begin(), t->values().end());
  }
  return Tensor<T>(out_shape, std::move(data));
}

template Tensor<float> stack_batch(const std::vector<const Tensor<float>*>&);
template Tensor<double> stack_batch(const std::vector<const Tensor<double>*>&);

}  // namespace stict
