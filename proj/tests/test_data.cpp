#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "stict/data.hpp"
#include "stict/image_io.hpp"
#include "stict/ops.hpp"
#include "support.hpp"

using namespace stict;
namespace fs = std::filesystem;

namespace {

Scene disk_scene(double r, double cx, double cy, double light_dx) {
  Scene s;
  s.width = 64;
  s.height = 64;
  s.frames = 1;
  Occluder o;
  o.kind = ShapeKind::Disk;
  o.size = r;
  o.cx = cx;
  o.cy = cy;
  s.occluders = {o};
  s.light_dx = light_dx;
  s.light_dy = 0;
  return s;
}

// Independent rasterizer: a pixel is in the mask when at least half of its 4x4 subsamples
// are in the cast shadow and outside every occluder.
Tensor<float> supersampled_mask(const Scene& scene, int t) {
  const auto d = scene.displacement(t);
  Tensor<float> m(Shape{1, 1, scene.height, scene.width});
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
          const double px = x + (sx + 0.5) / 4 - d[0], py = y + (sy + 0.5) / 4 - d[1];
          bool body = false, shade = false;
          for (const auto& o : scene.occluders) {
            body = body || o.contains(px, py);
            shade = shade || o.contains(px - scene.light_dx, py - scene.light_dy);
          }
          hits += shade && !body;
        }
      m.at(0, 0, y, x) = hits >= 8 ? 1.f : 0.f;
    }
  return m;
}

double area(const Tensor<float>& m) {
  double a = 0;
  for (float v : m.data()) a += v;
  return a;
}

}  // namespace

TEST_CASE("disk shadow area matches pi r^2 within the perimeter") {
  for (double r : {3.0, 4.5, 6.0, 8.25, 11.0}) {
    const auto s = render(disk_scene(r, 16.3, 31.7, 30.0), 0);
    const double analytic = std::numbers::pi * r * r;
    CHECK(std::abs(area(s.mask) - analytic) <= 2 * std::numbers::pi * r);
  }
}

TEST_CASE("mask excludes the occluder body and darkens only inside the mask") {
  Scene sc = disk_scene(6, 30, 32, 5);  // shadow overlaps the body
  sc.darkening = 0.5;
  const auto dark = render(sc, 0);
  sc.darkening = 1.0;
  const auto plain = render(sc, 0);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const bool body = sc.occluders[0].contains(x + 0.5, y + 0.5);
      if (body) CHECK(dark.mask.at(0, 0, y, x) == 0.f);
      for (int c = 0; c < 3; ++c) {
        const float a = dark.image.at(0, c, y, x), b = plain.image.at(0, c, y, x);
        if (dark.mask.at(0, 0, y, x) == 1.f) {
          CHECK(a == doctest::Approx(0.5 * b));
        } else {
          CHECK(a == b);
        }
      }
    }
}

TEST_CASE("hard cases: invisible shadow with a non-empty mask") {
  SceneSpec spec;
  spec.hard_case_fraction = 1.0;
  std::mt19937_64 rng(3);
  for (const auto& s : gen_labeled(spec, 10, rng)) {
    CHECK(area(s.mask) > 0);
  }
  std::mt19937_64 rng2(4);
  const Scene sc = sample_scene(spec, rng2);
  CHECK(sc.darkening == 1.0);
  Scene lit = sc;
  lit.light_dx = 1000;  // shadow leaves the frame: same picture without any shadow
  lit.light_dy = 0;
  CHECK(render(sc, 0).image.bitwise_equal(render(lit, 0).image));
}

TEST_CASE("masks agree with a 4x supersampled rasterizer on >= 99% of pixels") {
  std::mt19937_64 rng(5);
  for (const SceneSpec& base : {SceneSpec::labeled_domain(), SceneSpec::video_domain()}) {
    SceneSpec spec = base;
    spec.shapes = {ShapeKind::Disk, ShapeKind::Rectangle, ShapeKind::Triangle};
    for (int i = 0; i < 25; ++i) {
      const Scene sc = sample_scene(spec, rng);
      const int t = i % spec.frames;
      const auto m = render(sc, t).mask;
      const auto ref = supersampled_mask(sc, t);
      std::size_t agree = 0;
      for (std::size_t k = 0; k < m.size(); ++k) agree += m[k] == ref[k];
      CHECK(static_cast<double>(agree) / static_cast<double>(m.size()) >= 0.99);
    }
  }
}

TEST_CASE("masks are binary and frames lie in [0, 1]") {
  std::mt19937_64 rng(6);
  SceneSpec spec = SceneSpec::video_domain();
  spec.texture = TextureFamily::Checker;
  const Video v = gen_video(spec, rng);
  for (int t = 0; t < v.length(); ++t) {
    for (float m : v.masks[static_cast<std::size_t>(t)].data()) CHECK((m == 0.f || m == 1.f));
    for (float p : v.frames[static_cast<std::size_t>(t)].data()) CHECK((p >= 0.f && p <= 1.f));
  }
}

TEST_CASE("a video of T frames has T-1 flows per direction") {
  std::mt19937_64 rng(7);
  for (int frames : {3, 5, 24}) {
    SceneSpec spec = SceneSpec::video_domain();
    spec.frames = frames;
    const Video v = gen_video(spec, rng);
    CHECK(v.length() == frames);
    CHECK(v.masks.size() == static_cast<std::size_t>(frames));
    CHECK(v.flow_fwd.size() == static_cast<std::size_t>(frames - 1));
    CHECK(v.flow_bwd.size() == static_cast<std::size_t>(frames - 1));
  }
  SceneSpec two = SceneSpec::video_domain();
  two.frames = 2;
  CHECK_THROWS_AS(gen_video(two, rng), ValidationError);
}

TEST_CASE("static trajectory: zero flows and identical masks") {
  SceneSpec spec = SceneSpec::video_domain();
  spec.trajectories = {TrajectoryKind::Static};
  spec.frames = 6;
  std::mt19937_64 rng(8);
  const Video v = gen_video(spec, rng);
  for (const auto& f : v.flow_fwd)
    for (float x : f.data()) CHECK(x == 0.f);
  for (const auto& f : v.flow_bwd)
    for (float x : f.data()) CHECK(x == 0.f);
  for (const auto& m : v.masks) CHECK(m.bitwise_equal(v.masks[0]));
  for (const auto& f : v.frames) CHECK(f.bitwise_equal(v.frames[0]));
}

TEST_CASE("velocity (2, 0): warped next mask equals the mask up to the motion band") {
  Scene sc = disk_scene(6, 20, 30, 9);
  sc.frames = 5;
  sc.trajectory = TrajectoryKind::Linear;
  sc.vx = 2;
  sc.vy = 0;
  const Video v = render_video(sc, "lin");
  for (int t = 0; t + 1 < v.length(); ++t) {
    const auto warped = warp(v.masks[static_cast<std::size_t>(t + 1)], v.flow_fwd[static_cast<std::size_t>(t)]);
    const auto& m = v.masks[static_cast<std::size_t>(t)];
    int mismatches = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        if (warped.at(0, 0, y, x) == m.at(0, 0, y, x)) continue;
        ++mismatches;
        // Flow is zero off the support, so pixels the shadow is about to cover keep the
        // next mask. They sit within |v| = 2 px ahead of the current mask.
        bool near = false;
        for (int dx = 1; dx <= 2; ++dx) near = near || (x - dx >= 0 && m.at(0, 0, y, x - dx) == 1.f);
        CHECK(near);
        CHECK(m.at(0, 0, y, x) == 0.f);
      }
    CHECK(mismatches > 0);
    CHECK(mismatches <= 2 * 2 * 7);  // band width |v| times the disk height
  }
}

TEST_CASE("brightness constancy on occluder interiors") {
  std::mt19937_64 rng(9);
  SceneSpec spec = SceneSpec::video_domain();
  spec.frames = 8;
  for (int i = 0; i < 6; ++i) {
    spec.trajectories = {i % 2 == 0 ? TrajectoryKind::Linear : TrajectoryKind::Sinusoidal};
    const Scene sc = sample_scene(spec, rng);
    const Video v = render_video(sc, "bc");
    for (int t = 0; t + 1 < v.length(); ++t) {
      const auto d = sc.displacement(t);
      const auto warped = warp(v.frames[static_cast<std::size_t>(t + 1)], v.flow_fwd[static_cast<std::size_t>(t)]);
      for (int y = 2; y < 62; ++y)
        for (int x = 2; x < 62; ++x) {
          // Interior: the pixel and its 5x5 neighbourhood belong to the topmost occluder.
          const Occluder* top = nullptr;
          bool interior = true;
          for (int dy = -2; dy <= 2 && interior; ++dy)
            for (int dx = -2; dx <= 2 && interior; ++dx) {
              const Occluder* here = nullptr;
              for (const auto& o : sc.occluders)
                if (o.contains(x + dx + 0.5 - d[0], y + dy + 0.5 - d[1])) here = &o;
              if (here == nullptr || (top != nullptr && here != top)) interior = false;
              top = here;
            }
          if (!interior) continue;
          for (int c = 0; c < 3; ++c)
            CHECK(std::abs(warped.at(0, c, y, x) - v.frames[static_cast<std::size_t>(t)].at(0, c, y, x)) < 2.0 / 255);
        }
    }
  }
}

TEST_CASE("generation is deterministic and item streams are independent of n") {
  SceneSpec spec;
  std::mt19937_64 a(42), b(42), c(42);
  const auto x = gen_labeled(spec, 12, a);
  const auto y = gen_labeled(spec, 12, b);
  const auto z = gen_labeled(spec, 5, c);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x[i].image.bitwise_equal(y[i].image));
    CHECK(x[i].mask.bitwise_equal(y[i].mask));
  }
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(x[i].image.bitwise_equal(z[i].image));
  std::mt19937_64 va(7), vb(7);
  SceneSpec vs = SceneSpec::video_domain();
  vs.frames = 4;
  const auto v1 = gen_videos(vs, 3, va), v2 = gen_videos(vs, 3, vb);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(v1[i].id == v2[i].id);
    for (int t = 0; t < 4; ++t) CHECK(v1[i].frames[static_cast<std::size_t>(t)].bitwise_equal(v2[i].frames[static_cast<std::size_t>(t)]));
    for (int t = 0; t < 3; ++t) CHECK(v1[i].flow_fwd[static_cast<std::size_t>(t)].bitwise_equal(v2[i].flow_fwd[static_cast<std::size_t>(t)]));
  }
  CHECK(v1[2].id == "v002");
}

TEST_CASE("scene and spec validation") {
  SceneSpec spec;
  spec.min_size = 40;
  spec.max_size = 45;
  std::mt19937_64 rng(10);
  CHECK_THROWS_AS(sample_scene(spec, rng), ValidationError);
  spec = SceneSpec{};
  spec.min_darkening = 0;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec = SceneSpec{};
  spec.shapes.clear();
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  Scene sc = disk_scene(5, 30, 30, 8);
  sc.frames = 30;
  sc.trajectory = TrajectoryKind::Linear;
  sc.vx = 3;
  CHECK_THROWS_AS(sc.validate(), ValidationError);
  CHECK_THROWS_AS(parse_shape("hexagon"), ValidationError);
  CHECK(parse_texture("stripes") == TextureFamily::Stripes);
  std::mt19937_64 r2(1);
  CHECK_THROWS_AS(gen_labeled(SceneSpec{}, 0, r2), ValidationError);
}

TEST_CASE("dataset write/load round trip") {
  test::TempDir dir("data");
  std::mt19937_64 rng(11);
  Dataset ds;
  ds.labeled = gen_labeled(SceneSpec{}, 4, rng);
  SceneSpec vs = SceneSpec::video_domain();
  vs.frames = 5;
  ds.videos = gen_videos(vs, 2, rng);
  write_dataset(dir.path(), ds);
  CHECK(fs::exists(dir / "videos/v001/flow_fwd/00003.flo"));
  CHECK_FALSE(fs::exists(dir / "videos/v001/flow_fwd/00004.flo"));
  CHECK(fs::exists(dir / "videos/v001/flow_bwd/00004.flo"));
  CHECK_FALSE(fs::exists(dir / "videos/v001/flow_bwd/00000.flo"));

  const Dataset back = load_dataset(dir.path());
  REQUIRE(back.labeled.size() == 4);
  REQUIRE(back.videos.size() == 2);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.labeled[i].mask.bitwise_equal(ds.labeled[i].mask));
    for (std::size_t k = 0; k < back.labeled[i].image.size(); ++k)
      CHECK(std::abs(back.labeled[i].image[k] - ds.labeled[i].image[k]) <= 0.5f / 255 + 1e-6f);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.videos[i].id == ds.videos[i].id);
    for (std::size_t t = 0; t < 4; ++t) {
      CHECK(back.videos[i].flow_fwd[t].bitwise_equal(ds.videos[i].flow_fwd[t]));
      CHECK(back.videos[i].flow_bwd[t].bitwise_equal(ds.videos[i].flow_bwd[t]));
    }
  }
  // Quantized values survive a second trip unchanged.
  test::TempDir again("data2");
  write_dataset(again.path(), back);
  const Dataset twice = load_dataset(again.path());
  for (std::size_t i = 0; i < 4; ++i) CHECK(twice.labeled[i].image.bitwise_equal(back.labeled[i].image));
  for (std::size_t t = 0; t < 5; ++t) CHECK(twice.videos[1].frames[t].bitwise_equal(back.videos[1].frames[t]));
}

TEST_CASE("loader errors name the offending file") {
  test::TempDir dir("data_err");
  std::mt19937_64 rng(12);
  SceneSpec vs = SceneSpec::video_domain();
  vs.frames = 6;
  Dataset ds;
  ds.labeled = gen_labeled(SceneSpec{}, 2, rng);
  ds.videos = gen_videos(vs, 2, rng);
  write_dataset(dir.path(), ds);

  fs::remove(dir / "videos/v001/flow_fwd/00002.flo");
  try {
    load_dataset(dir.path());
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("v001") != std::string::npos);
    CHECK(msg.find("00002") != std::string::npos);
  }
  fs::copy_file(dir / "videos/v001/flow_fwd/00001.flo", dir / "videos/v001/flow_fwd/00002.flo");
  CHECK_NOTHROW(load_dataset(dir.path()));
  fs::copy_file(dir / "videos/v001/flow_fwd/00001.flo", dir / "videos/v001/flow_fwd/00005.flo");
  CHECK_THROWS_AS(load_dataset(dir.path()), ValidationError);
  fs::remove(dir / "videos/v001/flow_fwd/00005.flo");

  fs::remove(dir / "labeled/masks/00001.pgm");
  CHECK_THROWS_AS(load_dataset(dir.path()), ValidationError);

  // A video without masks loads as unlabeled.
  fs::remove_all(dir / "videos/v000/masks");
  const Video v = load_video(dir / "videos/v000");
  CHECK_FALSE(v.has_masks());
  CHECK(v.has_flows());

  test::TempDir empty("data_empty");
  CHECK_THROWS_AS(load_dataset(empty.path()), ValidationError);
  CHECK_THROWS_AS(load_dataset(empty / "missing"), IoError);
}

TEST_CASE("stack_batch concatenates along the batch axis") {
  const Tensor<float> a(Shape{1, 2, 2, 2}, 1.f), b(Shape{1, 2, 2, 2}, 2.f);
  const auto s = stack_batch<float>({&a, &b});
  CHECK(s.shape() == Shape{2, 2, 2, 2});
  CHECK(s.at(1, 1, 1, 1) == 2.f);
  CHECK(s.at(0, 1, 1, 1) == 1.f);
  const Tensor<float> c(Shape{1, 2, 2, 3});
  CHECK_THROWS_AS(stack_batch<float>({&a, &c}), ShapeError);
}
