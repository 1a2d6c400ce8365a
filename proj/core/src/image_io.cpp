#include "stict/image_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace stict {
namespace {

static_assert(std::endian::native == std::endian::little, "file I/O assumes a little-endian host");

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

void dump(const std::filesystem::path& path, const std::string& header, const std::vector<unsigned char>& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

unsigned char quantize(float v, const std::filesystem::path& path) {
  if (!std::isfinite(v)) throw NumericalError("non-finite pixel value while writing " + path.string());
  const float c = std::min(std::max(v, 0.0f), 1.0f);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

// Netpbm header tokens: magic, width, height, maxval, separated by whitespace and comments.
struct PnmHeader {
  int width = 0;
  int height = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm(const std::vector<unsigned char>& bytes, const char* magic, const std::filesystem::path& path) {
  const std::string where = " in " + path.string();
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw FormatError(std::string("bad magic, expected ") + magic + where, 0);
  }
  std::size_t pos = 2;
  std::size_t start = pos;
  auto next_token = [&]() -> long long {
    for (;;) {
      if (pos >= bytes.size()) throw FormatError("truncated header" + where, pos);
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    start = pos;
    long long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > std::numeric_limits<int>::max()) throw FormatError("dimension overflow" + where, start);
      ++pos;
    }
    if (pos == start) throw FormatError("expected a number in header" + where, start);
    return v;
  };
  PnmHeader h;
  h.width = static_cast<int>(next_token());
  if (h.width <= 0) throw FormatError("non-positive image extent" + where, start);
  h.height = static_cast<int>(next_token());
  if (h.height <= 0) throw FormatError("non-positive image extent" + where, start);
  const long long maxval = next_token();
  if (maxval != 255) throw FormatError("unsupported maxval " + std::to_string(maxval) + where, start);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("truncated header" + where, pos);
  h.data_offset = pos + 1;
  return h;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor<float>& frame) {
  require_rank4(frame, "write_ppm");
  if (frame.dim(0) != 1 || frame.dim(1) != 3) throw ShapeError("write_ppm expects 1x3xHxW, got " + shape_string(frame.shape()));
  const int h = frame.dim(2), w = frame.dim(3);
  std::vector<unsigned char> body(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        body[(static_cast<std::size_t>(y) * w + x) * 3 + c] = quantize(frame.at(0, c, y, x), path);
  dump(path, "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n", body);
}

Tensor<float> read_ppm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const PnmHeader hd = parse_pnm(bytes, "P6", path);
  const std::size_t need = static_cast<std::size_t>(hd.width) * hd.height * 3;
  if (bytes.size() - hd.data_offset < need) {
    throw FormatError("truncated pixel data in " + path.string(), bytes.size());
  }
  Tensor<float> out(Shape{1, 3, hd.height, hd.width});
  for (int y = 0; y < hd.height; ++y)
    for (int x = 0; x < hd.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(0, c, y, x) = bytes[hd.data_offset + (static_cast<std::size_t>(y) * hd.width + x) * 3 + c] / 255.0f;
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor<float>& map) {
  require_rank4(map, "write_pgm");
  if (map.dim(0) != 1 || map.dim(1) != 1) throw ShapeError("write_pgm expects 1x1xHxW, got " + shape_string(map.shape()));
  const int h = map.dim(2), w = map.dim(3);
  std::vector<unsigned char> body(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < body.size(); ++i) body[i] = quantize(map[i], path);
  dump(path, "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n", body);
}

namespace {

struct PgmData {
  Tensor<float> map;
  std::size_t data_offset;
};

PgmData load_pgm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const PnmHeader hd = parse_pnm(bytes, "P5", path);
  const std::size_t need = static_cast<std::size_t>(hd.width) * hd.height;
  if (bytes.size() - hd.data_offset < need) {
    throw FormatError("truncated pixel data in " + path.string(), bytes.size());
  }
  Tensor<float> out(Shape{1, 1, hd.height, hd.width});
  for (std::size_t i = 0; i < need; ++i) out[i] = bytes[hd.data_offset + i] / 255.0f;
  return {std::move(out), hd.data_offset};
}

}  // namespace

Tensor<float> read_pgm(const std::filesystem::path& path) { return load_pgm(path).map; }

Tensor<float> read_mask(const std::filesystem::path& path) {
  PgmData d = load_pgm(path);
  Tensor<float>& m = d.map;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0f && m[i] != 1.0f) {
      throw FormatError("mask " + path.string() + " holds a value other than 0/255", d.data_offset + i);
    }
  }
  return m;
}

void write_flo(const std::filesystem::path& path, const Tensor<float>& flow) {
  require_rank4(flow, "write_flo");
  if (flow.dim(0) != 1 || flow.dim(1) != 2) throw ShapeError("write_flo expects 1x2xHxW, got " + shape_string(flow.shape()));
  const std::int32_t h = flow.dim(2), w = flow.dim(3);
  std::vector<unsigned char> body(12 + static_cast<std::size_t>(h) * w * 8);
  std::memcpy(body.data(), &kFloSentinel, 4);
  std::memcpy(body.data() + 4, &w, 4);
  std::memcpy(body.data() + 8, &h, 4);
  unsigned char* p = body.data() + 12;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float u = flow.at(0, 0, y, x);
      const float v = flow.at(0, 1, y, x);
      std::memcpy(p, &u, 4);
      std::memcpy(p + 4, &v, 4);
      p += 8;
    }
  dump(path, "", body);
}

Tensor<float> read_flo(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 4) throw FormatError("truncated .flo header in " + path.string(), bytes.size());
  float sentinel;
  std::memcpy(&sentinel, bytes.data(), 4);
  if (sentinel != kFloSentinel) throw FormatError("bad .flo sentinel in " + path.string(), 0);
  if (bytes.size() < 12) throw FormatError("truncated .flo header in " + path.string(), bytes.size());
  std::int32_t w, h;
  std::memcpy(&w, bytes.data() + 4, 4);
  std::memcpy(&h, bytes.data() + 8, 4);
  if (w <= 0 || h <= 0) throw FormatError("non-positive .flo extent in " + path.string(), 4);
  const std::uint64_t need = 12 + static_cast<std::uint64_t>(w) * static_cast<std::uint64_t>(h) * 8;
  if (need > (1ull << 40)) throw FormatError("dimension overflow in " + path.string(), 4);
  if (bytes.size() < need) throw FormatError("truncated .flo data in " + path.string(), bytes.size());
  Tensor<float> out(Shape{1, 2, h, w});
  const unsigned char* p = bytes.data() + 12;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::memcpy(&out.at(0, 0, y, x), p, 4);
      std::memcpy(&out.at(0, 1, y, x), p + 4, 4);
      p += 8;
    }
  return out;
}

}  // namespace stict
