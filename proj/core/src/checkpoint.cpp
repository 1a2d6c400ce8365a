#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stict/trainer.hpp"

namespace stict {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'S', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

struct Entry {
  std::string name;
  Tensor<float>* tensor;
};

// Every stored tensor in a fixed order: student, teacher, Adam moments, then running statistics.
std::vector<Entry> entries(TrainerState& s) {
  std::vector<Entry> out;
  auto add_model = [&](const std::string& prefix, SaNet<float>& net) {
    for (auto* p : net.parameters()) out.push_back({prefix + p->name, &p->value});
  };
  add_model("student/", s.student);
  add_model("teacher/", s.teacher);
  auto params = s.student.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"adam.m/" + params[i]->name, &s.adam.m[i]});
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"adam.v/" + params[i]->name, &s.adam.v[i]});
  auto add_stats = [&](const std::string& prefix, SaNet<float>& net) {
    for (auto* n : net.norms()) {
      for (std::size_t d = 0; d < 2; ++d) {
        const std::string base = prefix + n->name + "." + domain_name(static_cast<Domain>(d));
        out.push_back({base + ".mean", &n->stats[d].mean});
        out.push_back({base + ".var", &n->stats[d].var});
      }
    }
  };
  add_stats("student/", s.student);
  add_stats("teacher/", s.teacher);
  return out;
}

std::vector<std::uint64_t*> update_counters(TrainerState& s) {
  std::vector<std::uint64_t*> out;
  for (auto* net : {&s.student, &s.teacher})
    for (auto* n : net->norms())
      for (auto& st : n->stats) out.push_back(&st.updates);
  return out;
}

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  template <typename V>
  V get(const char* what) {
    need(sizeof(V), what);
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw FormatError("checkpoint " + path_ + ": " + msg, at);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated while reading ") + what, bytes_.size());
  }

  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

struct StoredEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

}  // namespace

void save_checkpoint(const TrainerState& state_in, const std::filesystem::path& path) {
  auto& state = const_cast<TrainerState&>(state_in);
  const auto list = entries(state);
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put(kVersion);
  w.put(static_cast<std::uint32_t>(list.size()));
  for (const auto& e : list) {
    if (e.name.size() > 0xFFFF) throw ValidationError("checkpoint entry name too long: " + e.name);
    w.put(static_cast<std::uint16_t>(e.name.size()));
    w.put_bytes(e.name.data(), e.name.size());
    const Shape& s = e.tensor->shape();
    w.put(static_cast<std::uint8_t>(s.size()));
    for (int d : s) w.put(static_cast<std::uint32_t>(d));
    w.put_bytes(e.tensor->data().data(), e.tensor->size() * sizeof(float));
  }
  // Trailer: counters, normalization update counts, random stream state.
  w.put(static_cast<std::uint32_t>(state.epoch));
  w.put(state.step);
  const auto counters = update_counters(state);
  w.put(static_cast<std::uint32_t>(counters.size()));
  for (auto* c : counters) w.put(*c);
  std::ostringstream rng_text;
  rng_text << state.rng;
  const std::string rs = rng_text.str();
  w.put(static_cast<std::uint32_t>(rs.size()));
  w.put_bytes(rs.data(), rs.size());

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

void load_checkpoint(TrainerState& state, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  Reader r(std::move(bytes), path.string());

  const std::string magic = r.get_bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) r.fail("bad magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version), 4);
  const auto count = r.get<std::uint32_t>("entry count");

  std::vector<StoredEntry> stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredEntry e;
    const auto len = r.get<std::uint16_t>("entry name length");
    e.name = r.get_bytes(len, "entry name");
    const std::size_t rank_at = r.pos();
    const auto rank = r.get<std::uint8_t>("entry rank");
    std::uint64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      const auto extent = r.get<std::uint32_t>("entry dims");
      if (extent == 0 || extent > (1u << 30)) r.fail("invalid extent in entry " + e.name, r.pos() - 4);
      e.shape.push_back(static_cast<int>(extent));
      numel *= extent;
      if (numel > (1ull << 32)) r.fail("dimension overflow in entry " + e.name, rank_at);
    }
    if (numel * sizeof(float) > r.remaining()) r.fail("truncated values of entry " + e.name, r.pos() + r.remaining());
    const std::string raw = r.get_bytes(numel * sizeof(float), "entry values");
    e.values.resize(numel);
    std::memcpy(e.values.data(), raw.data(), raw.size());
    stored.push_back(std::move(e));
  }
  const auto epoch = r.get<std::uint32_t>("epoch counter");
  const auto step = r.get<std::uint64_t>("step counter");
  const auto n_counters = r.get<std::uint32_t>("update counter count");
  std::vector<std::uint64_t> counters;
  for (std::uint32_t i = 0; i < n_counters; ++i) counters.push_back(r.get<std::uint64_t>("update counters"));
  const auto rng_len = r.get<std::uint32_t>("rng state length");
  const std::string rng_text = r.get_bytes(rng_len, "rng state");
  if (r.remaining() != 0) r.fail("trailing bytes", r.pos());

  const auto expected = entries(state);
  for (std::size_t i = 0; i < std::min(expected.size(), stored.size()); ++i) {
    if (stored[i].name != expected[i].name || stored[i].shape != expected[i].tensor->shape()) {
      throw ValidationError("checkpoint does not match the model: expected " + expected[i].name + " " +
                            shape_string(expected[i].tensor->shape()) + ", found " + stored[i].name + " " +
                            shape_string(stored[i].shape));
    }
  }
  if (expected.size() != stored.size()) {
    const std::string first = expected.size() > stored.size() ? "missing " + expected[stored.size()].name
                                                              : "unexpected " + stored[expected.size()].name;
    throw ValidationError("checkpoint does not match the model: " + first);
  }
  auto slots = update_counters(state);
  if (slots.size() != counters.size()) throw ValidationError("checkpoint does not match the model: norm layer count");
  std::mt19937_64 rng;
  std::istringstream rng_in(rng_text);
  rng_in >> rng;
  if (!rng_in) throw FormatError("checkpoint " + path.string() + ": unreadable rng state", 0);

  for (std::size_t i = 0; i < stored.size(); ++i) {
    *expected[i].tensor = Tensor<float>(stored[i].shape, std::move(stored[i].values));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = counters[i];
  for (auto* p : state.student.parameters()) p->zero_grad();
  state.epoch = static_cast<int>(epoch);
  state.step = step;
  state.rng = rng;
}

}  // namespace stict
