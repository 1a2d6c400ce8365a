#include "stict/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace stict {
namespace {

struct Field {
  std::string key;
  std::string doc;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ValidationError(key + ": expected a number, got '" + s + "'");
  return v;
}

template <typename I>
I parse_int(const std::string& key, const std::string& s) {
  I v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ValidationError(key + ": expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ValidationError(key + ": expected true or false, got '" + s + "'");
}

template <typename E>
std::string join_enums(const std::vector<E>& v, const char* (*name)(E)) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::string(name(v[i]));
  return out;
}

std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  auto dbl = [&](std::string key, std::string doc, double& ref) {
    f.push_back({key, std::move(doc), [&ref] { return fmt_double(ref); },
                 [&ref, key](const std::string& s) { ref = parse_double(key, s); }});
  };
  auto integer = [&](std::string key, std::string doc, int& ref) {
    f.push_back({key, std::move(doc), [&ref] { return std::to_string(ref); },
                 [&ref, key](const std::string& s) { ref = parse_int<int>(key, s); }});
  };
  auto boolean = [&](std::string key, std::string doc, bool& ref) {
    f.push_back({key, std::move(doc), [&ref] { return std::string(ref ? "true" : "false"); },
                 [&ref, key](const std::string& s) { ref = parse_bool(key, s); }});
  };

  TrainConfig& t = c.train;
  f.push_back({"train.seed", "seed for initialization, data order and interpolation draws",
               [&t] { return std::to_string(t.seed); },
               [&t](const std::string& s) { t.seed = parse_int<std::uint64_t>("train.seed", s); }});
  integer("train.epochs", "number of epochs; the learning rate decays linearly to 0 over them", t.epochs);
  dbl("train.learning_rate", "initial Adam learning rate", t.learning_rate);
  dbl("train.ema_decay", "teacher EMA decay in [0, 1)", t.ema_decay);
  integer("train.labeled_batch", "labeled images per step", t.labeled_batch);
  integer("train.unlabeled_batch", "unlabeled frame triplets per step", t.unlabeled_batch);
  integer("train.k", "temporal offset of the triplet neighbours", t.k);
  dbl("train.lambda_t", "temporal interpolation weight of the previous frame", t.lambda_t);
  integer("train.window", "odd window size d for the interpolation partner search", t.window);
  f.push_back({"train.scheme", "spatial interpolation scheme: SI, RI-feature or RI-rgb",
               [&t] { return std::string(scheme_name(t.scheme)); },
               [&t](const std::string& s) { t.scheme = parse_scheme(s); }});
  boolean("train.use_sc", "scale consistency loss", t.use_sc);
  boolean("train.use_tic", "temporal interpolation consistency loss", t.use_tic);
  boolean("train.use_sic", "spatial interpolation consistency loss", t.use_sic);
  boolean("train.sic_all_frames", "spatial consistency on all triplet frames (false: middle frame only)",
          t.sic_all_frames);
  integer("train.ppa_window", "odd box size of the PPA local mean", t.ppa_window);
  dbl("train.ppa_factor", "PPA weight factor", t.ppa_factor);
  dbl("train.adam_beta1", "Adam first-moment decay", t.adam_beta1);
  dbl("train.adam_beta2", "Adam second-moment decay", t.adam_beta2);
  dbl("train.adam_eps", "Adam epsilon", t.adam_eps);

  dbl("loss.beta_max", "maximum weight of the unsupervised losses", t.weights.beta_max);
  integer("loss.t_max", "epochs of Gaussian ramp-up", t.weights.t_max);
  dbl("loss.eta_sic", "weight of the spatial consistency loss", t.weights.eta_sic);
  dbl("loss.eta_tic", "weight of the temporal consistency loss", t.weights.eta_tic);
  dbl("loss.eta_sc", "weight of the scale consistency loss", t.weights.eta_sc);

  f.push_back({"model.channels", "encoder channels per level, four comma-separated integers",
               [&t] {
                 const auto& ch = t.model.channels;
                 return std::to_string(ch[0]) + "," + std::to_string(ch[1]) + "," + std::to_string(ch[2]) + "," +
                        std::to_string(ch[3]);
               },
               [&t](const std::string& s) {
                 const auto items = split_list(s);
                 if (items.size() != 4) throw ValidationError("model.channels: expected four integers");
                 for (std::size_t i = 0; i < 4; ++i) t.model.channels[i] = parse_int<int>("model.channels", items[i]);
               }});
  boolean("model.ffm", "feature fusion modules in the decoder", t.model.ffm);
  boolean("model.refiner", "refiner pass (requires model.ffm)", t.model.refiner);
  boolean("model.dam", "detail attentive module in the refiner (requires model.refiner)", t.model.dam);

  integer("data.labeled_count", "labeled stills written by gen-data", c.labeled_count);
  integer("data.video_count", "training videos written by gen-data", c.video_count);
  integer("data.heldout_count", "held-out evaluation videos written by gen-data", c.heldout_count);
  f.push_back({"data.width", "frame width in pixels (multiple of 16)", [&c] { return std::to_string(c.labeled_scene.width); },
               [&c](const std::string& s) { c.labeled_scene.width = c.video_scene.width = parse_int<int>("data.width", s); }});
  f.push_back({"data.height", "frame height in pixels (multiple of 16)", [&c] { return std::to_string(c.labeled_scene.height); },
               [&c](const std::string& s) { c.labeled_scene.height = c.video_scene.height = parse_int<int>("data.height", s); }});
  integer("data.frames", "frames per video", c.video_scene.frames);

  for (auto [prefix, spec] : {std::pair<std::string, SceneSpec*>{"scene.labeled.", &c.labeled_scene},
                              std::pair<std::string, SceneSpec*>{"scene.video.", &c.video_scene}}) {
    SceneSpec& s = *spec;
    f.push_back({prefix + "texture", "background texture family: smooth, stripes or checker",
                 [&s] { return std::string(texture_name(s.texture)); },
                 [&s](const std::string& v) { s.texture = parse_texture(v); }});
    f.push_back({prefix + "shapes", "occluder shape family, comma-separated: disk, rectangle, triangle",
                 [&s] { return join_enums(s.shapes, shape_name); },
                 [&s](const std::string& v) {
                   s.shapes.clear();
                   for (const auto& item : split_list(v)) s.shapes.push_back(parse_shape(item));
                 }});
    integer(prefix + "min_occluders", "fewest occluders per scene", s.min_occluders);
    integer(prefix + "max_occluders", "most occluders per scene", s.max_occluders);
    dbl(prefix + "min_size", "smallest occluder radius or half-extent in pixels", s.min_size);
    dbl(prefix + "max_size", "largest occluder radius or half-extent in pixels", s.max_size);
    dbl(prefix + "min_shadow_length", "shortest shadow offset as a multiple of the occluder size", s.min_shadow_length);
    dbl(prefix + "max_shadow_length", "longest shadow offset as a multiple of the occluder size", s.max_shadow_length);
    dbl(prefix + "min_darkening", "lowest darkening factor inside shadows", s.min_darkening);
    dbl(prefix + "max_darkening", "highest darkening factor inside shadows", s.max_darkening);
    dbl(prefix + "hard_case_fraction", "probability of an invisible shadow (darkening 1)", s.hard_case_fraction);
    f.push_back({prefix + "trajectories", "trajectory family, comma-separated: static, linear, sinusoidal",
                 [&s] { return join_enums(s.trajectories, trajectory_name); },
                 [&s](const std::string& v) {
                   s.trajectories.clear();
                   for (const auto& item : split_list(v)) s.trajectories.push_back(parse_trajectory(item));
                 }});
    dbl(prefix + "max_speed", "largest occluder speed in pixels per frame", s.max_speed);
  }

  dbl("eval.threshold", "binarization threshold", c.eval.threshold);
  dbl("eval.beta2", "beta squared of the F-measure", c.eval.beta2);
  boolean("eval.strict", "fail when any frame holds a single ground-truth class", c.eval_strict);
  return f;
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  labeled_scene.validate();
  video_scene.validate();
  if (labeled_scene.width % 16 != 0 || labeled_scene.height % 16 != 0) {
    throw ValidationError("data.width and data.height must be multiples of 16");
  }
  if (labeled_count <= 0) throw ValidationError("data.labeled_count must be positive");
  if (video_count < 0 || heldout_count < 0) throw ValidationError("video counts must be non-negative");
  if ((video_count > 0 || heldout_count > 0) && video_scene.frames < 3) {
    throw ValidationError("data.frames must be at least 3");
  }
  if (video_scene.frames < 2 * train.k + 1 && train.any_unsupervised()) {
    throw ValidationError("data.frames is too short for triplets with train.k");
  }
  if (!(eval.threshold > 0 && eval.threshold <= 1)) throw ValidationError("eval.threshold must lie in (0, 1]");
  if (!(eval.beta2 > 0)) throw ValidationError("eval.beta2 must be positive");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields(const_cast<RunConfig&>(*this))) out += f.key + " = " + f.get() + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  auto list = fields(c);
  std::map<std::string, const Field*> by_key;
  for (const auto& f : list) by_key[f.key] = &f;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second->set(value);
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::vector<ConfigKey> config_keys() {
  RunConfig c;
  std::vector<ConfigKey> out;
  for (const auto& f : fields(c)) out.push_back({f.key, f.doc + " (default " + f.get() + ")"});
  return out;
}

}  // namespace stict
