#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stict/metrics.hpp"
#include "stict/trainer.hpp"

namespace stict {

/// Everything a CLI run can be configured with, as flat `key = value` lines.
/// Lines starting with '#' and blank lines are ignored; unknown keys are rejected.
struct RunConfig {
  TrainConfig train;
  SceneSpec labeled_scene = SceneSpec::labeled_domain();
  SceneSpec video_scene = SceneSpec::video_domain();
  int labeled_count = 200;
  int video_count = 12;
  int heldout_count = 4;  // held-out videos written to <out>/heldout
  EvalOptions eval;
  bool eval_strict = false;

  /// Throws ValidationError if any module invariant is violated.
  void validate() const;

  /// Every key with its resolved value, one per line, in a fixed order.
  std::string to_text() const;
  /// Applies `text` on top of the defaults; does not validate.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  bool operator==(const RunConfig& other) const { return to_text() == other.to_text(); }
};

struct ConfigKey {
  std::string key;
  std::string doc;
};

/// Key names with one-line descriptions, in to_text() order.
std::vector<ConfigKey> config_keys();

}  // namespace stict
