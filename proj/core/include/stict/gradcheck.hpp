#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stict/autograd.hpp"

namespace stict {

struct GradcheckOptions {
  double step = 1e-4;
  double rel_tolerance = 1e-4;
  double abs_tolerance = 1e-7;
  /// Keep at most this many failing entries in the report.
  std::size_t max_reported = 16;
};

struct GradcheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradcheckReport {
  std::size_t checked = 0;  // elements compared
  std::size_t skipped = 0;  // elements whose probes crossed a ReLU or clamp boundary
  std::size_t failed = 0;
  double max_rel_error = 0;  // over elements with max(|a|, |n|) >= 100 * abs_tolerance
  std::vector<GradcheckEntry> failures;

  /// No failures, and kink skips stay at or under a quarter of the probed elements.
  bool passed() const { return checked > 0 && failed == 0 && skipped * 4 <= checked + skipped; }
  std::string summary() const;
};

/// Builds the scalar loss on the supplied tape, reading parameters through tape.parameter().
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

/// Compares reverse-mode gradients with central differences (f(p+h) - f(p-h)) / 2h for
/// every element of every parameter. An element passes when |a - n| <= abs_tolerance or
/// |a - n| / max(|a|, |n|) <= rel_tolerance. Elements whose +h or -h probe takes a
/// different branch of a non-smooth op than the unperturbed loss are skipped, since the
/// difference quotient then straddles a kink. Throws NumericalError on a non-finite loss.
GradcheckReport gradcheck(const LossBuilder& loss, std::span<Parameter<double>* const> params,
                          const GradcheckOptions& options = {});

}  // namespace stict
