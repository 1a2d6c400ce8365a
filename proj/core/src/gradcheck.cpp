#include "stict/gradcheck.hpp"

#include <cmath>
#include <sstream>

namespace stict {

std::string GradcheckReport::summary() const {
  std::ostringstream os;
  os << (passed() ? "PASS" : "FAIL") << " checked=" << checked << " skipped=" << skipped << " failed=" << failed
     << " max_rel_error=" << max_rel_error;
  for (const auto& f : failures) {
    os << "\n  " << f.parameter << "[" << f.index << "] analytic=" << f.analytic << " numeric=" << f.numeric
       << " rel=" << f.rel_error;
  }
  return os.str();
}

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe evaluate(const LossBuilder& loss) {
  Tape<double> tape(false, true);
  const double v = loss(tape).value().item();
  if (!std::isfinite(v)) throw NumericalError("gradcheck: non-finite loss during probing");
  return {v, tape.branch_signature()};
}

}  // namespace

GradcheckReport gradcheck(const LossBuilder& loss, std::span<Parameter<double>* const> params,
                          const GradcheckOptions& options) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape(true);
    Var<double> l = loss(tape);
    if (!std::isfinite(l.value().item())) throw NumericalError("gradcheck: non-finite loss");
    tape.backward(l);
  }

  const std::uint64_t base = evaluate(loss).signature;
  GradcheckReport report;
  for (auto* p : params) {
    auto values = p->value.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + options.step;
      const Probe up = evaluate(loss);
      values[i] = original - options.step;
      const Probe down = evaluate(loss);
      values[i] = original;
      if (up.signature != base || down.signature != base) {
        ++report.skipped;  // the probe interval straddles a kink
        continue;
      }

      const double numeric = (up.value - down.value) / (2 * options.step);
      const double analytic = p->grad[i];
      const double diff = std::abs(analytic - numeric);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      const double rel = scale > 0 ? diff / scale : 0.0;
      ++report.checked;
      if (scale >= 100 * options.abs_tolerance) report.max_rel_error = std::max(report.max_rel_error, rel);
      if (diff > options.abs_tolerance && rel > options.rel_tolerance) {
        ++report.failed;
        if (report.failures.size() < options.max_reported) {
          report.failures.push_back({p->name, i, analytic, numeric, rel});
        }
      }
    }
  }
  return report;
}

}  // namespace stict
