#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stict/gradcheck.hpp"
#include "stict/sanet.hpp"

namespace stict {

/// One registered differentiable operation: builds random double-precision inputs from
/// the seed and compares its gradients against central differences.
struct OpCheck {
  std::string name;
  std::function<GradcheckReport(std::uint64_t seed, const GradcheckOptions&)> run;
};

/// Every differentiable operation, including the loss compositions and fusion modules.
const std::vector<OpCheck>& op_checks();

struct ModelCheckOptions {
  ModelConfig model{{2, 4, 4, 8}, true, true, true};
  int batch = 4;
  int size = 16;
};

/// Central-difference step for the whole-network check. Truncation error through the
/// deep composition is ~h^2 and already exceeds 1e-4 relative at h = 1e-4 on some seeds.
inline constexpr double kModelCheckStep = 1e-5;

/// Options for model_gradcheck: the defaults with step kModelCheckStep.
GradcheckOptions model_check_defaults();

/// The whole network plus the deep-supervision loss on a random labeled batch.
GradcheckReport model_gradcheck(std::uint64_t seed, const GradcheckOptions& options = model_check_defaults(),
                                const ModelCheckOptions& model = {});

}  // namespace stict
