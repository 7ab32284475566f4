#pragma once

#include "cpnkit/config.hpp"
#include "cpnkit/param_store.hpp"

#include <string>

namespace cpnkit {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct StepReport {
  bool applied = false;
  double learning_rate = 0;
  std::string rejected_by;  // first parameter with a non-finite gradient
};

/// One Adam update of every trainable entry from its grad slot (absent slot =
/// zero gradient). `step` counts from 0. Weight decay is decoupled:
/// w <- w (1 - lr wd) before the moment update. Nothing changes when any
/// gradient is non-finite.
template <typename Scalar>
StepReport adam_step(ParamStore<Scalar>& params, const TrainConfig& config, std::int64_t step,
                     const AdamOptions& options = {});

}  // namespace cpnkit
