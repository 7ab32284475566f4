#include "cpnkit/optim.hpp"

#include <cmath>

namespace cpnkit {

template <typename Scalar>
StepReport adam_step(ParamStore<Scalar>& params, const TrainConfig& config, std::int64_t step,
                     const AdamOptions& options) {
  StepReport report;
  report.learning_rate = config.learning_rate_at(step);
  for (const auto& e : params.entries()) {
    if (e.trainable && e.value.has_grad() && !e.value.grad().allFinite()) {
      report.rejected_by = e.name;
      return report;
    }
  }
  const double lr = report.learning_rate;
  const double t = static_cast<double>(step + 1);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  const auto b1 = static_cast<Scalar>(options.beta1);
  const auto b2 = static_cast<Scalar>(options.beta2);
  const auto decay = static_cast<Scalar>(1.0 - lr * config.weight_decay);
  const auto step_size = static_cast<Scalar>(lr / c1);
  const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
  const auto eps = static_cast<Scalar>(options.epsilon);
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    e.value.data() *= decay;
    if (e.value.has_grad()) {
      const auto& g = e.value.grad();
      e.first_moment = b1 * e.first_moment + (Scalar(1) - b1) * g;
      e.second_moment = b2 * e.second_moment + (Scalar(1) - b2) * g.square();
    } else {
      e.first_moment *= b1;
      e.second_moment *= b2;
    }
    e.value.data() -= step_size * e.first_moment / ((e.second_moment * inv_c2).sqrt() + eps);
  }
  report.applied = true;
  return report;
}

template StepReport adam_step(ParamStore<float>&, const TrainConfig&, std::int64_t, const AdamOptions&);
template StepReport adam_step(ParamStore<double>&, const TrainConfig&, std::int64_t, const AdamOptions&);

}  // namespace cpnkit
