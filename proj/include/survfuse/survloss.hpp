#ifndef SURVFUSE_SURVLOSS_HPP
#define SURVFUSE_SURVLOSS_HPP

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace survfuse {

struct SurvivalOutcome {
  double time = 1.0;  // days, > 0
  bool event = false;

  friend bool operator==(const SurvivalOutcome&, const SurvivalOutcome&) = default;
};

class NoEventsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Breslow risk set: every j with time_j >= time_i (ties on both sides).
std::vector<std::size_t> risk_set(std::span<const SurvivalOutcome> outcomes, std::size_t i);

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // dLoss / dlog_h, aligned with the input
};

/// Negative Cox log partial likelihood averaged over events, with Breslow
/// ties, and its exact gradient with respect to the log-hazards.
/// Throws NoEventsError when the batch carries no events.
LossResult nll_loss(std::span<const double> log_hazards, std::span<const SurvivalOutcome> outcomes);

std::vector<double> hazards(std::span<const double> log_hazards);

}  // namespace survfuse

#endif
