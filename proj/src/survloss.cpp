#include "survfuse/survloss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "survfuse/numerics.hpp"

namespace survfuse {

std::vector<std::size_t> risk_set(std::span<const SurvivalOutcome> outcomes, std::size_t i) {
  if (i >= outcomes.size()) throw std::out_of_range("risk_set: index out of range");
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < outcomes.size(); ++j)
    if (outcomes[j].time >= outcomes[i].time) out.push_back(j);
  return out;
}

LossResult nll_loss(std::span<const double> log_hazards, std::span<const SurvivalOutcome> outcomes) {
  const std::size_t n = log_hazards.size();
  if (outcomes.size() != n) {
    throw ShapeError("nll_loss: " + std::to_string(n) + " log-hazards vs " +
                     std::to_string(outcomes.size()) + " outcomes");
  }
  const auto n_events = std::count_if(outcomes.begin(), outcomes.end(),
                                      [](const SurvivalOutcome& o) { return o.event; });
  if (n_events == 0) throw NoEventsError("nll_loss: batch has no events");
  const double inv_d = 1.0 / static_cast<double>(n_events);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return outcomes[a].time > outcomes[b].time;
  });

  // Descending sweep: after absorbing a whole tie group, `running` is the
  // log of the risk-set sum shared by that group.
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> lse(n, 0.0);
  double running = neg_inf;
  double partial = 0.0;
  for (std::size_t g = 0; g < n;) {
    std::size_t e = g;
    while (e < n && outcomes[order[e]].time == outcomes[order[g]].time) {
      running = logaddexp(running, log_hazards[order[e]]);
      ++e;
    }
    for (std::size_t k = g; k < e; ++k) {
      const std::size_t i = order[k];
      lse[i] = running;
      if (outcomes[i].event) partial += log_hazards[i] - running;
    }
    g = e;
  }

  LossResult res;
  res.loss = -partial * inv_d;
  res.grad.assign(n, 0.0);

  // Ascending sweep: log Σ_{events i with t_i <= t_k} 1/S_i.
  double log_acc = neg_inf;
  for (std::size_t g = n; g > 0;) {
    std::size_t b = g;
    while (b > 0 && outcomes[order[b - 1]].time == outcomes[order[g - 1]].time) --b;
    for (std::size_t k = b; k < g; ++k) {
      const std::size_t i = order[k];
      if (outcomes[i].event) log_acc = logaddexp(log_acc, -lse[i]);
    }
    for (std::size_t k = b; k < g; ++k) {
      const std::size_t i = order[k];
      const double share = log_acc == neg_inf ? 0.0 : std::exp(log_hazards[i] + log_acc);
      res.grad[i] = -((outcomes[i].event ? 1.0 : 0.0) - share) * inv_d;
    }
    g = b;
  }
  return res;
}

std::vector<double> hazards(std::span<const double> log_hazards) {
  std::vector<double> h(log_hazards.size());
  std::transform(log_hazards.begin(), log_hazards.end(), h.begin(),
                 [](double x) { return std::exp(x); });
  return h;
}

}  // namespace survfuse
