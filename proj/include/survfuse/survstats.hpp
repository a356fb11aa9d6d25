#ifndef SURVFUSE_SURVSTATS_HPP
#define SURVFUSE_SURVSTATS_HPP

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "survfuse/numerics.hpp"
#include "survfuse/survloss.hpp"

namespace survfuse {

class UndefinedMetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> last)
      : std::runtime_error(what), last_iterate(std::move(last)) {}
  std::vector<double> last_iterate;
};

class SeparationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Product-limit curve. Entry k describes the k-th distinct event time.
struct SurvCurve {
  std::vector<double> times;
  std::vector<double> surv_prob;
  std::vector<std::size_t> at_risk;
  std::vector<std::size_t> n_events;
  std::vector<double> lower;  // 95% Greenwood band
  std::vector<double> upper;

  /// S(t) as a right-continuous step function; 1 before the first event.
  double at(double t) const;
};

/// Harrell's C: pairs with time_i < time_j and event_i; risk ties score 1/2.
double c_index(std::span<const double> risks, std::span<const SurvivalOutcome> outcomes);

SurvCurve kaplan_meier(std::span<const SurvivalOutcome> outcomes);

struct LogRankResult {
  double chi_square = 0.0;
  double p_value = 1.0;
  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
};

LogRankResult logrank_test(std::span<const SurvivalOutcome> group_a,
                           std::span<const SurvivalOutcome> group_b);

/// Upper regularized incomplete gamma Q(a, x).
double gamma_q(double a, double x);
/// P(X > x) for X ~ chi-square with `df` degrees of freedom.
double chi_square_sf(double x, double df);

/// Breslow cumulative baseline hazard as a right-continuous step function.
struct BaselineHazard {
  std::vector<double> times;
  std::vector<double> cum_hazard;

  double at(double t) const;
  /// exp(-H0(t) * exp(log_h)).
  double survival(double t, double log_h) const;
};

BaselineHazard breslow_baseline(std::span<const double> log_hazards,
                                std::span<const SurvivalOutcome> outcomes);

using SurvivalFn = std::function<double(double)>;

struct BrierResult {
  double ibs = 0.0;
  std::vector<double> grid;
  std::vector<double> brier;  // BS(t) on the grid
  bool truncated = false;     // censoring KM reached 0 before the horizon
  double effective_horizon = 0.0;
};

/// Graf IPCW Brier score integrated over 100 evenly spaced points in
/// (0, horizon] with the trapezoid rule.
BrierResult integrated_brier(std::span<const SurvivalFn> surv_fns,
                             std::span<const SurvivalOutcome> outcomes, double horizon,
                             std::size_t grid_points = 100);

struct CoxPHModel {
  std::vector<double> coefficients;
  BaselineHazard baseline;
  std::vector<double> loglik_trace;  // accepted iterates
  int iterations = 0;

  double log_hazard(std::span<const double> x) const;
};

struct CoxFitOptions {
  int max_iter = 100;
  double score_tol = 1e-8;
};

/// Breslow partial log-likelihood of coefficients `beta`.
double cox_partial_loglik(const Matrix& x, std::span<const SurvivalOutcome> outcomes,
                          std::span<const double> beta);

CoxPHModel fit_coxph(const Matrix& covariates, std::span<const SurvivalOutcome> outcomes,
                     const CoxFitOptions& opts = {});

namespace reference {
double c_index(std::span<const double> risks, std::span<const SurvivalOutcome> outcomes);
}

}  // namespace survfuse

#endif
