#include "survfuse/survstats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>

#include "survfuse/parallel.hpp"

namespace survfuse {

namespace {

void check_lengths(const char* op, std::size_t a, std::size_t b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": " + std::to_string(a) + " scores vs " +
                     std::to_string(b) + " outcomes");
  }
}

struct PairCounts {
  std::int64_t comparable = 0;
  std::int64_t score2 = 0;  // 2·concordant + ties
};

inline void count_pairs_for(std::size_t i, std::span<const double> risks,
                            std::span<const SurvivalOutcome> outcomes, PairCounts& acc) {
  if (!outcomes[i].event) return;
  for (std::size_t j = 0; j < outcomes.size(); ++j) {
    if (!(outcomes[i].time < outcomes[j].time)) continue;
    ++acc.comparable;
    if (risks[i] > risks[j]) {
      acc.score2 += 2;
    } else if (risks[i] == risks[j]) {
      acc.score2 += 1;
    }
  }
}

double finish_c_index(const PairCounts& c) {
  if (c.comparable == 0) throw UndefinedMetricError("c_index: no comparable pairs");
  return static_cast<double>(c.score2) / (2.0 * static_cast<double>(c.comparable));
}

std::size_t step_index(const std::vector<double>& times, double t) {
  // number of knots <= t
  return static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
}

}  // namespace

double c_index(std::span<const double> risks, std::span<const SurvivalOutcome> outcomes) {
  check_lengths("c_index", risks.size(), outcomes.size());
  const auto n = static_cast<std::ptrdiff_t>(outcomes.size());
  std::int64_t comparable = 0;
  std::int64_t score2 = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 16) reduction(+ : comparable, score2) if (n > 256)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    PairCounts local;
    count_pairs_for(static_cast<std::size_t>(i), risks, outcomes, local);
    comparable += local.comparable;
    score2 += local.score2;
  }
  return finish_c_index({comparable, score2});
}

namespace reference {
double c_index(std::span<const double> risks, std::span<const SurvivalOutcome> outcomes) {
  check_lengths("c_index", risks.size(), outcomes.size());
  PairCounts c;
  for (std::size_t i = 0; i < outcomes.size(); ++i) count_pairs_for(i, risks, outcomes, c);
  return finish_c_index(c);
}
}  // namespace reference

double SurvCurve::at(double t) const {
  const std::size_t k = step_index(times, t);
  return k == 0 ? 1.0 : surv_prob[k - 1];
}

SurvCurve kaplan_meier(std::span<const SurvivalOutcome> outcomes) {
  if (outcomes.empty()) throw DomainError("kaplan_meier: no subjects");
  std::vector<SurvivalOutcome> sorted(outcomes.begin(), outcomes.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.time < b.time; });
  SurvCurve curve;
  double s = 1.0;
  double greenwood = 0.0;
  const std::size_t n = sorted.size();
  for (std::size_t g = 0; g < n;) {
    std::size_t e = g;
    std::size_t d = 0;
    while (e < n && sorted[e].time == sorted[g].time) {
      d += sorted[e].event ? 1 : 0;
      ++e;
    }
    if (d > 0) {
      const std::size_t at_risk = n - g;
      const double nr = static_cast<double>(at_risk);
      const double dr = static_cast<double>(d);
      s *= 1.0 - dr / nr;
      if (at_risk > d) greenwood += dr / (nr * (nr - dr));
      const double half = 1.959963984540054 * s * std::sqrt(greenwood);
      curve.times.push_back(sorted[g].time);
      curve.surv_prob.push_back(s);
      curve.at_risk.push_back(at_risk);
      curve.n_events.push_back(d);
      curve.lower.push_back(std::clamp(s - half, 0.0, 1.0));
      curve.upper.push_back(std::clamp(s + half, 0.0, 1.0));
    }
    g = e;
  }
  return curve;
}

double gamma_q(double a, double x) {
  if (!(a > 0.0)) throw DomainError("gamma_q: shape must be positive");
  if (x <= 0.0) return 1.0;
  const double log_prefactor = a * std::log(x) - x - std::lgamma(a);
  constexpr double eps = 1e-16;
  if (x < a + 1.0) {
    // Series for P(a, x).
    double ap = a;
    double term = 1.0 / a;
    double sum = term;
    for (int n = 0; n < 10000; ++n) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * eps) break;
    }
    return 1.0 - sum * std::exp(log_prefactor);
  }
  // Modified Lentz continued fraction for Q(a, x).
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::exp(log_prefactor) * h;
}

double chi_square_sf(double x, double df) { return gamma_q(0.5 * df, 0.5 * x); }

LogRankResult logrank_test(std::span<const SurvivalOutcome> group_a,
                           std::span<const SurvivalOutcome> group_b) {
  if (group_a.empty() || group_b.empty()) throw DomainError("logrank_test: empty group");
  struct Tagged {
    double time;
    bool event;
    bool in_a;
  };
  std::vector<Tagged> all;
  all.reserve(group_a.size() + group_b.size());
  for (const auto& o : group_a) all.push_back({o.time, o.event, true});
  for (const auto& o : group_b) all.push_back({o.time, o.event, false});
  std::stable_sort(all.begin(), all.end(),
                   [](const Tagged& x, const Tagged& y) { return x.time < y.time; });

  LogRankResult r;
  std::size_t n_a = group_a.size();
  std::size_t n = all.size();
  std::size_t total_events = 0;
  for (std::size_t g = 0; g < all.size();) {
    std::size_t e = g;
    std::size_t d = 0, d_a = 0, leave_a = 0;
    while (e < all.size() && all[e].time == all[g].time) {
      if (all[e].event) {
        ++d;
        if (all[e].in_a) ++d_a;
      }
      if (all[e].in_a) ++leave_a;
      ++e;
    }
    if (d > 0) {
      const double nr = static_cast<double>(n);
      const double pa = static_cast<double>(n_a) / nr;
      const double dr = static_cast<double>(d);
      r.observed_a += static_cast<double>(d_a);
      r.expected_a += dr * pa;
      if (n > 1) r.variance += dr * pa * (1.0 - pa) * (nr - dr) / (nr - 1.0);
      total_events += d;
    }
    n -= e - g;
    n_a -= leave_a;
    g = e;
  }
  if (total_events == 0) throw UndefinedMetricError("logrank_test: no events in either group");
  const double diff = r.observed_a - r.expected_a;
  if (r.variance > 0.0) {
    r.chi_square = diff * diff / r.variance;
    r.p_value = chi_square_sf(r.chi_square, 1.0);
  } else {
    r.chi_square = 0.0;
    r.p_value = 1.0;
  }
  return r;
}

double BaselineHazard::at(double t) const {
  const std::size_t k = step_index(times, t);
  return k == 0 ? 0.0 : cum_hazard[k - 1];
}

double BaselineHazard::survival(double t, double log_h) const {
  return std::exp(-at(t) * std::exp(log_h));
}

BaselineHazard breslow_baseline(std::span<const double> log_hazards,
                                std::span<const SurvivalOutcome> outcomes) {
  check_lengths("breslow_baseline", log_hazards.size(), outcomes.size());
  const std::size_t n = outcomes.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return outcomes[a].time < outcomes[b].time; });
  // suffix sums of exp(log h) in time order
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t k = n; k > 0; --k) suffix[k - 1] = suffix[k] + std::exp(log_hazards[order[k - 1]]);

  BaselineHazard h;
  double cum = 0.0;
  for (std::size_t g = 0; g < n;) {
    std::size_t e = g;
    std::size_t d = 0;
    while (e < n && outcomes[order[e]].time == outcomes[order[g]].time) {
      d += outcomes[order[e]].event ? 1 : 0;
      ++e;
    }
    if (d > 0) {
      cum += static_cast<double>(d) / suffix[g];
      h.times.push_back(outcomes[order[g]].time);
      h.cum_hazard.push_back(cum);
    }
    g = e;
  }
  return h;
}

BrierResult integrated_brier(std::span<const SurvivalFn> surv_fns,
                             std::span<const SurvivalOutcome> outcomes, double horizon,
                             std::size_t grid_points) {
  check_lengths("integrated_brier", surv_fns.size(), outcomes.size());
  if (!(horizon > 0.0)) throw DomainError("integrated_brier: horizon must be positive");
  if (grid_points == 0) throw DomainError("integrated_brier: empty grid");
  if (outcomes.empty()) throw DomainError("integrated_brier: no subjects");

  std::vector<SurvivalOutcome> flipped(outcomes.begin(), outcomes.end());
  for (auto& o : flipped) o.event = !o.event;
  const SurvCurve censor_km = kaplan_meier(flipped);
  auto g_at = [&](double t) { return censor_km.at(t); };
  auto g_before = [&](double t) {
    // left limit: last knot strictly before t
    const auto it = std::lower_bound(censor_km.times.begin(), censor_km.times.end(), t);
    const std::size_t k = static_cast<std::size_t>(it - censor_km.times.begin());
    return k == 0 ? 1.0 : censor_km.surv_prob[k - 1];
  };

  BrierResult res;
  const double n = static_cast<double>(outcomes.size());
  for (std::size_t k = 1; k <= grid_points; ++k) {
    const double t = horizon * static_cast<double>(k) / static_cast<double>(grid_points);
    const double gt = g_at(t);
    if (!(gt > 0.0)) {
      res.truncated = true;
      break;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      const double s = surv_fns[i](t);
      if (outcomes[i].time <= t) {
        if (outcomes[i].event) sum += s * s / g_before(outcomes[i].time);
      } else {
        sum += (1.0 - s) * (1.0 - s) / gt;
      }
    }
    res.grid.push_back(t);
    res.brier.push_back(sum / n);
  }
  if (res.grid.empty()) {
    throw UndefinedMetricError("integrated_brier: censoring distribution is 0 on the whole grid");
  }
  res.effective_horizon = res.grid.back();
  if (res.grid.size() == 1) {
    res.ibs = res.brier.front();
    return res;
  }
  double area = 0.0;
  for (std::size_t k = 1; k < res.grid.size(); ++k)
    area += 0.5 * (res.brier[k] + res.brier[k - 1]) * (res.grid[k] - res.grid[k - 1]);
  res.ibs = area / (res.grid.back() - res.grid.front());
  return res;
}

double CoxPHModel::log_hazard(std::span<const double> x) const {
  if (x.size() != coefficients.size()) throw ShapeError("CoxPHModel: covariate length mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) s += x[j] * coefficients[j];
  return s;
}

namespace {

struct CoxEval {
  double loglik = 0.0;
  std::vector<double> score;
  Matrix info;
};

CoxEval cox_evaluate(const Matrix& x, std::span<const SurvivalOutcome> outcomes,
                     std::span<const double> beta, const std::vector<std::size_t>& desc,
                     bool derivatives) {
  const std::size_t n = x.rows();
  const std::size_t p = x.cols();
  std::vector<double> eta(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) eta[i] += x(i, j) * beta[j];
  const double shift = *std::max_element(eta.begin(), eta.end());

  CoxEval ev;
  ev.score.assign(p, 0.0);
  ev.info = Matrix(p, p);
  double s0 = 0.0;
  std::vector<double> s1(p, 0.0);
  Matrix s2(p, p);
  for (std::size_t g = 0; g < n;) {
    std::size_t e = g;
    while (e < n && outcomes[desc[e]].time == outcomes[desc[g]].time) {
      const std::size_t i = desc[e];
      const double w = std::exp(eta[i] - shift);
      s0 += w;
      if (derivatives) {
        for (std::size_t a = 0; a < p; ++a) {
          s1[a] += w * x(i, a);
          for (std::size_t b = 0; b < p; ++b) s2(a, b) += w * x(i, a) * x(i, b);
        }
      }
      ++e;
    }
    const double log_s0 = std::log(s0) + shift;
    for (std::size_t k = g; k < e; ++k) {
      const std::size_t i = desc[k];
      if (!outcomes[i].event) continue;
      ev.loglik += eta[i] - log_s0;
      if (derivatives) {
        for (std::size_t a = 0; a < p; ++a) {
          const double mean_a = s1[a] / s0;
          ev.score[a] += x(i, a) - mean_a;
          for (std::size_t b = 0; b < p; ++b)
            ev.info(a, b) += s2(a, b) / s0 - mean_a * (s1[b] / s0);
        }
      }
    }
    g = e;
  }
  return ev;
}

std::vector<std::size_t> descending_time_order(std::span<const SurvivalOutcome> outcomes) {
  std::vector<std::size_t> order(outcomes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return outcomes[a].time > outcomes[b].time; });
  return order;
}

// Solves A·x = b for symmetric positive definite A; false if not SPD.
bool cholesky_solve(const Matrix& a, std::span<const double> b, std::vector<double>& x) {
  const std::size_t p = a.rows();
  Matrix l(p, p);
  double max_diag = 0.0;
  for (std::size_t i = 0; i < p; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
  for (std::size_t j = 0; j < p; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 1e-12 * std::max(max_diag, 1e-300))) return false;
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < p; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  std::vector<double> y(p);
  for (std::size_t i = 0; i < p; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  x.assign(p, 0.0);
  for (std::size_t i = p; i > 0; --i) {
    double s = y[i - 1];
    for (std::size_t k = i; k < p; ++k) s -= l(k, i - 1) * x[k];
    x[i - 1] = s / l(i - 1, i - 1);
  }
  return true;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

double cox_partial_loglik(const Matrix& x, std::span<const SurvivalOutcome> outcomes,
                          std::span<const double> beta) {
  check_lengths("cox_partial_loglik", x.rows(), outcomes.size());
  if (beta.size() != x.cols()) throw ShapeError("cox_partial_loglik: beta length mismatch");
  return cox_evaluate(x, outcomes, beta, descending_time_order(outcomes), false).loglik;
}

CoxPHModel fit_coxph(const Matrix& covariates, std::span<const SurvivalOutcome> outcomes,
                     const CoxFitOptions& opts) {
  check_lengths("fit_coxph", covariates.rows(), outcomes.size());
  const std::size_t n = covariates.rows();
  const std::size_t p = covariates.cols();
  if (n == 0 || p == 0) throw DomainError("fit_coxph: empty design");
  for (std::size_t j = 0; j < p; ++j) {
    bool constant = true;
    for (std::size_t i = 1; i < n && constant; ++i) constant = covariates(i, j) == covariates(0, j);
    if (constant) {
      throw DomainError("fit_coxph: covariate column " + std::to_string(j) + " is constant");
    }
  }
  if (std::none_of(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.event; })) {
    throw NoEventsError("fit_coxph: no events");
  }

  const auto desc = descending_time_order(outcomes);
  CoxPHModel model;
  std::vector<double> beta(p, 0.0);
  CoxEval cur = cox_evaluate(covariates, outcomes, beta, desc, true);
  model.loglik_trace.push_back(cur.loglik);
  // Information that has collapsed relative to the null model signals a
  // diverging coefficient (monotone likelihood).
  std::vector<double> null_info(p);
  for (std::size_t j = 0; j < p; ++j) null_info[j] = cur.info(j, j);
  auto collapsed = [&](const Matrix& info) {
    for (std::size_t j = 0; j < p; ++j)
      if (info(j, j) <= 1e-6 * null_info[j]) return true;
    return false;
  };
  bool converged = false;
  for (int it = 0; it < opts.max_iter; ++it) {
    if (max_abs(cur.score) <= opts.score_tol) {
      if (collapsed(cur.info)) {
        throw SeparationError("fit_coxph: coefficients diverge (information matrix collapsed)");
      }
      converged = true;
      break;
    }
    std::vector<double> step;
    if (collapsed(cur.info) || !cholesky_solve(cur.info, cur.score, step)) {
      throw SeparationError("fit_coxph: information matrix is singular (separation?)");
    }
    // Near the optimum the likelihood change of a Newton step falls below
    // the rounding noise of the likelihood itself; such a step is accepted
    // when it shrinks the score.
    const double noise = 1e-13 * std::max(1.0, std::abs(cur.loglik));
    auto acceptable = [&](const CoxEval& e) {
      if (!std::isfinite(e.loglik)) return false;
      if (e.loglik >= cur.loglik) return true;
      return cur.loglik - e.loglik <= noise && max_abs(e.score) < max_abs(cur.score);
    };
    double scale = 1.0;
    std::vector<double> cand(p);
    CoxEval next;
    bool accepted = false;
    for (int halving = 0; halving < 40 && !accepted; ++halving) {
      for (std::size_t j = 0; j < p; ++j) cand[j] = beta[j] + scale * step[j];
      next = cox_evaluate(covariates, outcomes, cand, desc, true);
      accepted = acceptable(next);
      scale *= 0.5;
    }
    if (!accepted) break;
    beta = cand;
    cur = std::move(next);
    model.loglik_trace.push_back(cur.loglik);
    model.iterations = it + 1;
  }
  if (!converged && max_abs(cur.score) > opts.score_tol) {
    throw ConvergenceError("fit_coxph: no convergence after " + std::to_string(model.iterations) +
                               " iterations",
                           beta);
  }
  model.coefficients = beta;
  std::vector<double> eta(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) eta[i] += covariates(i, j) * beta[j];
  model.baseline = breslow_baseline(eta, outcomes);
  return model;
}

}  // namespace survfuse
