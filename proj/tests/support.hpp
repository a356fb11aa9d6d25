#ifndef SURVFUSE_TESTS_SUPPORT_HPP
#define SURVFUSE_TESTS_SUPPORT_HPP

// Independent direct-enumeration oracles shared by the unit and acceptance
// suites. Nothing here calls into the implementation it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "survfuse/numerics.hpp"
#include "survfuse/rng.hpp"
#include "survfuse/survloss.hpp"

namespace oracle {

using survfuse::SurvivalOutcome;

inline double c_index(const std::vector<double>& risk, const std::vector<SurvivalOutcome>& out) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) {
      if (i == j || !out[i].event || !(out[i].time < out[j].time)) continue;
      den += 1.0;
      num += risk[i] > risk[j] ? 1.0 : (risk[i] == risk[j] ? 0.5 : 0.0);
    }
  return num / den;
}

inline std::set<double> event_times(const std::vector<SurvivalOutcome>& out) {
  std::set<double> t;
  for (const auto& o : out)
    if (o.event) t.insert(o.time);
  return t;
}

inline double at_risk(const std::vector<SurvivalOutcome>& out, double t) {
  double n = 0;
  for (const auto& o : out) n += o.time >= t ? 1.0 : 0.0;
  return n;
}

inline double deaths(const std::vector<SurvivalOutcome>& out, double t) {
  double d = 0;
  for (const auto& o : out) d += (o.event && o.time == t) ? 1.0 : 0.0;
  return d;
}

/// Product-limit S(t) from raw counts.
inline double km(const std::vector<SurvivalOutcome>& out, double t) {
  double s = 1.0;
  for (double u : event_times(out))
    if (u <= t) s *= 1.0 - deaths(out, u) / at_risk(out, u);
  return s;
}

/// Censoring-distribution KM (censorings treated as events), right-continuous.
inline double censor_km(const std::vector<SurvivalOutcome>& out, double t, bool left_limit) {
  std::vector<SurvivalOutcome> flipped = out;
  for (auto& o : flipped) o.event = !o.event;
  double s = 1.0;
  for (double u : event_times(flipped))
    if (left_limit ? u < t : u <= t) s *= 1.0 - deaths(flipped, u) / at_risk(flipped, u);
  return s;
}

struct LogRank {
  double chi2 = 0.0;
  double o_minus_e = 0.0;
  double var = 0.0;
};

inline LogRank logrank(const std::vector<SurvivalOutcome>& a, const std::vector<SurvivalOutcome>& b) {
  std::vector<SurvivalOutcome> all = a;
  all.insert(all.end(), b.begin(), b.end());
  LogRank r;
  for (double t : event_times(all)) {
    const double n = at_risk(all, t), na = at_risk(a, t), d = deaths(all, t), da = deaths(a, t);
    r.o_minus_e += da - d * na / n;
    if (n > 1) r.var += d * (na / n) * (1 - na / n) * (n - d) / (n - 1);
  }
  r.chi2 = r.o_minus_e * r.o_minus_e / r.var;
  return r;
}

/// Graf IPCW Brier score at t by direct summation.
inline double brier(const std::vector<std::function<double(double)>>& s,
                    const std::vector<SurvivalOutcome>& out, double t) {
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = s[i](t);
    if (out[i].time <= t && out[i].event) sum += p * p / censor_km(out, out[i].time, true);
    if (out[i].time > t) sum += (1 - p) * (1 - p) / censor_km(out, t, false);
  }
  return sum / static_cast<double>(out.size());
}

inline double integrated_brier(const std::vector<std::function<double(double)>>& s,
                               const std::vector<SurvivalOutcome>& out, double horizon) {
  // trapezoid over t_k = k·horizon/100, k = 1..100
  double area = 0.0;
  double prev = brier(s, out, horizon / 100.0);
  for (int k = 2; k <= 100; ++k) {
    const double cur = brier(s, out, horizon * k / 100.0);
    area += 0.5 * (prev + cur) * (horizon / 100.0);
    prev = cur;
  }
  return area / (horizon - horizon / 100.0);
}

/// Cox data: x ~ N(0,1), T ~ Exp(exp(beta·x)), uniform censoring on (0, c]
/// with c chosen so the expected censored fraction equals `censor_frac`.
struct CoxSim {
  survfuse::Matrix x;
  std::vector<SurvivalOutcome> out;
};

inline CoxSim simulate_cox(std::uint64_t seed, std::size_t n, double beta, double censor_frac) {
  survfuse::Rng rng(seed);
  CoxSim sim{survfuse::Matrix(n, 1), std::vector<SurvivalOutcome>(n)};
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) {
    sim.x(i, 0) = rng.normal();
    t[i] = rng.exponential(std::exp(beta * sim.x(i, 0)));
  }
  auto expected = [&](double c) {
    double f = 0.0;
    for (double ti : t) f += std::min(ti / c, 1.0);
    return f / static_cast<double>(n);
  };
  double lo = 1e-6, hi = 1e6;
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    (expected(mid) > censor_frac ? lo : hi) = mid;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double c = rng.uniform(0.0, hi);
    sim.out[i] = {std::min(t[i], c), t[i] <= c};
  }
  return sim;
}

}  // namespace oracle

#endif
