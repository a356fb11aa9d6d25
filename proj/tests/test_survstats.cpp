#include <cmath>
#include <numeric>

#include "doctest.h"
#include "support.hpp"
#include "survfuse/rng.hpp"
#include "survfuse/survstats.hpp"

using namespace survfuse;

namespace {

std::vector<SurvivalOutcome> make(const std::vector<double>& t, const std::vector<int>& e) {
  std::vector<SurvivalOutcome> out;
  for (std::size_t i = 0; i < t.size(); ++i) out.push_back({t[i], e[i] != 0});
  return out;
}

std::vector<SurvivalOutcome> random_outcomes(Rng& rng, std::size_t n) {
  std::vector<SurvivalOutcome> out(n);
  for (auto& o : out) {
    o.time = 1.0 + static_cast<double>(rng.below(6));
    o.event = rng.uniform() < 0.6;
  }
  return out;
}

}  // namespace

TEST_CASE("c_index worked examples") {
  const auto all = make({1, 2, 3}, {1, 1, 1});
  CHECK(c_index(std::vector<double>{3, 2, 1}, all) == 1.0);
  CHECK(c_index(std::vector<double>{3, 1, 2}, all) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const auto cens = make({1, 2, 3}, {1, 0, 1});
  CHECK(c_index(std::vector<double>{3, 1, 2}, cens) == 1.0);

  const auto none = make({1, 2}, {0, 0});
  CHECK_THROWS_AS(c_index(std::vector<double>{1, 2}, none), UndefinedMetricError);
  const auto tied = make({2, 2}, {1, 1});
  CHECK_THROWS_AS(c_index(std::vector<double>{1, 2}, tied), UndefinedMetricError);
}

TEST_CASE("c_index matches pair enumeration, serial reference, and its invariants") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + rng.below(40);
    auto out = random_outcomes(rng, n);
    out[0].event = true;
    out[0].time = 0.5;
    std::vector<double> risk(n);
    for (double& r : risk) r = static_cast<double>(rng.below(5)) + (seed % 2 ? rng.uniform() : 0.0);
    const double c = c_index(risk, out);
    CHECK(std::abs(c - oracle::c_index(risk, out)) <= 1e-12);
    CHECK(c == reference::c_index(risk, out));

    std::vector<double> transformed(n), neg(n);
    for (std::size_t i = 0; i < n; ++i) {
      transformed[i] = std::exp(0.3 * risk[i]) + 5.0;
      neg[i] = -risk[i];
    }
    CHECK(std::abs(c_index(transformed, out) - c) <= 1e-12);
    if (seed % 2) CHECK(std::abs(c + c_index(neg, out) - 1.0) <= 1e-12);
  }
}

TEST_CASE("c_index parallel path agrees with the serial reference on a large input") {
  Rng rng(5);
  auto out = random_outcomes(rng, 2000);
  std::vector<double> risk(2000);
  for (double& r : risk) r = rng.normal();
  CHECK(c_index(risk, out) == reference::c_index(risk, out));
}

TEST_CASE("kaplan_meier worked examples") {
  const auto cens = kaplan_meier(make({1, 2, 3}, {0, 0, 0}));
  CHECK(cens.times.empty());
  CHECK(cens.at(10.0) == 1.0);

  const auto km = kaplan_meier(make({1, 2, 3}, {1, 1, 0}));
  REQUIRE(km.times.size() == 2);
  CHECK(km.surv_prob[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(km.surv_prob[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(km.at(0.5) == 1.0);
  CHECK(km.at(2.5) == doctest::Approx(1.0 / 3.0));
  CHECK(km.at_risk[0] == 3);
  CHECK(km.n_events[1] == 1);

  const auto single = kaplan_meier(make({5}, {1}));
  CHECK(single.at(5.0) == 0.0);
  CHECK_THROWS_AS(kaplan_meier(std::vector<SurvivalOutcome>{}), DomainError);
}

TEST_CASE("kaplan_meier matches the product-limit oracle and the empirical function") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto out = random_outcomes(rng, 1 + rng.below(10));
    const auto km = kaplan_meier(out);
    for (double t = 0.5; t < 8.0; t += 0.5) CHECK(std::abs(km.at(t) - oracle::km(out, t)) <= 1e-12);
    for (std::size_t k = 1; k < km.surv_prob.size(); ++k) CHECK(km.surv_prob[k] <= km.surv_prob[k - 1]);
    for (std::size_t k = 0; k < km.surv_prob.size(); ++k) {
      CHECK(km.lower[k] <= km.surv_prob[k]);
      CHECK(km.upper[k] >= km.surv_prob[k]);
    }
    auto uncensored = out;
    for (auto& o : uncensored) o.event = true;
    const auto full = kaplan_meier(uncensored);
    for (double t = 0.5; t < 8.0; t += 0.5) {
      double surviving = 0;
      for (const auto& o : uncensored) surviving += o.time > t ? 1 : 0;
      CHECK(full.at(t) == doctest::Approx(surviving / uncensored.size()).epsilon(1e-14));
    }
  }
}

TEST_CASE("logrank worked examples") {
  const auto a = make({1, 2, 3, 4}, {1, 0, 1, 1});
  const auto same = logrank_test(a, a);
  CHECK(same.chi_square == 0.0);
  CHECK(same.p_value == doctest::Approx(1.0));

  // Hand tables: t=1 (n=6,na=3,d=1), t=2 (5,2,1), t=3 (4,1,1).
  const auto ev = make({1, 2, 3}, {1, 1, 1});
  const auto cens = make({10, 10, 10}, {0, 0, 0});
  const double e = 0.5 + 0.4 + 0.25;
  const double v = 0.25 + 0.24 + 0.1875;
  const double chi = (3 - e) * (3 - e) / v;
  const auto r = logrank_test(ev, cens);
  CHECK(std::abs(r.chi_square - chi) <= 1e-12);
  CHECK(std::abs(r.p_value - std::erfc(std::sqrt(chi / 2))) <= 1e-10);

  CHECK_THROWS_AS(logrank_test(cens, cens), UndefinedMetricError);
  CHECK_THROWS_AS(logrank_test(ev, std::vector<SurvivalOutcome>{}), DomainError);
}

TEST_CASE("logrank matches direct tables and is symmetric in labels") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto a = random_outcomes(rng, 1 + rng.below(6));
    auto b = random_outcomes(rng, 1 + rng.below(6));
    a[0].event = true;
    b[0].time = 7.0;
    const auto ref = oracle::logrank(a, b);
    if (!(ref.var > 0)) continue;
    const auto r = logrank_test(a, b);
    CHECK(std::abs(r.chi_square - ref.chi2) <= 1e-12);
    CHECK(std::abs(logrank_test(b, a).chi_square - r.chi_square) <= 1e-12);
  }
}

TEST_CASE("chi-square tail probabilities") {
  CHECK(std::abs(chi_square_sf(3.841, 1) - 0.05) <= 1e-3);
  for (double x : {0.01, 0.5, 1.0, 2.0, 3.841, 6.63, 10.0, 30.0, 80.0})
    CHECK(std::abs(chi_square_sf(x, 1) - std::erfc(std::sqrt(x / 2))) <= 1e-10);
  for (double x : {0.1, 1.0, 5.991, 20.0})  // df 2: exp(-x/2)
    CHECK(std::abs(chi_square_sf(x, 2) - std::exp(-x / 2)) <= 1e-10);
  CHECK(chi_square_sf(0.0, 1) == 1.0);
}

TEST_CASE("breslow baseline") {
  const std::size_t n = 6;
  std::vector<SurvivalOutcome> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({static_cast<double>(10 - i), true});
  const std::vector<double> zeros(n, 0.0);
  const auto h = breslow_baseline(zeros, out);
  REQUIRE(h.times.size() == n);
  double cum = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    cum += 1.0 / static_cast<double>(n - k + 1);
    CHECK(h.cum_hazard[k - 1] == doctest::Approx(cum).epsilon(1e-15));
  }

  const auto single = breslow_baseline(std::vector<double>{0.7}, make({4}, {1}));
  CHECK(single.at(4.0) == doctest::Approx(1.0 / std::exp(0.7)));
  CHECK(single.at(3.9) == 0.0);

  Rng rng(2);
  const auto mixed = random_outcomes(rng, 30);
  std::vector<double> lh(30);
  for (double& v : lh) v = rng.normal();
  const auto b = breslow_baseline(lh, mixed);
  for (std::size_t k = 1; k < b.cum_hazard.size(); ++k) CHECK(b.cum_hazard[k] >= b.cum_hazard[k - 1]);
  for (double v : lh) {
    CHECK(b.survival(0.0, v) == 1.0);
    double prev = 1.0;
    for (double t = 0.5; t < 8; t += 0.5) {
      const double s = b.survival(t, v);
      CHECK(s <= prev);
      prev = s;
    }
  }
}

TEST_CASE("integrated brier worked examples") {
  Rng rng(4);
  std::vector<SurvivalOutcome> out;
  for (int i = 0; i < 20; ++i) out.push_back({rng.uniform(1, 100), true});
  std::vector<SurvivalFn> perfect, half;
  for (const auto& o : out) {
    const double ti = o.time;
    perfect.push_back([ti](double t) { return t < ti ? 1.0 : 0.0; });
    half.push_back([](double) { return 0.5; });
  }
  CHECK(integrated_brier(perfect, out, 80.0).ibs == 0.0);
  const auto h = integrated_brier(half, out, 80.0);
  CHECK(h.grid.size() == 100);
  for (double bs : h.brier) CHECK(bs == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(h.ibs == doctest::Approx(0.25).epsilon(1e-14));
  CHECK_FALSE(h.truncated);
}

TEST_CASE("integrated brier matches direct Graf summation on a 5-patient hand dataset") {
  const auto out = make({2, 3, 5, 7, 11}, {1, 0, 1, 0, 1});
  const std::vector<double> rate = {0.3, 0.1, 0.2, 0.05, 0.08};
  std::vector<SurvivalFn> s;
  std::vector<std::function<double(double)>> s_oracle;
  for (double r : rate) {
    s.push_back([r](double t) { return std::exp(-r * t); });
    s_oracle.push_back([r](double t) { return std::exp(-r * t); });
  }
  const auto res = integrated_brier(s, out, 10.0);
  CHECK_FALSE(res.truncated);
  CHECK(std::abs(res.ibs - oracle::integrated_brier(s_oracle, out, 10.0)) <= 1e-12);
}

TEST_CASE("integrated brier truncates where the censoring distribution vanishes") {
  const auto out = make({1, 2, 3}, {1, 1, 0});
  std::vector<SurvivalFn> s(3, [](double) { return 0.5; });
  const auto res = integrated_brier(s, out, 6.0);
  CHECK(res.truncated);
  CHECK(res.effective_horizon < 3.0 + 1e-12);
}

TEST_CASE("fit_coxph") {
  // group 1 has the earlier events -> positive coefficient
  const auto out = make({1, 2, 3, 4, 5, 6, 7, 8}, {1, 1, 1, 1, 1, 1, 1, 1});
  const Matrix x = Matrix::from_rows({{1}, {1}, {0}, {1}, {0}, {1}, {0}, {0}});
  const auto m = fit_coxph(x, out);
  CHECK(m.coefficients[0] > 0.0);
  for (std::size_t k = 1; k < m.loglik_trace.size(); ++k)
    CHECK(m.loglik_trace[k] >= m.loglik_trace[k - 1] - 1e-13 * std::abs(m.loglik_trace[k - 1]));

  CHECK_THROWS_AS(fit_coxph(Matrix(8, 1), out), DomainError);

  const auto sim = oracle::simulate_cox(1, 500, 0.7, 0.2);
  const auto fit = fit_coxph(sim.x, sim.out);
  CHECK(std::abs(fit.coefficients[0] - 0.7) <= 0.15);
  // score is zero at the optimum: nudging beta lowers the likelihood
  const double at = cox_partial_loglik(sim.x, sim.out, fit.coefficients);
  CHECK(cox_partial_loglik(sim.x, sim.out, std::vector<double>{fit.coefficients[0] + 1e-3}) < at);
  CHECK(cox_partial_loglik(sim.x, sim.out, std::vector<double>{fit.coefficients[0] - 1e-3}) < at);
}

TEST_CASE("fit_coxph reports separation or non-convergence on perfectly separated data") {
  const auto out = make({1, 2, 3, 4}, {1, 1, 1, 1});
  const Matrix x = Matrix::from_rows({{1}, {1}, {0}, {0}});
  // x=1 always fails first within every risk set: the MLE diverges.
  bool raised = false;
  try {
    fit_coxph(x, out);
  } catch (const ConvergenceError& e) {
    raised = true;
    CHECK(e.last_iterate.size() == 1);
  } catch (const SeparationError&) {
    raised = true;
  }
  CHECK(raised);
}
