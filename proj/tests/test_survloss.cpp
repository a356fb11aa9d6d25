#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "survfuse/numerics.hpp"
#include "survfuse/rng.hpp"
#include "survfuse/survloss.hpp"

using namespace survfuse;

namespace {

// Materialises every risk set explicitly.
double brute_force_nll(const std::vector<double>& lh, const std::vector<SurvivalOutcome>& out) {
  double num = 0.0, events = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out[i].event) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j)
      if (out[j].time >= out[i].time) s += std::exp(lh[j]);
    num += lh[i] - std::log(s);
    events += 1.0;
  }
  return -num / events;
}

std::vector<SurvivalOutcome> random_batch(Rng& rng, std::size_t n, double censor_frac) {
  std::vector<SurvivalOutcome> out(n);
  for (auto& o : out) {
    o.time = 1.0 + static_cast<double>(rng.below(8));  // ties are common
    o.event = rng.uniform() >= censor_frac;
  }
  if (std::none_of(out.begin(), out.end(), [](auto& o) { return o.event; })) out[0].event = true;
  return out;
}

}  // namespace

TEST_CASE("risk_set examples") {
  const std::vector<SurvivalOutcome> a = {{5, true}, {3, true}, {8, true}};
  CHECK(risk_set(a, 1) == std::vector<std::size_t>{0, 1, 2});
  CHECK(risk_set(a, 2) == std::vector<std::size_t>{2});
  const std::vector<SurvivalOutcome> b = {{4, true}, {4, false}, {2, true}};
  CHECK(risk_set(b, 0) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS(risk_set(b, 3));
}

TEST_CASE("nll_loss worked examples") {
  const std::vector<SurvivalOutcome> one = {{3.0, true}};
  const std::vector<double> lh1 = {1.7};
  CHECK(nll_loss(lh1, one).loss == 0.0);

  const std::vector<SurvivalOutcome> two = {{1.0, true}, {2.0, true}};
  const std::vector<double> lh2 = {0.0, 0.0};
  CHECK(nll_loss(lh2, two).loss == doctest::Approx(std::log(2.0) / 2.0).epsilon(1e-15));

  const std::vector<SurvivalOutcome> none = {{1.0, false}, {2.0, false}};
  CHECK_THROWS_AS(nll_loss(lh2, none), NoEventsError);
  CHECK_THROWS_AS(nll_loss(lh1, two), ShapeError);
}

TEST_CASE("nll_loss gradient matches finite differences (batch 12, ~30% censoring)") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto out = random_batch(rng, 12, 0.3);
    std::vector<double> lh(12);
    for (double& v : lh) v = rng.uniform(-2, 2);
    const auto res = nll_loss(lh, out);
    auto f = [&](std::span<const double> x) { return nll_loss(x, out).loss; };
    CHECK(grad_check(f, lh, res.grad) <= 1e-8);
  }
}

TEST_CASE("nll_loss invariants") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t n = 1 + rng.below(20);
    const auto out = random_batch(rng, n, 0.4);
    std::vector<double> lh(n);
    for (double& v : lh) v = rng.uniform(-5, 5);
    const auto base = nll_loss(lh, out);
    const double c = rng.uniform(-50, 50);
    std::vector<double> shifted = lh;
    for (double& v : shifted) v += c;
    const auto moved = nll_loss(shifted, out);
    CHECK(std::abs(moved.loss - base.loss) <= 1e-10);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(moved.grad[i] - base.grad[i]) <= 1e-10);
    double gsum = 0.0;
    for (double g : base.grad) gsum += g;
    CHECK(std::abs(gsum) <= 1e-10);
    CHECK(base.loss >= -1e-15);
  }
}

TEST_CASE("nll_loss is zero iff every event risk set is a singleton") {
  // all distinct times, only the last one has an event
  const std::vector<SurvivalOutcome> out = {{1, false}, {2, false}, {3, true}};
  const std::vector<double> lh = {0.3, -1.0, 2.0};
  CHECK(nll_loss(lh, out).loss == 0.0);
  const std::vector<SurvivalOutcome> out2 = {{1, true}, {2, false}, {3, true}};
  CHECK(nll_loss(lh, out2).loss > 0.0);
}

TEST_CASE("nll_loss equals explicit risk-set brute force on every event pattern up to n=6") {
  Rng rng(77);
  int checked = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      std::vector<SurvivalOutcome> out(n);
      std::vector<double> lh(n);
      for (std::size_t i = 0; i < n; ++i) {
        out[i].time = 1.0 + static_cast<double>(rng.below(4));
        out[i].event = (mask >> i) & 1u;
        lh[i] = rng.uniform(-3, 3);
      }
      const double got = nll_loss(lh, out).loss;
      CHECK(std::abs(got - brute_force_nll(lh, out)) <= 1e-12);
      ++checked;
    }
  }
  CHECK(checked == 1 + 3 + 7 + 15 + 31 + 63);
}

TEST_CASE("large log-hazards stay finite") {
  const std::vector<SurvivalOutcome> out = {{1, true}, {2, true}, {3, false}};
  const std::vector<double> lh = {800.0, 700.0, -800.0};
  const auto r = nll_loss(lh, out);
  CHECK(std::isfinite(r.loss));
  for (double g : r.grad) CHECK(std::isfinite(g));
}

TEST_CASE("hazards") {
  const std::vector<double> in = {0.0, std::log(2.0)};
  const auto h = hazards(in);
  CHECK(h[0] == 1.0);
  CHECK(h[1] == doctest::Approx(2.0).epsilon(1e-15));
  const std::vector<double> mono = {-3, -1, 0, 2, 5};
  const auto hm = hazards(mono);
  CHECK(std::is_sorted(hm.begin(), hm.end()));
}
