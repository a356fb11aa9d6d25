#include "survfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "survfuse/rng.hpp"

namespace survfuse {

namespace {

// Grade cut points on a standard normal latent give P(1) = P(3) = 0.274.
constexpr double kGradeCut = 0.6;
constexpr double kGradeSd = 0.7403;  // sd of grade - 2 under those cut points
constexpr double kNodeRate = 0.35;

struct Latent {
  double img = 0.0;
  double gene = 0.0;
  double clin = 0.0;
  double subtype_noise = 0.0;
  double event_u = 0.0;
  double censor_u = 0.0;
};

double censored_fraction(const std::vector<double>& t, const std::vector<double>& u, double upper) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < t.size(); ++i) c += u[i] * upper < t[i];
  return static_cast<double>(c) / static_cast<double>(t.size());
}

// Upper bound U of the uniform censoring law whose realized censored share is
// closest to the target from above; the share falls monotonically as U grows.
double calibrate_censoring(const std::vector<double>& t, const std::vector<double>& u, double target) {
  if (target <= 0.0) return std::numeric_limits<double>::infinity();
  double lo = std::log(*std::min_element(t.begin(), t.end())) - 5.0;
  double hi = std::log(*std::max_element(t.begin(), t.end())) + 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (censored_fraction(t, u, std::exp(mid)) > target)
      lo = mid;
    else
      hi = mid;
  }
  return std::exp(hi);
}

}  // namespace

double mean_patch_signal(const Matrix& patches, const std::vector<double>& direction) {
  if (patches.cols() != direction.size()) throw ShapeError("mean_patch_signal: width mismatch");
  double s = 0.0;
  for (std::size_t r = 0; r < patches.rows(); ++r)
    for (std::size_t c = 0; c < patches.cols(); ++c) s += patches(r, c) * direction[c];
  return s / static_cast<double>(patches.rows());
}

SynthCohort synth_cohort(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.n_patients < 20) throw ConfigError("synth_cohort: need at least 20 patients");
  if (spec.min_patches == 0 || spec.max_patches < spec.min_patches) throw ConfigError("synth_cohort: bad patch range");
  if (spec.d_img == 0) throw ConfigError("synth_cohort: d_img must be positive");
  if (spec.signal_genes == 0 || spec.signal_genes > kGeneCount) throw ConfigError("synth_cohort: signal_genes in 1..50");
  if (!(spec.min_loading >= 0.0 && spec.min_loading <= spec.max_loading && spec.max_loading < 1.0))
    throw ConfigError("synth_cohort: loadings must satisfy 0 <= min <= max < 1");
  if (!(spec.censor_frac >= 0.0 && spec.censor_frac < 1.0)) throw ConfigError("synth_cohort: censor_frac in [0, 1)");
  if (!(spec.base_hazard > 0.0)) throw ConfigError("synth_cohort: base_hazard must be positive");

  const Rng root(seed, 0x5717);
  SynthCohort out;

  Rng shape = root.split(0);
  out.signal_direction.resize(spec.d_img);
  double norm = 0.0;
  for (double& v : out.signal_direction) {
    v = shape.normal();
    norm += v * v;
  }
  for (double& v : out.signal_direction) v /= std::sqrt(norm);

  std::vector<std::size_t> genes(kGeneCount);
  for (std::size_t j = 0; j < kGeneCount; ++j) genes[j] = j;
  shape.shuffle(genes);
  out.signal_genes.assign(genes.begin(), genes.begin() + static_cast<std::ptrdiff_t>(spec.signal_genes));
  std::sort(out.signal_genes.begin(), out.signal_genes.end());
  // signed loadings of the module genes on the shared expression factor
  std::vector<double> loading(kGeneCount, 0.0);
  for (std::size_t j : out.signal_genes)
    loading[j] = (shape.uniform() < 0.5 ? -1.0 : 1.0) * shape.uniform(spec.min_loading, spec.max_loading);

  const std::size_t n = spec.n_patients;
  std::vector<Latent> lat(n);
  std::vector<double> event_time(n);
  auto& pts = out.cohort.patients;
  pts.resize(n);
  out.image_signal.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.split(1 + i);
    PatientRecord& p = pts[i];
    char id[32];
    std::snprintf(id, sizeof id, "SYN-%04zu", i + 1);
    p.id = id;

    Latent& l = lat[i];
    l.img = rng.normal();
    out.image_signal[i] = l.img;

    l.gene = rng.normal();
    std::vector<double> z(kGeneCount);
    for (std::size_t j = 0; j < kGeneCount; ++j)
      z[j] = loading[j] * l.gene + std::sqrt(1.0 - loading[j] * loading[j]) * rng.normal();
    p.genes.resize(kGeneCount);
    for (std::size_t j = 0; j < kGeneCount; ++j) p.genes[j] = 8.0 + 1.5 * z[j];  // log2-scale expression

    const double grade_latent = rng.normal();
    p.clinical.grade = grade_latent < -kGradeCut ? 1 : (grade_latent > kGradeCut ? 3 : 2);
    const double log_size = rng.normal();
    p.clinical.size_mm = std::round(20.0 * std::exp(0.4 * log_size) * 10.0) / 10.0;
    const double age_z = rng.normal();
    p.clinical.age_years = std::round(58.0 + 11.0 * age_z);
    p.clinical.node_status = rng.uniform() < kNodeRate ? 1 : 0;
    const double node_z = (p.clinical.node_status - kNodeRate) / std::sqrt(kNodeRate * (1.0 - kNodeRate));
    l.clin = (0.6 * (p.clinical.grade - 2) / kGradeSd + 0.6 * log_size + 0.6 * node_z - 0.3 * age_z) /
             std::sqrt(3 * 0.36 + 0.09);

    const std::size_t n_patches = spec.min_patches + rng.below(spec.max_patches - spec.min_patches + 1);
    p.patches = Matrix(n_patches, spec.d_img);
    for (std::size_t r = 0; r < n_patches; ++r) {
      const double level = l.img + spec.patch_jitter * rng.normal();
      for (std::size_t c = 0; c < spec.d_img; ++c)
        p.patches(r, c) = level * out.signal_direction[c] + spec.patch_noise * rng.normal();
    }

    l.subtype_noise = rng.normal();
    p.subtype = l.gene + 0.5 * l.subtype_noise > 0.3 ? Subtype::luminal_b : Subtype::luminal_a;

    p.true_risk = spec.w_img * l.img + spec.w_gene * l.gene + spec.w_clin * l.clin;
    l.event_u = rng.exponential(1.0);
    l.censor_u = rng.uniform();
    event_time[i] = l.event_u / (spec.base_hazard * std::exp(p.true_risk));
  }

  std::vector<double> cu(n);
  for (std::size_t i = 0; i < n; ++i) cu[i] = lat[i].censor_u;
  const double upper = calibrate_censoring(event_time, cu, spec.censor_frac);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = cu[i] * upper;
    pts[i].outcome = c < event_time[i] ? SurvivalOutcome{c, false} : SurvivalOutcome{event_time[i], true};
    // a zero uniform draw would censor at t = 0; nudge to keep times positive
    if (!(pts[i].outcome.time > 0.0)) pts[i].outcome.time = std::numeric_limits<double>::min();
  }
  return out;
}

}  // namespace survfuse
