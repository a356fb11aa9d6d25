#include "survfuse/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "survfuse/parallel.hpp"
#include "survfuse/rng.hpp"
#include "survfuse/stainprep.hpp"

namespace survfuse {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sample_mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_sd(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Columns with no spread keep unit scale so they centre to zero instead of dividing by 0.
double usable_sd(double sd) { return sd > 1e-12 ? sd : 1.0; }

bool any_event(std::span<const SurvivalOutcome> out) {
  return std::any_of(out.begin(), out.end(), [](const SurvivalOutcome& o) { return o.event; });
}

std::vector<SurvivalOutcome> gather_outcomes(const Cohort& c, std::span<const std::size_t> idx) {
  std::vector<SurvivalOutcome> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(c.patients[i].outcome);
  return out;
}

std::vector<PatientFeatures> gather_features(const Cohort& c, std::span<const std::size_t> idx,
                                             const Standardization& stats) {
  std::vector<PatientFeatures> f;
  f.reserve(idx.size());
  for (std::size_t i : idx) f.push_back(stats.features(c.patients[i]));
  return f;
}

double validation_nll(const ModelParams& params, std::span<const PatientFeatures> features,
                      std::span<const SurvivalOutcome> outcomes) {
  const std::vector<double> lh = predict_all(params, features);
  return nll_loss(lh, outcomes).loss;
}

}  // namespace

const char* subtype_name(Subtype s) { return s == Subtype::luminal_a ? "LumA" : "LumB"; }

Subtype parse_subtype(const std::string& s) {
  if (s == "LumA" || s == "LuminalA") return Subtype::luminal_a;
  if (s == "LumB" || s == "LuminalB") return Subtype::luminal_b;
  throw CohortError("unknown subtype '" + s + "' (expected LumA or LumB)");
}

std::vector<SurvivalOutcome> Cohort::outcomes() const {
  std::vector<SurvivalOutcome> out;
  out.reserve(patients.size());
  for (const auto& p : patients) out.push_back(p.outcome);
  return out;
}

void Cohort::validate(std::size_t d_img) const {
  for (const auto& p : patients) {
    auto fail = [&](const std::string& why) { throw CohortError("patient " + p.id + ": " + why); };
    if (p.patches.rows() == 0) fail("no patch embeddings");
    if (p.patches.cols() != d_img)
      fail("patch embeddings are " + p.patches.shape_str() + ", expected width " + std::to_string(d_img));
    if (!p.patches.all_finite()) fail("non-finite patch embedding");
    if (p.genes.size() != kGeneCount) fail(std::to_string(p.genes.size()) + " genes, expected 50");
    for (double g : p.genes)
      if (!std::isfinite(g)) fail("missing gene expression value");
    if (p.clinical.grade < 1 || p.clinical.grade > 3) fail("grade must be 1, 2 or 3");
    if (p.clinical.node_status != 0 && p.clinical.node_status != 1) fail("node status must be 0 or 1");
    if (!std::isfinite(p.clinical.size_mm) || !std::isfinite(p.clinical.age_years)) fail("missing clinical value");
    if (!(p.outcome.time > 0.0) || !std::isfinite(p.outcome.time)) fail("survival time must be positive");
  }
}

Standardization Standardization::fit(const Cohort& cohort, std::span<const std::size_t> train) {
  if (train.empty()) throw CohortError("standardization: empty training split");
  Standardization s;
  s.gene_mean.assign(kGeneCount, 0.0);
  s.gene_sd.assign(kGeneCount, 1.0);
  std::vector<double> col(train.size());
  for (std::size_t j = 0; j < kGeneCount; ++j) {
    for (std::size_t i = 0; i < train.size(); ++i) col[i] = cohort.patients[train[i]].genes.at(j);
    s.gene_mean[j] = sample_mean(col);
    s.gene_sd[j] = usable_sd(sample_sd(col, s.gene_mean[j]));
  }
  for (std::size_t i = 0; i < train.size(); ++i) col[i] = cohort.patients[train[i]].clinical.size_mm;
  s.size_mean = sample_mean(col);
  s.size_sd = usable_sd(sample_sd(col, s.size_mean));
  for (std::size_t i = 0; i < train.size(); ++i) col[i] = cohort.patients[train[i]].clinical.age_years;
  s.age_mean = sample_mean(col);
  s.age_sd = usable_sd(sample_sd(col, s.age_mean));
  return s;
}

std::vector<double> Standardization::genes(const PatientRecord& p) const {
  std::vector<double> g(kGeneCount);
  for (std::size_t j = 0; j < kGeneCount; ++j) g[j] = (p.genes.at(j) - gene_mean[j]) / gene_sd[j];
  return g;
}

std::vector<double> Standardization::clinical(const PatientRecord& p) const {
  return {static_cast<double>(p.clinical.grade - 2), (p.clinical.size_mm - size_mean) / size_sd,
          (p.clinical.age_years - age_mean) / age_sd, static_cast<double>(p.clinical.node_status)};
}

PatientFeatures Standardization::features(const PatientRecord& p) const {
  return {p.patches, genes(p), clinical(p)};
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (model.d_img == 0 || model.d_model == 0 || model.d_attn == 0) throw ConfigError("model dims must be positive");
  if (model.d_gene != kGeneCount) throw ConfigError("d_gene must be 50");
  if (model.d_clin != kClinicalCount) throw ConfigError("d_clin must be 4");
}

OptimizerState OptimizerState::for_params(const ModelParams& params) {
  return {zero_params(params.config), zero_params(params.config), 0};
}

void adamw_step(ModelParams& params, const ModelGrads& grads, OptimizerState& state, double lr,
                double weight_decay) {
  std::vector<const Matrix*> g;
  grads.for_each([&](std::string_view, const Matrix& t, bool) { g.push_back(&t); });
  std::vector<Matrix*> m, v;
  state.m.for_each([&](std::string_view, Matrix& t, bool) { m.push_back(&t); });
  state.v.for_each([&](std::string_view, Matrix& t, bool) { v.push_back(&t); });

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  std::size_t k = 0;
  params.for_each([&](std::string_view name, Matrix& p, bool decays) {
    const Matrix& gk = *g[k];
    Matrix& mk = *m[k];
    Matrix& vk = *v[k];
    ++k;
    if (!p.same_shape(gk) || !p.same_shape(mk) || !p.same_shape(vk))
      throw StateError("adamw_step: tensor " + std::string(name) + " shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = gk.data()[i];
      double& mi = mk.data()[i];
      double& vi = vk.data()[i];
      mi = kAdamBeta1 * mi + (1.0 - kAdamBeta1) * gi;
      vi = kAdamBeta2 * vi + (1.0 - kAdamBeta2) * gi * gi;
      double& theta = p.data()[i];
      if (decays) theta -= lr * weight_decay * theta;
      theta -= lr * (mi / c1) / (std::sqrt(vi / c2) + kAdamEps);
    }
  });
  ++params.version;
}

EarlyStopper::EarlyStopper(std::size_t patience, std::size_t max_epochs)
    : patience_(patience), max_epochs_(max_epochs) {
  if (patience == 0 || max_epochs == 0) throw ConfigError("early stopping needs positive patience and epochs");
}

bool EarlyStopper::update(double val_loss) {
  ++epoch_;
  improved_ = val_loss < best_loss_;
  if (improved_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch_;
    since_best_ = 0;
  } else {
    ++since_best_;
  }
  return since_best_ >= patience_ || epoch_ >= max_epochs_;
}

std::vector<int> stratified_folds(const Cohort& cohort, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("stratified_folds: k must be at least 2");
  // subtype-major order keeps each subtype's total within one of even as well
  std::array<std::vector<std::size_t>, 4> strata;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& p = cohort.patients[i];
    const std::size_t s = (p.subtype == Subtype::luminal_b ? 2 : 0) + (p.outcome.event ? 0 : 1);
    strata[s].push_back(i);
  }
  std::vector<int> folds(cohort.size(), -1);
  const Rng base(seed, 0xF01D);
  std::size_t deal = 0;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    Rng rng = base.split(s);
    rng.shuffle(strata[s]);
    for (std::size_t i : strata[s]) folds[i] = static_cast<int>(deal++ % k);
  }
  return folds;
}

std::vector<double> predict_all(const ModelParams& params, std::span<const PatientFeatures> features) {
  std::vector<double> out(features.size());
  IndexedError err;
  const auto n = static_cast<std::ptrdiff_t>(features.size());
  SURVFUSE_PARFOR
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    err.run(u, [&] { out[u] = predict(params, features[u]); });
  }
  err.rethrow();
  return out;
}

BatchGradient batch_gradient(const ModelParams& params, std::span<const PatientFeatures> features,
                             std::span<const SurvivalOutcome> outcomes) {
  if (features.size() != outcomes.size()) throw ShapeError("batch_gradient: features vs outcomes length");
  const std::size_t n = features.size();
  const auto sn = static_cast<std::ptrdiff_t>(n);
  std::vector<ForwardResult> fwd(n);
  IndexedError err;
  SURVFUSE_PARFOR
  for (std::ptrdiff_t i = 0; i < sn; ++i) {
    const auto u = static_cast<std::size_t>(i);
    err.run(u, [&] { fwd[u] = forward(params, features[u]); });
  }
  err.rethrow();

  std::vector<double> lh(n);
  for (std::size_t i = 0; i < n; ++i) lh[i] = fwd[i].log_hazard;
  const LossResult loss = nll_loss(lh, outcomes);

  std::vector<ModelGrads> per(n);
  SURVFUSE_PARFOR
  for (std::ptrdiff_t i = 0; i < sn; ++i) {
    const auto u = static_cast<std::size_t>(i);
    err.run(u, [&] { per[u] = backward(params, fwd[u].tape, loss.grad[u]); });
  }
  err.rethrow();

  BatchGradient out{loss.loss, zero_params(params.config)};
  for (const auto& g : per) accumulate(out.grads, g);
  return out;
}

namespace reference {
BatchGradient batch_gradient(const ModelParams& params, std::span<const PatientFeatures> features,
                             std::span<const SurvivalOutcome> outcomes) {
  if (features.size() != outcomes.size()) throw ShapeError("batch_gradient: features vs outcomes length");
  std::vector<ForwardResult> fwd;
  std::vector<double> lh;
  for (const auto& f : features) {
    fwd.push_back(forward(params, f));
    lh.push_back(fwd.back().log_hazard);
  }
  const LossResult loss = nll_loss(lh, outcomes);
  BatchGradient out{loss.loss, zero_params(params.config)};
  for (std::size_t i = 0; i < fwd.size(); ++i) accumulate(out.grads, backward(params, fwd[i].tape, loss.grad[i]));
  return out;
}
}  // namespace reference

FoldSplit split_fold(std::span<const int> folds, int fold) {
  FoldSplit s;
  for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == fold ? s.validation : s.train).push_back(i);
  if (s.validation.empty()) throw ConfigError("fold " + std::to_string(fold) + " has no patients");
  return s;
}

TrainedFold train_fold(const Cohort& cohort, std::span<const int> folds, int fold, const TrainConfig& cfg) {
  cfg.validate();
  if (folds.size() != cohort.size()) throw ShapeError("train_fold: fold assignment length mismatch");
  const FoldSplit split = split_fold(folds, fold);
  const auto train_out = gather_outcomes(cohort, split.train);
  const auto val_out = gather_outcomes(cohort, split.validation);
  if (split.train.size() < cfg.batch_size)
    throw CohortError("fold " + std::to_string(fold) + ": training split smaller than one batch");
  if (!any_event(train_out)) throw CohortError("fold " + std::to_string(fold) + ": no events in training split");
  if (!any_event(val_out)) throw CohortError("fold " + std::to_string(fold) + ": no events in validation split");

  TrainedFold result;
  result.stats = Standardization::fit(cohort, split.train);
  const auto train_x = gather_features(cohort, split.train, result.stats);
  const auto val_x = gather_features(cohort, split.validation, result.stats);

  const Rng base(cfg.seed, 1000 + static_cast<std::uint64_t>(fold));
  Rng init_rng = base.split(0);
  ModelParams params = init_params(cfg.model, init_rng);
  OptimizerState opt = OptimizerState::for_params(params);
  result.initial_val_loss = validation_nll(params, val_x, val_out);
  result.params = params;
  result.best_val_loss = result.initial_val_loss;

  EarlyStopper stopper(cfg.patience, cfg.max_epochs);
  std::vector<std::size_t> order(split.train.size());
  std::vector<PatientFeatures> bx;
  std::vector<SurvivalOutcome> by;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1;; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = base.split(epoch);
    shuffle_rng.shuffle(order);

    EpochLog log;
    log.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      bx.clear();
      by.clear();
      for (std::size_t i = start; i < stop; ++i) {
        bx.push_back(train_x[order[i]]);
        by.push_back(train_out[order[i]]);
      }
      if (!any_event(by)) {
        ++log.skipped_batches;
        continue;
      }
      const BatchGradient bg = batch_gradient(params, bx, by);
      adamw_step(params, bg.grads, opt, cfg.lr, cfg.weight_decay);
      loss_sum += bg.loss;
      ++log.batches;
    }
    log.train_loss = log.batches ? loss_sum / static_cast<double>(log.batches) : kNaN;
    log.val_loss = validation_nll(params, val_x, val_out);
    log.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);

    const bool stop = stopper.update(log.val_loss);
    if (stopper.improved()) {
      result.params = params;
      result.best_epoch = epoch;
      result.best_val_loss = log.val_loss;
    }
    if (stop) break;
  }
  return result;
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::multimodal: return "multimodal";
    case Variant::imaging_genetic: return "imaging_genetic";
    case Variant::imaging: return "imaging";
    case Variant::clinical: return "clinical";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : kAllVariants)
    if (s == variant_name(v)) return v;
  throw ConfigError("unknown variant '" + s + "'");
}

ModelConfig variant_model(Variant v, const ModelConfig& base) {
  ModelConfig m = base;
  switch (v) {
    case Variant::multimodal: m.use_genes = true; m.use_clinical = true; break;
    case Variant::imaging_genetic: m.use_genes = true; m.use_clinical = false; break;
    case Variant::imaging: m.use_genes = false; m.use_clinical = false; break;
    case Variant::clinical: throw ConfigError("the clinical variant is a CoxPH model, not a network");
  }
  return m;
}

Horizons percentile_horizons(const Cohort& cohort) {
  std::vector<double> t;
  for (const auto& p : cohort.patients) t.push_back(p.outcome.time);
  return {percentile(t, 40.0), percentile(t, 70.0)};
}

std::vector<bool> high_risk_mask(std::span<const double> risks) {
  if (risks.empty()) return {};
  const double median = percentile(std::vector<double>(risks.begin(), risks.end()), 50.0);
  std::vector<bool> high(risks.size());
  for (std::size_t i = 0; i < risks.size(); ++i) high[i] = risks[i] > median;
  return high;
}

FoldMetrics score_fold(const Cohort& cohort, const FoldSplit& split, std::span<const double> train_risk,
                       std::span<const double> val_risk, const Horizons& horizons) {
  const auto train_out = gather_outcomes(cohort, split.train);
  const auto val_out = gather_outcomes(cohort, split.validation);
  FoldMetrics m;
  m.patients = split.validation;
  m.risks.assign(val_risk.begin(), val_risk.end());
  try {
    m.c_index = c_index(val_risk, val_out);
  } catch (const UndefinedMetricError&) {
    m.c_index = kNaN;
  }

  const BaselineHazard base = breslow_baseline(train_risk, train_out);
  std::vector<SurvivalFn> fns;
  for (double r : val_risk) fns.push_back([&base, r](double t) { return base.survival(t, r); });
  auto ibs = [&](double h) {
    try {
      return integrated_brier(fns, val_out, h).ibs;
    } catch (const UndefinedMetricError&) {
      return kNaN;
    }
  };
  m.ibs_short = ibs(horizons.short_term);
  m.ibs_long = ibs(horizons.long_term);

  const std::vector<bool> is_high = high_risk_mask(val_risk);
  std::vector<SurvivalOutcome> high, low;
  for (std::size_t i = 0; i < val_out.size(); ++i) (is_high[i] ? high : low).push_back(val_out[i]);
  if (!high.empty() && !low.empty()) {
    try {
      const LogRankResult lr = logrank_test(high, low);
      m.logrank_chi2 = lr.chi_square;
      m.logrank_p = lr.p_value;
    } catch (const UndefinedMetricError&) {
    }
  }
  return m;
}

FoldMetrics evaluate_neural_fold(const Cohort& cohort, const FoldSplit& split, const ModelParams& params,
                                 const Standardization& stats, const Horizons& horizons) {
  const auto train_x = gather_features(cohort, split.train, stats);
  const auto val_x = gather_features(cohort, split.validation, stats);
  return score_fold(cohort, split, predict_all(params, train_x), predict_all(params, val_x), horizons);
}

FoldMetrics evaluate_clinical_fold(const Cohort& cohort, const FoldSplit& split, const Horizons& horizons) {
  const Standardization stats = Standardization::fit(cohort, split.train);
  auto design = [&](std::span<const std::size_t> idx) {
    Matrix x(idx.size(), kClinicalCount);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto c = stats.clinical(cohort.patients[idx[i]]);
      for (std::size_t j = 0; j < kClinicalCount; ++j) x(i, j) = c[j];
    }
    return x;
  };
  const Matrix xt = design(split.train);
  const Matrix xv = design(split.validation);

  // constant training columns carry no information and would make the fit singular
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < kClinicalCount; ++j) {
    for (std::size_t i = 1; i < xt.rows(); ++i)
      if (xt(i, j) != xt(0, j)) {
        keep.push_back(j);
        break;
      }
  }
  std::vector<double> beta(kClinicalCount, 0.0);
  if (!keep.empty()) {
    Matrix xk(xt.rows(), keep.size());
    for (std::size_t i = 0; i < xt.rows(); ++i)
      for (std::size_t j = 0; j < keep.size(); ++j) xk(i, j) = xt(i, keep[j]);
    std::vector<double> b;
    try {
      b = fit_coxph(xk, gather_outcomes(cohort, split.train)).coefficients;
    } catch (const ConvergenceError& e) {
      b = e.last_iterate;
    } catch (const SeparationError&) {
      b.assign(keep.size(), 0.0);
    }
    for (std::size_t j = 0; j < keep.size(); ++j) beta[keep[j]] = b[j];
  }
  auto risks = [&](const Matrix& x) {
    std::vector<double> r(x.rows(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < kClinicalCount; ++j) r[i] += x(i, j) * beta[j];
    return r;
  };
  return score_fold(cohort, split, risks(xt), risks(xv), horizons);
}

MeanSd mean_sd(std::span<const double> values) {
  if (values.empty()) return {kNaN, kNaN};
  const double m = sample_mean(values);
  return {m, values.size() < 2 ? kNaN : sample_sd(values, m)};
}

void VariantReport::summarize() {
  std::vector<double> c, s, l, p;
  folds_significant = 0;
  for (const auto& f : folds) {
    c.push_back(f.c_index);
    s.push_back(f.ibs_short);
    l.push_back(f.ibs_long);
    p.push_back(f.logrank_p);
    if (f.logrank_p < 0.01) ++folds_significant;
  }
  c_index = mean_sd(c);
  ibs_short = mean_sd(s);
  ibs_long = mean_sd(l);
  logrank_p = mean_sd(p);
}

const VariantReport* CvReport::find(Variant v) const {
  for (const auto& r : variants)
    if (r.variant == v) return &r;
  return nullptr;
}

CvReport run_cv(const Cohort& cohort, const CvConfig& cfg) {
  cfg.train.validate();
  cohort.validate(cfg.train.model.d_img);
  CvReport report;
  report.config = cfg;
  report.horizons = cfg.horizons ? *cfg.horizons : percentile_horizons(cohort);
  report.folds = stratified_folds(cohort, cfg.k, cfg.train.seed);
  for (Variant v : cfg.variants) {
    VariantReport vr;
    vr.variant = v;
    for (int f = 0; f < static_cast<int>(cfg.k); ++f) {
      const FoldSplit split = split_fold(report.folds, f);
      FoldMetrics m;
      if (v == Variant::clinical) {
        m = evaluate_clinical_fold(cohort, split, report.horizons);
      } else {
        TrainConfig tc = cfg.train;
        tc.model = variant_model(v, cfg.train.model);
        const TrainedFold tf = train_fold(cohort, report.folds, f, tc);
        m = evaluate_neural_fold(cohort, split, tf.params, tf.stats, report.horizons);
        m.best_epoch = tf.best_epoch;
        m.epochs = tf.log.size();
      }
      m.fold = f;
      vr.folds.push_back(std::move(m));
    }
    vr.summarize();
    report.variants.push_back(std::move(vr));
  }
  return report;
}

}  // namespace survfuse
