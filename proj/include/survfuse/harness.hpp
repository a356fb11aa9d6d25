#ifndef SURVFUSE_HARNESS_HPP
#define SURVFUSE_HARNESS_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "survfuse/fusionnet.hpp"
#include "survfuse/numerics.hpp"
#include "survfuse/survloss.hpp"
#include "survfuse/survstats.hpp"

namespace survfuse {

class CohortError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Subtype { luminal_a, luminal_b };

const char* subtype_name(Subtype s);
Subtype parse_subtype(const std::string& s);

inline constexpr std::size_t kGeneCount = 50;
inline constexpr std::size_t kClinicalCount = 4;

struct ClinicalRecord {
  int grade = 2;  // 1..3
  double size_mm = 0.0;
  double age_years = 0.0;
  int node_status = 0;  // 0/1
};

struct PatientRecord {
  std::string id;
  Matrix patches;  // n × d_img
  std::vector<double> genes;
  ClinicalRecord clinical;
  SurvivalOutcome outcome;
  Subtype subtype = Subtype::luminal_a;
  double true_risk = std::numeric_limits<double>::quiet_NaN();  // synthetic cohorts only
};

struct Cohort {
  std::vector<PatientRecord> patients;

  std::size_t size() const { return patients.size(); }
  std::vector<SurvivalOutcome> outcomes() const;
  /// Throws CohortError naming the first patient that breaks an invariant.
  void validate(std::size_t d_img) const;
};

/// Per-feature centring and scaling, fitted on a training split.
struct Standardization {
  std::vector<double> gene_mean, gene_sd;
  double size_mean = 0.0, size_sd = 1.0;
  double age_mean = 0.0, age_sd = 1.0;

  static Standardization fit(const Cohort& cohort, std::span<const std::size_t> train);
  std::vector<double> genes(const PatientRecord& p) const;
  /// [grade in {-1, 0, 1}, size z, age z, node 0/1]
  std::vector<double> clinical(const PatientRecord& p) const;
  PatientFeatures features(const PatientRecord& p) const;
};

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 12;
  std::size_t max_epochs = 150;
  std::size_t patience = 5;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  ModelConfig model;

  void validate() const;
};

struct OptimizerState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;

  static OptimizerState for_params(const ModelParams& params);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One bias-corrected Adam step with decoupled weight decay on non-bias tensors.
void adamw_step(ModelParams& params, const ModelGrads& grads, OptimizerState& state, double lr,
                double weight_decay);

/// Tracks the best validation loss; epochs are numbered from 1.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience, std::size_t max_epochs);

  /// Records an epoch; returns true when training should stop after it.
  bool update(double val_loss);
  bool improved() const { return improved_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t max_epochs_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

/// Shuffles each subtype × event stratum and deals it round-robin, continuing
/// the deal where the previous stratum stopped.
std::vector<int> stratified_folds(const Cohort& cohort, std::size_t k, std::uint64_t seed);

struct BatchGradient {
  double loss = 0.0;
  ModelGrads grads;
};

/// NLL of one batch and its gradient; per-patient passes run in parallel and
/// are summed in patient order.
BatchGradient batch_gradient(const ModelParams& params, std::span<const PatientFeatures> features,
                             std::span<const SurvivalOutcome> outcomes);

namespace reference {
BatchGradient batch_gradient(const ModelParams& params, std::span<const PatientFeatures> features,
                             std::span<const SurvivalOutcome> outcomes);
}

std::vector<double> predict_all(const ModelParams& params, std::span<const PatientFeatures> features);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::size_t batches = 0;
  std::size_t skipped_batches = 0;
  double elapsed_seconds = 0.0;
};

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

FoldSplit split_fold(std::span<const int> folds, int fold);

struct TrainedFold {
  ModelParams params;  // weights of the best validation epoch
  Standardization stats;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double initial_val_loss = 0.0;
  std::vector<EpochLog> log;
};

TrainedFold train_fold(const Cohort& cohort, std::span<const int> folds, int fold, const TrainConfig& cfg);

/// Model families compared across folds.
enum class Variant { multimodal, imaging_genetic, imaging, clinical };
inline constexpr std::array<Variant, 4> kAllVariants = {Variant::multimodal, Variant::imaging_genetic,
                                                        Variant::imaging, Variant::clinical};
const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);
/// Model config for a neural variant (the clinical variant has none).
ModelConfig variant_model(Variant v, const ModelConfig& base);

struct Horizons {
  double short_term = 0.0;  // stands in for 5 years
  double long_term = 0.0;   // stands in for 10 years
};

/// 40th and 70th percentiles of all observed times.
Horizons percentile_horizons(const Cohort& cohort);

struct FoldMetrics {
  int fold = 0;
  double c_index = 0.0;
  double ibs_short = 0.0;
  double ibs_long = 0.0;
  double logrank_chi2 = 0.0;
  double logrank_p = 1.0;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
  std::vector<std::size_t> patients;  // validation indices
  std::vector<double> risks;          // log-hazard per validation patient
};

/// Median split used for risk groups: true = risk strictly above the median.
std::vector<bool> high_risk_mask(std::span<const double> risks);

/// Scores validation patients given risks for the training and validation
/// splits (training risks fit the Breslow baseline).
FoldMetrics score_fold(const Cohort& cohort, const FoldSplit& split, std::span<const double> train_risk,
                       std::span<const double> val_risk, const Horizons& horizons);

FoldMetrics evaluate_neural_fold(const Cohort& cohort, const FoldSplit& split, const ModelParams& params,
                                 const Standardization& stats, const Horizons& horizons);

/// Clinical CoxPH baseline on the standardised clinical covariates.
FoldMetrics evaluate_clinical_fold(const Cohort& cohort, const FoldSplit& split, const Horizons& horizons);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample (n - 1) standard deviation
};
MeanSd mean_sd(std::span<const double> values);

struct VariantReport {
  Variant variant = Variant::multimodal;
  std::vector<FoldMetrics> folds;
  MeanSd c_index, ibs_short, ibs_long, logrank_p;
  std::size_t folds_significant = 0;  // logrank p < 0.01

  void summarize();
};

struct CvConfig {
  TrainConfig train;
  std::size_t k = 5;
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  std::optional<Horizons> horizons;  // default: percentile_horizons
};

struct CvReport {
  CvConfig config;
  Horizons horizons;
  std::vector<int> folds;
  std::vector<VariantReport> variants;

  const VariantReport* find(Variant v) const;
};

CvReport run_cv(const Cohort& cohort, const CvConfig& cfg);

}  // namespace survfuse

#endif
