#ifndef SURVFUSE_REPORT_HPP
#define SURVFUSE_REPORT_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "survfuse/harness.hpp"
#include "survfuse/survstats.hpp"

namespace survfuse {

inline constexpr int kSchemaVersion = 1;

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

/// Cross-validation report. Contains no timings, so equal inputs give equal bytes.
std::string cv_report_json(const CvReport& report, const Cohort& cohort, const ConfigEcho& config,
                           std::uint64_t seed);

/// C-index per fold with mean and sd rows, one column per variant.
std::string cv_table_csv(const CvReport& report);

/// id,variant,fold,risk,time,event,group with group = high/low by fold median.
std::string risks_csv(const CvReport& report, const Cohort& cohort);

struct TrainSummary {
  Variant variant = Variant::multimodal;
  int fold = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
  std::size_t skipped_batches = 0;
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
};

std::string train_report_json(const std::vector<TrainSummary>& folds, const ConfigEcho& config,
                              std::uint64_t seed, std::size_t n_patients);

/// variant,fold,epoch,train_loss,val_loss,batches,skipped_batches,elapsed_s
std::string train_log_csv_header();
std::string train_log_csv_rows(Variant v, int fold, const std::vector<EpochLog>& log);

struct KmGroup {
  std::string label;
  std::vector<SurvivalOutcome> outcomes;
  SurvCurve curve;
};

struct KmPlot {
  std::vector<KmGroup> groups;
  std::optional<LogRankResult> logrank;  // only with exactly two groups
  std::string note;                      // why log-rank was not computed
};

/// Groups rows by label (in first-appearance order) and fits each curve.
KmPlot build_km(const std::vector<std::string>& labels, const std::vector<SurvivalOutcome>& outcomes);

/// group,time,surv,lower,upper,at_risk,events
std::string km_csv(const KmPlot& plot);
/// Step plot with shaded 95% bands and the log-rank annotation.
std::string km_svg(const KmPlot& plot, const std::string& title);

}  // namespace survfuse

#endif
