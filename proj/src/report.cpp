#include "survfuse/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <json.hpp>

#include "survfuse/cohort_io.hpp"

namespace survfuse {

using nlohmann::ordered_json;

namespace {

ordered_json config_json(const ConfigEcho& config) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : config) j[k] = v;
  return j;
}

// NaN has no JSON spelling; undefined metrics become null
ordered_json number(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json mean_sd_json(const VariantReport& v, MeanSd VariantReport::*field) {
  return number((v.*field).mean);
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string cv_report_json(const CvReport& report, const Cohort& cohort, const ConfigEcho& config,
                           std::uint64_t seed) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "cv_evaluation";
  j["seed"] = seed;
  j["n_patients"] = cohort.size();
  std::size_t events = 0;
  for (const auto& p : cohort.patients) events += p.outcome.event;
  j["n_events"] = events;
  j["config"] = config_json(config);
  j["horizons"] = {{"ibs_5y", report.horizons.short_term}, {"ibs_10y", report.horizons.long_term}};

  ordered_json variants = ordered_json::array();
  for (const auto& v : report.variants) {
    ordered_json vj;
    vj["variant"] = variant_name(v.variant);
    ordered_json folds = ordered_json::array();
    for (const auto& f : v.folds) {
      ordered_json fj;
      fj["fold"] = f.fold + 1;
      fj["n_validation"] = f.patients.size();
      fj["c_index"] = number(f.c_index);
      fj["ibs_5y"] = number(f.ibs_short);
      fj["ibs_10y"] = number(f.ibs_long);
      fj["logrank_chi2"] = number(f.logrank_chi2);
      fj["logrank_p"] = number(f.logrank_p);
      if (v.variant != Variant::clinical) {
        fj["best_epoch"] = f.best_epoch;
        fj["epochs"] = f.epochs;
      }
      folds.push_back(fj);
    }
    vj["folds"] = folds;
    vj["mean"] = {{"c_index", mean_sd_json(v, &VariantReport::c_index)},
                  {"ibs_5y", mean_sd_json(v, &VariantReport::ibs_short)},
                  {"ibs_10y", mean_sd_json(v, &VariantReport::ibs_long)},
                  {"logrank_p", mean_sd_json(v, &VariantReport::logrank_p)}};
    vj["sd"] = {{"c_index", number(v.c_index.sd)},
                {"ibs_5y", number(v.ibs_short.sd)},
                {"ibs_10y", number(v.ibs_long.sd)},
                {"logrank_p", number(v.logrank_p.sd)}};
    vj["c_index_summary"] = fixed(v.c_index.mean, 2) + " ± " + fixed(v.c_index.sd, 2);
    vj["folds_logrank_p_below_0.01"] = v.folds_significant;
    variants.push_back(vj);
  }
  j["variants"] = variants;
  return j.dump(2) + "\n";
}

std::string cv_table_csv(const CvReport& report) {
  std::string s = "cv_fold";
  for (const auto& v : report.variants) s += std::string(",") + variant_name(v.variant);
  s += "\n";
  std::size_t k = 0;
  for (const auto& v : report.variants) k = std::max(k, v.folds.size());
  for (std::size_t f = 0; f < k; ++f) {
    s += std::to_string(f + 1);
    for (const auto& v : report.variants) s += "," + (f < v.folds.size() ? fixed(v.folds[f].c_index, 4) : "NA");
    s += "\n";
  }
  s += "mean";
  for (const auto& v : report.variants) s += "," + fixed(v.c_index.mean, 4);
  s += "\nsd";
  for (const auto& v : report.variants) s += "," + fixed(v.c_index.sd, 4);
  s += "\n";
  return s;
}

std::string risks_csv(const CvReport& report, const Cohort& cohort) {
  std::string s = "id,variant,fold,risk,time,event,group\n";
  for (const auto& v : report.variants) {
    for (const auto& f : v.folds) {
      const std::vector<bool> high = high_risk_mask(f.risks);
      for (std::size_t i = 0; i < f.patients.size(); ++i) {
        const auto& p = cohort.patients[f.patients[i]];
        s += p.id + "," + variant_name(v.variant) + "," + std::to_string(f.fold + 1) + "," + format_double(f.risks[i]) +
             "," + format_double(p.outcome.time) + "," + (p.outcome.event ? "1" : "0") + "," +
             (high[i] ? "high" : "low") + "\n";
      }
    }
  }
  return s;
}

std::string train_report_json(const std::vector<TrainSummary>& folds, const ConfigEcho& config,
                              std::uint64_t seed, std::size_t n_patients) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "training";
  j["seed"] = seed;
  j["n_patients"] = n_patients;
  j["config"] = config_json(config);
  ordered_json arr = ordered_json::array();
  for (const auto& f : folds) {
    arr.push_back({{"variant", variant_name(f.variant)},
                   {"fold", f.fold + 1},
                   {"best_epoch", f.best_epoch},
                   {"epochs", f.epochs},
                   {"skipped_batches", f.skipped_batches},
                   {"initial_val_nll", number(f.initial_val_loss)},
                   {"best_val_nll", number(f.best_val_loss)}});
  }
  j["folds"] = arr;
  return j.dump(2) + "\n";
}

std::string train_log_csv_header() { return "variant,fold,epoch,train_loss,val_loss,batches,skipped_batches,elapsed_s\n"; }

std::string train_log_csv_rows(Variant v, int fold, const std::vector<EpochLog>& log) {
  std::string s;
  for (const auto& e : log) {
    s += std::string(variant_name(v)) + "," + std::to_string(fold + 1) + "," + std::to_string(e.epoch) + "," +
         format_double(e.train_loss) + "," + format_double(e.val_loss) + "," + std::to_string(e.batches) + "," +
         std::to_string(e.skipped_batches) + "," + fixed(e.elapsed_seconds, 3) + "\n";
  }
  return s;
}

KmPlot build_km(const std::vector<std::string>& labels, const std::vector<SurvivalOutcome>& outcomes) {
  if (labels.size() != outcomes.size()) throw ShapeError("build_km: label count differs from outcome count");
  KmPlot plot;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, fresh] = index.emplace(labels[i], plot.groups.size());
    if (fresh) plot.groups.push_back({labels[i], {}, {}});
    plot.groups[it->second].outcomes.push_back(outcomes[i]);
  }
  for (auto& g : plot.groups) g.curve = kaplan_meier(g.outcomes);
  if (plot.groups.size() == 2) {
    try {
      plot.logrank = logrank_test(plot.groups[0].outcomes, plot.groups[1].outcomes);
    } catch (const UndefinedMetricError& e) {
      plot.note = e.what();
    }
  } else {
    plot.note = "log-rank needs exactly two groups, got " + std::to_string(plot.groups.size());
  }
  return plot;
}

std::string km_csv(const KmPlot& plot) {
  std::string s = "group,time,surv,lower,upper,at_risk,events\n";
  for (const auto& g : plot.groups) {
    const SurvCurve& c = g.curve;
    for (std::size_t i = 0; i < c.times.size(); ++i) {
      s += g.label + "," + format_double(c.times[i]) + "," + format_double(c.surv_prob[i]) + "," +
           format_double(c.lower[i]) + "," + format_double(c.upper[i]) + "," + std::to_string(c.at_risk[i]) + "," +
           std::to_string(c.n_events[i]) + "\n";
    }
  }
  return s;
}

std::string km_svg(const KmPlot& plot, const std::string& title) {
  constexpr double W = 640, H = 420, L = 60, R = 20, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  double t_max = 0.0;
  for (const auto& g : plot.groups)
    for (const auto& o : g.outcomes) t_max = std::max(t_max, o.time);
  if (!(t_max > 0.0)) t_max = 1.0;
  auto x = [&](double t) { return L + pw * t / t_max; };
  auto y = [&](double s) { return T + ph * (1.0 - s); };
  auto pt = [](double a, double b) { return fixed(a, 2) + "," + fixed(b, 2); };
  static const char* colours[] = {"#c0392b", "#2471a3", "#1e8449", "#7d3c98", "#b9770e"};

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\">\n";
  s += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
       xml_escape(title) + "</text>\n";
  // axes and ticks
  s += "<g stroke=\"black\" stroke-width=\"1\" fill=\"none\">\n";
  s += "<path d=\"M" + pt(L, T) + " L" + pt(L, T + ph) + " L" + pt(L + pw, T + ph) + "\"/>\n";
  s += "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int k = 0; k <= 4; ++k) {
    const double sv = k / 4.0, tv = t_max * k / 4.0;
    s += "<text x=\"" + fixed(L - 8, 2) + "\" y=\"" + fixed(y(sv) + 4, 2) + "\" text-anchor=\"end\">" + fixed(sv, 2) +
         "</text>\n";
    s += "<text x=\"" + fixed(x(tv), 2) + "\" y=\"" + fixed(T + ph + 16, 2) + "\" text-anchor=\"middle\">" +
         fixed(tv, 0) + "</text>\n";
  }
  s += "<text x=\"" + fixed(L + pw / 2, 2) + "\" y=\"" + fixed(H - 12, 2) + "\" text-anchor=\"middle\">time</text>\n";
  s += "<text x=\"16\" y=\"" + fixed(T + ph / 2, 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       fixed(T + ph / 2, 2) + ")\">survival probability</text>\n</g>\n";

  for (std::size_t gi = 0; gi < plot.groups.size(); ++gi) {
    const auto& g = plot.groups[gi];
    const SurvCurve& c = g.curve;
    const std::string colour = colours[gi % 5];
    // knots 0, event times, t_max; value k holds on [knot k, knot k+1)
    std::vector<double> knots{0.0}, sv{1.0}, lo{1.0}, hi{1.0};
    for (std::size_t i = 0; i < c.times.size(); ++i) {
      knots.push_back(c.times[i]);
      sv.push_back(c.surv_prob[i]);
      lo.push_back(c.lower[i]);
      hi.push_back(c.upper[i]);
    }
    knots.push_back(std::max(t_max, knots.back()));
    auto steps = [&](const std::vector<double>& v) {
      std::vector<std::pair<double, double>> pts;
      for (std::size_t k = 0; k < v.size(); ++k) {
        pts.emplace_back(x(knots[k]), y(v[k]));
        pts.emplace_back(x(knots[k + 1]), y(v[k]));
      }
      return pts;
    };
    auto path = [&](const std::vector<std::pair<double, double>>& pts) {
      std::string d;
      for (const auto& [px, py] : pts) d += (d.empty() ? "M" : " L") + pt(px, py);
      return d;
    };
    auto band = steps(hi);
    auto lower = steps(lo);
    band.insert(band.end(), lower.rbegin(), lower.rend());
    s += "<path d=\"" + path(band) + " Z\" fill=\"" + colour + "\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
    s += "<path d=\"" + path(steps(sv)) + "\" fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
    const double ly = T + 16 + 16 * static_cast<double>(gi);
    s += "<rect x=\"" + fixed(L + pw - 150, 2) + "\" y=\"" + fixed(ly - 9, 2) + "\" width=\"12\" height=\"10\" fill=\"" +
         colour + "\"/>\n";
    s += "<text x=\"" + fixed(L + pw - 132, 2) + "\" y=\"" + fixed(ly, 2) +
         "\" font-family=\"sans-serif\" font-size=\"12\">" + xml_escape(g.label) + " (n=" +
         std::to_string(g.outcomes.size()) + ")</text>\n";
  }
  const std::string annotation =
      plot.logrank ? "log-rank chi2 = " + fixed(plot.logrank->chi_square, 3) + ", p = " +
                         (plot.logrank->p_value < 1e-4 ? [&] {
                           char b[32];
                           std::snprintf(b, sizeof b, "%.2e", plot.logrank->p_value);
                           return std::string(b);
                         }()
                                                         : fixed(plot.logrank->p_value, 4))
                   : "log-rank not computed: " + plot.note;
  s += "<text x=\"" + fixed(L + 10, 2) + "\" y=\"" + fixed(T + ph - 10, 2) +
       "\" font-family=\"sans-serif\" font-size=\"12\">" + xml_escape(annotation) + "</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace survfuse
