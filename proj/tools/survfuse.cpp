// survfuse command-line driver: preprocess, synth, train, evaluate, km.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "survfuse/checkpoint.hpp"
#include "survfuse/cohort_io.hpp"
#include "survfuse/config.hpp"
#include "survfuse/harness.hpp"
#include "survfuse/image_io.hpp"
#include "survfuse/parallel.hpp"
#include "survfuse/report.hpp"
#include "survfuse/rng.hpp"
#include "survfuse/stainprep.hpp"
#include "survfuse/synth.hpp"

namespace fs = std::filesystem;
using namespace survfuse;
using nlohmann::ordered_json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("--out", c.out, "output directory")->required();
}

// Config file first, then dedicated flags, then --set, so the command line wins.
RunConfig resolve_config(const Common& c, const std::vector<std::pair<std::string, std::string>>& flags,
                         RunConfig cfg = {}) {
  if (!c.config_path.empty()) apply_config_text(cfg, read_file(c.config_path), fs::path(c.config_path).filename().string());
  for (const auto& [k, v] : flags) {
    try {
      cfg.set(k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("command line: ") + e.what());
    }
  }
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    try {
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("--set: ") + e.what());
    }
  }
  if (cfg.threads > 0) set_threads(cfg.threads);
  return cfg;
}

template <class T>
void flag(std::vector<std::pair<std::string, std::string>>& out, const char* key, const std::optional<T>& v) {
  if (!v) return;
  std::ostringstream os;
  os << *v;
  out.emplace_back(key, os.str());
}

// ---- preprocess ----

StainProfile read_profile(const std::string& path) {
  const auto j = ordered_json::parse(read_file(path));
  auto get = [&](const char* k) { return j.at(k).get<double>(); };
  return StainProfile::from_vectors({get("h_r"), get("h_g"), get("h_b")}, {get("e_r"), get("e_g"), get("e_b")},
                                    {get("max_h"), get("max_e")});
}

ordered_json profile_json(const StainProfile& p) {
  const auto h = p.column(0), e = p.column(1);
  return {{"h_r", h[0]}, {"h_g", h[1]}, {"h_b", h[2]}, {"e_r", e[0]}, {"e_g", e[1]}, {"e_b", e[2]},
          {"max_h", p.max_concentrations[0]}, {"max_e", p.max_concentrations[1]}};
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm" || ext == ".pnm";
}

int cmd_preprocess(const Common& common, const std::string& input, const std::string& target_path,
                   const std::vector<std::pair<std::string, std::string>>& flags) {
  const RunConfig cfg = resolve_config(common, flags);
  const PreprocessOptions& opt = cfg.preprocess;
  const StainProfile target = target_path.empty() ? default_he_profile() : read_profile(target_path);
  const fs::path out = common.out;
  fs::create_directories(out / "patches");

  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(input))
    if (e.is_regular_file() && is_image_file(e.path())) images.push_back(e.path());
  std::sort(images.begin(), images.end());
  if (images.empty()) std::cerr << "warning: no PNG/PPM images in " << input << "\n";

  std::string manifest = "filename,source_image,row,col\n";
  ordered_json errors = ordered_json::array();
  ordered_json processed = ordered_json::array();
  std::size_t ok = 0;
  for (const auto& path : images) {
    try {
      const RgbImage img = read_image(path.string());
      const Mask mask = tissue_mask(img, opt.sat_threshold);
      const PatchGrid grid = extract_patches(img, mask, opt.patch_size, opt.min_tissue);
      const StainProfile source = estimate_stain_profile(img, mask, opt.stain);
      std::string rows;
      for (const auto& o : grid.origins) {
        const RgbImage patch = normalize_patch(crop(img, o, grid.patch_size), source, target);
        const std::string name =
            path.stem().string() + "_r" + std::to_string(o.row) + "_c" + std::to_string(o.col) + ".png";
        const fs::path dst = out / "patches" / name;
        const fs::path tmp = dst.string() + ".tmp";
        write_png(tmp.string(), patch);
        fs::rename(tmp, dst);
        rows += "patches/" + name + "," + path.filename().string() + "," + std::to_string(o.row) + "," +
                std::to_string(o.col) + "\n";
      }
      manifest += rows;
      processed.push_back({{"image", path.filename().string()},
                           {"patches", grid.origins.size()},
                           {"source_profile", profile_json(source)}});
      ++ok;
    } catch (const std::exception& e) {
      std::cerr << "error: " << path.filename().string() << ": " << e.what() << "\n";
      errors.push_back({{"image", path.filename().string()}, {"error", e.what()}});
    }
  }
  write_file_atomic(out / "patch_manifest.csv", manifest);
  ordered_json report;
  report["schema_version"] = kSchemaVersion;
  report["kind"] = "preprocess";
  ordered_json echo = ordered_json::object();
  for (const auto& [k, v] : cfg.entries()) echo[k] = v;
  report["config"] = echo;
  report["target_profile"] = profile_json(target);
  report["images"] = processed;
  report["errors"] = errors;
  write_file_atomic(out / "preprocess_report.json", report.dump(2) + "\n");
  std::cout << "preprocessed " << ok << " of " << images.size() << " images\n";
  return !images.empty() && ok == 0 ? 1 : 0;
}

// ---- synth ----

int cmd_synth(const Common& common, std::uint64_t seed, const std::vector<std::pair<std::string, std::string>>& flags) {
  const RunConfig cfg = resolve_config(common, flags);
  SynthSpec spec = cfg.synth;
  spec.d_img = cfg.train.model.d_img;
  const SynthCohort sc = synth_cohort(spec, seed);
  const fs::path out = common.out;
  write_cohort(sc.cohort, out);
  std::string truth = "id,true_risk,image_signal\n";
  for (std::size_t i = 0; i < sc.cohort.size(); ++i)
    truth += sc.cohort.patients[i].id + "," + format_double(sc.cohort.patients[i].true_risk) + "," +
             format_double(sc.image_signal[i]) + "\n";
  write_file_atomic(out / "ground_truth.csv", truth);
  std::size_t censored = 0;
  for (const auto& p : sc.cohort.patients) censored += !p.outcome.event;
  std::cout << "wrote " << sc.cohort.size() << " patients (" << censored << " censored) to " << out.string() << "\n";
  return 0;
}

// ---- train ----

std::string checkpoint_name(Variant v, int fold) {
  return std::string("checkpoints/") + variant_name(v) + "_fold" + std::to_string(fold + 1) + ".ckpt";
}

int cmd_train(const Common& common, const std::string& manifest, std::uint64_t seed,
              const std::vector<std::pair<std::string, std::string>>& flags) {
  RunConfig cfg = resolve_config(common, flags);
  cfg.train.seed = seed;
  cfg.train.validate();
  const Cohort cohort = read_cohort(manifest);
  cohort.validate(cfg.train.model.d_img);
  const fs::path out = common.out;
  const std::vector<int> folds = stratified_folds(cohort, cfg.folds, seed);
  write_file_atomic(out / "folds.csv", folds_csv(cohort, folds));

  std::vector<TrainSummary> summary;
  std::string log = train_log_csv_header();
  for (Variant v : cfg.variants) {
    if (v == Variant::clinical) continue;  // fitted at evaluation time
    TrainConfig tc = cfg.train;
    tc.model = variant_model(v, cfg.train.model);
    for (int f = 0; f < static_cast<int>(cfg.folds); ++f) {
      const TrainedFold tf = train_fold(cohort, folds, f, tc);
      save_checkpoint((out / checkpoint_name(v, f)).string(),
                      {tf.params, tf.stats, seed, f, variant_name(v), tf.best_epoch});
      std::size_t skipped = 0;
      for (const auto& e : tf.log) skipped += e.skipped_batches;
      summary.push_back({v, f, tf.best_epoch, tf.log.size(), skipped, tf.initial_val_loss, tf.best_val_loss});
      log += train_log_csv_rows(v, f, tf.log);
      std::cout << variant_name(v) << " fold " << f + 1 << ": " << tf.log.size() << " epochs, best " << tf.best_epoch
                << " (val NLL " << tf.best_val_loss << ")\n";
    }
  }
  write_file_atomic(out / "train_log.csv", log);
  write_file_atomic(out / "train_report.json", train_report_json(summary, cfg.entries(), seed, cohort.size()));
  return 0;
}

// ---- evaluate ----

int cmd_evaluate(const Common& common, const std::string& manifest, const std::string& models,
                 const std::vector<std::pair<std::string, std::string>>& flags) {
  const fs::path mdir = models;
  const auto train_report = ordered_json::parse(read_file(mdir / "train_report.json"));
  const std::uint64_t seed = train_report.at("seed");
  // start from the settings the models were trained with
  RunConfig trained;
  for (const auto& [k, v] : train_report.at("config").items()) trained.set(k, v.get<std::string>());
  const RunConfig cfg = resolve_config(common, flags, trained);
  const Cohort cohort = read_cohort(manifest);
  cohort.validate(cfg.train.model.d_img);

  CvReport report;
  report.config = cfg.cv_config();
  report.config.train.seed = seed;
  report.horizons = report.config.horizons ? *report.config.horizons : percentile_horizons(cohort);
  report.folds = read_folds(mdir / "folds.csv", cohort);
  const int k = *std::max_element(report.folds.begin(), report.folds.end()) + 1;

  for (Variant v : cfg.variants) {
    VariantReport vr;
    vr.variant = v;
    for (int f = 0; f < k; ++f) {
      const FoldSplit split = split_fold(report.folds, f);
      FoldMetrics m;
      if (v == Variant::clinical) {
        m = evaluate_clinical_fold(cohort, split, report.horizons);
      } else {
        const Checkpoint ck = load_checkpoint((mdir / checkpoint_name(v, f)).string());
        if (ck.variant != variant_name(v) || ck.fold != f)
          throw std::runtime_error("checkpoint " + checkpoint_name(v, f) + " belongs to another run");
        m = evaluate_neural_fold(cohort, split, ck.params, ck.stats, report.horizons);
        m.best_epoch = ck.best_epoch;
        for (const auto& s : train_report.at("folds"))
          if (s.at("variant") == variant_name(v) && s.at("fold") == f + 1) m.epochs = s.at("epochs");
      }
      m.fold = f;
      vr.folds.push_back(std::move(m));
    }
    vr.summarize();
    report.variants.push_back(std::move(vr));
  }

  const fs::path out = common.out;
  write_file_atomic(out / "report.json", cv_report_json(report, cohort, cfg.entries(), seed));
  write_file_atomic(out / "cv_table.csv", cv_table_csv(report));
  write_file_atomic(out / "risks.csv", risks_csv(report, cohort));
  for (const auto& v : report.variants) {
    std::printf("%-16s C-index %.3f ± %.3f  IBS %.3f / %.3f  folds p<0.01: %zu/%zu\n", variant_name(v.variant),
                v.c_index.mean, v.c_index.sd, v.ibs_short.mean, v.ibs_long.mean, v.folds_significant, v.folds.size());
  }
  return 0;
}

// ---- km ----

int cmd_km(const std::string& input, const std::string& out_dir, const std::string& variant,
           const std::string& title) {
  std::istringstream is(read_file(input));
  std::string line;
  if (!std::getline(is, line)) throw CohortError(input + ": empty file");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"time", "event", "group"})
    if (!col.count(need)) throw CohortError(input + ": missing column '" + need + "'");
  const bool has_variant = col.count("variant") > 0;

  std::vector<std::string> labels;
  std::vector<SurvivalOutcome> outcomes;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw CohortError(input + ":" + std::to_string(line_no) + ": wrong field count");
    if (has_variant && f[col["variant"]] != variant) continue;
    try {
      const double t = parse_double(f[col["time"]]);
      const long long e = parse_int(f[col["event"]]);
      if (!(t > 0.0) || (e != 0 && e != 1)) throw CohortError("time must be positive and event 0/1");
      outcomes.push_back({t, e == 1});
      labels.push_back(f[col["group"]]);
    } catch (const CohortError& err) {
      throw CohortError(input + ":" + std::to_string(line_no) + ": " + err.what());
    }
  }
  if (outcomes.empty()) throw CohortError(input + ": no rows" + (has_variant ? " for variant " + variant : ""));

  const KmPlot plot = build_km(labels, outcomes);
  const fs::path out = out_dir;
  write_file_atomic(out / "km.csv", km_csv(plot));
  write_file_atomic(out / "km.svg", km_svg(plot, title));
  if (plot.logrank) {
    std::printf("log-rank chi2 = %.4f, p = %.4g\n", plot.logrank->chi_square, plot.logrank->p_value);
  } else {
    std::cerr << "warning: " << plot.note << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal survival modelling: stain preprocessing, training and evaluation"};
  app.require_subcommand(1);

  Common pre_c, syn_c, tr_c, ev_c;
  std::string pre_input, pre_target;
  std::optional<std::size_t> patch_size;
  std::optional<double> min_tissue;
  auto* pre = app.add_subcommand("preprocess", "tissue mask, tile and stain-normalise a directory of images");
  add_common(pre, pre_c);
  pre->add_option("--input", pre_input, "directory of PNG/PPM images")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--target-profile", pre_target, "stain profile JSON (default: reference H&E)")
      ->check(CLI::ExistingFile);
  pre->add_option("--patch-size", patch_size, "patch edge in pixels");
  pre->add_option("--min-tissue", min_tissue, "minimum tissue fraction per patch");

  std::uint64_t syn_seed = 0;
  std::optional<std::size_t> syn_n;
  std::optional<double> syn_censor;
  auto* syn = app.add_subcommand("synth", "generate a synthetic cohort with known risk");
  add_common(syn, syn_c);
  syn->add_option("--seed", syn_seed, "random seed")->required();
  syn->add_option("--n", syn_n, "number of patients");
  syn->add_option("--censor-frac", syn_censor, "target censored fraction");

  std::string tr_manifest, tr_variants;
  std::uint64_t tr_seed = 0;
  std::optional<std::size_t> tr_epochs, tr_patience, tr_batch, tr_threads;
  std::optional<double> tr_lr;
  auto* tr = app.add_subcommand("train", "cross-validated training; writes one checkpoint per variant and fold");
  add_common(tr, tr_c);
  tr->add_option("--manifest", tr_manifest, "cohort manifest CSV")->required()->check(CLI::ExistingFile);
  tr->add_option("--seed", tr_seed, "random seed")->required();
  tr->add_option("--variants", tr_variants, "comma-separated variants");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--max-epochs", tr_epochs, "epoch limit");
  tr->add_option("--patience", tr_patience, "early-stopping patience");
  tr->add_option("--batch-size", tr_batch, "mini-batch size");
  tr->add_option("--threads", tr_threads, "OpenMP threads");

  std::string ev_manifest, ev_models, ev_variants;
  auto* ev = app.add_subcommand("evaluate", "score trained checkpoints; writes report.json, cv_table.csv, risks.csv");
  add_common(ev, ev_c);
  ev->add_option("--manifest", ev_manifest, "cohort manifest CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--models", ev_models, "directory written by train")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--variants", ev_variants, "comma-separated variants");

  std::string km_input, km_out, km_variant = "multimodal", km_title = "Kaplan-Meier by risk group";
  auto* km = app.add_subcommand("km", "Kaplan-Meier curves with 95% bands and log-rank test");
  km->add_option("--risks", km_input, "CSV with time,event,group columns (e.g. risks.csv)")
      ->required()
      ->check(CLI::ExistingFile);
  km->add_option("--variant", km_variant, "variant to plot when the CSV has a variant column");
  km->add_option("--title", km_title, "plot title");
  km->add_option("--out", km_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<std::pair<std::string, std::string>> flags;
    if (pre->parsed()) {
      flag(flags, "patch_size", patch_size);
      flag(flags, "min_tissue", min_tissue);
      return cmd_preprocess(pre_c, pre_input, pre_target, flags);
    }
    if (syn->parsed()) {
      flag(flags, "n_patients", syn_n);
      flag(flags, "censor_frac", syn_censor);
      return cmd_synth(syn_c, syn_seed, flags);
    }
    if (tr->parsed()) {
      if (!tr_variants.empty()) flags.emplace_back("variants", tr_variants);
      flag(flags, "lr", tr_lr);
      flag(flags, "max_epochs", tr_epochs);
      flag(flags, "patience", tr_patience);
      flag(flags, "batch_size", tr_batch);
      flag(flags, "threads", tr_threads);
      return cmd_train(tr_c, tr_manifest, tr_seed, flags);
    }
    if (ev->parsed()) {
      if (!ev_variants.empty()) flags.emplace_back("variants", ev_variants);
      return cmd_evaluate(ev_c, ev_manifest, ev_models, flags);
    }
    return cmd_km(km_input, km_out, km_variant, km_title);
  } catch (const ConfigError& e) {
    std::cerr << "survfuse: config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "survfuse: error: " << e.what() << "\n";
    return 1;
  }
}
