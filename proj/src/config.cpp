#include "survfuse/config.hpp"

#include <functional>
#include <sstream>

#include "survfuse/cohort_io.hpp"

namespace survfuse {

namespace {

struct Key {
  const char* name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

double number(std::string_view v) {
  try {
    return parse_double(v);
  } catch (const CohortError&) {
    throw ConfigError("expected a number, got '" + std::string(v) + "'");
  }
}

double positive(std::string_view v) {
  const double x = number(v);
  if (!(x > 0.0)) throw ConfigError("must be positive");
  return x;
}

double non_negative(std::string_view v) {
  const double x = number(v);
  if (!(x >= 0.0)) throw ConfigError("must be >= 0");
  return x;
}

double unit_interval(std::string_view v) {
  const double x = number(v);
  if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("must lie in [0, 1]");
  return x;
}

long long integer(std::string_view v) {
  try {
    return parse_int(v);
  } catch (const CohortError&) {
    throw ConfigError("expected an integer, got '" + std::string(v) + "'");
  }
}

std::size_t count(std::string_view v) {
  const long long x = integer(v);
  if (x <= 0) throw ConfigError("must be a positive integer");
  return static_cast<std::size_t>(x);
}

std::string num(double v) { return format_double(v); }
std::string num(std::size_t v) { return std::to_string(v); }

#define SF_DOUBLE(key, field, parse) \
  Key { key, [](RunConfig& c, std::string_view v) { c.field = parse(v); }, [](const RunConfig& c) { return num(c.field); } }
#define SF_COUNT(key, field) \
  Key { key, [](RunConfig& c, std::string_view v) { c.field = count(v); }, [](const RunConfig& c) { return num(c.field); } }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      // training
      SF_DOUBLE("lr", train.lr, positive),
      SF_COUNT("batch_size", train.batch_size),
      SF_COUNT("max_epochs", train.max_epochs),
      SF_COUNT("patience", train.patience),
      SF_DOUBLE("weight_decay", train.weight_decay, non_negative),
      SF_COUNT("d_img", train.model.d_img),
      SF_COUNT("d_model", train.model.d_model),
      SF_COUNT("d_attn", train.model.d_attn),
      Key{"image_tokens",
          [](RunConfig& c, std::string_view v) {
            if (v == "pooled") c.train.model.image_tokens = ImageTokens::pooled;
            else if (v == "patches") c.train.model.image_tokens = ImageTokens::patches;
            else throw ConfigError("expected 'pooled' or 'patches'");
          },
          [](const RunConfig& c) {
            return std::string(c.train.model.image_tokens == ImageTokens::pooled ? "pooled" : "patches");
          }},
      Key{"folds",
          [](RunConfig& c, std::string_view v) {
            c.folds = count(v);
            if (c.folds < 2) throw ConfigError("need at least 2 folds");
          },
          [](const RunConfig& c) { return num(c.folds); }},
      Key{"variants",
          [](RunConfig& c, std::string_view v) {
            std::vector<Variant> out;
            for (const auto& name : split_csv_line(v)) {
              const Variant parsed = parse_variant(name);
              for (Variant seen : out)
                if (seen == parsed) throw ConfigError("variant '" + name + "' listed twice");
              out.push_back(parsed);
            }
            if (out.empty()) throw ConfigError("no variants given");
            c.variants = out;
          },
          [](const RunConfig& c) {
            std::string s;
            for (Variant v : c.variants) s += (s.empty() ? "" : ",") + std::string(variant_name(v));
            return s;
          }},
      SF_DOUBLE("ibs_horizon_short", ibs_horizon_short, non_negative),
      SF_DOUBLE("ibs_horizon_long", ibs_horizon_long, non_negative),
      // synthetic cohort
      Key{"n_patients",
          [](RunConfig& c, std::string_view v) {
            c.synth.n_patients = count(v);
            if (c.synth.n_patients < 20) throw ConfigError("need at least 20 patients");
          },
          [](const RunConfig& c) { return num(c.synth.n_patients); }},
      Key{"censor_frac",
          [](RunConfig& c, std::string_view v) {
            c.synth.censor_frac = unit_interval(v);
            if (c.synth.censor_frac >= 1.0) throw ConfigError("must be below 1");
          },
          [](const RunConfig& c) { return num(c.synth.censor_frac); }},
      SF_DOUBLE("w_img", synth.w_img, number),
      SF_DOUBLE("w_gene", synth.w_gene, number),
      SF_DOUBLE("w_clin", synth.w_clin, number),
      SF_DOUBLE("patch_noise", synth.patch_noise, non_negative),
      SF_DOUBLE("patch_jitter", synth.patch_jitter, non_negative),
      SF_DOUBLE("base_hazard", synth.base_hazard, positive),
      SF_COUNT("min_patches", synth.min_patches),
      SF_COUNT("max_patches", synth.max_patches),
      SF_COUNT("signal_genes", synth.signal_genes),
      SF_DOUBLE("min_loading", synth.min_loading, unit_interval),
      SF_DOUBLE("max_loading", synth.max_loading, unit_interval),
      // preprocessing
      SF_COUNT("patch_size", preprocess.patch_size),
      SF_DOUBLE("min_tissue", preprocess.min_tissue, unit_interval),
      SF_DOUBLE("sat_threshold", preprocess.sat_threshold, unit_interval),
      SF_DOUBLE("stain_alpha", preprocess.stain.alpha, non_negative),
      SF_DOUBLE("stain_beta", preprocess.stain.beta, non_negative),
      SF_DOUBLE("conc_percentile", preprocess.stain.conc_percentile, non_negative),
      SF_COUNT("min_pixels", preprocess.stain.min_pixels),
      Key{"threads",
          [](RunConfig& c, std::string_view v) {
            const long long n = integer(v);
            if (n < 0 || n > 4096) throw ConfigError("must be 0 (OpenMP default) or a thread count");
            c.threads = static_cast<int>(n);
          },
          [](const RunConfig& c) { return std::to_string(c.threads); }},
  };
  return table;
}

#undef SF_DOUBLE
#undef SF_COUNT

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const Key& k : key_table()) {
    if (key != k.name) continue;
    try {
      k.set(*this, trim(value));
    } catch (const std::exception& e) {
      throw ConfigError("key '" + std::string(key) + "': " + e.what());
    }
    return;
  }
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Key& k : key_table()) out.emplace_back(k.name, k.get(*this));
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Key& k : key_table()) out.emplace_back(k.name);
  return out;
}

std::optional<Horizons> RunConfig::horizons() const {
  if (ibs_horizon_short > 0.0 && ibs_horizon_long > 0.0) return Horizons{ibs_horizon_short, ibs_horizon_long};
  if (ibs_horizon_short > 0.0 || ibs_horizon_long > 0.0)
    throw ConfigError("set both ibs_horizon_short and ibs_horizon_long, or neither");
  return std::nullopt;
}

CvConfig RunConfig::cv_config() const {
  CvConfig c;
  c.train = train;
  c.k = folds;
  c.variants = variants;
  c.horizons = horizons();
  return c;
}

void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + "missing key before '='");
    try {
      cfg.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig cfg;
  apply_config_text(cfg, read_file(path), path.filename().string());
  return cfg;
}

}  // namespace survfuse
