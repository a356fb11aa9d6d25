#ifndef SURVFUSE_CONFIG_HPP
#define SURVFUSE_CONFIG_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "survfuse/harness.hpp"
#include "survfuse/stainprep.hpp"
#include "survfuse/synth.hpp"

namespace survfuse {

struct PreprocessOptions {
  std::size_t patch_size = 224;
  double min_tissue = 0.5;
  double sat_threshold = 0.07;
  StainOptions stain;
};

/// Every tunable of every command. Files hold `key = value` lines with `#`
/// comments; command-line flags are applied on top with the same keys.
struct RunConfig {
  TrainConfig train;
  std::size_t folds = 5;
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  double ibs_horizon_short = 0.0;  // 0 = 40th percentile of observed times
  double ibs_horizon_long = 0.0;   // 0 = 70th percentile
  SynthSpec synth;
  PreprocessOptions preprocess;
  int threads = 0;  // 0 = OpenMP default

  /// Throws ConfigError naming the key on an unknown key or bad value.
  void set(std::string_view key, std::string_view value);
  /// All keys with their current values, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  static std::vector<std::string> keys();

  std::optional<Horizons> horizons() const;
  CvConfig cv_config() const;
};

/// Applies a config file's lines on top of `cfg`; errors carry `source:line`.
void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace survfuse

#endif
