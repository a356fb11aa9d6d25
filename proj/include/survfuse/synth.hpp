#ifndef SURVFUSE_SYNTH_HPP
#define SURVFUSE_SYNTH_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

#include "survfuse/harness.hpp"

namespace survfuse {

/// Generator settings. Each latent component (image, gene, clinical) has unit
/// variance before weighting, so the weights set each modality's share of
/// the log-hazard variance.
struct SynthSpec {
  std::size_t n_patients = 300;
  double censor_frac = 0.3;
  double w_img = 2.0;
  double w_gene = 2.0;
  double w_clin = 1.2;
  double patch_noise = 1.0;   // isotropic sd added to every embedding coordinate
  double patch_jitter = 0.5;  // per-patch spread of the signal around the patient level
  double base_hazard = 1.0 / 3000.0;  // per day
  std::size_t min_patches = 8;
  std::size_t max_patches = 64;
  std::size_t d_img = 32;
  // Gene signal is a co-expression module: a latent factor that loads on
  // `signal_genes` genes with |loading| drawn from [min_loading, max_loading].
  std::size_t signal_genes = 20;
  double min_loading = 0.6;
  double max_loading = 0.9;
};

struct SynthCohort {
  Cohort cohort;
  std::vector<double> signal_direction;  // unit vector in embedding space
  std::vector<std::size_t> signal_genes;  // module members, ascending
  std::vector<double> image_signal;  // per-patient latent image level
};

SynthCohort synth_cohort(const SynthSpec& spec, std::uint64_t seed);

/// Mean projection of a patient's patches on the signal direction.
double mean_patch_signal(const Matrix& patches, const std::vector<double>& direction);

}  // namespace survfuse

#endif
