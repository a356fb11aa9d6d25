#ifndef SURVFUSE_STAINPREP_HPP
#define SURVFUSE_STAINPREP_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "survfuse/numerics.hpp"

namespace survfuse {

class Rng;

class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RankDeficiencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit RGB pixels, row-major.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), data(h * w * 3, fill) {}

  std::size_t pixels() const { return height * width; }
  std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch) { return data[(r * width + c) * 3 + ch]; }
  std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch) const { return data[(r * width + c) * 3 + ch]; }
  void set(std::size_t r, std::size_t c, std::array<std::uint8_t, 3> rgb) {
    for (std::size_t ch = 0; ch < 3; ++ch) at(r, c, ch) = rgb[ch];
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;  // 1 = tissue

  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
  std::size_t count() const;
};

struct PatchOrigin {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

struct PatchGrid {
  std::size_t patch_size = 224;
  std::vector<PatchOrigin> origins;  // row-major order
};

/// H and E optical-density directions (unit columns, H first) and the 99th
/// percentile concentration of each stain.
struct StainProfile {
  Matrix stain_matrix{3, 2};
  std::array<double, 2> max_concentrations{1.0, 1.0};

  std::array<double, 3> column(std::size_t k) const {
    return {stain_matrix(0, k), stain_matrix(1, k), stain_matrix(2, k)};
  }
  /// Builds a profile from two OD directions; normalises them to unit length.
  static StainProfile from_vectors(std::array<double, 3> h, std::array<double, 3> e,
                                   std::array<double, 2> max_conc);
};

struct StainOptions {
  double alpha = 1.0;             // angle percentile (and 100 - alpha)
  double beta = 0.15;             // OD floor for the SVD plane
  double conc_percentile = 99.0;  // max concentration percentile
  std::size_t min_pixels = 1000;
};

double hsv_saturation(std::uint8_t r, std::uint8_t g, std::uint8_t b);

Mask tissue_mask(const RgbImage& img, double sat_threshold = 0.07);

PatchGrid extract_patches(const RgbImage& img, const Mask& mask, std::size_t patch_size = 224,
                          double min_tissue_frac = 0.5);

RgbImage crop(const RgbImage& img, PatchOrigin origin, std::size_t size);

/// -log10((I + 1) / 256) per channel; one row per pixel.
Matrix optical_density(const RgbImage& img);

StainProfile estimate_stain_profile(const RgbImage& img, const Mask& mask,
                                    const StainOptions& opts = {});

RgbImage normalize_patch(const RgbImage& patch, const StainProfile& source,
                         const StainProfile& target);

/// Renders per-pixel concentrations (h, e) through a stain matrix.
RgbImage render_stains(std::size_t height, std::size_t width, const StainProfile& profile,
                       const std::vector<std::array<double, 2>>& concentrations);

/// Synthetic two-stain tissue field: mostly near-pure H or E pixels with a
/// minority of mixtures, all strictly positive concentrations.
RgbImage synthetic_stained_image(std::size_t height, std::size_t width, const StainProfile& profile,
                                 Rng& rng);

/// Ruifrok-Johnston H and E optical-density directions.
StainProfile default_he_profile();

double angle_degrees(std::array<double, 3> a, std::array<double, 3> b);

/// Linear-interpolated percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

namespace reference {
Mask tissue_mask(const RgbImage& img, double sat_threshold = 0.07);
Matrix optical_density(const RgbImage& img);
RgbImage normalize_patch(const RgbImage& patch, const StainProfile& source,
                         const StainProfile& target);
}  // namespace reference

}  // namespace survfuse

#endif
