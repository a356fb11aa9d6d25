#include "survfuse/stainprep.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "survfuse/parallel.hpp"
#include "survfuse/rng.hpp"

namespace survfuse {

namespace {

inline double od_of(std::uint8_t v) { return -std::log10((static_cast<double>(v) + 1.0) / 256.0); }

inline std::uint8_t intensity_of(double od) {
  const double i = 256.0 * std::pow(10.0, -od) - 1.0;
  return static_cast<std::uint8_t>(std::clamp(std::lround(i), 0L, 255L));
}

inline void mask_pixel(const RgbImage& img, Mask& m, std::size_t p, double thr) {
  const auto* px = img.data.data() + p * 3;
  m.bits[p] = hsv_saturation(px[0], px[1], px[2]) > thr ? 1 : 0;
}

inline void od_pixel(const RgbImage& img, Matrix& od, std::size_t p) {
  for (std::size_t ch = 0; ch < 3; ++ch) od(p, ch) = od_of(img.data[p * 3 + ch]);
}

struct NormalizeKernel {
  std::array<std::array<double, 3>, 2> pinv{};  // (MᵀM)⁻¹Mᵀ of the source
  std::array<double, 2> scale{};
  Matrix target;

  NormalizeKernel(const StainProfile& source, const StainProfile& tgt) : target(tgt.stain_matrix) {
    const Matrix& m = source.stain_matrix;
    double a = 0, b = 0, d = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      a += m(i, 0) * m(i, 0);
      b += m(i, 0) * m(i, 1);
      d += m(i, 1) * m(i, 1);
    }
    const double det = a * d - b * b;
    if (!(std::abs(det) > 1e-12)) throw DegenerateInputError("normalize_patch: source stains are collinear");
    for (std::size_t i = 0; i < 3; ++i) {
      pinv[0][i] = (d * m(i, 0) - b * m(i, 1)) / det;
      pinv[1][i] = (-b * m(i, 0) + a * m(i, 1)) / det;
    }
    for (std::size_t k = 0; k < 2; ++k) scale[k] = tgt.max_concentrations[k] / source.max_concentrations[k];
  }

  void apply(const RgbImage& in, RgbImage& out, std::size_t p) const {
    double od[3];
    for (std::size_t ch = 0; ch < 3; ++ch) od[ch] = od_of(in.data[p * 3 + ch]);
    double c[2];
    for (std::size_t k = 0; k < 2; ++k) {
      const double v = pinv[k][0] * od[0] + pinv[k][1] * od[1] + pinv[k][2] * od[2];
      c[k] = std::max(v, 0.0) * scale[k];
    }
    for (std::size_t ch = 0; ch < 3; ++ch)
      out.data[p * 3 + ch] = intensity_of(target(ch, 0) * c[0] + target(ch, 1) * c[1]);
  }
};

void check_image(const RgbImage& img) {
  if (img.data.size() != img.height * img.width * 3) {
    throw ShapeError("RgbImage: data length does not match " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + "x3");
  }
}

std::array<double, 3> unit(std::array<double, 3> v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (!(n > 0.0)) throw DegenerateInputError("zero-length stain vector");
  for (double& x : v) x /= n;
  return v;
}

// Orients a direction into the non-negative octant as far as possible.
std::array<double, 3> nonnegative_unit(std::array<double, 3> v) {
  if (v[0] + v[1] + v[2] < 0.0)
    for (double& x : v) x = -x;
  for (double& x : v) x = std::max(x, 0.0);
  return unit(v);
}

}  // namespace

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

StainProfile StainProfile::from_vectors(std::array<double, 3> h, std::array<double, 3> e,
                                        std::array<double, 2> max_conc) {
  StainProfile p;
  h = unit(h);
  e = unit(e);
  for (std::size_t i = 0; i < 3; ++i) {
    p.stain_matrix(i, 0) = h[i];
    p.stain_matrix(i, 1) = e[i];
  }
  p.max_concentrations = max_conc;
  return p;
}

StainProfile default_he_profile() {
  return StainProfile::from_vectors({0.650, 0.704, 0.286}, {0.072, 0.990, 0.105}, {1.9705, 1.0308});
}

double hsv_saturation(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const int mx = std::max({r, g, b});
  const int mn = std::min({r, g, b});
  if (mx == 0) return 0.0;
  return static_cast<double>(mx - mn) / static_cast<double>(mx);
}

Mask tissue_mask(const RgbImage& img, double sat_threshold) {
  check_image(img);
  Mask m{img.height, img.width, std::vector<std::uint8_t>(img.pixels())};
  const auto n = static_cast<std::ptrdiff_t>(img.pixels());
  SURVFUSE_PARFOR
  for (std::ptrdiff_t p = 0; p < n; ++p) mask_pixel(img, m, static_cast<std::size_t>(p), sat_threshold);
  return m;
}

PatchGrid extract_patches(const RgbImage& img, const Mask& mask, std::size_t patch_size,
                          double min_tissue_frac) {
  if (patch_size == 0) throw DomainError("extract_patches: patch_size must be >= 1");
  if (!(min_tissue_frac >= 0.0 && min_tissue_frac <= 1.0))
    throw DomainError("extract_patches: min_tissue_frac must lie in [0, 1]");
  if (mask.height != img.height || mask.width != img.width)
    throw ShapeError("extract_patches: mask and image dimensions differ");
  PatchGrid grid;
  grid.patch_size = patch_size;
  const double area = static_cast<double>(patch_size * patch_size);
  for (std::size_t r = 0; r + patch_size <= img.height; r += patch_size) {
    for (std::size_t c = 0; c + patch_size <= img.width; c += patch_size) {
      std::size_t tissue = 0;
      for (std::size_t y = r; y < r + patch_size; ++y)
        for (std::size_t x = c; x < c + patch_size; ++x) tissue += mask.at(y, x) ? 1 : 0;
      if (static_cast<double>(tissue) >= min_tissue_frac * area) grid.origins.push_back({r, c});
    }
  }
  return grid;
}

RgbImage crop(const RgbImage& img, PatchOrigin origin, std::size_t size) {
  if (origin.row + size > img.height || origin.col + size > img.width)
    throw ShapeError("crop: patch exceeds image bounds");
  RgbImage out(size, size);
  for (std::size_t r = 0; r < size; ++r) {
    const auto* src = img.data.data() + ((origin.row + r) * img.width + origin.col) * 3;
    std::copy(src, src + size * 3, out.data.data() + r * size * 3);
  }
  return out;
}

Matrix optical_density(const RgbImage& img) {
  check_image(img);
  Matrix od(img.pixels(), 3);
  const auto n = static_cast<std::ptrdiff_t>(img.pixels());
  SURVFUSE_PARFOR
  for (std::ptrdiff_t p = 0; p < n; ++p) od_pixel(img, od, static_cast<std::size_t>(p));
  return od;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DomainError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

StainProfile estimate_stain_profile(const RgbImage& img, const Mask& mask, const StainOptions& opts) {
  if (mask.height != img.height || mask.width != img.width)
    throw ShapeError("estimate_stain_profile: mask and image dimensions differ");
  const Matrix od = optical_density(img);

  std::vector<std::size_t> tissue, valid;
  for (std::size_t p = 0; p < img.pixels(); ++p) {
    if (!mask.bits[p]) continue;
    tissue.push_back(p);
    const double norm = std::sqrt(od(p, 0) * od(p, 0) + od(p, 1) * od(p, 1) + od(p, 2) * od(p, 2));
    if (norm >= opts.beta) valid.push_back(p);
  }
  if (valid.size() < opts.min_pixels || valid.size() < 3) {
    throw DegenerateInputError("estimate_stain_profile: only " + std::to_string(valid.size()) +
                               " tissue pixels above the OD floor (need " +
                               std::to_string(opts.min_pixels) + ")");
  }
  Matrix sample(valid.size(), 3);
  for (std::size_t k = 0; k < valid.size(); ++k)
    for (std::size_t ch = 0; ch < 3; ++ch) sample(k, ch) = od(valid[k], ch);

  const SvdResult svd = svd_thin(sample);
  if (!(svd.s[1] >= 1e-6 * svd.s[0])) {
    throw RankDeficiencyError("estimate_stain_profile: OD samples are collinear (sigma2/sigma1 = " +
                              std::to_string(svd.s[1] / svd.s[0]) + ")");
  }
  std::array<double, 3> v1{svd.vt(0, 0), svd.vt(0, 1), svd.vt(0, 2)};
  std::array<double, 3> v2{svd.vt(1, 0), svd.vt(1, 1), svd.vt(1, 2)};
  if (v1[0] + v1[1] + v1[2] < 0)
    for (double& x : v1) x = -x;
  if (v2[0] + v2[1] + v2[2] < 0)
    for (double& x : v2) x = -x;

  std::vector<double> phi(valid.size());
  for (std::size_t k = 0; k < valid.size(); ++k) {
    double t1 = 0, t2 = 0;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      t1 += sample(k, ch) * v1[ch];
      t2 += sample(k, ch) * v2[ch];
    }
    phi[k] = std::atan2(t2, t1);
  }
  const double phi_min = percentile(phi, opts.alpha);
  const double phi_max = percentile(phi, 100.0 - opts.alpha);
  auto direction = [&](double a) {
    std::array<double, 3> v{};
    for (std::size_t ch = 0; ch < 3; ++ch) v[ch] = v1[ch] * std::cos(a) + v2[ch] * std::sin(a);
    return nonnegative_unit(v);
  };
  std::array<double, 3> a = direction(phi_min);
  std::array<double, 3> b = direction(phi_max);
  if (b[2] > a[2]) std::swap(a, b);  // H has the larger blue OD
  StainProfile profile = StainProfile::from_vectors(a, b, {1.0, 1.0});

  // Concentrations of every tissue pixel against the recovered stains.
  const NormalizeKernel solve(profile, profile);
  std::vector<double> ch(tissue.size()), ce(tissue.size());
  for (std::size_t k = 0; k < tissue.size(); ++k) {
    const std::size_t p = tissue[k];
    double c[2];
    for (std::size_t s = 0; s < 2; ++s)
      c[s] = solve.pinv[s][0] * od(p, 0) + solve.pinv[s][1] * od(p, 1) + solve.pinv[s][2] * od(p, 2);
    ch[k] = c[0];
    ce[k] = c[1];
  }
  profile.max_concentrations = {percentile(ch, opts.conc_percentile), percentile(ce, opts.conc_percentile)};
  if (!(profile.max_concentrations[0] > 0.0) || !(profile.max_concentrations[1] > 0.0)) {
    throw DegenerateInputError("estimate_stain_profile: non-positive max concentration");
  }
  return profile;
}

RgbImage normalize_patch(const RgbImage& patch, const StainProfile& source, const StainProfile& target) {
  check_image(patch);
  const NormalizeKernel kernel(source, target);
  RgbImage out(patch.height, patch.width);
  const auto n = static_cast<std::ptrdiff_t>(patch.pixels());
  SURVFUSE_PARFOR
  for (std::ptrdiff_t p = 0; p < n; ++p) kernel.apply(patch, out, static_cast<std::size_t>(p));
  return out;
}

RgbImage render_stains(std::size_t height, std::size_t width, const StainProfile& profile,
                       const std::vector<std::array<double, 2>>& concentrations) {
  if (concentrations.size() != height * width) throw ShapeError("render_stains: concentration count");
  RgbImage img(height, width);
  for (std::size_t p = 0; p < concentrations.size(); ++p) {
    const auto& c = concentrations[p];
    for (std::size_t ch = 0; ch < 3; ++ch) {
      img.data[p * 3 + ch] =
          intensity_of(profile.stain_matrix(ch, 0) * c[0] + profile.stain_matrix(ch, 1) * c[1]);
    }
  }
  return img;
}

RgbImage synthetic_stained_image(std::size_t height, std::size_t width, const StainProfile& profile,
                                 Rng& rng) {
  std::vector<std::array<double, 2>> conc(height * width);
  for (auto& c : conc) {
    const double kind = rng.uniform();
    if (kind < 0.4) {
      c[0] = rng.uniform(0.4, 1.2);
      c[1] = c[0] * rng.uniform(0.0, 0.03);
    } else if (kind < 0.8) {
      c[1] = rng.uniform(0.4, 1.2);
      c[0] = c[1] * rng.uniform(0.0, 0.03);
    } else {
      c[0] = rng.uniform(0.2, 0.7);
      c[1] = rng.uniform(0.2, 0.7);
    }
  }
  return render_stains(height, width, profile, conc);
}

double angle_degrees(std::array<double, 3> a, std::array<double, 3> b) {
  a = unit(a);
  b = unit(b);
  const double dot = std::clamp(a[0] * b[0] + a[1] * b[1] + a[2] * b[2], -1.0, 1.0);
  return std::acos(dot) * 180.0 / std::numbers::pi;
}

namespace reference {

Mask tissue_mask(const RgbImage& img, double sat_threshold) {
  check_image(img);
  Mask m{img.height, img.width, std::vector<std::uint8_t>(img.pixels())};
  for (std::size_t p = 0; p < img.pixels(); ++p) mask_pixel(img, m, p, sat_threshold);
  return m;
}

Matrix optical_density(const RgbImage& img) {
  check_image(img);
  Matrix od(img.pixels(), 3);
  for (std::size_t p = 0; p < img.pixels(); ++p) od_pixel(img, od, p);
  return od;
}

RgbImage normalize_patch(const RgbImage& patch, const StainProfile& source, const StainProfile& target) {
  check_image(patch);
  const NormalizeKernel kernel(source, target);
  RgbImage out(patch.height, patch.width);
  for (std::size_t p = 0; p < patch.pixels(); ++p) kernel.apply(patch, out, p);
  return out;
}

}  // namespace reference

}  // namespace survfuse
