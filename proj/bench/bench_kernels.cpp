// Serial reference kernels against their OpenMP versions.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <cmath>
#include <numeric>

#include "survfuse/harness.hpp"
#include "survfuse/numerics.hpp"
#include "survfuse/rng.hpp"
#include "survfuse/stainprep.hpp"
#include "survfuse/survstats.hpp"
#include "survfuse/synth.hpp"

using namespace survfuse;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

const RgbImage& slide() {
  static const RgbImage img = [] {
    Rng rng(1);
    return synthetic_stained_image(1024, 1024, default_he_profile(), rng);
  }();
  return img;
}

struct Survival {
  std::vector<double> risk;
  std::vector<SurvivalOutcome> out;
};

Survival survival(std::size_t n) {
  Rng rng(2);
  Survival s;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = rng.normal();
    s.risk.push_back(r);
    s.out.push_back({rng.exponential(std::exp(r)), rng.uniform() < 0.7});
  }
  return s;
}

struct Batch {
  ModelParams params;
  std::vector<PatientFeatures> x;
  std::vector<SurvivalOutcome> y;
};

const Batch& batch() {
  static const Batch b = [] {
    SynthSpec spec;
    spec.n_patients = 48;
    const SynthCohort sc = synth_cohort(spec, 3);
    std::vector<std::size_t> all(sc.cohort.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const Standardization st = Standardization::fit(sc.cohort, all);
    Batch out;
    ModelConfig cfg;
    cfg.image_tokens = ImageTokens::patches;
    Rng rng(4);
    out.params = init_params(cfg, rng);
    for (const auto& p : sc.cohort.patients) out.x.push_back(st.features(p));
    out.y = sc.cohort.outcomes();
    return out;
  }();
  return b;
}

template <Matrix (*Fn)(const Matrix&, const Matrix&)>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK_TEMPLATE(BM_matmul, reference::matmul)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK_TEMPLATE(BM_matmul, survfuse::matmul)->Name("matmul/parallel")->Arg(64)->Arg(256);

void BM_tissue_mask_serial(benchmark::State& state) {
  const RgbImage& img = slide();
  for (auto _ : state) benchmark::DoNotOptimize(reference::tissue_mask(img));
}
void BM_tissue_mask_parallel(benchmark::State& state) {
  const RgbImage& img = slide();
  for (auto _ : state) benchmark::DoNotOptimize(tissue_mask(img));
}
BENCHMARK(BM_tissue_mask_serial)->Name("tissue_mask/serial");
BENCHMARK(BM_tissue_mask_parallel)->Name("tissue_mask/parallel");

void BM_od_serial(benchmark::State& state) {
  const RgbImage& img = slide();
  for (auto _ : state) benchmark::DoNotOptimize(reference::optical_density(img));
}
void BM_od_parallel(benchmark::State& state) {
  const RgbImage& img = slide();
  for (auto _ : state) benchmark::DoNotOptimize(optical_density(img));
}
BENCHMARK(BM_od_serial)->Name("optical_density/serial");
BENCHMARK(BM_od_parallel)->Name("optical_density/parallel");

void BM_normalize_serial(benchmark::State& state) {
  const RgbImage& img = slide();
  const StainProfile src = default_he_profile(), dst = default_he_profile();
  for (auto _ : state) benchmark::DoNotOptimize(reference::normalize_patch(img, src, dst));
}
void BM_normalize_parallel(benchmark::State& state) {
  const RgbImage& img = slide();
  const StainProfile src = default_he_profile(), dst = default_he_profile();
  for (auto _ : state) benchmark::DoNotOptimize(normalize_patch(img, src, dst));
}
BENCHMARK(BM_normalize_serial)->Name("normalize_patch/serial");
BENCHMARK(BM_normalize_parallel)->Name("normalize_patch/parallel");

void BM_c_index_serial(benchmark::State& state) {
  const Survival s = survival(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(reference::c_index(s.risk, s.out));
}
void BM_c_index_parallel(benchmark::State& state) {
  const Survival s = survival(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(c_index(s.risk, s.out));
}
BENCHMARK(BM_c_index_serial)->Name("c_index/serial")->Arg(300)->Arg(3000);
BENCHMARK(BM_c_index_parallel)->Name("c_index/parallel")->Arg(300)->Arg(3000);

void BM_batch_gradient_serial(benchmark::State& state) {
  const Batch& b = batch();
  for (auto _ : state) benchmark::DoNotOptimize(reference::batch_gradient(b.params, b.x, b.y));
}
void BM_batch_gradient_parallel(benchmark::State& state) {
  const Batch& b = batch();
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradient(b.params, b.x, b.y));
}
BENCHMARK(BM_batch_gradient_serial)->Name("batch_gradient/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_batch_gradient_parallel)->Name("batch_gradient/parallel")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
