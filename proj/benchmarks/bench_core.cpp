#include <random>

#include <benchmark/benchmark.h>

#include "breechmark/cmc.hpp"
#include "breechmark/metrics.hpp"
#include "breechmark/nn.hpp"
#include "breechmark/preprocess.hpp"
#include "breechmark/scan_io.hpp"
#include "breechmark/supcon.hpp"

using namespace breechmark;

namespace {

nn::Tensor noise(std::vector<std::size_t> shape, std::uint64_t seed) {
  nn::Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  for (auto& v : t.values()) v = n(rng);
  return t;
}

const std::vector<ScanRecord>& scans() {
  static const auto s = [] {
    io::SynthParams p;
    p.guns = 2;
    p.casings_per_gun = 2;
    auto out = io::generate_synthetic_dataset(p);
    for (auto& r : out) r.surface = preprocess::preprocess_scan(r.surface).cmc_image;
    return out;
  }();
  return s;
}

void BM_Conv5x5(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto x = nn::cyclic_pad(noise({n, 377, 60}, 1), 2);
  const auto w = noise({n, n, 5, 5}, 2);
  const nn::Tensor b({n});
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, w, b));
}
BENCHMARK(BM_Conv5x5)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_ModelForward(benchmark::State& state) {
  const auto model = nn::build_model({nn::Variant::Reference, static_cast<std::size_t>(state.range(0)), 64, 0.1}, 1);
  const auto x = noise({1, 377, 60}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x));
}
BENCHMARK(BM_ModelForward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  auto model = nn::build_model({nn::Variant::Reference, 16, 64, 0.1}, 1);
  const auto x = noise({1, 377, 60}, 4);
  const auto g = noise({64}, 5);
  for (auto _ : state) {
    nn::ForwardCache cache;
    model.forward(x, &cache);
    benchmark::DoNotOptimize(model.backward(cache, g));
  }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

void BM_SupconLossAndGrad(benchmark::State& state) {
  loss::LabeledBatch batch;
  for (int i = 0; i < 64; ++i) {
    batch.embeddings.push_back({nn::l2_normalize(noise({64}, 100 + i)).values()});
    batch.labels.push_back("g" + std::to_string(i / 2));
  }
  for (auto _ : state) benchmark::DoNotOptimize(loss::supcon_loss_and_grad(batch));
}
BENCHMARK(BM_SupconLossAndGrad);

void BM_CcfMax(benchmark::State& state) {
  const auto& a = scans()[0].surface;
  const std::size_t side = 28, margin = 18;
  const std::size_t span = side + 2 * margin;
  // first fully valid window, scanning the annulus row by row
  std::size_t r0 = 0, c0 = 0;
  auto all_valid = [&](std::size_t top, std::size_t left) {
    for (std::size_t r = 0; r < span; ++r) {
      for (std::size_t c = 0; c < span; ++c) {
        if (!a.valid(top + r, left + c)) return false;
      }
    }
    return true;
  };
  for (bool found = false; !found && r0 + span <= a.rows(); r0 += found ? 0 : 4) {
    for (c0 = 0; c0 + span <= a.cols(); c0 += 4) {
      if ((found = all_valid(r0, c0))) break;
    }
  }
  SurfaceMatrix cell(side, side, a.resolution());
  SurfaceMatrix region(span, span, a.resolution());
  for (std::size_t r = 0; r < span; ++r) {
    for (std::size_t c = 0; c < span; ++c) {
      region.height(r, c) = a.height(r0 + r, c0 + c);
      region.set_valid(r, c, true);
      if (r >= margin && c >= margin && r < margin + side && c < margin + side) {
        cell.height(r - margin, c - margin) = region.height(r, c);
        cell.set_valid(r - margin, c - margin, region.valid(r, c));
      }
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(cmc::ccf_max(cell, region, margin));
}
BENCHMARK(BM_CcfMax)->Unit(benchmark::kMicrosecond);

void BM_CmcPair(benchmark::State& state) {
  const auto& s = scans();
  for (auto _ : state) benchmark::DoNotOptimize(cmc::cmc_score(s[0], s[1]));
}
BENCHMARK(BM_CmcPair)->Unit(benchmark::kMillisecond)->Iterations(3);

void BM_PreprocessScan(benchmark::State& state) {
  io::SynthParams p;
  p.guns = 1;
  p.casings_per_gun = 2;
  const auto raw = io::generate_synthetic_dataset(p)[0].surface;
  for (auto _ : state) benchmark::DoNotOptimize(preprocess::preprocess_scan(raw));
}
BENCHMARK(BM_PreprocessScan)->Unit(benchmark::kMillisecond);

void BM_AucMidrank(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  std::vector<double> s(n);
  std::vector<bool> pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = double(rng() % 1000) / 1000.0;
    pos[i] = rng() % 10 == 0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(eval::auc_midrank(s, pos));
  state.SetComplexityN(static_cast<long>(n));
}
BENCHMARK(BM_AucMidrank)->Range(1 << 10, 1 << 17)->Complexity(benchmark::oNLogN);

}  // namespace
BENCHMARK_MAIN();
