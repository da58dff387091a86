// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "parsegen/evalsuite.hpp"
#include "parsegen/pair_miner.hpp"
#include "parsegen/synthetic.hpp"

using namespace parsegen;

namespace {

std::vector<MiningRecord> dolls(int n, ImageSize size) {
  std::mt19937_64 rng(11);
  std::vector<MiningRecord> out;
  for (int i = 0; i < n; ++i) {
    const auto r = synthetic::render(synthetic::random_appearance(rng), synthetic::random_articulation(rng), size, rng());
    out.push_back({"d" + std::to_string(1000 + i), r.pose, make_parted_map(r.parse, r.pose)});
  }
  return out;
}

PoseSpec doll_pose(ImageSize size) {
  std::mt19937_64 rng(3);
  return synthetic::doll_pose(synthetic::random_articulation(rng), size);
}

void mine_omp(benchmark::State& state) {
  const auto records = dolls(static_cast<int>(state.range(0)), {64, 48});
  const auto cfg = MiningConfig::for_height(64);
  for (auto _ : state) benchmark::DoNotOptimize(mine_pairs(records, cfg));
}
void mine_serial(benchmark::State& state) {
  const auto records = dolls(static_cast<int>(state.range(0)), {64, 48});
  const auto cfg = MiningConfig::for_height(64);
  for (auto _ : state) benchmark::DoNotOptimize(serial::mine_pairs(records, cfg));
}

void ssim_omp(benchmark::State& state) {
  const auto n = state.range(0);
  const auto a = torch::rand({3, n, n * 3 / 4}, torch::kDouble), b = torch::rand({3, n, n * 3 / 4}, torch::kDouble);
  for (auto _ : state) benchmark::DoNotOptimize(ssim_map(a, b));
}
void ssim_serial(benchmark::State& state) {
  const auto n = state.range(0);
  const auto a = torch::rand({3, n, n * 3 / 4}, torch::kDouble), b = torch::rand({3, n, n * 3 / 4}, torch::kDouble);
  for (auto _ : state) benchmark::DoNotOptimize(serial::ssim_map(a, b));
}

void heatmap_omp(benchmark::State& state) {
  const int h = static_cast<int>(state.range(0));
  const auto pose = doll_pose({h, h * 3 / 4});
  const double sigma = RepresentationConfig::for_height(h).heatmap_sigma;
  for (auto _ : state) benchmark::DoNotOptimize(encode_heatmap(pose, sigma));
}
void heatmap_serial(benchmark::State& state) {
  const int h = static_cast<int>(state.range(0));
  const auto pose = doll_pose({h, h * 3 / 4});
  const double sigma = RepresentationConfig::for_height(h).heatmap_sigma;
  for (auto _ : state) benchmark::DoNotOptimize(serial::encode_heatmap(pose, sigma));
}

LabelImage skeleton(int h) {
  const auto cfg = RepresentationConfig::for_height(h);
  return rasterize_skeleton(doll_pose({h, h * 3 / 4}), cfg.limb_radius);
}
void dilate_omp(benchmark::State& state) {
  const int h = static_cast<int>(state.range(0));
  const auto mask = skeleton(h);
  const double r = RepresentationConfig::for_height(h).dilation_radius;
  for (auto _ : state) benchmark::DoNotOptimize(dilate(mask, r));
}
void dilate_serial(benchmark::State& state) {
  const int h = static_cast<int>(state.range(0));
  const auto mask = skeleton(h);
  const double r = RepresentationConfig::for_height(h).dilation_radius;
  for (auto _ : state) benchmark::DoNotOptimize(serial::dilate(mask, r));
}

}  // namespace

BENCHMARK(mine_serial)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);
BENCHMARK(mine_omp)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);
BENCHMARK(ssim_serial)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(ssim_omp)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(heatmap_serial)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(heatmap_omp)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(dilate_serial)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(dilate_omp)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  benchmark::AddCustomContext("omp_max_threads", std::to_string(omp_get_max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
}
