// OpenMP kernels against the serial reference, plus one full forward pass.
#include <benchmark/benchmark.h>

#include <random>

#include "agyolo/builders.hpp"
#include "agyolo/kernels.hpp"
#include "agyolo/reference.hpp"

using namespace agyolo;

namespace {

TensorF random_tensor(Shape s, std::uint32_t seed) {
  TensorF t(s);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1, 1);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

ConvParams<float> conv_params(int in, int out, int k, int stride, int groups) {
  ConvParams<float> p;
  p.weights = random_tensor({out, in / groups, k, k}, 2);
  p.stride = stride;
  p.pad = k / 2;
  p.groups = groups;
  return p;
}

// args: channels in, channels out, spatial size, kernel
void BM_Conv(benchmark::State& st) {
  const TensorF x = random_tensor({1, static_cast<int>(st.range(0)), static_cast<int>(st.range(2)),
                                   static_cast<int>(st.range(2))},
                                  1);
  const auto p = conv_params(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)),
                             static_cast<int>(st.range(3)), 1, 1);
  for (auto _ : st) benchmark::DoNotOptimize(conv2d(x, p));
}

void BM_ConvReference(benchmark::State& st) {
  const TensorF x = random_tensor({1, static_cast<int>(st.range(0)), static_cast<int>(st.range(2)),
                                   static_cast<int>(st.range(2))},
                                  1);
  const auto p = conv_params(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)),
                             static_cast<int>(st.range(3)), 1, 1);
  for (auto _ : st) benchmark::DoNotOptimize(reference::conv2d(x, p));
}

void BM_ConvBackward(benchmark::State& st) {
  const int c = static_cast<int>(st.range(0));
  const int s = static_cast<int>(st.range(1));
  const TensorF x = random_tensor({1, c, s, s}, 1);
  const auto p = conv_params(c, c, 3, 1, 1);
  const TensorF dy = random_tensor({1, c, s, s}, 3);
  for (auto _ : st) benchmark::DoNotOptimize(conv2d_backward(x, p, dy));
}

void BM_Depthwise(benchmark::State& st) {
  const int c = static_cast<int>(st.range(0));
  const int s = static_cast<int>(st.range(1));
  const TensorF x = random_tensor({1, c, s, s}, 1);
  const auto p = conv_params(c, c, 3, 1, c);
  for (auto _ : st) benchmark::DoNotOptimize(conv2d(x, p));
}

void BM_MaxPool(benchmark::State& st) {
  const TensorF x = random_tensor({1, 64, 104, 104}, 1);
  for (auto _ : st) benchmark::DoNotOptimize(maxpool2d(x, 2, 2, 0));
}

void BM_MaxPoolReference(benchmark::State& st) {
  const TensorF x = random_tensor({1, 64, 104, 104}, 1);
  for (auto _ : st) benchmark::DoNotOptimize(reference::maxpool2d(x, 2, 2, 0));
}

void BM_Forward(benchmark::State& st) {
  const int dim = static_cast<int>(st.range(0));
  Network net = build_network("ag-yolo", 1, AnchorSet::parse("8"), 0.5);
  for (ParamRef<float> p : net.parameters())
    for (float& v : p.value) v = 0.01f;
  const TensorF x = random_tensor({1, 3, dim, dim}, 1);
  for (auto _ : st) benchmark::DoNotOptimize(net.forward(x, RunMode::Infer));
}

}  // namespace

BENCHMARK(BM_Conv)->Args({32, 64, 52, 3})->Args({128, 128, 26, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvReference)->Args({32, 64, 52, 3})->Args({128, 128, 26, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward)->Args({32, 52})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Depthwise)->Args({128, 52})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPool)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MaxPoolReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Forward)->Arg(192)->Arg(416)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
