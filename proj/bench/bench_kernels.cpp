#include <benchmark/benchmark.h>

#include "mspn/graph.hpp"
#include "mspn/kernels.hpp"
#include "mspn/rng.hpp"

// Serial reference vs OpenMP kernels at production-like shapes, plus one
// whole-graph forward/backward. Run with --benchmark_counters_tabular=true.

using namespace mspn;

namespace {

FeatureMapStack<float> random_stack(Rng& rng, int n, int h, int w) {
  FeatureMapStack<float> s(n, h, w);
  for (float& v : s.data) v = float(rng.uniform(-1.0, 1.0));
  return s;
}

std::vector<float> random_vec(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (float& x : v) x = float(rng.uniform(-1.0, 1.0));
  return v;
}

// conv2-like shape from the default pipeline on a 100-wide line
constexpr int kNin = 96, kNout = 256, kH = 15, kW = 49, kK = 3, kPad = 1;

template <bool Parallel>
void conv_forward_bench(benchmark::State& state) {
  Rng rng(1);
  auto in = random_stack(rng, kNin, kH, kW);
  auto weights = random_vec(rng, std::size_t(kNout) * kNin * kK * kK);
  auto bias = random_vec(rng, kNout);
  FeatureMapStack<float> out(kNout, kH, kW);
  for (auto _ : state) {
    if constexpr (Parallel)
      par::conv_forward(in, weights.data(), bias.data(), kNout, kK, kK, kPad, kPad, out);
    else
      serial::conv_forward(in, weights.data(), bias.data(), kNout, kK, kK, kPad, kPad,
                           out);
    benchmark::ClobberMemory();
  }
  const double macs = double(kNout) * kNin * kK * kK * kH * kW;
  state.counters["gflops"] = benchmark::Counter(2 * macs * state.iterations() * 1e-9,
                                                benchmark::Counter::kIsRate);
}

template <bool Parallel>
void conv_backward_bench(benchmark::State& state) {
  Rng rng(2);
  auto in = random_stack(rng, kNin, kH, kW);
  auto weights = random_vec(rng, std::size_t(kNout) * kNin * kK * kK);
  auto grad_out = random_stack(rng, kNout, kH, kW);
  FeatureMapStack<float> grad_in(kNin, kH, kW);
  std::vector<float> gw(weights.size());
  std::vector<float> gb(kNout);
  for (auto _ : state) {
    if constexpr (Parallel)
      par::conv_backward(in, weights.data(), kNout, kK, kK, kPad, kPad, grad_out, grad_in,
                         gw.data(), gb.data());
    else
      serial::conv_backward(in, weights.data(), kNout, kK, kK, kPad, kPad, grad_out,
                            grad_in, gw.data(), gb.data());
    benchmark::ClobberMemory();
  }
  const double macs = 2.0 * kNout * kNin * kK * kK * kH * kW;
  state.counters["gflops"] = benchmark::Counter(2 * macs * state.iterations() * 1e-9,
                                                benchmark::Counter::kIsRate);
}

template <bool Parallel>
void maxpool_bench(benchmark::State& state) {
  Rng rng(3);
  auto in = random_stack(rng, 256, 14, 48);
  FeatureMapStack<float> out(256, 7, 24);
  std::vector<int> argmax;
  for (auto _ : state) {
    if constexpr (Parallel)
      par::maxpool_forward(in, out, argmax);
    else
      serial::maxpool_forward(in, out, argmax);
    benchmark::ClobberMemory();
  }
}

template <bool Parallel>
void fc_forward_bench(benchmark::State& state) {
  Rng rng(4);
  const int in_dim = 3456, out_dim = 1024;
  auto weights = random_vec(rng, std::size_t(out_dim) * in_dim);
  auto bias = random_vec(rng, out_dim);
  auto x = random_vec(rng, in_dim);
  std::vector<float> y(out_dim);
  for (auto _ : state) {
    if constexpr (Parallel)
      par::fc_forward(weights.data(), bias.data(), out_dim, in_dim, x.data(), y.data());
    else
      serial::fc_forward(weights.data(), bias.data(), out_dim, in_dim, x.data(), y.data());
    benchmark::ClobberMemory();
  }
  state.counters["gflops"] = benchmark::Counter(
      2.0 * out_dim * in_dim * state.iterations() * 1e-9, benchmark::Counter::kIsRate);
}

void row_reduce_bench(benchmark::State& state) {
  Rng rng(5);
  auto in = random_stack(rng, 512, 1, int(state.range(0)));
  for (auto _ : state) {
    auto r = row_reduce(in, PoolMode::kMax);
    benchmark::DoNotOptimize(r.values.data());
  }
}

void graph_step_bench(benchmark::State& state) {
  MSPNConfig cfg;
  cfg.conv_channels = {8, 16, 24, 32};
  cfg.fc_widths = {64, 64};
  auto g = build_mspn<float>(cfg);
  init_params(g, 6);
  Rng rng(7);
  FeatureMapStack<float> image(1, 32, 196);
  for (float& v : image.data) v = float(rng.uniform(0.0, 1.0));
  Gradients<float> grads = Gradients<float>::like(g);
  ForwardTrace<float> trace;
  for (auto _ : state) {
    auto lf = loss_forward(g, image, 3, trace);
    backward(g, trace, softmax_xent_backward(lf.probs, 3), grads);
    benchmark::DoNotOptimize(lf.loss);
  }
}

}  // namespace

BENCHMARK(conv_forward_bench<false>)->Name("conv_forward/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(conv_forward_bench<true>)->Name("conv_forward/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward_bench<false>)->Name("conv_backward/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward_bench<true>)->Name("conv_backward/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(maxpool_bench<false>)->Name("maxpool/serial")->Unit(benchmark::kMicrosecond);
BENCHMARK(maxpool_bench<true>)->Name("maxpool/omp")->Unit(benchmark::kMicrosecond);
BENCHMARK(fc_forward_bench<false>)->Name("fc_forward/serial")->Unit(benchmark::kMicrosecond);
BENCHMARK(fc_forward_bench<true>)->Name("fc_forward/omp")->Unit(benchmark::kMicrosecond);
BENCHMARK(row_reduce_bench)->Name("row_reduce_max")->Arg(37)->Arg(200)->Unit(benchmark::kMicrosecond);
BENCHMARK(graph_step_bench)->Name("small_graph_fwd_bwd")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
