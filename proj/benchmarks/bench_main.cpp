#include "dann/metrics.hpp"
#include "dann/model.hpp"
#include "dann/synthetic.hpp"
#include "dann/training.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

dann::DannNetwork default_network() {
  dann::nn::Rng rng(1);
  auto net = dann::DannNetwork::create(dann::DannConfig{}, rng);
  net.standardizer = dann::data::Standardizer::identity(10);
  return net;
}

void BM_Forward(benchmark::State& state) {
  const auto net = default_network();
  const dann::nn::Matrix x = dann::nn::Matrix::Random(state.range(0), 10);
  for (auto _ : state) benchmark::DoNotOptimize(dann::dann_forward(net, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(512)->Arg(16384);

void BM_ForwardBackward(benchmark::State& state) {
  const auto net = default_network();
  const auto n = state.range(0);
  const dann::nn::Matrix x = dann::nn::Matrix::Random(n, 10);
  std::vector<dann::data::Label> labels(n);
  std::vector<dann::data::Domain> domains(n);
  for (long i = 0; i < n; ++i) {
    labels[i] = i % 2 ? dann::data::Label::Signal : dann::data::Label::Background;
    domains[i] = i < n / 2 ? dann::data::Domain::Source : dann::data::Domain::Target;
  }
  const std::vector<double> lw(n, 1.0);
  const std::vector<double> dw(n, 1.0);
  for (auto _ : state) {
    const auto out = dann::dann_forward(net, x);
    benchmark::DoNotOptimize(dann::dann_backward(net, out, {labels, domains, lw, dw}, 30.0));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ForwardBackward)->Arg(512)->Arg(16384);

void BM_TrainEpoch(benchmark::State& state) {
  auto c = dann::data::SyntheticConfig::defaults();
  c.counts = {5000, 5000, 9500, 500};
  const auto d = dann::data::generate_synthetic(c);
  const auto source = d.select(dann::data::Domain::Source);
  const auto target = d.select(dann::data::Domain::Target);
  dann::TrainConfig t;
  t.batch_size = 512;
  t.epoch_bounds = {1, 1};
  t.lambda = 30.0;
  for (auto _ : state) benchmark::DoNotOptimize(dann::train(source, target, dann::DannConfig{}, t));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

void BM_RocAuc(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(state.range(0));
  std::vector<dann::data::Label> labels(state.range(0));
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = u(rng);
    labels[i] = u(rng) < 0.5 ? dann::data::Label::Signal : dann::data::Label::Background;
  }
  for (auto _ : state) benchmark::DoNotOptimize(dann::metrics::roc_auc(scores, labels));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RocAuc)->Arg(50000);

}  // namespace
BENCHMARK_MAIN();
