#include <algorithm>
#include <random>

#include <benchmark/benchmark.h>

#include "engage/distdp.hpp"
#include "engage/qrlearn.hpp"
#include "engage/simenv.hpp"

using namespace engage;

namespace {

// One operator application; range(0) is the atom count.
void BM_ApplyOperator(benchmark::State& state) {
    const auto mdp = sim::random_mdp(10, 5, 1);
    const auto disc = dist::DiscountSpec::from_mdp(mdp, 0.9, dist::Backup::data_terminal);
    dist::ValueTable z(mdp.n_states, mdp.n_actions, std::size_t(state.range(0)));
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (double& v : z.data()) v = u(rng);
    for (std::size_t p = 0; p < mdp.n_pairs(); ++p) {
        auto row = z.data().subspan(p * z.quantiles(), z.quantiles());
        std::sort(row.begin(), row.end());
    }
    for (auto _ : state) benchmark::DoNotOptimize(dist::apply_operator(z, mdp, disc));
}
BENCHMARK(BM_ApplyOperator)->Arg(16)->Arg(64);

void BM_QuantileHuberLoss(benchmark::State& state) {
    const auto m = std::size_t(state.range(0));
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> pred(m), targets(m);
    for (auto& v : pred) v = n(rng);
    for (auto& v : targets) v = n(rng);
    for (auto _ : state) benchmark::DoNotOptimize(learn::quantile_huber_loss(pred, targets, 1.0));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_QuantileHuberLoss)->RangeMultiplier(4)->Range(8, 512)->Complexity(benchmark::oNSquared);

// One epoch over a fixed batch is a single Adam step.
void BM_TrainStep(benchmark::State& state) {
    const auto logs = sim::generate_logs(sim::random_mdp(20, 10, 4), 40, 5);
    std::vector<sim::Transition> batch(logs.begin(), logs.begin() + 64);
    learn::TrainingConfig config;
    config.quantiles = 32;
    config.batch_size = batch.size();
    config.epochs = 1;
    for (auto _ : state) benchmark::DoNotOptimize(learn::train(batch, config));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMicrosecond);

void BM_GenerateLogs(benchmark::State& state) {
    const auto mdp = sim::random_mdp(20, 10, 6);
    std::size_t transitions = 0;
    for (auto _ : state) {
        const auto logs = sim::generate_logs(mdp, 1000, 7);
        transitions += logs.size();
    }
    state.counters["transitions/s"] = benchmark::Counter(double(transitions), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_GenerateLogs)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
