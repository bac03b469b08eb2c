#include <benchmark/benchmark.h>

#include <random>

#include "qdarbor/archive.hpp"
#include "qdarbor/mlp.hpp"
#include "qdarbor/pointhopper.hpp"
#include "qdarbor/rng.hpp"
#include "qdarbor/vppo.hpp"
#include "qdarbor/xnes.hpp"

using namespace qdarbor;

namespace {

ArchiveSpec desk_archive_spec() {
    ArchiveSpec spec;
    spec.resolution = {25, 25};
    spec.lower_bounds = Eigen::Vector2d(0.0, 0.0);
    spec.upper_bounds = Eigen::Vector2d(1.0, 1.0);
    spec.alpha = 0.1;
    spec.threshold_min = -100.0;
    return spec;
}

void bm_archive_insert(benchmark::State& state) {
    GridArchive archive(desk_archive_spec());
    Rng rng = make_rng(1, 1);
    std::uniform_real_distribution<double> m(0.0, 1.0), o(-50.0, 0.0);
    const Eigen::VectorXf params = Eigen::VectorXf::Random(4000);
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            archive.insert(params, o(rng), Eigen::Vector2d(m(rng), m(rng))));
    }
}
BENCHMARK(bm_archive_insert);

void bm_xnes_tell(benchmark::State& state) {
    const int d = static_cast<int>(state.range(0));
    NesState s = make_nes_state(d, 1.0, 32);
    Rng rng = make_rng(2, 1);
    std::uniform_real_distribution<double> dd(-1.0, 1.0);
    for (auto _ : state) {
        RankedBatch b;
        b.samples = nes_ask(s, rng, 32);
        b.deltas.resize(32);
        for (double& x : b.deltas) x = dd(rng);
        b.order = rank_descending(b.deltas);
        benchmark::DoNotOptimize(nes_tell(s, b));
    }
}
BENCHMARK(bm_xnes_tell)->Arg(3)->Arg(8);

void bm_env_batch_step(benchmark::State& state) {
    PointHopperSpec spec;
    spec.num_legs = 2;
    PointHopper env(spec);
    const int E = 64;
    EnvBatchState s = env.reset(E);
    const Eigen::MatrixXf actions = Eigen::MatrixXf::Random(3, E);
    for (auto _ : state) {
        benchmark::DoNotOptimize(env.step(s, actions));
    }
    state.SetItemsProcessed(state.iterations() * E);
}
BENCHMARK(bm_env_batch_step);

void bm_mlp_forward_backward(benchmark::State& state) {
    Rng rng = make_rng(3, 1);
    Mlp net({4, 128, 128, 3}, rng, 1.4142f, 0.01f);
    const Eigen::MatrixXf input = Eigen::MatrixXf::Random(4, 64);
    const Eigen::MatrixXf grad = Eigen::MatrixXf::Random(3, 64);
    for (auto _ : state) {
        Mlp::Cache cache;
        benchmark::DoNotOptimize(net.forward(input, &cache));
        benchmark::DoNotOptimize(net.backward(cache, grad));
    }
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(bm_mlp_forward_backward);

void bm_gae(benchmark::State& state) {
    Rng rng = make_rng(4, 1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int L = 128, E = 64;
    Eigen::MatrixXd rewards(L, E), values(L, E), dones = Eigen::MatrixXd::Zero(L, E);
    Eigen::VectorXd bootstrap(E);
    for (long i = 0; i < rewards.size(); ++i) {
        rewards.data()[i] = u(rng);
        values.data()[i] = u(rng);
    }
    for (int e = 0; e < E; ++e) bootstrap[e] = u(rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(gae(rewards, values, dones, bootstrap, 0.99, 0.95));
    }
    state.SetItemsProcessed(state.iterations() * L * E);
}
BENCHMARK(bm_gae);

}  // namespace

BENCHMARK_MAIN();
