#include "cdpg/evaluation.hpp"
#include "cdpg/mdp.hpp"
#include "cdpg/policy_gradient.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace cdpg;

struct BackupFixture {
    TabularMdp mdp;
    SoftmaxPolicy policy;
    ReturnDistributionTable table;
};

BackupFixture make_backup_fixture(std::size_t n_states, std::size_t n_atoms)
{
    Rng rng(7);
    auto mdp = random_mdp(n_states, 4, 0.9, 1.0, true, rng);
    SoftmaxPolicy policy(n_states, 4);
    const SupportGrid grid(0.0, 10.0, n_atoms);
    EvalConfig eval;
    eval.max_sweeps = 20;
    auto table = evaluate_policy(mdp, policy, grid, eval).table;
    return {std::move(mdp), std::move(policy), std::move(table)};
}

void BM_BellmanBackup(benchmark::State& state)
{
    const auto f = make_backup_fixture(static_cast<std::size_t>(state.range(0)),
                                       static_cast<std::size_t>(state.range(1)));
    for (auto _ : state)
        benchmark::DoNotOptimize(bellman_backup(f.table, f.mdp, f.policy));
}

void BM_BellmanBackupSerial(benchmark::State& state)
{
    const auto f = make_backup_fixture(static_cast<std::size_t>(state.range(0)),
                                       static_cast<std::size_t>(state.range(1)));
    for (auto _ : state)
        benchmark::DoNotOptimize(bellman_backup_serial(f.table, f.mdp, f.policy));
}

struct GradientFixture {
    TabularMdp mdp;
    SoftmaxPolicy policy;
    ReturnDistributionTable table;
    Trajectory trajectory;
};

GradientFixture make_gradient_fixture(std::size_t min_length)
{
    auto mdp = cliffwalk::build({});
    SoftmaxPolicy policy(mdp.n_states(), mdp.n_actions());
    const SupportGrid grid(0.0, 300.0, 301);
    auto table = evaluate_policy(mdp, policy, grid, EvalConfig{}).table;
    Rng rng(11);
    Trajectory traj;
    do {
        traj = sample_trajectory(mdp, policy, cliffwalk::kStart, rng, 400);
    } while (traj.size() < min_length);
    return {std::move(mdp), std::move(policy), std::move(table), std::move(traj)};
}

void BM_TrajectoryGradient(benchmark::State& state)
{
    const auto f = make_gradient_fixture(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state)
        benchmark::DoNotOptimize(trajectory_gradient_measure(f.trajectory, f.table, f.policy, f.mdp));
    state.counters["length"] = static_cast<double>(f.trajectory.size());
}

void BM_TrajectoryGradientReference(benchmark::State& state)
{
    const auto f = make_gradient_fixture(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state)
        benchmark::DoNotOptimize(
            trajectory_gradient_measure_reference(f.trajectory, f.table, f.policy, f.mdp));
    state.counters["length"] = static_cast<double>(f.trajectory.size());
}

}  // namespace

BENCHMARK(BM_BellmanBackup)->Args({9, 121})->Args({50, 301})->Args({200, 301});
// The serial reference projects atom by atom, so the largest case is left to the parallel kernel.
BENCHMARK(BM_BellmanBackupSerial)->Args({9, 121})->Args({50, 301});
BENCHMARK(BM_TrajectoryGradient)->Arg(10)->Arg(40);
BENCHMARK(BM_TrajectoryGradientReference)->Arg(10)->Arg(40);

BENCHMARK_MAIN();
