#include "cdpg/evaluation.hpp"
#include "cdpg/policy_gradient.hpp"
#include "cdpg/spg.hpp"
#include "oracles.hpp"

#include "doctest.h"

#include <cmath>

using namespace cdpg;

namespace {

// State 0: action a costs a + shift, then state 1 or the terminal with equal odds.
// State 1: action 0 costs 0, the others cost 3, then the terminal. With gamma = 0.5 every
// return is a multiple of 0.5 in [0, 3.5 + shift].
TabularMdp two_stage(double shift = 0.0)
{
    const std::size_t n = 3;
    const std::size_t m = 3;
    std::vector<double> transition(n * m * n, 0.0);
    std::vector<double> cost(n * m * n, 0.0);
    auto at = [&](std::size_t s, std::size_t a, std::size_t next) { return (s * m + a) * n + next; };
    for (std::size_t a = 0; a < m; ++a) {
        transition[at(0, a, 1)] = 0.5;
        transition[at(0, a, 2)] = 0.5;
        cost[at(0, a, 1)] = cost[at(0, a, 2)] = static_cast<double>(a) + shift;
        transition[at(1, a, 2)] = 1.0;
        cost[at(1, a, 2)] = a == 0 ? 0.0 : 3.0;
        transition[at(2, a, 2)] = 1.0;
    }
    return {n, m, std::move(transition), std::move(cost), 0.5, {2}};
}

struct Moments {
    std::vector<double> mean;
    std::vector<double> se;
};

Moments spg_moments(const TabularMdp& mdp, const SoftmaxPolicy& policy, const SpgConfig& cfg,
                    std::size_t repeats, std::uint64_t seed)
{
    Rng rng(seed);
    const std::size_t p = policy.n_params();
    std::vector<double> sum(p, 0.0);
    std::vector<double> sum_sq(p, 0.0);
    for (std::size_t k = 0; k < repeats; ++k) {
        const auto g = spg_cvar_gradient(mdp, policy, cfg, rng);
        for (std::size_t j = 0; j < p; ++j) {
            sum[j] += g.gradient[j];
            sum_sq[j] += g.gradient[j] * g.gradient[j];
        }
    }
    Moments out{std::vector<double>(p), std::vector<double>(p)};
    const auto r = static_cast<double>(repeats);
    for (std::size_t j = 0; j < p; ++j) {
        out.mean[j] = sum[j] / r;
        out.se[j] = std::sqrt(std::max(sum_sq[j] / r - out.mean[j] * out.mean[j], 0.0) / r);
    }
    return out;
}

}  // namespace

TEST_CASE("constant returns give a degenerate zero gradient")
{
    Rng rng(1);
    std::vector<double> transition(2 * 2 * 2, 0.0);
    std::vector<double> cost(2 * 2 * 2, 0.0);
    for (std::size_t a = 0; a < 2; ++a) {
        transition[(0 * 2 + a) * 2 + 1] = 1.0;
        transition[(1 * 2 + a) * 2 + 1] = 1.0;
        cost[(0 * 2 + a) * 2 + 1] = 2.0;
    }
    const TabularMdp flat(2, 2, transition, cost, 0.9, {1});
    SpgConfig cfg;
    cfg.batch_size = 20;
    cfg.alpha = 0.25;
    const auto g = spg_cvar_gradient(flat, SoftmaxPolicy(2, 2), cfg, rng);
    CHECK(g.degenerate);
    CHECK(g.var == 2.0);
    CHECK(g.cvar == doctest::Approx(2.0));
    for (double v : g.gradient)
        CHECK(v == 0.0);
}

TEST_CASE("empirical VaR and CVaR of the batch")
{
    const auto mdp = two_stage();
    Rng rng(8);
    const SoftmaxPolicy policy(3, 3, {0.3, -0.2, 0.1, 0.0, 0.4, -0.5, 0.0, 0.0, 0.0});
    SpgConfig cfg;
    cfg.batch_size = 10;
    cfg.alpha = 0.3;
    for (int k = 0; k < 20; ++k) {
        Rng probe = rng;
        std::vector<double> returns;
        {
            std::vector<std::uint64_t> seeds(cfg.batch_size);
            for (auto& s : seeds)
                s = probe();
            for (auto s : seeds) {
                Rng local(s);
                returns.push_back(sample_trajectory(mdp, policy, 0, local, 200).discounted_return(0.5));
            }
        }
        std::sort(returns.begin(), returns.end());
        const auto g = spg_cvar_gradient(mdp, policy, cfg, rng);
        // ceil(0.7 * 10) = 7th order statistic.
        CHECK(g.var == returns[6]);
        double tail = 0.0;
        for (double r : returns)
            tail += std::max(r - returns[6], 0.0);
        CHECK(g.cvar == doctest::Approx(returns[6] + tail / 3.0));
    }
}

TEST_CASE("spg gradient is reproducible and shift invariant")
{
    const auto mdp = two_stage();
    const auto shifted = two_stage(1.0);
    const SoftmaxPolicy policy(3, 3, {0.1, 0.2, -0.3, 0.5, 0.0, -0.1, 0.0, 0.0, 0.0});
    SpgConfig cfg;
    cfg.batch_size = 50;
    cfg.alpha = 0.2;
    Rng a(42);
    Rng b(42);
    Rng c(42);
    const auto ga = spg_cvar_gradient(mdp, policy, cfg, a);
    const auto gb = spg_cvar_gradient(mdp, policy, cfg, b);
    const auto gc = spg_cvar_gradient(shifted, policy, cfg, c);
    CHECK(ga.gradient == gb.gradient);
    CHECK(gc.var == doctest::Approx(ga.var + 1.0));
    for (std::size_t j = 0; j < ga.gradient.size(); ++j)
        CHECK(std::abs(gc.gradient[j] - ga.gradient[j]) < 1e-9);
}

TEST_CASE("alpha = 1 estimates the gradient of the expected return")
{
    // A zero return has probability about 1/4 per rollout, so a batch of 100 essentially always
    // has minimum 0 and the estimator reduces to the plain score-function average.
    const auto mdp = two_stage();
    const std::vector<double> theta{0.2, -0.1, 0.3, 0.1, -0.2, 0.0, 0.0, 0.0, 0.0};
    const SoftmaxPolicy policy(3, 3, theta);
    SpgConfig cfg;
    cfg.batch_size = 100;
    cfg.alpha = 1.0;
    const auto mc = spg_moments(mdp, policy, cfg, 10000, 5);
    const auto fd = oracle::central_difference(
        [&](const std::vector<double>& th) { return oracle::state_values(mdp, th)(0); }, theta, 1e-6);
    for (std::size_t j = 0; j < theta.size(); ++j)
        CHECK(std::abs(mc.mean[j] - fd[j]) <= 3.0 * mc.se[j] + 1e-9);
}

TEST_CASE("spg agrees in expectation with the exact categorical CVaR gradient")
{
    const auto mdp = two_stage();
    const std::vector<double> theta{0.4, -0.3, 0.1, 0.2, -0.4, 0.3, 0.0, 0.0, 0.0};
    const SoftmaxPolicy policy(3, 3, theta);
    const double alpha = 0.3;

    // Returns fall on the half-integer atoms, so the categorical model is exact.
    const SupportGrid grid(0.0, 4.0, 9);
    EvalConfig eval;
    eval.tolerance = 1e-15;
    const auto table = evaluate_policy(mdp, policy, grid, eval).table;
    const auto dist = state_distribution(table, policy, 0);
    const auto spec = RiskMeasureSpec::cvar(alpha);
    const auto f = cdf(dist);
    double gap = 1.0;
    for (double v : f)
        gap = std::min(gap, std::abs(v - (1.0 - alpha)));
    REQUIRE(gap > 0.03);
    const auto exact = risk_gradient(expected_gradient_measure(mdp, policy, table, 0), dist, spec);

    SpgConfig cfg;
    cfg.batch_size = 1000;
    cfg.alpha = alpha;
    const auto mc = spg_moments(mdp, policy, cfg, 2000, 9);
    for (std::size_t j = 0; j < theta.size(); ++j)
        CHECK(std::abs(mc.mean[j] - exact.gradient[j]) <= 4.0 * mc.se[j] + 2e-3);
}

TEST_CASE("spg_train bookkeeping and validation")
{
    const auto mdp = two_stage();
    SpgConfig cfg;
    cfg.iterations = 0;
    CHECK(spg_train(mdp, cfg).history.records.empty());

    cfg.iterations = 5;
    cfg.batch_size = 30;
    cfg.record_wall_time = false;
    const auto run = spg_train(mdp, cfg);
    REQUIRE(run.history.records.size() == 5);
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(run.history.records[k].cum_trajectories == 30 * (k + 1));
        CHECK(run.history.records[k].eval_sweeps == 0);
        CHECK(run.history.records[k].wall_time_ms == 0.0);
    }
    const auto again = spg_train(mdp, cfg);
    CHECK(std::equal(run.policy.theta().begin(), run.policy.theta().end(),
                     again.policy.theta().begin()));

    SpgConfig bad;
    bad.batch_size = 1;
    CHECK_THROWS_AS(spg_train(mdp, bad), std::invalid_argument);
    bad = SpgConfig{};
    bad.alpha = 0.0;
    CHECK_THROWS_AS(spg_train(mdp, bad), std::invalid_argument);
    bad = SpgConfig{};
    bad.step_size = -1.0;
    CHECK_THROWS_AS(spg_train(mdp, bad), std::invalid_argument);
}

TEST_CASE("spg learns the cheap action on the two-stage problem")
{
    const auto mdp = two_stage();
    SpgConfig cfg;
    cfg.iterations = 300;
    cfg.step_size = 0.1;
    cfg.alpha = 0.5;
    cfg.rng_seed = 3;
    const auto run = spg_train(mdp, cfg);
    CHECK(run.policy.greedy_action(0) == 0);
    CHECK(run.policy.greedy_action(1) == 0);
    CHECK(run.history.records.back().risk_value < run.history.records.front().risk_value);
}
