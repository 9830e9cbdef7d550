#include "cdpg/mdp.hpp"
#include "oracles.hpp"

#include "doctest.h"

#include <cmath>
#include <map>
#include <stdexcept>

using namespace cdpg;

namespace {

// Two states, two actions; action 0 stays, action 1 moves to the other state.
TabularMdp two_state_chain()
{
    std::vector<double> t = {
        0.9, 0.1, 0.2, 0.8,  // s0: a0, a1
        0.3, 0.7, 0.6, 0.4,  // s1: a0, a1
    };
    const std::vector<double> c = {1.0, 2.0, 0.5, 3.0};
    return TabularMdp::with_action_costs(2, 2, t, c, 0.9, {});
}

}  // namespace

TEST_CASE("mdp validation")
{
    CHECK_THROWS_AS(TabularMdp::with_action_costs(1, 1, {0.9}, std::vector<double>{1.0}, 0.5, {}),
                    std::invalid_argument);
    CHECK_THROWS_AS(TabularMdp::with_action_costs(1, 1, {1.0}, std::vector<double>{1.0}, 1.0, {}),
                    std::invalid_argument);
    CHECK_THROWS_AS(TabularMdp::with_action_costs(2, 1, {-0.5, 1.5, 0.0, 1.0},
                                                  std::vector<double>{0.0, 0.0}, 0.5, {}),
                    std::invalid_argument);
    // Terminal states must self-loop at zero cost.
    CHECK_THROWS_AS(TabularMdp::with_action_costs(2, 1, {0.0, 1.0, 1.0, 0.0},
                                                  std::vector<double>{1.0, 0.0}, 0.5, {1}),
                    std::invalid_argument);
    CHECK_THROWS_AS(TabularMdp::with_action_costs(1, 1, {1.0}, std::vector<double>{2.0}, 0.5, {0}),
                    std::invalid_argument);

    const auto mdp = two_state_chain();
    CHECK(mdp.cost(1, 1) == doctest::Approx(3.0));
    CHECK(mdp.expected_cost(0, 1) == doctest::Approx(2.0));
    CHECK(!mdp.costs_depend_on_next_state());
    CHECK(mdp.cost_min() == doctest::Approx(0.5));
    CHECK(mdp.cost_max() == doctest::Approx(3.0));
}

TEST_CASE("action_probs examples")
{
    const SoftmaxPolicy zeros(3, 4);
    for (double p : zeros.action_probs(1))
        CHECK(p == doctest::Approx(0.25));

    SoftmaxPolicy shifted(1, 3, {0.3, -1.2, 2.0});
    const auto before = shifted.action_probs(0);
    SoftmaxPolicy moved(1, 3, {100.3, 98.8, 102.0});
    const auto after = moved.action_probs(0);
    for (std::size_t a = 0; a < 3; ++a)
        CHECK(std::abs(before[a] - after[a]) < 1e-12);

    SoftmaxPolicy two(1, 2, {std::log(2.0), 0.0});
    CHECK(two.action_probs(0)[0] == doctest::Approx(2.0 / 3.0));
    CHECK(two.action_probs(0)[1] == doctest::Approx(1.0 / 3.0));

    SoftmaxPolicy huge(1, 2, {1000.0, -1000.0});
    CHECK(huge.action_probs(0)[0] == doctest::Approx(1.0));
}

TEST_CASE("policy_grad examples and finite differences")
{
    const SoftmaxPolicy uniform(3, 2);
    const auto g = uniform.policy_grad(1, 0);
    CHECK(g[1 * 2 + 0] == doctest::Approx(0.25));
    CHECK(g[1 * 2 + 1] == doctest::Approx(-0.25));
    for (std::size_t k : {0u, 1u, 4u, 5u})
        CHECK(g[k] == 0.0);

    Rng rng(4);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> theta(3 * 4);
    for (auto& v : theta)
        v = n01(rng);
    const SoftmaxPolicy policy(3, 4, theta);
    for (std::size_t s = 0; s < 3; ++s) {
        std::vector<double> sum(theta.size(), 0.0);
        for (std::size_t a = 0; a < 4; ++a) {
            const auto grad = policy.policy_grad(s, a);
            const auto fd = oracle::central_difference(
                [&](const std::vector<double>& th) { return oracle::softmax(th, s, 4)[a]; }, theta,
                1e-6);
            for (std::size_t k = 0; k < theta.size(); ++k) {
                CHECK(grad[k] == doctest::Approx(fd[k]).epsilon(1e-7));
                sum[k] += grad[k];
            }
            const auto log_grad = policy.log_policy_grad(s, a);
            const double p = policy.action_probs(s)[a];
            for (std::size_t k = 0; k < theta.size(); ++k)
                CHECK(log_grad[k] * p == doctest::Approx(grad[k]).epsilon(1e-12));
        }
        for (double v : sum)
            CHECK(std::abs(v) < 1e-15);
    }
}

TEST_CASE("sample_trajectory basics")
{
    const auto cliff = cliffwalk::build({});
    Rng rng(1);
    const SoftmaxPolicy uniform(9, 4);
    const auto at_goal = sample_trajectory(cliff, uniform, cliffwalk::kGoal, rng, 50);
    CHECK(at_goal.size() == 0);
    CHECK(!at_goal.truncated);
    CHECK(at_goal.final_state == cliffwalk::kGoal);

    const auto det = cliffwalk::build({0.0, 30.0, 10.0, 0.95});
    const auto safe = sample_trajectory(det, cliffwalk::safe_path_policy(), cliffwalk::kStart, rng, 50);
    std::vector<std::size_t> visited;
    for (const auto& step : safe.steps)
        visited.push_back(step.state);
    visited.push_back(safe.final_state);
    CHECK(visited == std::vector<std::size_t>{6, 3, 0, 1, 2, 5, 8});
    CHECK(safe.discounted_return(0.95) == doctest::Approx(10.0 * (1.0 - std::pow(0.95, 6)) / 0.05));

    const auto capped = sample_trajectory(cliff, uniform, cliffwalk::kStart, rng, 3);
    CHECK(capped.size() <= 3);
    for (const auto& step : capped.steps)
        CHECK(step.cost == cliff.cost(step.state, step.action, step.next_state));

    Rng a(99), b(99);
    const auto ta = sample_trajectory(cliff, uniform, cliffwalk::kStart, a, 200);
    const auto tb = sample_trajectory(cliff, uniform, cliffwalk::kStart, b, 200);
    REQUIRE(ta.size() == tb.size());
    for (std::size_t t = 0; t < ta.size(); ++t) {
        CHECK(ta.steps[t].state == tb.steps[t].state);
        CHECK(ta.steps[t].action == tb.steps[t].action);
    }
}

TEST_CASE("state-visit frequencies match exact marginals")
{
    const auto mdp = two_state_chain();
    const SoftmaxPolicy policy(2, 2, {0.4, -0.2, 1.0, 0.1});
    constexpr std::size_t horizon = 4;
    constexpr int samples = 100000;

    // Exact marginal of s_t by propagating the start distribution through P_pi.
    std::vector<std::vector<double>> marg(horizon + 1, std::vector<double>(2, 0.0));
    marg[0][0] = 1.0;
    for (std::size_t t = 0; t < horizon; ++t)
        for (std::size_t s = 0; s < 2; ++s) {
            const auto pi = policy.action_probs(s);
            for (std::size_t a = 0; a < 2; ++a)
                for (std::size_t next = 0; next < 2; ++next)
                    marg[t + 1][next] += marg[t][s] * pi[a] * mdp.transition(s, a, next);
        }

    std::vector<std::vector<double>> count(horizon + 1, std::vector<double>(2, 0.0));
    Rng rng(2024);
    for (int k = 0; k < samples; ++k) {
        const auto traj = sample_trajectory(mdp, policy, 0, rng, horizon);
        for (std::size_t t = 0; t < traj.size(); ++t)
            count[t][traj.steps[t].state] += 1.0;
        count[traj.size()][traj.final_state] += 1.0;
    }
    for (std::size_t t = 0; t <= horizon; ++t) {
        const double p = marg[t][1];
        const double sigma = std::sqrt(p * (1.0 - p) / samples);
        CHECK(std::abs(count[t][1] / samples - p) <= 3.0 * sigma + 1e-12);
    }
}

TEST_CASE("cliffwalk structure")
{
    const auto mdp = cliffwalk::build({});
    CHECK(mdp.n_states() == 9);
    CHECK(mdp.n_actions() == 4);
    CHECK(mdp.terminals() == std::vector<std::size_t>{cliffwalk::kGoal});
    for (std::size_t s = 0; s < 9; ++s)
        for (std::size_t a = 0; a < 4; ++a) {
            double row = 0.0;
            for (std::size_t next = 0; next < 9; ++next)
                row += mdp.transition(s, a, next);
            CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
        }
    // Entering the slippery cell from 3 falls back to the start with probability p_slip.
    CHECK(mdp.transition(3, cliffwalk::kRight, cliffwalk::kStart) == doctest::Approx(0.2));
    CHECK(mdp.cost(3, cliffwalk::kRight, cliffwalk::kStart) == doctest::Approx(30.0));
    CHECK(mdp.transition(3, cliffwalk::kRight, 4) == doctest::Approx(0.8));
    CHECK(mdp.cost(3, cliffwalk::kRight, 4) == doctest::Approx(10.0));
    // Stepping into the cliff always falls.
    CHECK(mdp.transition(6, cliffwalk::kRight, cliffwalk::kStart) == doctest::Approx(1.0));
    CHECK(mdp.cost(6, cliffwalk::kRight, cliffwalk::kStart) == doctest::Approx(30.0));
    // Off-grid moves stay put at step cost.
    CHECK(mdp.transition(6, cliffwalk::kLeft, 6) == doctest::Approx(1.0));
    CHECK(mdp.cost(6, cliffwalk::kLeft, 6) == doctest::Approx(10.0));

    const auto det = cliffwalk::build({0.0, 30.0, 10.0, 0.95});
    for (std::size_t s = 0; s < 9; ++s)
        for (std::size_t a = 0; a < 4; ++a)
            CHECK(det.successors(s, a).size() == 1);
    CHECK_THROWS_AS(cliffwalk::build({1.5, 30.0, 10.0, 0.95}), std::invalid_argument);
}

TEST_CASE("cliffwalk expected values agree with the hand-written linear system")
{
    const auto mdp = cliffwalk::build({});
    const auto v = expected_state_values(mdp, cliffwalk::shortest_path_policy());
    const double oracle_v6 = oracle::cliffwalk_shortest_path_value(0.2, 30.0, 10.0, 0.95);
    CHECK(v[cliffwalk::kStart] == doctest::Approx(oracle_v6).epsilon(1e-9));
    CHECK(oracle_v6 == doctest::Approx(45.61).epsilon(1e-3));

    const auto safe = expected_state_values(mdp, cliffwalk::safe_path_policy());
    CHECK(safe[cliffwalk::kStart] == doctest::Approx(10.0 * (1.0 - std::pow(0.95, 6)) / 0.05).epsilon(1e-9));
}

TEST_CASE("expected_state_values matches the independent solver on random MDPs")
{
    Rng rng(12);
    for (int k = 0; k < 10; ++k) {
        const auto mdp = random_mdp(4, 3, 0.8, 2.0, k % 2 == 0, rng);
        std::normal_distribution<double> n01(0.0, 1.0);
        std::vector<double> theta(12);
        for (auto& v : theta)
            v = n01(rng);
        const auto lib = expected_state_values(mdp, SoftmaxPolicy(4, 3, theta));
        const auto ref = oracle::state_values(mdp, theta);
        for (std::size_t s = 0; s < 4; ++s)
            CHECK(lib[s] == doctest::Approx(ref(static_cast<Eigen::Index>(s))).epsilon(1e-10));
    }
}

TEST_CASE("policy_divergence examples")
{
    const auto a = cliffwalk::safe_path_policy();
    const auto states = cliffwalk::safe_path_states();
    CHECK(policy_divergence(a, a, states) == 0.0);

    const auto one = SoftmaxPolicy::one_hot(1, 2, std::vector<std::size_t>{0});
    const auto other = SoftmaxPolicy::one_hot(1, 2, std::vector<std::size_t>{1});
    const std::vector<std::size_t> s0{0};
    CHECK(policy_divergence(one, other, s0) == doctest::Approx(std::sqrt(2.0)));

    const auto b = cliffwalk::shortest_path_policy();
    CHECK(policy_divergence(a, b, states) == doctest::Approx(policy_divergence(b, a, states)));
    CHECK_THROWS_AS(policy_divergence(a, b, std::vector<std::size_t>{}), std::invalid_argument);
}

TEST_CASE("greedy paths of the reference policies")
{
    const auto mdp = cliffwalk::build({});
    CHECK(greedy_path(mdp, cliffwalk::safe_path_policy(), cliffwalk::kStart) ==
          std::vector<std::size_t>{6, 3, 0, 1, 2, 5, 8});
    CHECK(greedy_path(mdp, cliffwalk::shortest_path_policy(), cliffwalk::kStart) ==
          std::vector<std::size_t>{6, 3, 4, 5, 8});
    CHECK(cliffwalk::safe_path_states() == std::vector<std::size_t>{6, 3, 0, 1, 2, 5});
}
