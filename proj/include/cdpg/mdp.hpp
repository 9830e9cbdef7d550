#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace cdpg {

using Rng = std::mt19937_64;

/// One reachable outcome of taking action a in state s.
struct Successor {
    std::size_t state;
    double probability;
    double cost;
};

/// Finite discounted MDP with costs. Costs are stored per (s, a, s') so that an outcome such
/// as a fall can carry its own immediate cost; `cost(s, a)` is defined when the cost does not
/// depend on s'. Terminal states must self-loop at zero cost.
class TabularMdp {
public:
    TabularMdp(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
               std::vector<double> cost, double gamma, std::vector<std::size_t> terminals);

    /// Convenience constructor for costs given as an [s][a] matrix.
    static TabularMdp with_action_costs(std::size_t n_states, std::size_t n_actions,
                                       std::vector<double> transition,
                                       std::span<const double> action_cost, double gamma,
                                       std::vector<std::size_t> terminals);

    std::size_t n_states() const { return n_states_; }
    std::size_t n_actions() const { return n_actions_; }
    std::size_t n_params() const { return n_states_ * n_actions_; }
    double gamma() const { return gamma_; }

    double transition(std::size_t s, std::size_t a, std::size_t next) const
    {
        return transition_[index(s, a, next)];
    }
    double cost(std::size_t s, std::size_t a, std::size_t next) const
    {
        return cost_[index(s, a, next)];
    }
    /// Immediate cost when it is independent of the next state; throws otherwise.
    double cost(std::size_t s, std::size_t a) const;
    /// Probability-weighted immediate cost.
    double expected_cost(std::size_t s, std::size_t a) const;

    std::span<const Successor> successors(std::size_t s, std::size_t a) const
    {
        return successors_[s * n_actions_ + a];
    }

    bool is_terminal(std::size_t s) const { return terminal_[s] != 0; }
    std::vector<std::size_t> terminals() const;
    bool costs_depend_on_next_state() const;

    double cost_min() const { return cost_min_; }
    double cost_max() const { return cost_max_; }

    std::span<const double> transition_tensor() const { return transition_; }
    std::span<const double> cost_tensor() const { return cost_; }

private:
    std::size_t index(std::size_t s, std::size_t a, std::size_t next) const
    {
        return (s * n_actions_ + a) * n_states_ + next;
    }

    std::size_t n_states_;
    std::size_t n_actions_;
    std::vector<double> transition_;
    std::vector<double> cost_;
    double gamma_;
    std::vector<char> terminal_;
    std::vector<std::vector<Successor>> successors_;
    double cost_min_ = 0.0;
    double cost_max_ = 0.0;
};

/// Tabular softmax policy, pi(a|s) = exp(theta[s][a]) / sum_b exp(theta[s][b]).
/// Parameters are laid out row-major: flat index s * n_actions + a.
class SoftmaxPolicy {
public:
    SoftmaxPolicy(std::size_t n_states, std::size_t n_actions);
    SoftmaxPolicy(std::size_t n_states, std::size_t n_actions, std::vector<double> theta);

    std::size_t n_states() const { return n_states_; }
    std::size_t n_actions() const { return n_actions_; }
    std::size_t n_params() const { return theta_.size(); }

    std::span<const double> theta() const { return theta_; }
    std::span<double> theta() { return theta_; }
    double theta(std::size_t s, std::size_t a) const { return theta_[s * n_actions_ + a]; }

    std::vector<double> action_probs(std::size_t s) const;
    /// Writes pi(.|s) into `out` (size n_actions) without allocating.
    void action_probs(std::size_t s, std::span<double> out) const;

    /// d pi(a|s) / d theta for all parameters (non-zero only in the block of state s).
    std::vector<double> policy_grad(std::size_t s, std::size_t a) const;
    /// d log pi(a|s) / d theta.
    std::vector<double> log_policy_grad(std::size_t s, std::size_t a) const;

    std::size_t sample_action(std::size_t s, Rng& rng) const;
    std::size_t greedy_action(std::size_t s) const;

    /// Deterministic-in-practice policy: theta = +margin on the chosen action, -margin elsewhere.
    static SoftmaxPolicy one_hot(std::size_t n_states, std::size_t n_actions,
                                 std::span<const std::size_t> action_per_state,
                                 double margin = 40.0);

private:
    std::size_t n_states_;
    std::size_t n_actions_;
    std::vector<double> theta_;
};

struct TrajectoryStep {
    std::size_t state;
    std::size_t action;
    double cost;
    std::size_t next_state;
};

struct Trajectory {
    std::vector<TrajectoryStep> steps;
    std::size_t final_state = 0;
    bool truncated = false;

    std::size_t size() const { return steps.size(); }
    double discounted_return(double gamma) const;
};

std::size_t sample_next_state(const TabularMdp& mdp, std::size_t s, std::size_t a, Rng& rng,
                              double* cost_out = nullptr);

/// Rolls out the policy from `start` until a terminal state or `horizon_cap` steps.
Trajectory sample_trajectory(const TabularMdp& mdp, const SoftmaxPolicy& policy, std::size_t start,
                             Rng& rng, std::size_t horizon_cap);

/// sqrt(sum_t sum_a |p1(a|s_t) - p2(a|s_t)|^2) over the given state sequence.
double policy_divergence(const SoftmaxPolicy& p1, const SoftmaxPolicy& p2,
                         std::span<const std::size_t> states);

/// Expected discounted cost V(s) for every state by a dense linear solve of
/// (I - gamma P_pi) V = c_pi.
std::vector<double> expected_state_values(const TabularMdp& mdp, const SoftmaxPolicy& policy);

/// Q(s, a) = E[C] + gamma * sum_s' P(s'|s,a) V(s').
std::vector<double> expected_action_values(const TabularMdp& mdp, const SoftmaxPolicy& policy);

/// Random MDP for property tests and gradient checks. Transition rows are random points on the
/// simplex; costs are uniform in [0, max_cost] and depend on (s, a, s'). The last state is made
/// terminal when `with_terminal` is set.
TabularMdp random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, double max_cost,
                      bool with_terminal, Rng& rng);

/// Follows the greedy action and most likely successor from `start`; stops at a terminal state,
/// on revisiting a state, or after `max_steps`. Returns the visited states including `start`.
std::vector<std::size_t> greedy_path(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                     std::size_t start, std::size_t max_steps = 64);

// ---------------------------------------------------------------------------------------------
// Cliffwalk: 3x3 grid, states numbered row-major from the top-left corner.
//
//   0 1 2
//   3 4 5      4 is slippery: entering it falls off the cliff with probability p_slip.
//   6 7 8      6 = start, 7 = cliff, 8 = goal (terminal).
//
// Falling (entering 7, or slipping when entering 4) costs fall_cost and restarts at 6.
// Moves off the grid leave the agent in place at step_cost.
// ---------------------------------------------------------------------------------------------

namespace cliffwalk {

enum Action : std::size_t { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

inline constexpr std::size_t kStates = 9;
inline constexpr std::size_t kActions = 4;
inline constexpr std::size_t kStart = 6;
inline constexpr std::size_t kCliff = 7;
inline constexpr std::size_t kGoal = 8;
inline constexpr std::size_t kSlippery = 4;

struct Params {
    double p_slip = 0.2;
    double fall_cost = 30.0;
    double step_cost = 10.0;
    double gamma = 0.95;

    bool operator==(const Params&) const = default;
};

TabularMdp build(const Params& params);

/// Non-terminal states of the safe path 6 -> 3 -> 0 -> 1 -> 2 -> 5 (-> 8).
std::vector<std::size_t> safe_path_states();
/// Non-terminal states of the shortest path 6 -> 3 -> 4 -> 5 (-> 8).
std::vector<std::size_t> shortest_path_states();

SoftmaxPolicy safe_path_policy();
SoftmaxPolicy shortest_path_policy();

}  // namespace cliffwalk

inline TabularMdp build_cliffwalk(double p_slip, double fall_cost, double step_cost, double gamma)
{
    return cliffwalk::build({p_slip, fall_cost, step_cost, gamma});
}

}  // namespace cdpg
