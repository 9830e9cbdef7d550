#include "cdpg/mdp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cdpg {

namespace {

constexpr double kRowTolerance = 1e-9;

double uniform01(Rng& rng)
{
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace

TabularMdp::TabularMdp(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
                       std::vector<double> cost, double gamma, std::vector<std::size_t> terminals)
    : n_states_(n_states), n_actions_(n_actions), transition_(std::move(transition)),
      cost_(std::move(cost)), gamma_(gamma), terminal_(n_states, 0),
      successors_(n_states * n_actions)
{
    if (n_states == 0 || n_actions == 0)
        throw std::invalid_argument("MDP needs at least one state and one action");
    const std::size_t expected = n_states * n_actions * n_states;
    if (transition_.size() != expected || cost_.size() != expected)
        throw std::invalid_argument("transition and cost tensors must have n_states * n_actions * "
                                    "n_states entries");
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw std::invalid_argument("gamma must lie in [0, 1)");
    for (auto t : terminals) {
        if (t >= n_states)
            throw std::invalid_argument("terminal state index out of range");
        terminal_[t] = 1;
    }

    cost_min_ = std::numeric_limits<double>::infinity();
    cost_max_ = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < n_states; ++s) {
        for (std::size_t a = 0; a < n_actions; ++a) {
            double total = 0.0;
            auto& succ = successors_[s * n_actions + a];
            for (std::size_t next = 0; next < n_states; ++next) {
                const double p = transition_[index(s, a, next)];
                const double c = cost_[index(s, a, next)];
                if (!std::isfinite(p) || p < 0.0)
                    throw std::invalid_argument("transition probabilities must be non-negative");
                if (!std::isfinite(c))
                    throw std::invalid_argument("costs must be finite");
                total += p;
                if (p > 0.0) {
                    succ.push_back({next, p, c});
                    cost_min_ = std::min(cost_min_, c);
                    cost_max_ = std::max(cost_max_, c);
                }
            }
            if (std::abs(total - 1.0) > kRowTolerance)
                throw std::invalid_argument("transition row (" + std::to_string(s) + ", " +
                                            std::to_string(a) + ") sums to " +
                                            std::to_string(total));
            if (terminal_[s] && (succ.size() != 1 || succ[0].state != s || succ[0].cost != 0.0))
                throw std::invalid_argument("terminal state " + std::to_string(s) +
                                            " must self-loop with zero cost");
        }
    }
}

TabularMdp TabularMdp::with_action_costs(std::size_t n_states, std::size_t n_actions,
                                         std::vector<double> transition,
                                         std::span<const double> action_cost, double gamma,
                                         std::vector<std::size_t> terminals)
{
    if (action_cost.size() != n_states * n_actions)
        throw std::invalid_argument("action cost matrix must have n_states * n_actions entries");
    std::vector<double> cost(n_states * n_actions * n_states);
    for (std::size_t sa = 0; sa < n_states * n_actions; ++sa)
        std::fill_n(cost.begin() + static_cast<std::ptrdiff_t>(sa * n_states), n_states,
                    action_cost[sa]);
    return {n_states, n_actions, std::move(transition), std::move(cost), gamma,
            std::move(terminals)};
}

double TabularMdp::cost(std::size_t s, std::size_t a) const
{
    const auto succ = successors(s, a);
    for (const auto& o : succ) {
        if (o.cost != succ.front().cost)
            throw std::logic_error("cost of (" + std::to_string(s) + ", " + std::to_string(a) +
                                   ") depends on the next state");
    }
    return succ.front().cost;
}

double TabularMdp::expected_cost(std::size_t s, std::size_t a) const
{
    double c = 0.0;
    for (const auto& o : successors(s, a))
        c += o.probability * o.cost;
    return c;
}

std::vector<std::size_t> TabularMdp::terminals() const
{
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < n_states_; ++s)
        if (terminal_[s])
            out.push_back(s);
    return out;
}

bool TabularMdp::costs_depend_on_next_state() const
{
    for (const auto& succ : successors_)
        for (const auto& o : succ)
            if (o.cost != succ.front().cost)
                return true;
    return false;
}

SoftmaxPolicy::SoftmaxPolicy(std::size_t n_states, std::size_t n_actions)
    : SoftmaxPolicy(n_states, n_actions, std::vector<double>(n_states * n_actions, 0.0))
{
}

SoftmaxPolicy::SoftmaxPolicy(std::size_t n_states, std::size_t n_actions,
                             std::vector<double> theta)
    : n_states_(n_states), n_actions_(n_actions), theta_(std::move(theta))
{
    if (n_states == 0 || n_actions == 0)
        throw std::invalid_argument("policy needs at least one state and one action");
    if (theta_.size() != n_states * n_actions)
        throw std::invalid_argument("theta must have n_states * n_actions entries");
    for (double t : theta_)
        if (!std::isfinite(t))
            throw std::invalid_argument("policy parameters must be finite");
}

void SoftmaxPolicy::action_probs(std::size_t s, std::span<double> out) const
{
    const double* row = theta_.data() + s * n_actions_;
    const double peak = *std::max_element(row, row + n_actions_);
    double total = 0.0;
    for (std::size_t a = 0; a < n_actions_; ++a) {
        out[a] = std::exp(row[a] - peak);
        total += out[a];
    }
    for (std::size_t a = 0; a < n_actions_; ++a)
        out[a] /= total;
}

std::vector<double> SoftmaxPolicy::action_probs(std::size_t s) const
{
    if (s >= n_states_)
        throw std::out_of_range("state index out of range");
    std::vector<double> out(n_actions_);
    action_probs(s, out);
    return out;
}

std::vector<double> SoftmaxPolicy::policy_grad(std::size_t s, std::size_t a) const
{
    const auto probs = action_probs(s);
    std::vector<double> grad(n_params(), 0.0);
    for (std::size_t b = 0; b < n_actions_; ++b)
        grad[s * n_actions_ + b] = probs[a] * ((a == b ? 1.0 : 0.0) - probs[b]);
    return grad;
}

std::vector<double> SoftmaxPolicy::log_policy_grad(std::size_t s, std::size_t a) const
{
    const auto probs = action_probs(s);
    std::vector<double> grad(n_params(), 0.0);
    for (std::size_t b = 0; b < n_actions_; ++b)
        grad[s * n_actions_ + b] = (a == b ? 1.0 : 0.0) - probs[b];
    return grad;
}

std::size_t SoftmaxPolicy::sample_action(std::size_t s, Rng& rng) const
{
    const auto probs = action_probs(s);
    const double u = uniform01(rng);
    double running = 0.0;
    for (std::size_t a = 0; a + 1 < n_actions_; ++a) {
        running += probs[a];
        if (u < running)
            return a;
    }
    return n_actions_ - 1;
}

std::size_t SoftmaxPolicy::greedy_action(std::size_t s) const
{
    const double* row = theta_.data() + s * n_actions_;
    return static_cast<std::size_t>(std::max_element(row, row + n_actions_) - row);
}

SoftmaxPolicy SoftmaxPolicy::one_hot(std::size_t n_states, std::size_t n_actions,
                                     std::span<const std::size_t> action_per_state, double margin)
{
    if (action_per_state.size() != n_states)
        throw std::invalid_argument("one_hot policy needs one action per state");
    std::vector<double> theta(n_states * n_actions, -margin);
    for (std::size_t s = 0; s < n_states; ++s) {
        if (action_per_state[s] >= n_actions)
            throw std::invalid_argument("one_hot policy action out of range");
        theta[s * n_actions + action_per_state[s]] = margin;
    }
    return {n_states, n_actions, std::move(theta)};
}

double Trajectory::discounted_return(double gamma) const
{
    double total = 0.0;
    double discount = 1.0;
    for (const auto& step : steps) {
        total += discount * step.cost;
        discount *= gamma;
    }
    return total;
}

std::size_t sample_next_state(const TabularMdp& mdp, std::size_t s, std::size_t a, Rng& rng,
                              double* cost_out)
{
    const auto succ = mdp.successors(s, a);
    const double u = uniform01(rng);
    double running = 0.0;
    std::size_t pick = succ.size() - 1;
    for (std::size_t k = 0; k + 1 < succ.size(); ++k) {
        running += succ[k].probability;
        if (u < running) {
            pick = k;
            break;
        }
    }
    if (cost_out != nullptr)
        *cost_out = succ[pick].cost;
    return succ[pick].state;
}

Trajectory sample_trajectory(const TabularMdp& mdp, const SoftmaxPolicy& policy, std::size_t start,
                             Rng& rng, std::size_t horizon_cap)
{
    if (horizon_cap < 1)
        throw std::invalid_argument("horizon cap must be at least 1");
    if (start >= mdp.n_states())
        throw std::out_of_range("start state out of range");
    if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
        throw std::invalid_argument("policy dimensions do not match the MDP");

    Trajectory traj;
    std::size_t s = start;
    while (!mdp.is_terminal(s)) {
        if (traj.steps.size() == horizon_cap) {
            traj.truncated = true;
            break;
        }
        const std::size_t a = policy.sample_action(s, rng);
        double c = 0.0;
        const std::size_t next = sample_next_state(mdp, s, a, rng, &c);
        traj.steps.push_back({s, a, c, next});
        s = next;
    }
    traj.final_state = s;
    return traj;
}

double policy_divergence(const SoftmaxPolicy& p1, const SoftmaxPolicy& p2,
                         std::span<const std::size_t> states)
{
    if (states.empty())
        throw std::invalid_argument("policy_divergence needs at least one state");
    if (p1.n_states() != p2.n_states() || p1.n_actions() != p2.n_actions())
        throw std::invalid_argument("policies have different shapes");
    double total = 0.0;
    for (auto s : states) {
        const auto a1 = p1.action_probs(s);
        const auto a2 = p2.action_probs(s);
        for (std::size_t a = 0; a < a1.size(); ++a)
            total += (a1[a] - a2[a]) * (a1[a] - a2[a]);
    }
    return std::sqrt(total);
}

std::vector<double> expected_state_values(const TabularMdp& mdp, const SoftmaxPolicy& policy)
{
    const auto n = static_cast<Eigen::Index>(mdp.n_states());
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        const auto probs = policy.action_probs(s);
        const auto row = static_cast<Eigen::Index>(s);
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
            for (const auto& o : mdp.successors(s, a)) {
                system(row, static_cast<Eigen::Index>(o.state)) -=
                    mdp.gamma() * probs[a] * o.probability;
                rhs(row) += probs[a] * o.probability * o.cost;
            }
        }
    }
    const Eigen::VectorXd v = system.partialPivLu().solve(rhs);
    return {v.data(), v.data() + n};
}

std::vector<double> expected_action_values(const TabularMdp& mdp, const SoftmaxPolicy& policy)
{
    const auto v = expected_state_values(mdp, policy);
    std::vector<double> q(mdp.n_params(), 0.0);
    for (std::size_t s = 0; s < mdp.n_states(); ++s)
        for (std::size_t a = 0; a < mdp.n_actions(); ++a)
            for (const auto& o : mdp.successors(s, a))
                q[s * mdp.n_actions() + a] += o.probability * (o.cost + mdp.gamma() * v[o.state]);
    return q;
}

TabularMdp random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, double max_cost,
                      bool with_terminal, Rng& rng)
{
    if (n_states == 0 || n_actions == 0)
        throw std::invalid_argument("random_mdp needs at least one state and one action");
    std::exponential_distribution<double> weight(1.0);
    std::uniform_real_distribution<double> cost_draw(0.0, max_cost);
    const std::size_t n = n_states;
    std::vector<double> transition(n * n_actions * n, 0.0);
    std::vector<double> cost(n * n_actions * n, 0.0);
    std::vector<std::size_t> terminals;
    if (with_terminal)
        terminals.push_back(n - 1);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t a = 0; a < n_actions; ++a) {
            const std::size_t base = (s * n_actions + a) * n;
            if (with_terminal && s == n - 1) {
                transition[base + s] = 1.0;
                continue;
            }
            // Normalized exponentials are uniform on the simplex.
            double total = 0.0;
            for (std::size_t next = 0; next < n; ++next) {
                transition[base + next] = weight(rng);
                total += transition[base + next];
            }
            for (std::size_t next = 0; next < n; ++next) {
                transition[base + next] /= total;
                cost[base + next] = cost_draw(rng);
            }
        }
    }
    return {n, n_actions, std::move(transition), std::move(cost), gamma, std::move(terminals)};
}

std::vector<std::size_t> greedy_path(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                     std::size_t start, std::size_t max_steps)
{
    std::vector<std::size_t> path{start};
    std::vector<char> seen(mdp.n_states(), 0);
    seen[start] = 1;
    std::size_t s = start;
    for (std::size_t step = 0; step < max_steps && !mdp.is_terminal(s); ++step) {
        const auto succ = mdp.successors(s, policy.greedy_action(s));
        const auto best = std::max_element(
            succ.begin(), succ.end(),
            [](const Successor& x, const Successor& y) { return x.probability < y.probability; });
        s = best->state;
        path.push_back(s);
        if (seen[s])
            break;
        seen[s] = 1;
    }
    return path;
}

namespace cliffwalk {

namespace {

constexpr std::size_t kSide = 3;

std::size_t move(std::size_t s, std::size_t action)
{
    const std::size_t row = s / kSide;
    const std::size_t col = s % kSide;
    switch (action) {
    case kUp:
        return row == 0 ? s : s - kSide;
    case kDown:
        return row + 1 == kSide ? s : s + kSide;
    case kLeft:
        return col == 0 ? s : s - 1;
    case kRight:
        return col + 1 == kSide ? s : s + 1;
    default:
        throw std::out_of_range("cliffwalk action out of range");
    }
}

}  // namespace

TabularMdp build(const Params& params)
{
    if (!(params.p_slip >= 0.0 && params.p_slip <= 1.0))
        throw std::invalid_argument("cliffwalk slip probability must lie in [0, 1]");
    const std::size_t n = kStates;
    std::vector<double> transition(n * kActions * n, 0.0);
    std::vector<double> cost(n * kActions * n, 0.0);
    auto add = [&](std::size_t s, std::size_t a, std::size_t next, double p, double c) {
        const std::size_t k = (s * kActions + a) * n + next;
        transition[k] += p;
        cost[k] = c;
    };

    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t a = 0; a < kActions; ++a) {
            if (s == kGoal) {
                add(s, a, s, 1.0, 0.0);
                continue;
            }
            // The cliff cell is never occupied; every action out of it behaves like a fall.
            if (s == kCliff) {
                add(s, a, kStart, 1.0, params.fall_cost);
                continue;
            }
            const std::size_t target = move(s, a);
            if (target == kCliff) {
                add(s, a, kStart, 1.0, params.fall_cost);
            } else if (target == kSlippery && s != kSlippery) {
                if (params.p_slip > 0.0)
                    add(s, a, kStart, params.p_slip, params.fall_cost);
                if (params.p_slip < 1.0)
                    add(s, a, kSlippery, 1.0 - params.p_slip, params.step_cost);
            } else {
                add(s, a, target, 1.0, params.step_cost);
            }
        }
    }
    return {n, kActions, std::move(transition), std::move(cost), params.gamma, {kGoal}};
}

std::vector<std::size_t> safe_path_states()
{
    return {6, 3, 0, 1, 2, 5};
}

std::vector<std::size_t> shortest_path_states()
{
    return {6, 3, 4, 5};
}

SoftmaxPolicy safe_path_policy()
{
    const std::vector<std::size_t> actions{kRight, kRight, kDown, kUp,  kRight,
                                           kDown,  kUp,    kUp,   kUp};
    return SoftmaxPolicy::one_hot(kStates, kActions, actions);
}

SoftmaxPolicy shortest_path_policy()
{
    const std::vector<std::size_t> actions{kRight, kRight, kDown, kRight, kRight,
                                           kDown,  kUp,    kUp,   kUp};
    return SoftmaxPolicy::one_hot(kStates, kActions, actions);
}

}  // namespace cliffwalk

}  // namespace cdpg
