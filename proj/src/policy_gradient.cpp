#include "cdpg/policy_gradient.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace cdpg {

namespace {

void require_compatible(const ReturnDistributionTable& table, const SoftmaxPolicy& policy,
                        const TabularMdp& mdp)
{
    if (table.n_states() != mdp.n_states() || table.n_actions() != mdp.n_actions())
        throw std::invalid_argument("return table shape does not match the MDP");
    if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
        throw std::invalid_argument("policy shape does not match the MDP");
}

// s_0, ..., s_|tau|.
std::vector<std::size_t> visited_states(const Trajectory& trajectory, const TabularMdp& mdp)
{
    std::vector<std::size_t> states;
    states.reserve(trajectory.size() + 1);
    for (const auto& step : trajectory.steps)
        states.push_back(step.state);
    states.push_back(trajectory.final_state);
    for (auto s : states)
        if (s >= mdp.n_states())
            throw std::out_of_range("trajectory visits a state outside the MDP");
    return states;
}

// Rows of g(s) for the parameter block of s: row b = pi(b|s) (eta^(s,b) - eta^s).
std::vector<double> gradient_block(const ReturnDistributionTable& table,
                                   const SoftmaxPolicy& policy, std::size_t s)
{
    const std::size_t n_atoms = table.n_atoms();
    const std::size_t n_actions = table.n_actions();
    const auto probs = policy.action_probs(s);
    std::vector<double> mix(n_atoms, 0.0);
    for (std::size_t a = 0; a < n_actions; ++a) {
        const auto e = table.entry(s, a);
        for (std::size_t i = 0; i < n_atoms; ++i)
            mix[i] += probs[a] * e[i];
    }
    std::vector<double> block(n_actions * n_atoms);
    for (std::size_t b = 0; b < n_actions; ++b) {
        const auto e = table.entry(s, b);
        for (std::size_t i = 0; i < n_atoms; ++i)
            block[b * n_atoms + i] = probs[b] * (e[i] - mix[i]);
    }
    return block;
}

}  // namespace

SignedGradientMeasure state_gradient_measure(const ReturnDistributionTable& table,
                                             const SoftmaxPolicy& policy, std::size_t s)
{
    if (s >= table.n_states())
        throw std::out_of_range("state index out of range");
    SignedGradientMeasure g(table.grid(), policy.n_params());
    for (std::size_t a = 0; a < table.n_actions(); ++a) {
        const auto dpi = policy.policy_grad(s, a);
        const auto e = table.entry(s, a);
        for (std::size_t j = 0; j < dpi.size(); ++j) {
            if (dpi[j] == 0.0)
                continue;
            auto row = g.row(j);
            for (std::size_t i = 0; i < e.size(); ++i)
                row[i] += dpi[j] * e[i];
        }
    }
    return g;
}

SignedGradientMeasure trajectory_gradient_measure(const Trajectory& trajectory,
                                                  const ReturnDistributionTable& table,
                                                  const SoftmaxPolicy& policy,
                                                  const TabularMdp& mdp)
{
    require_compatible(table, policy, mdp);
    const SupportGrid& grid = table.grid();
    const std::size_t n_atoms = grid.size();
    const std::size_t n_actions = mdp.n_actions();
    const auto states = visited_states(trajectory, mdp);
    const std::size_t horizon = trajectory.size();

    std::map<std::size_t, std::vector<double>> blocks;
    for (auto s : states)
        if (!blocks.contains(s))
            blocks.emplace(s, gradient_block(table, policy, s));

    std::map<double, ProjectionPlan> plan_by_cost;
    for (const auto& step : trajectory.steps)
        if (!plan_by_cost.contains(step.cost))
            plan_by_cost.emplace(step.cost, ProjectionPlan(grid, step.cost, mdp.gamma()));
    std::vector<const ProjectionPlan*> plans;
    plans.reserve(horizon);
    for (const auto& step : trajectory.steps)
        plans.push_back(&plan_by_cost.at(step.cost));

    struct RowTask {
        std::size_t state;
        std::size_t action;
        const double* g;
    };
    std::vector<RowTask> tasks;
    for (const auto& [s, block] : blocks)
        for (std::size_t b = 0; b < n_actions; ++b)
            tasks.push_back({s, b, block.data() + b * n_atoms});

    SignedGradientMeasure out(grid, policy.n_params());
    const auto n_tasks = static_cast<std::ptrdiff_t>(tasks.size());
#pragma omp parallel for schedule(static) if (n_tasks * static_cast<std::ptrdiff_t>(horizon * n_atoms) > 65536)
    for (std::ptrdiff_t t = 0; t < n_tasks; ++t) {
        const RowTask& task = tasks[static_cast<std::size_t>(t)];
        std::vector<double> acc(n_atoms, 0.0);
        std::vector<double> scratch(n_atoms);
        bool started = false;
        // acc_k = g(s_k) + Pi(b_{c_k})# acc_{k+1}, from k = |tau| down to 0.
        for (std::size_t k = horizon + 1; k-- > 0;) {
            if (started && k < horizon) {
                std::fill(scratch.begin(), scratch.end(), 0.0);
                plans[k]->accumulate(acc, scratch);
                acc.swap(scratch);
            }
            if (states[k] == task.state) {
                for (std::size_t i = 0; i < n_atoms; ++i)
                    acc[i] += task.g[i];
                started = true;
            }
        }
        auto row = out.row(task.state * n_actions + task.action);
        std::copy(acc.begin(), acc.end(), row.begin());
    }
    return out;
}

SignedGradientMeasure trajectory_gradient_measure_reference(const Trajectory& trajectory,
                                                            const ReturnDistributionTable& table,
                                                            const SoftmaxPolicy& policy,
                                                            const TabularMdp& mdp)
{
    require_compatible(table, policy, mdp);
    const SupportGrid& grid = table.grid();
    const auto states = visited_states(trajectory, mdp);
    SignedGradientMeasure total(grid, policy.n_params());
    for (std::size_t h = 0; h < states.size(); ++h) {
        SignedGradientMeasure term = state_gradient_measure(table, policy, states[h]);
        // Innermost pushforward uses the latest cost c_{h-1}; the outermost uses c_0.
        for (std::size_t k = h; k-- > 0;) {
            const double c = trajectory.steps[k].cost;
            for (std::size_t j = 0; j < term.n_params(); ++j) {
                auto row = term.row(j);
                const auto moved = pushforward_project(grid, row, c, mdp.gamma());
                std::copy(moved.begin(), moved.end(), row.begin());
            }
        }
        total += term;
    }
    return total;
}

SignedGradientMeasure measure_gradient(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                       const ReturnDistributionTable& table, std::size_t start,
                                       std::size_t m, Rng& rng, std::size_t horizon_cap)
{
    if (m < 1)
        throw std::invalid_argument("measure_gradient needs at least one trajectory");
    SignedGradientMeasure sum(table.grid(), policy.n_params());
    for (std::size_t k = 0; k < m; ++k) {
        const auto traj = sample_trajectory(mdp, policy, start, rng, horizon_cap);
        sum += trajectory_gradient_measure(traj, table, policy, mdp);
    }
    if (m > 1)
        sum *= 1.0 / static_cast<double>(m);
    return sum;
}

SignedGradientMeasure expected_gradient_measure(const TabularMdp& mdp,
                                                const SoftmaxPolicy& policy,
                                                const ReturnDistributionTable& table,
                                                std::size_t start, double tolerance,
                                                std::size_t max_iterations)
{
    require_compatible(table, policy, mdp);
    if (start >= mdp.n_states())
        throw std::out_of_range("start state out of range");
    const SupportGrid& grid = table.grid();
    const std::size_t n_atoms = grid.size();
    const std::size_t n_params = policy.n_params();
    const std::size_t stride = n_params * n_atoms;
    const std::size_t n_states = mdp.n_states();

    std::vector<double> g(n_states * stride, 0.0);
    for (std::size_t s = 0; s < n_states; ++s) {
        if (mdp.is_terminal(s))
            continue;
        const auto block = gradient_block(table, policy, s);
        std::copy(block.begin(), block.end(),
                  g.begin() + static_cast<std::ptrdiff_t>(s * stride + s * mdp.n_actions() * n_atoms));
    }

    std::map<double, ProjectionPlan> plans;
    for (std::size_t s = 0; s < n_states; ++s)
        for (std::size_t a = 0; a < mdp.n_actions(); ++a)
            for (const auto& o : mdp.successors(s, a))
                if (!plans.contains(o.cost))
                    plans.emplace(o.cost, ProjectionPlan(grid, o.cost, mdp.gamma()));

    std::vector<double> current = g;
    std::vector<double> next(current.size());
    for (std::size_t it = 0; it < max_iterations; ++it) {
        next = g;
        const auto n_rows = static_cast<std::ptrdiff_t>(n_states * n_params);
#pragma omp parallel for schedule(static) if (n_rows * static_cast<std::ptrdiff_t>(n_atoms) > 65536)
        for (std::ptrdiff_t r = 0; r < n_rows; ++r) {
            const std::size_t s = static_cast<std::size_t>(r) / n_params;
            const std::size_t j = static_cast<std::size_t>(r) % n_params;
            if (mdp.is_terminal(s))
                continue;
            const auto probs = policy.action_probs(s);
            std::span<double> dst{next.data() + s * stride + j * n_atoms, n_atoms};
            for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
                for (const auto& o : mdp.successors(s, a)) {
                    const std::span<const double> src{
                        current.data() + o.state * stride + j * n_atoms, n_atoms};
                    plans.at(o.cost).accumulate(src, dst, probs[a] * o.probability);
                }
            }
        }
        double change = 0.0;
        for (std::size_t k = 0; k < next.size(); ++k)
            change = std::max(change, std::abs(next[k] - current[k]));
        current.swap(next);
        if (change < tolerance)
            break;
    }

    SignedGradientMeasure out(grid, n_params);
    std::copy(current.begin() + static_cast<std::ptrdiff_t>(start * stride),
              current.begin() + static_cast<std::ptrdiff_t>((start + 1) * stride),
              out.data().begin());
    return out;
}

void CdpgConfig::validate(const TabularMdp& mdp) const
{
    if (!(step_size > 0.0))
        throw std::invalid_argument("CDPG step size must be positive");
    if (trajectories_per_iter < 1)
        throw std::invalid_argument("CDPG needs at least one trajectory per iteration");
    if (start_state >= mdp.n_states())
        throw std::invalid_argument("start state out of range");
    if (!(grad_norm_stop >= 0.0))
        throw std::invalid_argument("gradient-norm stop threshold must be non-negative");
    if (horizon_cap < 1)
        throw std::invalid_argument("horizon cap must be at least 1");
    if (schedule_kappa < 0.0)
        throw std::invalid_argument("schedule kappa must be non-negative");
    if (!initial_theta.empty() && initial_theta.size() != mdp.n_params())
        throw std::invalid_argument("initial theta has the wrong number of parameters");
    eval.validate();
}

TrainResult cdpg_train(const TabularMdp& mdp, const RiskMeasureSpec& spec,
                       const CdpgConfig& config, const std::optional<PolicyReference>& reference)
{
    config.validate(mdp);
    spec.validate();
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();

    TrainResult result{config.initial_theta.empty()
                           ? SoftmaxPolicy(mdp.n_states(), mdp.n_actions())
                           : SoftmaxPolicy(mdp.n_states(), mdp.n_actions(), config.initial_theta),
                       {}};
    SoftmaxPolicy& policy = result.policy;
    Rng rng(config.rng_seed);
    std::optional<ReturnDistributionTable> previous;
    std::size_t cumulative = 0;

    auto divergence = [&]() {
        return reference ? policy_divergence(policy, reference->policy, reference->states)
                         : std::numeric_limits<double>::quiet_NaN();
    };

    for (std::size_t t = 1; t <= config.iterations; ++t) {
        std::vector<Trajectory> trajectories;
        std::size_t longest = 0;
        for (std::size_t k = 0; k < config.trajectories_per_iter; ++k) {
            trajectories.push_back(
                sample_trajectory(mdp, policy, config.start_state, rng, config.horizon_cap));
            longest = std::max(longest, trajectories.back().size());
        }
        cumulative += trajectories.size();

        EvalConfig eval = config.eval;
        if (config.schedule_kappa > 0.0)
            eval.fixed_sweeps = scheduled_sweeps(config.schedule_kappa, config.grid.size(), longest);
        if (eval.mode == EvalMode::SampleBased)
            eval.td_seed = rng();
        auto evaluated = evaluate_policy(mdp, policy, config.grid, eval,
                                         previous ? &*previous : nullptr);

        const auto dist = state_distribution(evaluated.table, policy, config.start_state);
        SignedGradientMeasure measure(config.grid, policy.n_params());
        for (const auto& traj : trajectories)
            measure += trajectory_gradient_measure(traj, evaluated.table, policy, mdp);
        if (trajectories.size() > 1)
            measure *= 1.0 / static_cast<double>(trajectories.size());
        const auto grad = risk_gradient(measure, dist, spec);

        IterationRecord rec;
        rec.iteration = t;
        rec.cum_trajectories = cumulative;
        rec.eval_sweeps = evaluated.sweeps_used;
        rec.risk_value = risk_value(dist, spec);
        rec.grad_norm = l2_norm(grad.gradient);
        rec.quantile_tie = grad.quantile_tie;

        const bool stop = config.grad_norm_stop > 0.0 && rec.grad_norm < config.grad_norm_stop;
        if (!stop) {
            auto theta = policy.theta();
            for (std::size_t j = 0; j < theta.size(); ++j)
                theta[j] -= config.step_size * grad.gradient[j];
        }
        rec.divergence = divergence();
        if (config.record_wall_time)
            rec.wall_time_ms =
                std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        result.history.records.push_back(rec);
        previous = std::move(evaluated.table);
        if (stop)
            break;
    }
    return result;
}

}  // namespace cdpg
