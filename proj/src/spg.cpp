#include "cdpg/spg.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cdpg {

void SpgConfig::validate(const TabularMdp& mdp) const
{
    if (batch_size < 2)
        throw std::invalid_argument("SPG batch size must be at least 2");
    if (!(step_size > 0.0))
        throw std::invalid_argument("SPG step size must be positive");
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("SPG alpha must lie in (0, 1]");
    if (horizon_cap < 1)
        throw std::invalid_argument("horizon cap must be at least 1");
    if (start_state >= mdp.n_states())
        throw std::invalid_argument("start state out of range");
    if (!initial_theta.empty() && initial_theta.size() != mdp.n_params())
        throw std::invalid_argument("initial theta has the wrong number of parameters");
}

SpgGradient spg_cvar_gradient(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                              const SpgConfig& config, Rng& rng)
{
    config.validate(mdp);
    const std::size_t m = config.batch_size;
    const std::size_t n_params = policy.n_params();
    const std::size_t n_actions = policy.n_actions();

    std::vector<std::uint64_t> seeds(m);
    for (auto& seed : seeds)
        seed = rng();

    std::vector<double> returns(m);
    std::vector<double> scores(m * n_params, 0.0);
    const auto batch = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t jj = 0; jj < batch; ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        Rng local(seeds[j]);
        const auto traj =
            sample_trajectory(mdp, policy, config.start_state, local, config.horizon_cap);
        returns[j] = traj.discounted_return(mdp.gamma());
        double* score = scores.data() + j * n_params;
        std::vector<double> probs(n_actions);
        for (const auto& step : traj.steps) {
            policy.action_probs(step.state, probs);
            for (std::size_t b = 0; b < n_actions; ++b)
                score[step.state * n_actions + b] += (b == step.action ? 1.0 : 0.0) - probs[b];
        }
    }

    std::vector<double> sorted = returns;
    std::sort(sorted.begin(), sorted.end());
    const double rank = std::ceil((1.0 - config.alpha) * static_cast<double>(m) - 1e-9);
    const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(rank, 1.0)), 1, m);

    SpgGradient out{std::vector<double>(n_params, 0.0)};
    out.var = sorted[k - 1];
    out.degenerate = sorted.front() == sorted.back();
    double tail = 0.0;
    for (double r : returns)
        tail += std::max(r - out.var, 0.0);
    out.cvar = out.var + tail / (static_cast<double>(m) * config.alpha);
    if (out.degenerate)
        return out;

    const double scale = 1.0 / (static_cast<double>(m) * config.alpha);
    for (std::size_t j = 0; j < m; ++j) {
        if (returns[j] < out.var)
            continue;
        const double weight = scale * (returns[j] - out.var);
        if (weight == 0.0)
            continue;
        const double* score = scores.data() + j * n_params;
        for (std::size_t p = 0; p < n_params; ++p)
            out.gradient[p] += weight * score[p];
    }
    return out;
}

TrainResult spg_train(const TabularMdp& mdp, const SpgConfig& config,
                      const std::optional<PolicyReference>& reference)
{
    config.validate(mdp);
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();

    TrainResult result{config.initial_theta.empty()
                           ? SoftmaxPolicy(mdp.n_states(), mdp.n_actions())
                           : SoftmaxPolicy(mdp.n_states(), mdp.n_actions(), config.initial_theta),
                       {}};
    SoftmaxPolicy& policy = result.policy;
    Rng rng(config.rng_seed);
    std::size_t cumulative = 0;

    for (std::size_t t = 1; t <= config.iterations; ++t) {
        const auto grad = spg_cvar_gradient(mdp, policy, config, rng);
        cumulative += config.batch_size;
        auto theta = policy.theta();
        for (std::size_t j = 0; j < theta.size(); ++j)
            theta[j] -= config.step_size * grad.gradient[j];

        IterationRecord rec;
        rec.iteration = t;
        rec.cum_trajectories = cumulative;
        rec.eval_sweeps = 0;
        rec.risk_value = grad.cvar;
        rec.grad_norm = l2_norm(grad.gradient);
        rec.divergence = reference
                             ? policy_divergence(policy, reference->policy, reference->states)
                             : std::numeric_limits<double>::quiet_NaN();
        if (config.record_wall_time)
            rec.wall_time_ms =
                std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        result.history.records.push_back(rec);
    }
    return result;
}

}  // namespace cdpg
