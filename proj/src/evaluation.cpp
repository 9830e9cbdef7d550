#include "cdpg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace cdpg {

namespace {

void require_compatible(const ReturnDistributionTable& table, const TabularMdp& mdp,
                        const SoftmaxPolicy& policy)
{
    if (table.n_states() != mdp.n_states() || table.n_actions() != mdp.n_actions())
        throw std::invalid_argument("return table shape does not match the MDP");
    if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
        throw std::invalid_argument("policy shape does not match the MDP");
}

// Projected point mass at zero, the return distribution of a terminal state.
std::vector<double> terminal_entry(const SupportGrid& grid)
{
    std::vector<double> out(grid.size(), 0.0);
    for (const auto& part : project_dirac(grid, 0.0, 1.0))
        out[part.index] += part.weight;
    return out;
}

// Mixtures eta^s for every state, stored contiguously.
std::vector<double> state_mixtures(const ReturnDistributionTable& table,
                                   const SoftmaxPolicy& policy)
{
    const std::size_t n_atoms = table.n_atoms();
    const auto n_states = static_cast<std::ptrdiff_t>(table.n_states());
    std::vector<double> mix(table.n_states() * n_atoms, 0.0);
#pragma omp parallel for schedule(static) if (n_states * static_cast<std::ptrdiff_t>(n_atoms) > 4096)
    for (std::ptrdiff_t si = 0; si < n_states; ++si) {
        const auto s = static_cast<std::size_t>(si);
        std::vector<double> probs(table.n_actions());
        policy.action_probs(s, probs);
        double* out = mix.data() + s * n_atoms;
        for (std::size_t a = 0; a < table.n_actions(); ++a) {
            const auto e = table.entry(s, a);
            for (std::size_t i = 0; i < n_atoms; ++i)
                out[i] += probs[a] * e[i];
        }
    }
    return mix;
}

}  // namespace

ReturnDistributionTable::ReturnDistributionTable(SupportGrid grid, std::size_t n_states,
                                                 std::size_t n_actions)
    : grid_(grid), n_states_(n_states), n_actions_(n_actions),
      probs_(n_states * n_actions * grid.size(), 0.0)
{
    const std::size_t zero_atom = grid_.nearest_atom(0.0);
    for (std::size_t k = 0; k < n_states * n_actions; ++k)
        probs_[k * grid_.size() + zero_atom] = 1.0;
}

CategoricalDistribution ReturnDistributionTable::distribution(std::size_t s, std::size_t a) const
{
    const auto e = entry(s, a);
    return {grid_, std::vector<double>(e.begin(), e.end())};
}

void ReturnDistributionTable::set_entry(std::size_t s, std::size_t a,
                                        const CategoricalDistribution& dist)
{
    if (!(dist.grid() == grid_))
        throw std::invalid_argument("entry lives on a different grid");
    std::copy(dist.probs().begin(), dist.probs().end(), entry(s, a).begin());
}

double ReturnDistributionTable::max_simplex_violation() const
{
    double worst = 0.0;
    for (std::size_t k = 0; k < n_states_ * n_actions_; ++k) {
        double total = 0.0;
        for (std::size_t i = 0; i < grid_.size(); ++i) {
            const double p = probs_[k * grid_.size() + i];
            worst = std::max(worst, -p);
            total += p;
        }
        worst = std::max(worst, std::abs(total - 1.0));
    }
    return worst;
}

void EvalConfig::validate() const
{
    if (!(tolerance > 0.0))
        throw std::invalid_argument("evaluation tolerance must be positive");
    if (early_stop_patience < 1)
        throw std::invalid_argument("early-stop patience must be at least 1");
    if (max_sweeps < 1 && fixed_sweeps == 0)
        throw std::invalid_argument("evaluation needs at least one sweep");
    if (mode == EvalMode::SampleBased && !(td_step_size > 0.0 && td_step_size <= 1.0))
        throw std::invalid_argument("TD step size must lie in (0, 1]");
}

CategoricalDistribution state_distribution(const ReturnDistributionTable& table,
                                           const SoftmaxPolicy& policy, std::size_t s)
{
    if (s >= table.n_states())
        throw std::out_of_range("state index out of range");
    const auto probs = policy.action_probs(s);
    std::vector<double> mix(table.n_atoms(), 0.0);
    for (std::size_t a = 0; a < table.n_actions(); ++a) {
        const auto e = table.entry(s, a);
        for (std::size_t i = 0; i < mix.size(); ++i)
            mix[i] += probs[a] * e[i];
    }
    return {table.grid(), std::move(mix)};
}

ReturnDistributionTable bellman_backup(const ReturnDistributionTable& table, const TabularMdp& mdp,
                                       const SoftmaxPolicy& policy)
{
    require_compatible(table, mdp, policy);
    const SupportGrid& grid = table.grid();
    const std::size_t n_atoms = grid.size();
    const auto mix = state_mixtures(table, policy);
    const auto terminal = terminal_entry(grid);

    ReturnDistributionTable out(grid, mdp.n_states(), mdp.n_actions());
    const auto n_pairs = static_cast<std::ptrdiff_t>(mdp.n_params());
#pragma omp parallel for schedule(static) if (n_pairs * static_cast<std::ptrdiff_t>(n_atoms) > 4096)
    for (std::ptrdiff_t k = 0; k < n_pairs; ++k) {
        const std::size_t s = static_cast<std::size_t>(k) / mdp.n_actions();
        const std::size_t a = static_cast<std::size_t>(k) % mdp.n_actions();
        auto dst = out.entry(s, a);
        if (mdp.is_terminal(s)) {
            std::copy(terminal.begin(), terminal.end(), dst.begin());
            continue;
        }
        std::fill(dst.begin(), dst.end(), 0.0);
        for (const auto& o : mdp.successors(s, a)) {
            const std::span<const double> next{mix.data() + o.state * n_atoms, n_atoms};
            accumulate_pushforward(grid, o.cost, mdp.gamma(), next, dst, o.probability);
        }
    }
    return out;
}

ReturnDistributionTable bellman_backup_serial(const ReturnDistributionTable& table,
                                              const TabularMdp& mdp, const SoftmaxPolicy& policy)
{
    require_compatible(table, mdp, policy);
    const SupportGrid& grid = table.grid();
    ReturnDistributionTable out(grid, mdp.n_states(), mdp.n_actions());
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
            auto dst = out.entry(s, a);
            std::fill(dst.begin(), dst.end(), 0.0);
            if (mdp.is_terminal(s)) {
                for (const auto& part : project_dirac(grid, 0.0, 1.0))
                    dst[part.index] += part.weight;
                continue;
            }
            for (std::size_t next = 0; next < mdp.n_states(); ++next) {
                const double p = mdp.transition(s, a, next);
                if (p == 0.0)
                    continue;
                const double c = mdp.cost(s, a, next);
                const auto next_probs = policy.action_probs(next);
                for (std::size_t b = 0; b < mdp.n_actions(); ++b) {
                    const auto src = table.entry(next, b);
                    for (std::size_t i = 0; i < grid.size(); ++i) {
                        const double mass = p * next_probs[b] * src[i];
                        if (mass == 0.0)
                            continue;
                        for (const auto& part :
                             project_dirac(grid, c + mdp.gamma() * grid.atom(i), mass))
                            dst[part.index] += part.weight;
                    }
                }
            }
        }
    }
    return out;
}

double sup_cramer_distance(const ReturnDistributionTable& a, const ReturnDistributionTable& b)
{
    if (!(a.grid() == b.grid()) || a.n_states() != b.n_states() || a.n_actions() != b.n_actions())
        throw std::invalid_argument("return tables have different shapes");
    double worst = 0.0;
    std::vector<double> diff(a.n_atoms());
    for (std::size_t s = 0; s < a.n_states(); ++s) {
        for (std::size_t act = 0; act < a.n_actions(); ++act) {
            const auto ea = a.entry(s, act);
            const auto eb = b.entry(s, act);
            for (std::size_t i = 0; i < diff.size(); ++i)
                diff[i] = ea[i] - eb[i];
            worst = std::max(worst, cramer_norm(a.grid(), diff));
        }
    }
    return worst;
}

double sup_wasserstein1_distance(const ReturnDistributionTable& a,
                                 const ReturnDistributionTable& b)
{
    if (!(a.grid() == b.grid()) || a.n_states() != b.n_states() || a.n_actions() != b.n_actions())
        throw std::invalid_argument("return tables have different shapes");
    double worst = 0.0;
    for (std::size_t s = 0; s < a.n_states(); ++s)
        for (std::size_t act = 0; act < a.n_actions(); ++act)
            worst = std::max(worst, wasserstein1_distance(a.distribution(s, act),
                                                          b.distribution(s, act)));
    return worst;
}

double bellman_residual(const ReturnDistributionTable& table, const TabularMdp& mdp,
                        const SoftmaxPolicy& policy)
{
    return sup_cramer_distance(table, bellman_backup(table, mdp, policy));
}

bool grid_covers_returns(const SupportGrid& grid, const TabularMdp& mdp)
{
    const double scale = 1.0 / (1.0 - mdp.gamma());
    const double lo = std::min(0.0, mdp.cost_min() * scale);
    const double hi = std::max(0.0, mdp.cost_max() * scale);
    return lo >= grid.z_min() && hi <= grid.z_max();
}

CategoricalDistribution categorical_td_update(ReturnDistributionTable& table,
                                              const SampledTransition& transition,
                                              const SoftmaxPolicy& policy, double gamma,
                                              double step_size)
{
    if (!(step_size > 0.0 && step_size <= 1.0))
        throw std::invalid_argument("TD step size must lie in (0, 1]");
    const auto next = state_distribution(table, policy, transition.next_state);
    std::vector<double> target(table.n_atoms(), 0.0);
    ProjectionPlan(table.grid(), transition.cost, gamma).accumulate(next.probs(), target);

    auto e = table.entry(transition.state, transition.action);
    if (step_size == 1.0) {
        std::copy(target.begin(), target.end(), e.begin());
    } else {
        for (std::size_t i = 0; i < e.size(); ++i)
            e[i] = (1.0 - step_size) * e[i] + step_size * target[i];
    }
    return table.distribution(transition.state, transition.action);
}

namespace {

ReturnDistributionTable td_sweep(const ReturnDistributionTable& table, const TabularMdp& mdp,
                                 const SoftmaxPolicy& policy, double step_size, Rng& rng)
{
    ReturnDistributionTable out = table;
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        if (mdp.is_terminal(s))
            continue;
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
            double c = 0.0;
            const std::size_t next = sample_next_state(mdp, s, a, rng, &c);
            categorical_td_update(out, {s, a, c, next}, policy, mdp.gamma(), step_size);
        }
    }
    return out;
}

}  // namespace

EvalResult evaluate_policy(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                           const SupportGrid& grid, const EvalConfig& config,
                           const ReturnDistributionTable* warm_start)
{
    config.validate();
    const bool use_warm = warm_start != nullptr && config.warm_start;
    if (use_warm && !(warm_start->grid() == grid))
        throw std::invalid_argument("warm-start table lives on a different grid");

    EvalResult result{use_warm ? *warm_start
                               : ReturnDistributionTable(grid, mdp.n_states(), mdp.n_actions()),
                       0, 0.0, {}, StopReason::MaxSweeps, false};
    require_compatible(result.table, mdp, policy);
    result.grid_overflow = !grid_covers_returns(grid, mdp);

    Rng rng(config.td_seed);
    if (config.mode == EvalMode::SampleBased) {
        const auto terminal = terminal_entry(grid);
        for (auto s : mdp.terminals())
            for (std::size_t a = 0; a < mdp.n_actions(); ++a)
                std::copy(terminal.begin(), terminal.end(), result.table.entry(s, a).begin());
    }

    const std::size_t limit = config.fixed_sweeps > 0 ? config.fixed_sweeps : config.max_sweeps;
    double previous = std::numeric_limits<double>::infinity();
    std::size_t stalled = 0;
    result.stop_reason = config.fixed_sweeps > 0 ? StopReason::FixedSweeps : StopReason::MaxSweeps;
    for (std::size_t sweep = 1; sweep <= limit; ++sweep) {
        auto next = config.mode == EvalMode::ModelBased
                        ? bellman_backup(result.table, mdp, policy)
                        : td_sweep(result.table, mdp, policy, config.td_step_size, rng);
        const double delta = sup_cramer_distance(result.table, next);
        result.table = std::move(next);
        result.residual_history.push_back(delta);
        result.sweeps_used = sweep;
        result.final_residual = delta;
        if (config.fixed_sweeps > 0)
            continue;
        if (delta < config.tolerance) {
            result.stop_reason = StopReason::Tolerance;
            break;
        }
        stalled = delta >= previous ? stalled + 1 : 0;
        if (stalled >= config.early_stop_patience) {
            result.stop_reason = StopReason::EarlyStop;
            break;
        }
        previous = delta;
    }
    return result;
}

std::size_t scheduled_sweeps(double kappa, std::size_t n_atoms, std::size_t trajectory_length)
{
    if (!(kappa > 0.0))
        throw std::invalid_argument("schedule constant kappa must be positive");
    const double k = std::ceil(kappa * static_cast<double>(n_atoms) *
                               static_cast<double>(trajectory_length + 1));
    return std::max<std::size_t>(1, static_cast<std::size_t>(k));
}

void write_residual_csv(std::ostream& out, std::span<const double> residuals)
{
    out << "sweep,residual\n";
    char buf[64];
    for (std::size_t k = 0; k < residuals.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", k + 1, residuals[k]);
        out << buf;
    }
}

}  // namespace cdpg
