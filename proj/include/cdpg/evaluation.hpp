#pragma once

#include "cdpg/categorical.hpp"
#include "cdpg/mdp.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace cdpg {

/// One categorical return distribution per (state, action), all on a shared grid.
class ReturnDistributionTable {
public:
    /// Every entry starts as a point mass on the atom nearest zero.
    ReturnDistributionTable(SupportGrid grid, std::size_t n_states, std::size_t n_actions);

    const SupportGrid& grid() const { return grid_; }
    std::size_t n_states() const { return n_states_; }
    std::size_t n_actions() const { return n_actions_; }
    std::size_t n_atoms() const { return grid_.size(); }

    std::span<const double> entry(std::size_t s, std::size_t a) const
    {
        return {probs_.data() + (s * n_actions_ + a) * grid_.size(), grid_.size()};
    }
    std::span<double> entry(std::size_t s, std::size_t a)
    {
        return {probs_.data() + (s * n_actions_ + a) * grid_.size(), grid_.size()};
    }
    CategoricalDistribution distribution(std::size_t s, std::size_t a) const;
    void set_entry(std::size_t s, std::size_t a, const CategoricalDistribution& dist);

    std::span<const double> data() const { return probs_; }
    std::span<double> data() { return probs_; }

    /// Worst deviation of any entry from the probability simplex (negative mass or total != 1).
    double max_simplex_violation() const;

private:
    SupportGrid grid_;
    std::size_t n_states_;
    std::size_t n_actions_;
    std::vector<double> probs_;
};

enum class EvalMode { ModelBased, SampleBased };

struct EvalConfig {
    std::size_t max_sweeps = 2000;
    /// Stop once the sup-Cramér distance between successive sweeps drops below this.
    double tolerance = 1e-8;
    bool warm_start = true;
    /// Stop after this many consecutive sweeps without a decrease in the sweep distance.
    std::size_t early_stop_patience = 5;
    EvalMode mode = EvalMode::ModelBased;
    double td_step_size = 0.1;
    std::uint64_t td_seed = 0;
    /// When non-zero, run exactly this many sweeps and ignore the stopping rules.
    std::size_t fixed_sweeps = 0;

    void validate() const;
    bool operator==(const EvalConfig&) const = default;
};

enum class StopReason { Tolerance, EarlyStop, MaxSweeps, FixedSweeps };

struct EvalResult {
    ReturnDistributionTable table;
    std::size_t sweeps_used = 0;
    /// Sup-Cramér distance between the last two iterates.
    double final_residual = 0.0;
    std::vector<double> residual_history;
    StopReason stop_reason = StopReason::MaxSweeps;
    /// Set when c_min/(1-gamma) or c_max/(1-gamma) falls outside the grid.
    bool grid_overflow = false;
};

/// Mixture sum_a pi(a|s) eta^(s,a).
CategoricalDistribution state_distribution(const ReturnDistributionTable& table,
                                           const SoftmaxPolicy& policy, std::size_t s);

/// One synchronous sweep of the projected distributional Bellman operator.
/// Entries are computed in parallel; terminal entries become the projected point mass at 0.
ReturnDistributionTable bellman_backup(const ReturnDistributionTable& table, const TabularMdp& mdp,
                                       const SoftmaxPolicy& policy);

/// Straightforward single-threaded sweep that projects atom by atom. Kept as the reference for
/// tests and benchmarks.
ReturnDistributionTable bellman_backup_serial(const ReturnDistributionTable& table,
                                              const TabularMdp& mdp, const SoftmaxPolicy& policy);

double sup_cramer_distance(const ReturnDistributionTable& a, const ReturnDistributionTable& b);
double sup_wasserstein1_distance(const ReturnDistributionTable& a,
                                 const ReturnDistributionTable& b);

/// sup over (s, a) of the Cramér distance between an entry and its one-step backup.
double bellman_residual(const ReturnDistributionTable& table, const TabularMdp& mdp,
                        const SoftmaxPolicy& policy);

bool grid_covers_returns(const SupportGrid& grid, const TabularMdp& mdp);

/// Iterates backups from `warm_start` (when given and enabled) or from the cold table.
EvalResult evaluate_policy(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                           const SupportGrid& grid, const EvalConfig& config,
                           const ReturnDistributionTable* warm_start = nullptr);

struct SampledTransition {
    std::size_t state;
    std::size_t action;
    double cost;
    std::size_t next_state;
};

/// Online categorical TD: entry <- (1 - step) * entry + step * Pi(b_{c,gamma})# eta^{s'}.
/// Writes the updated entry into the table and returns it.
CategoricalDistribution categorical_td_update(ReturnDistributionTable& table,
                                              const SampledTransition& transition,
                                              const SoftmaxPolicy& policy, double gamma,
                                              double step_size);

/// Sweep count of the inexact-evaluation schedule k = ceil(kappa * N * (|tau| + 1)), at least 1.
std::size_t scheduled_sweeps(double kappa, std::size_t n_atoms, std::size_t trajectory_length);

/// CSV with header "sweep,residual".
void write_residual_csv(std::ostream& out, std::span<const double> residuals);

}  // namespace cdpg
