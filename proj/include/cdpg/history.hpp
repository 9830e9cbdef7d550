#pragma once

#include "cdpg/mdp.hpp"

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <vector>

namespace cdpg {

/// Target policy plus the state sequence the divergence is measured over.
struct PolicyReference {
    SoftmaxPolicy policy;
    std::vector<std::size_t> states;
};

struct IterationRecord {
    std::size_t iteration = 0;
    std::size_t cum_trajectories = 0;
    std::size_t eval_sweeps = 0;
    /// Risk of the policy the iteration started from.
    double risk_value = 0.0;
    double grad_norm = 0.0;
    /// Divergence of the updated policy to the reference; NaN without a reference.
    double divergence = 0.0;
    double wall_time_ms = 0.0;
    bool quantile_tie = false;
};

struct TrainingHistory {
    std::vector<IterationRecord> records;

    std::size_t quantile_ties() const;
    /// First record whose divergence is below `threshold`.
    std::optional<IterationRecord> first_below(double threshold) const;

    /// Columns: iteration,cum_trajectories,eval_sweeps,risk_value,grad_norm,divergence,wall_time_ms
    void write_csv(std::ostream& out) const;
};

struct TrainResult {
    SoftmaxPolicy policy;
    TrainingHistory history;
};

double l2_norm(const std::vector<double>& v);

}  // namespace cdpg
