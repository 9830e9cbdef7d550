#include "cdpg/history.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace cdpg {

std::size_t TrainingHistory::quantile_ties() const
{
    return static_cast<std::size_t>(std::count_if(
        records.begin(), records.end(), [](const IterationRecord& r) { return r.quantile_tie; }));
}

std::optional<IterationRecord> TrainingHistory::first_below(double threshold) const
{
    for (const auto& r : records)
        if (r.divergence < threshold)
            return r;
    return std::nullopt;
}

void TrainingHistory::write_csv(std::ostream& out) const
{
    out << "iteration,cum_trajectories,eval_sweeps,risk_value,grad_norm,divergence,wall_time_ms\n";
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.12g,%.12g,%.12g,%.3f\n", r.iteration,
                      r.cum_trajectories, r.eval_sweeps, r.risk_value, r.grad_norm, r.divergence,
                      r.wall_time_ms);
        out << buf;
    }
}

double l2_norm(const std::vector<double>& v)
{
    double total = 0.0;
    for (double x : v)
        total += x * x;
    return std::sqrt(total);
}

}  // namespace cdpg
