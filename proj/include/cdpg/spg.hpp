#pragma once

#include "cdpg/history.hpp"
#include "cdpg/mdp.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace cdpg {

/// Likelihood-ratio CVaR policy gradient from sampled returns (no return-distribution model).
struct SpgConfig {
    std::size_t batch_size = 100;
    double step_size = 0.01;
    std::size_t iterations = 100;
    double alpha = 0.1;
    std::size_t horizon_cap = 200;
    std::uint64_t rng_seed = 0;
    std::size_t start_state = 0;
    /// Initial parameters; empty means all zeros.
    std::vector<double> initial_theta;
    bool record_wall_time = true;

    void validate(const TabularMdp& mdp) const;
};

struct SpgGradient {
    std::vector<double> gradient;
    /// Empirical VaR of the batch.
    double var = 0.0;
    /// Empirical CVaR of the batch, q + (1 / (m alpha)) sum_j (R_j - q)_+.
    double cvar = 0.0;
    /// All returns equal; the gradient is zero.
    bool degenerate = false;
};

/// Samples `batch_size` trajectories and returns
///   (1 / (m alpha)) sum_j score(tau_j) (R_j - q) 1{R_j >= q},
/// with q the ceil((1 - alpha) m)-th order statistic and score the summed grad log pi.
/// Rollouts use sub-generators seeded from `rng` and may run in parallel; the reduction order
/// is fixed.
SpgGradient spg_cvar_gradient(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                              const SpgConfig& config, Rng& rng);

TrainResult spg_train(const TabularMdp& mdp, const SpgConfig& config,
                      const std::optional<PolicyReference>& reference = std::nullopt);

}  // namespace cdpg
