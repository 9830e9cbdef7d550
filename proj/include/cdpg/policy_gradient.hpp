#pragma once

#include "cdpg/categorical.hpp"
#include "cdpg/evaluation.hpp"
#include "cdpg/history.hpp"
#include "cdpg/mdp.hpp"
#include "cdpg/risk.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace cdpg {

/// g(s) = sum_a grad pi(a|s) eta^(s,a): one signed measure per policy parameter.
SignedGradientMeasure state_gradient_measure(const ReturnDistributionTable& table,
                                             const SoftmaxPolicy& policy, std::size_t s);

/// Single-trajectory estimate of the gradient of the start-state return distribution:
///
///   g(s_0) + sum_{h=1}^{|tau|} Pi(b_{c_0})# Pi(b_{c_1})# ... Pi(b_{c_{h-1}})# g(s_h)
///
/// with a projection after every pushforward. Evaluated back to front so each step applies a
/// single projected pushforward; parameter rows are processed in parallel.
SignedGradientMeasure trajectory_gradient_measure(const Trajectory& trajectory,
                                                  const ReturnDistributionTable& table,
                                                  const SoftmaxPolicy& policy,
                                                  const TabularMdp& mdp);

/// Same quantity, computed prefix by prefix exactly as written above. O(|tau|^2); reference only.
SignedGradientMeasure trajectory_gradient_measure_reference(const Trajectory& trajectory,
                                                            const ReturnDistributionTable& table,
                                                            const SoftmaxPolicy& policy,
                                                            const TabularMdp& mdp);

/// Monte Carlo average of trajectory_gradient_measure over m rollouts from `start`.
SignedGradientMeasure measure_gradient(const TabularMdp& mdp, const SoftmaxPolicy& policy,
                                       const ReturnDistributionTable& table, std::size_t start,
                                       std::size_t m, Rng& rng, std::size_t horizon_cap = 200);

/// Expectation of the trajectory estimator over all (untruncated) trajectories, solved as the
/// fixed point G(s) = g(s) + sum_a pi(a|s) sum_s' P(s'|s,a) Pi(b_{c,gamma})# G(s').
SignedGradientMeasure expected_gradient_measure(const TabularMdp& mdp,
                                                const SoftmaxPolicy& policy,
                                                const ReturnDistributionTable& table,
                                                std::size_t start, double tolerance = 1e-14,
                                                std::size_t max_iterations = 100000);

struct CdpgConfig {
    double step_size = 0.5;
    std::size_t iterations = 2000;
    std::size_t trajectories_per_iter = 1;
    SupportGrid grid{0.0, 120.0, 121};
    EvalConfig eval{};
    std::size_t start_state = 0;
    std::uint64_t rng_seed = 0;
    /// Stop once the risk-gradient norm falls below this; 0 disables the check.
    double grad_norm_stop = 0.0;
    std::size_t horizon_cap = 200;
    /// When positive, each evaluation runs ceil(kappa * N * (|tau| + 1)) sweeps instead of
    /// iterating to tolerance.
    double schedule_kappa = 0.0;
    /// Initial parameters; empty means all zeros (uniform policy).
    std::vector<double> initial_theta;
    bool record_wall_time = true;

    void validate(const TabularMdp& mdp) const;
};

/// Categorical distributional policy gradient: evaluate, estimate the measure gradient from
/// sampled trajectories, chain it through the risk measure, and take a descent step.
TrainResult cdpg_train(const TabularMdp& mdp, const RiskMeasureSpec& spec,
                       const CdpgConfig& config,
                       const std::optional<PolicyReference>& reference = std::nullopt);

}  // namespace cdpg
