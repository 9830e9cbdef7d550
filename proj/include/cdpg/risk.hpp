#pragma once

#include "cdpg/categorical.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace cdpg {

enum class RiskKind { CVaR, Expectation, MeanSemideviation };

/// Coherent risk measure of a cost distribution. For CVaR, alpha is the tail fraction
/// (alpha = 1 is the mean); for mean-semideviation it weights the upper semideviation.
struct RiskMeasureSpec {
    RiskKind kind = RiskKind::Expectation;
    double alpha = 1.0;

    static RiskMeasureSpec cvar(double alpha);
    static RiskMeasureSpec expectation();
    static RiskMeasureSpec mean_semideviation(double alpha);

    void validate() const;
    std::string name() const;
    bool operator==(const RiskMeasureSpec&) const = default;
};

RiskKind parse_risk_kind(const std::string& text);

/// Exact risk of a categorical cost distribution.
///   CVaR:  q + (1/alpha) * sum_i p_i (z_i - q)_+, q the atom at CDF level 1 - alpha
///   MSD:   mu + alpha * sqrt(sum_i p_i (z_i - mu)_+^2)
double risk_value(const CategoricalDistribution& dist, const RiskMeasureSpec& spec);

struct RiskGradient {
    std::vector<double> gradient;
    /// CDF at the CVaR quantile atom equals 1 - alpha within 1e-9, so the gradient is one-sided.
    bool quantile_tie = false;
    /// Semideviation was zero; its gradient term was dropped.
    bool zero_semideviation = false;
};

/// Chain rule from d p_i / d theta to d rho / d theta.
RiskGradient risk_gradient(const SignedGradientMeasure& grad, const CategoricalDistribution& dist,
                           const RiskMeasureSpec& spec);

/// Support size N >= L1^2 (z_max - z_min)^2 / ((1 - gamma) eps^2) that bounds the optimality gap
/// of the categorical problem by eps. Never below 2. For CVaR, L1 = 1/alpha.
std::size_t support_size_for_accuracy(double eps_opt, double l1_lipschitz, double z_min,
                                      double z_max, double gamma);

}  // namespace cdpg
