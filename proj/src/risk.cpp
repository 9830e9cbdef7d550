#include "cdpg/risk.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cdpg {

namespace {

constexpr double kTieTolerance = 1e-9;

// Index of the CVaR threshold atom; alpha = 1 covers the whole support.
std::size_t cvar_quantile_index(const CategoricalDistribution& dist, double alpha)
{
    if (alpha >= 1.0)
        return 0;
    return quantile_atom(dist, 1.0 - alpha).index;
}

}  // namespace

RiskMeasureSpec RiskMeasureSpec::cvar(double alpha)
{
    RiskMeasureSpec spec{RiskKind::CVaR, alpha};
    spec.validate();
    return spec;
}

RiskMeasureSpec RiskMeasureSpec::expectation()
{
    return {RiskKind::Expectation, 1.0};
}

RiskMeasureSpec RiskMeasureSpec::mean_semideviation(double alpha)
{
    RiskMeasureSpec spec{RiskKind::MeanSemideviation, alpha};
    spec.validate();
    return spec;
}

void RiskMeasureSpec::validate() const
{
    switch (kind) {
    case RiskKind::CVaR:
        if (!(alpha > 0.0 && alpha <= 1.0))
            throw std::invalid_argument("CVaR alpha must lie in (0, 1]");
        break;
    case RiskKind::MeanSemideviation:
        if (!(alpha >= 0.0 && alpha <= 1.0))
            throw std::invalid_argument("mean-semideviation alpha must lie in [0, 1]");
        break;
    case RiskKind::Expectation:
        break;
    }
}

std::string RiskMeasureSpec::name() const
{
    switch (kind) {
    case RiskKind::CVaR:
        return "cvar";
    case RiskKind::MeanSemideviation:
        return "mean_semideviation";
    case RiskKind::Expectation:
        break;
    }
    return "expectation";
}

RiskKind parse_risk_kind(const std::string& text)
{
    if (text == "cvar" || text == "CVaR")
        return RiskKind::CVaR;
    if (text == "expectation" || text == "mean")
        return RiskKind::Expectation;
    if (text == "mean_semideviation" || text == "msd")
        return RiskKind::MeanSemideviation;
    throw std::invalid_argument("unknown risk measure '" + text + "'");
}

double risk_value(const CategoricalDistribution& dist, const RiskMeasureSpec& spec)
{
    spec.validate();
    const SupportGrid& grid = dist.grid();
    switch (spec.kind) {
    case RiskKind::Expectation:
        return measure_mean(dist);
    case RiskKind::CVaR: {
        const double q = grid.atom(cvar_quantile_index(dist, spec.alpha));
        double tail = 0.0;
        for (std::size_t i = 0; i < dist.size(); ++i)
            tail += dist[i] * std::max(grid.atom(i) - q, 0.0);
        return q + tail / spec.alpha;
    }
    case RiskKind::MeanSemideviation: {
        const double mu = measure_mean(dist);
        double upper = 0.0;
        for (std::size_t i = 0; i < dist.size(); ++i) {
            const double d = std::max(grid.atom(i) - mu, 0.0);
            upper += dist[i] * d * d;
        }
        return mu + spec.alpha * std::sqrt(upper);
    }
    }
    throw std::logic_error("unhandled risk kind");
}

RiskGradient risk_gradient(const SignedGradientMeasure& grad, const CategoricalDistribution& dist,
                           const RiskMeasureSpec& spec)
{
    spec.validate();
    if (!(grad.grid() == dist.grid()))
        throw std::invalid_argument("gradient measure and distribution use different grids");
    const SupportGrid& grid = dist.grid();
    const std::size_t n_atoms = grid.size();
    RiskGradient out{std::vector<double>(grad.n_params(), 0.0)};

    auto mean_gradient = [&](std::size_t j) {
        const auto row = grad.row(j);
        double g = 0.0;
        for (std::size_t i = 0; i < n_atoms; ++i)
            g += row[i] * grid.atom(i);
        return g;
    };

    switch (spec.kind) {
    case RiskKind::Expectation:
        for (std::size_t j = 0; j < grad.n_params(); ++j)
            out.gradient[j] = mean_gradient(j);
        break;

    case RiskKind::CVaR: {
        const std::size_t qi = cvar_quantile_index(dist, spec.alpha);
        const double q = grid.atom(qi);
        if (spec.alpha < 1.0) {
            const auto F = cdf(dist);
            out.quantile_tie = std::abs(F[qi] - (1.0 - spec.alpha)) <= kTieTolerance;
        }
        for (std::size_t j = 0; j < grad.n_params(); ++j) {
            const auto row = grad.row(j);
            double g = 0.0;
            for (std::size_t i = qi + 1; i < n_atoms; ++i)
                g += row[i] * (grid.atom(i) - q);
            out.gradient[j] = g / spec.alpha;
        }
        break;
    }

    case RiskKind::MeanSemideviation: {
        const double mu = measure_mean(dist);
        std::vector<double> excess(n_atoms);
        double upper = 0.0;
        for (std::size_t i = 0; i < n_atoms; ++i) {
            excess[i] = std::max(grid.atom(i) - mu, 0.0);
            upper += dist[i] * excess[i] * excess[i];
        }
        const double sd = std::sqrt(upper);
        out.zero_semideviation = !(sd > 0.0);
        for (std::size_t j = 0; j < grad.n_params(); ++j) {
            const double dmu = mean_gradient(j);
            out.gradient[j] = dmu;
            if (out.zero_semideviation)
                continue;
            // d sd = (sum_i dp_i e_i^2 - 2 dmu sum_i p_i e_i) / (2 sd), e_i = (z_i - mu)_+
            const auto row = grad.row(j);
            double num = 0.0;
            for (std::size_t i = 0; i < n_atoms; ++i) {
                if (excess[i] == 0.0)
                    continue;
                num += excess[i] * (0.5 * row[i] * excess[i] - dist[i] * dmu);
            }
            out.gradient[j] += spec.alpha * num / sd;
        }
        break;
    }
    }
    return out;
}

std::size_t support_size_for_accuracy(double eps_opt, double l1_lipschitz, double z_min,
                                      double z_max, double gamma)
{
    if (!(eps_opt > 0.0))
        throw std::invalid_argument("target accuracy must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw std::invalid_argument("gamma must lie in [0, 1)");
    if (!(z_max > z_min))
        throw std::invalid_argument("support requires z_min < z_max");
    const double span = z_max - z_min;
    const double bound =
        l1_lipschitz * l1_lipschitz * span * span / ((1.0 - gamma) * eps_opt * eps_opt);
    // Shave a few ulps so exact integer bounds do not round up.
    const double n = std::ceil(bound * (1.0 - 1e-12));
    return std::max<std::size_t>(2, static_cast<std::size_t>(n));
}

}  // namespace cdpg
