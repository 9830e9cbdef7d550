#include "cdpg/categorical.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cdpg {

namespace {

constexpr double kSimplexTolerance = 1e-9;

// Lower bracketing atom of y and the share of mass that goes to the atom above it.
struct Bracket {
    std::size_t lower;
    double frac;
};

Bracket bracket(const SupportGrid& grid, double y)
{
    const std::size_t last = grid.size() - 1;
    if (y <= grid.z_min())
        return {0, 0.0};
    if (y >= grid.z_max())
        return {last, 0.0};
    const double position = (y - grid.z_min()) / grid.spacing();
    const auto lower = static_cast<std::size_t>(std::floor(position));
    if (lower >= last)
        return {last, 0.0};
    return {lower, position - static_cast<double>(lower)};
}

void require_same_grid(const SupportGrid& a, const SupportGrid& b)
{
    if (!(a == b))
        throw std::invalid_argument("distributions live on different support grids");
}

}  // namespace

SupportGrid::SupportGrid(double z_min, double z_max, std::size_t n_atoms)
    : z_min_(z_min), z_max_(z_max), n_atoms_(n_atoms), spacing_(0.0)
{
    if (!std::isfinite(z_min) || !std::isfinite(z_max))
        throw std::invalid_argument("support grid bounds must be finite");
    if (n_atoms < 2)
        throw std::invalid_argument("support grid needs at least 2 atoms");
    if (!(z_min < z_max))
        throw std::invalid_argument("support grid requires z_min < z_max");
    spacing_ = (z_max - z_min) / static_cast<double>(n_atoms - 1);
}

SupportGrid SupportGrid::from_atoms(std::span<const double> atoms)
{
    if (atoms.size() < 2)
        throw std::invalid_argument("support grid needs at least 2 atoms");
    SupportGrid grid(atoms.front(), atoms.back(), atoms.size());
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        if (std::abs(atoms[i] - grid.atom(i)) > 1e-9 * std::max(1.0, std::abs(grid.atom(i))))
            throw std::invalid_argument("support atoms are not uniformly spaced (atom " +
                                        std::to_string(i) + ")");
    }
    return grid;
}

std::vector<double> SupportGrid::atoms() const
{
    std::vector<double> out(n_atoms_);
    for (std::size_t i = 0; i < n_atoms_; ++i)
        out[i] = atom(i);
    return out;
}

std::size_t SupportGrid::nearest_atom(double y) const
{
    if (y <= z_min_)
        return 0;
    if (y >= z_max_)
        return n_atoms_ - 1;
    const auto idx = static_cast<std::size_t>(std::llround((y - z_min_) / spacing_));
    return std::min(idx, n_atoms_ - 1);
}

CategoricalDistribution::CategoricalDistribution(SupportGrid grid, std::vector<double> probs)
    : grid_(grid), probs_(std::move(probs))
{
    if (probs_.size() != grid_.size())
        throw std::invalid_argument("probability vector length " + std::to_string(probs_.size()) +
                                    " does not match grid size " + std::to_string(grid_.size()));
    double total = 0.0;
    for (double p : probs_) {
        if (!std::isfinite(p) || p < 0.0)
            throw std::invalid_argument("probabilities must be finite and non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > kSimplexTolerance)
        throw std::invalid_argument("probabilities sum to " + std::to_string(total) + ", not 1");
}

CategoricalDistribution CategoricalDistribution::dirac(const SupportGrid& grid,
                                                       std::size_t atom_index)
{
    if (atom_index >= grid.size())
        throw std::out_of_range("atom index outside grid");
    std::vector<double> probs(grid.size(), 0.0);
    probs[atom_index] = 1.0;
    return {grid, std::move(probs)};
}

CategoricalDistribution CategoricalDistribution::uniform(const SupportGrid& grid)
{
    return {grid, std::vector<double>(grid.size(), 1.0 / static_cast<double>(grid.size()))};
}

CategoricalDistribution CategoricalDistribution::renormalized(const SupportGrid& grid,
                                                              std::vector<double> probs)
{
    double total = 0.0;
    for (double& p : probs) {
        p = std::max(p, 0.0);
        total += p;
    }
    if (!(total > 0.0) || !std::isfinite(total))
        throw std::invalid_argument("cannot renormalize a measure with no positive mass");
    for (double& p : probs)
        p /= total;
    return {grid, std::move(probs)};
}

SignedGradientMeasure::SignedGradientMeasure(SupportGrid grid, std::size_t n_params)
    : grid_(grid), n_params_(n_params), weights_(n_params * grid.size(), 0.0)
{
}

SignedGradientMeasure& SignedGradientMeasure::operator+=(const SignedGradientMeasure& other)
{
    require_same_grid(grid_, other.grid_);
    if (other.n_params_ != n_params_)
        throw std::invalid_argument("gradient measures have different parameter counts");
    for (std::size_t k = 0; k < weights_.size(); ++k)
        weights_[k] += other.weights_[k];
    return *this;
}

SignedGradientMeasure& SignedGradientMeasure::operator*=(double scale)
{
    for (double& w : weights_)
        w *= scale;
    return *this;
}

double SignedGradientMeasure::max_row_mass() const
{
    double worst = 0.0;
    for (std::size_t j = 0; j < n_params_; ++j) {
        const auto r = row(j);
        worst = std::max(worst, std::abs(std::accumulate(r.begin(), r.end(), 0.0)));
    }
    return worst;
}

std::vector<AtomWeight> project_dirac(const SupportGrid& grid, double y, double mass)
{
    if (!std::isfinite(y) || !std::isfinite(mass))
        throw std::invalid_argument("project_dirac: location and mass must be finite");
    const auto [lower, frac] = bracket(grid, y);
    std::vector<AtomWeight> out;
    if (frac < 1.0)
        out.push_back({lower, mass * (1.0 - frac)});
    if (frac > 0.0)
        out.push_back({lower + 1, mass * frac});
    return out;
}

ProjectionPlan::ProjectionPlan(const SupportGrid& grid, double cost, double gamma)
    : cost_(cost), gamma_(gamma), lower_(grid.size()), lower_weight_(grid.size()),
      upper_weight_(grid.size())
{
    if (!std::isfinite(cost))
        throw std::invalid_argument("projection plan: cost must be finite");
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw std::invalid_argument("projection plan: gamma must lie in [0, 1)");
    const std::size_t last = grid.size() - 1;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double y = cost + gamma * grid.atom(i);
        if (!std::isfinite(y))
            throw std::invalid_argument("projection plan: shifted atom is not finite");
        const auto [lower, frac] = bracket(grid, y);
        // An upper index past the end never receives weight; keep it in range.
        if (lower == last) {
            lower_[i] = last - 1;
            lower_weight_[i] = 0.0;
            upper_weight_[i] = 1.0;
        } else {
            lower_[i] = lower;
            lower_weight_[i] = 1.0 - frac;
            upper_weight_[i] = frac;
        }
    }
}

void ProjectionPlan::accumulate(std::span<const double> in, std::span<double> out,
                                double scale) const
{
    const std::size_t n = lower_.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double m = scale * in[i];
        if (m == 0.0)
            continue;
        out[lower_[i]] += m * lower_weight_[i];
        out[lower_[i] + 1] += m * upper_weight_[i];
    }
}

void accumulate_pushforward(const SupportGrid& grid, double cost, double gamma,
                            std::span<const double> in, std::span<double> out, double scale)
{
    const std::size_t n = grid.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double m = scale * in[i];
        if (m == 0.0)
            continue;
        const auto [lower, frac] = bracket(grid, cost + gamma * grid.atom(i));
        out[lower] += m * (1.0 - frac);
        if (frac > 0.0)
            out[lower + 1] += m * frac;
    }
}

std::vector<double> pushforward_project(const SupportGrid& grid, std::span<const double> weights,
                                        double cost, double gamma)
{
    if (weights.size() != grid.size())
        throw std::invalid_argument("measure length does not match grid");
    std::vector<double> out(grid.size(), 0.0);
    ProjectionPlan(grid, cost, gamma).accumulate(weights, out);
    return out;
}

CategoricalDistribution pushforward_project(const CategoricalDistribution& dist, double cost,
                                            double gamma)
{
    return {dist.grid(), pushforward_project(dist.grid(), dist.probs(), cost, gamma)};
}

std::vector<double> cdf(const CategoricalDistribution& dist)
{
    std::vector<double> out(dist.size());
    std::partial_sum(dist.probs().begin(), dist.probs().end(), out.begin());
    return out;
}

QuantileAtom quantile_atom(const CategoricalDistribution& dist, double level)
{
    if (!(level > 0.0 && level <= 1.0))
        throw std::invalid_argument("quantile level must lie in (0, 1]");
    double running = 0.0;
    const std::size_t last = dist.size() - 1;
    for (std::size_t j = 0; j < last; ++j) {
        running += dist[j];
        if (running >= level)
            return {j, dist.grid().atom(j)};
    }
    return {last, dist.grid().atom(last)};
}

double cramer_norm(const SupportGrid& grid, std::span<const double> weights)
{
    double running = 0.0;
    double sum_sq = 0.0;
    for (std::size_t j = 0; j + 1 < weights.size(); ++j) {
        running += weights[j];
        sum_sq += running * running;
    }
    return std::sqrt(sum_sq * grid.spacing());
}

double cramer_distance(const CategoricalDistribution& a, const CategoricalDistribution& b)
{
    require_same_grid(a.grid(), b.grid());
    double fa = 0.0;
    double fb = 0.0;
    double sum_sq = 0.0;
    for (std::size_t j = 0; j + 1 < a.size(); ++j) {
        fa += a[j];
        fb += b[j];
        sum_sq += (fa - fb) * (fa - fb);
    }
    return std::sqrt(sum_sq * a.grid().spacing());
}

double wasserstein1_distance(const CategoricalDistribution& a, const CategoricalDistribution& b)
{
    require_same_grid(a.grid(), b.grid());
    double fa = 0.0;
    double fb = 0.0;
    double total = 0.0;
    for (std::size_t j = 0; j + 1 < a.size(); ++j) {
        fa += a[j];
        fb += b[j];
        total += std::abs(fa - fb);
    }
    return total * a.grid().spacing();
}

double measure_mean(const SupportGrid& grid, std::span<const double> weights)
{
    double mean = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        mean += weights[i] * grid.atom(i);
    return mean;
}

double measure_mean(const CategoricalDistribution& dist)
{
    return measure_mean(dist.grid(), dist.probs());
}

}  // namespace cdpg
