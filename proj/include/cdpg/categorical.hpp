#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cdpg {

/// Uniform grid of return atoms z_i = z_min + i * spacing, i = 0 .. n_atoms - 1.
class SupportGrid {
public:
    SupportGrid(double z_min, double z_max, std::size_t n_atoms);

    /// Builds a grid from explicit atom locations. Throws unless the spacing is uniform
    /// (relative tolerance 1e-9).
    static SupportGrid from_atoms(std::span<const double> atoms);

    double z_min() const { return z_min_; }
    double z_max() const { return z_max_; }
    std::size_t size() const { return n_atoms_; }
    double spacing() const { return spacing_; }

    double atom(std::size_t i) const
    {
        return i + 1 == n_atoms_ ? z_max_ : z_min_ + static_cast<double>(i) * spacing_;
    }
    std::vector<double> atoms() const;
    std::size_t nearest_atom(double y) const;

    bool operator==(const SupportGrid& other) const = default;

private:
    double z_min_;
    double z_max_;
    std::size_t n_atoms_;
    double spacing_;
};

/// Probability vector over a SupportGrid. Entries are non-negative and sum to one
/// within 1e-9; nothing is renormalized unless asked for explicitly.
class CategoricalDistribution {
public:
    CategoricalDistribution(SupportGrid grid, std::vector<double> probs);

    static CategoricalDistribution dirac(const SupportGrid& grid, std::size_t atom_index);
    static CategoricalDistribution uniform(const SupportGrid& grid);
    /// Clips negatives to zero and rescales to unit mass.
    static CategoricalDistribution renormalized(const SupportGrid& grid, std::vector<double> probs);

    const SupportGrid& grid() const { return grid_; }
    std::span<const double> probs() const { return probs_; }
    double operator[](std::size_t i) const { return probs_[i]; }
    std::size_t size() const { return probs_.size(); }

private:
    SupportGrid grid_;
    std::vector<double> probs_;
};

/// Per-parameter signed measures on a grid: row j holds d p_i / d theta_j for every atom i.
class SignedGradientMeasure {
public:
    SignedGradientMeasure(SupportGrid grid, std::size_t n_params);

    const SupportGrid& grid() const { return grid_; }
    std::size_t n_params() const { return n_params_; }
    std::size_t n_atoms() const { return grid_.size(); }

    std::span<double> row(std::size_t param)
    {
        return {weights_.data() + param * grid_.size(), grid_.size()};
    }
    std::span<const double> row(std::size_t param) const
    {
        return {weights_.data() + param * grid_.size(), grid_.size()};
    }
    std::span<double> data() { return weights_; }
    std::span<const double> data() const { return weights_; }

    SignedGradientMeasure& operator+=(const SignedGradientMeasure& other);
    SignedGradientMeasure& operator*=(double scale);

    /// Largest |sum of a row| over all rows; zero for an exact gradient of a probability measure.
    double max_row_mass() const;

private:
    SupportGrid grid_;
    std::size_t n_params_;
    std::vector<double> weights_;
};

struct AtomWeight {
    std::size_t index;
    double weight;

    bool operator==(const AtomWeight&) const = default;
};

/// Projection of mass at y onto the grid: clamps outside [z_min, z_max], otherwise splits
/// linearly between the bracketing atoms. Zero-weight entries are omitted.
std::vector<AtomWeight> project_dirac(const SupportGrid& grid, double y, double mass);

/// Precomputed projection of the bootstrap map z -> cost + gamma * z for every atom.
/// Applying it is linear in the input measure and conserves total mass.
class ProjectionPlan {
public:
    ProjectionPlan(const SupportGrid& grid, double cost, double gamma);

    double cost() const { return cost_; }
    double gamma() const { return gamma_; }

    /// out += scale * (projected pushforward of in).
    void accumulate(std::span<const double> in, std::span<double> out, double scale = 1.0) const;

private:
    double cost_;
    double gamma_;
    std::vector<std::size_t> lower_;
    std::vector<double> lower_weight_;
    std::vector<double> upper_weight_;
};

/// out += scale * (projected pushforward of in under z -> cost + gamma * z), bracketing each atom
/// on the fly. Matches ProjectionPlan without building one, for costs that are used only once.
void accumulate_pushforward(const SupportGrid& grid, double cost, double gamma,
                            std::span<const double> in, std::span<double> out, double scale = 1.0);

std::vector<double> pushforward_project(const SupportGrid& grid, std::span<const double> weights,
                                        double cost, double gamma);
CategoricalDistribution pushforward_project(const CategoricalDistribution& dist, double cost,
                                            double gamma);

std::vector<double> cdf(const CategoricalDistribution& dist);

struct QuantileAtom {
    std::size_t index;
    double value;
};

/// Smallest atom whose CDF reaches `level` (level in (0, 1]).
QuantileAtom quantile_atom(const CategoricalDistribution& dist, double level);

double cramer_distance(const CategoricalDistribution& a, const CategoricalDistribution& b);
double wasserstein1_distance(const CategoricalDistribution& a, const CategoricalDistribution& b);

/// Cramér length of a signed measure's CDF over the grid; a norm on zero-mass measures.
double cramer_norm(const SupportGrid& grid, std::span<const double> weights);

double measure_mean(const SupportGrid& grid, std::span<const double> weights);
double measure_mean(const CategoricalDistribution& dist);

}  // namespace cdpg
