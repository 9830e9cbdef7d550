#include "cdpg/categorical.hpp"
#include "cdpg/mdp.hpp"
#include "oracles.hpp"

#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

using namespace cdpg;

namespace {

CategoricalDistribution random_distribution(const SupportGrid& grid, Rng& rng)
{
    std::exponential_distribution<double> e(1.0);
    std::vector<double> p(grid.size());
    for (auto& v : p)
        v = e(rng);
    return CategoricalDistribution::renormalized(grid, p);
}

double total(std::span<const double> w)
{
    return std::accumulate(w.begin(), w.end(), 0.0);
}

}  // namespace

TEST_CASE("grid construction and atoms")
{
    const SupportGrid g(0.0, 10.0, 11);
    CHECK(g.spacing() == doctest::Approx(1.0));
    CHECK(g.atom(0) == 0.0);
    CHECK(g.atom(10) == 10.0);
    CHECK(g.atom(3) == doctest::Approx(3.0));
    CHECK(g.nearest_atom(-3.0) == 0);
    CHECK(g.nearest_atom(4.4) == 4);
    CHECK(g.nearest_atom(99.0) == 10);

    CHECK_THROWS_AS(SupportGrid(0.0, 10.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(SupportGrid(5.0, 5.0, 3), std::invalid_argument);
    CHECK_THROWS_AS(SupportGrid(6.0, 5.0, 3), std::invalid_argument);

    const std::vector<double> uniform_atoms{1.0, 2.0, 3.0, 4.0};
    CHECK(SupportGrid::from_atoms(uniform_atoms) == SupportGrid(1.0, 4.0, 4));
    const std::vector<double> uneven{0.0, 1.0, 3.0};
    CHECK_THROWS_AS(SupportGrid::from_atoms(uneven), std::invalid_argument);
}

TEST_CASE("distribution validation")
{
    const SupportGrid g(0.0, 2.0, 3);
    CHECK_NOTHROW(CategoricalDistribution(g, {0.2, 0.3, 0.5}));
    CHECK_THROWS_AS(CategoricalDistribution(g, {0.2, 0.3, 0.4}), std::invalid_argument);
    CHECK_THROWS_AS(CategoricalDistribution(g, {-0.1, 0.6, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(CategoricalDistribution(g, {0.5, 0.5}), std::invalid_argument);
    const auto r = CategoricalDistribution::renormalized(g, {1.0, 1.0, 2.0});
    CHECK(r[2] == doctest::Approx(0.5));
}

TEST_CASE("project_dirac examples")
{
    const SupportGrid g(0.0, 10.0, 11);
    CHECK(project_dirac(g, -5.0, 1.0) == std::vector<AtomWeight>{{0, 1.0}});
    const auto mid = project_dirac(g, 3.5, 1.0);
    REQUIRE(mid.size() == 2);
    CHECK(mid[0].index == 3);
    CHECK(mid[0].weight == doctest::Approx(0.5));
    CHECK(mid[1].index == 4);
    CHECK(mid[1].weight == doctest::Approx(0.5));
    CHECK(project_dirac(g, 7.0, 1.0) == std::vector<AtomWeight>{{7, 1.0}});
    CHECK(project_dirac(g, 25.0, 1.0) == std::vector<AtomWeight>{{10, 1.0}});

    const auto neg = project_dirac(g, 2.25, -2.0);
    CHECK(neg[0].weight + neg[1].weight == doctest::Approx(-2.0));

    CHECK_THROWS_AS(project_dirac(g, std::nan(""), 1.0), std::invalid_argument);
    CHECK_THROWS_AS(project_dirac(g, 1.0, INFINITY), std::invalid_argument);
}

TEST_CASE("project_dirac matches the triangular kernel and preserves the mean in range")
{
    Rng rng(3);
    const SupportGrid g(-2.0, 7.0, 19);
    const oracle::Grid og{-2.0, 7.0, 19};
    std::uniform_real_distribution<double> u(-5.0, 10.0);
    for (int k = 0; k < 500; ++k) {
        const double y = u(rng);
        std::vector<double> dense(g.size(), 0.0);
        for (const auto& w : project_dirac(g, y, 1.0))
            dense[w.index] += w.weight;
        const auto expected = oracle::project(og, y);
        for (std::size_t i = 0; i < g.size(); ++i)
            CHECK(dense[i] == doctest::Approx(expected[i]).epsilon(1e-12));
        CHECK(total(dense) == doctest::Approx(1.0).epsilon(1e-14));
        const double mean = measure_mean(g, dense);
        if (y >= g.z_min() && y <= g.z_max())
            CHECK(std::abs(mean - y) < 1e-12);
        else
            CHECK(mean == doctest::Approx(std::clamp(y, g.z_min(), g.z_max())));
    }
}

TEST_CASE("pushforward_project examples and linearity")
{
    const SupportGrid g(0.0, 10.0, 11);
    const auto pushed = pushforward_project(CategoricalDistribution::dirac(g, 0), 2.5, 0.0);
    CHECK(pushed[2] == doctest::Approx(0.5));
    CHECK(pushed[3] == doctest::Approx(0.5));

    // On-grid relocation: c = 2, gamma = 0.5 maps even atoms onto atoms.
    std::vector<double> on_grid(11, 0.0);
    on_grid[4] = 0.25;
    on_grid[8] = 0.75;
    const auto moved = pushforward_project(g, on_grid, 2.0, 0.5);
    CHECK(moved[4] == doctest::Approx(0.25));
    CHECK(moved[6] == doctest::Approx(0.75));

    Rng rng(5);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int k = 0; k < 50; ++k) {
        std::vector<double> mu(11), nu(11);
        for (std::size_t i = 0; i < 11; ++i) {
            mu[i] = n01(rng);
            nu[i] = n01(rng);
        }
        const double a = n01(rng);
        const double b = n01(rng);
        const double c = 3.0 * n01(rng);
        const double gamma = 0.9;
        std::vector<double> combo(11);
        for (std::size_t i = 0; i < 11; ++i)
            combo[i] = a * mu[i] + b * nu[i];
        const auto lhs = pushforward_project(g, combo, c, gamma);
        const auto pm = pushforward_project(g, mu, c, gamma);
        const auto pn = pushforward_project(g, nu, c, gamma);
        for (std::size_t i = 0; i < 11; ++i)
            CHECK(lhs[i] == doctest::Approx(a * pm[i] + b * pn[i]).epsilon(1e-12));
        CHECK(total(lhs) == doctest::Approx(total(combo)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(ProjectionPlan(g, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("pushforward_project matches the atom-by-atom oracle")
{
    Rng rng(17);
    const SupportGrid g(0.0, 20.0, 41);
    const oracle::Grid og{0.0, 20.0, 41};
    std::uniform_real_distribution<double> u(-3.0, 25.0);
    for (int k = 0; k < 30; ++k) {
        const auto d = random_distribution(g, rng);
        const double c = u(rng);
        const double gamma = std::uniform_real_distribution<double>(0.0, 0.99)(rng);
        const auto lib = pushforward_project(d, c, gamma);
        std::vector<double> ref(g.size(), 0.0);
        oracle::push_add(og, {d.probs().begin(), d.probs().end()}, c, gamma, 1.0, ref);
        for (std::size_t i = 0; i < g.size(); ++i)
            CHECK(lib[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("on-the-fly pushforward agrees with the precomputed plan")
{
    Rng rng(23);
    const SupportGrid g(-2.0, 10.0, 25);
    std::uniform_real_distribution<double> u(-6.0, 14.0);
    for (int k = 0; k < 30; ++k) {
        const auto d = random_distribution(g, rng);
        const double c = u(rng);
        const double gamma = std::uniform_real_distribution<double>(0.0, 0.99)(rng);
        std::vector<double> planned(g.size(), 0.0);
        std::vector<double> direct(g.size(), 0.0);
        ProjectionPlan(g, c, gamma).accumulate(d.probs(), planned, 0.7);
        accumulate_pushforward(g, c, gamma, d.probs(), direct, 0.7);
        CHECK(planned == direct);
    }
}

TEST_CASE("cdf examples")
{
    const SupportGrid g4(0.0, 3.0, 4);
    for (double v : cdf(CategoricalDistribution::dirac(g4, 0)))
        CHECK(v == 1.0);
    const auto u = cdf(CategoricalDistribution::uniform(g4));
    CHECK(u[0] == doctest::Approx(0.25));
    CHECK(u[1] == doctest::Approx(0.5));
    CHECK(u[2] == doctest::Approx(0.75));
    CHECK(u[3] == doctest::Approx(1.0));

    Rng rng(2);
    const SupportGrid g(0.0, 1.0, 30);
    const auto f = cdf(random_distribution(g, rng));
    for (std::size_t i = 1; i < f.size(); ++i)
        CHECK(f[i] >= f[i - 1]);
    CHECK(f.back() == doctest::Approx(1.0));
}

TEST_CASE("quantile_atom examples")
{
    const SupportGrid g4(0.0, 3.0, 4);
    for (double level : {0.01, 0.5, 1.0}) {
        const auto q = quantile_atom(CategoricalDistribution::dirac(g4, 2), level);
        CHECK(q.index == 2);
        CHECK(q.value == doctest::Approx(2.0));
    }
    CHECK(quantile_atom(CategoricalDistribution::uniform(g4), 0.5).index == 1);
    const SupportGrid g3(0.0, 2.0, 3);
    CHECK(quantile_atom(CategoricalDistribution(g3, {0.2, 0.3, 0.5}), 0.9).index == 2);
    CHECK_THROWS_AS(quantile_atom(CategoricalDistribution::uniform(g4), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(quantile_atom(CategoricalDistribution::uniform(g4), 1.5), std::invalid_argument);
}

TEST_CASE("cramer and wasserstein distances")
{
    const SupportGrid g(0.0, 5.0, 6);
    const auto d0 = CategoricalDistribution::dirac(g, 0);
    const auto d1 = CategoricalDistribution::dirac(g, 1);
    const auto d2 = CategoricalDistribution::dirac(g, 2);
    CHECK(cramer_distance(d0, d0) == 0.0);
    CHECK(cramer_distance(d0, d1) == doctest::Approx(1.0));
    CHECK(wasserstein1_distance(d1, d1) == 0.0);
    CHECK(wasserstein1_distance(d0, d2) == doctest::Approx(2.0));

    const SupportGrid other(0.0, 6.0, 6);
    CHECK_THROWS_AS(cramer_distance(d0, CategoricalDistribution::dirac(other, 0)), std::invalid_argument);
    CHECK_THROWS_AS(wasserstein1_distance(d0, CategoricalDistribution::dirac(other, 0)),
                    std::invalid_argument);

    Rng rng(9);
    const SupportGrid big(0.0, 10.0, 21);
    for (int k = 0; k < 100; ++k) {
        const auto a = random_distribution(big, rng);
        const auto b = random_distribution(big, rng);
        const auto c = random_distribution(big, rng);
        CHECK(cramer_distance(a, b) == doctest::Approx(cramer_distance(b, a)).epsilon(1e-14));
        CHECK(cramer_distance(a, c) <= cramer_distance(a, b) + cramer_distance(b, c) + 1e-12);
        CHECK(wasserstein1_distance(a, b) > 0.0);
        CHECK(wasserstein1_distance(a, c) <=
              wasserstein1_distance(a, b) + wasserstein1_distance(b, c) + 1e-12);
    }
}

TEST_CASE("measure_mean examples")
{
    const SupportGrid g(0.0, 10.0, 11);
    CHECK(measure_mean(CategoricalDistribution::dirac(g, 7)) == doctest::Approx(7.0));
    const SupportGrid two(0.0, 10.0, 2);
    CHECK(measure_mean(CategoricalDistribution::uniform(two)) == doctest::Approx(5.0));
    const SupportGrid unit(0.0, 1.0, 2);
    const std::vector<double> signed_row{-1.0, 1.0};
    CHECK(measure_mean(unit, signed_row) == doctest::Approx(1.0));
}

TEST_CASE("signed gradient measure arithmetic")
{
    const SupportGrid g(0.0, 2.0, 3);
    SignedGradientMeasure a(g, 2);
    a.row(0)[0] = -1.0;
    a.row(0)[2] = 1.0;
    SignedGradientMeasure b(g, 2);
    b.row(1)[1] = 0.5;
    a += b;
    a *= 2.0;
    CHECK(a.row(0)[2] == doctest::Approx(2.0));
    CHECK(a.row(1)[1] == doctest::Approx(1.0));
    CHECK(a.max_row_mass() == doctest::Approx(1.0));
    CHECK_THROWS_AS(a += SignedGradientMeasure(g, 3), std::invalid_argument);
}
