#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "labelflow/data.hpp"
#include "labelflow/errors.hpp"
#include "labelflow/graph.hpp"
#include "labelflow/macro.hpp"
#include "support/oracles.hpp"

using namespace labelflow;

namespace {

DensityField uniform_density(const Grid& g) { return make_density(g, std::vector<double>(g.size(), 1.0)); }

BoundarySpec ends_1d(const Grid& g) { return {{{0}, {g.size() - 1}}, {{-1.0}, {1.0}}}; }

BoundarySpec columns_2d(const Grid& g) {
    BoundarySpec bc;
    bc.regions.resize(2);
    for (std::size_t j = 0; j < g.nodes(1); ++j) {
        bc.regions[0].push_back(g.index(0, j));
        bc.regions[1].push_back(g.index(g.nodes(0) - 1, j));
    }
    bc.values = {{-1.0}, {1.0}};
    return bc;
}

MacroProblem problem(DensityField rho, BoundarySpec bc, RunConfig cfg, double sigma = 1.0) {
    return MacroProblem{std::move(rho), std::move(bc), DoubleWell(), cfg, sigma};
}

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
    return m;
}

PointCloud free_cloud(std::size_t dim, std::vector<double> x) {
    const std::size_t n = x.size() / dim;
    return PointCloud(dim, std::move(x), n, {{}, {}});
}

}  // namespace

TEST_CASE("grid geometry") {
    const Grid g = Grid::line(-1.0, 1.0, 5);
    CHECK(g.h(0) == 0.5);
    CHECK(g.coord(3, 0) == 0.5);
    CHECK(g.volume(0) == 0.25);
    CHECK(g.volume(2) == 0.5);
    const Grid r = Grid::rect(0.0, 1.0, 3, 0.0, 2.0, 5);
    CHECK(r.size() == 15);
    CHECK(r.index(1, 2) == 7);
    CHECK(r.coord(7, 1) == 1.0);
    CHECK(r.volume(0) == doctest::Approx(0.25 * 0.5 * 0.5));
    CHECK_THROWS_AS(Grid::line(0.0, 1.0, 2), ValidationError);
    CHECK_THROWS_AS(Grid::line(1.0, 1.0, 5), ValidationError);
}

TEST_CASE("kde peak of a single standard normal") {
    const Grid g = Grid::line(-10.0, 10.0, 2001);
    const DensityField rho = kde_density(free_cloud(1, {0.0}), g, 1.0, 0.0);
    CHECK(rho.values[1000] == doctest::Approx(1.0 / std::sqrt(2 * std::numbers::pi)).epsilon(1e-9));
    CHECK(rho.integral() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("kde covariance is bandwidth times identity") {
    // Variance 0.04 gives a peak of 1/sqrt(2 pi 0.04).
    const Grid g = Grid::rect(-2.0, 2.0, 401, -2.0, 2.0, 401);
    const DensityField rho = kde_density(free_cloud(2, {0.0, 0.0}), g, 0.04, 0.0);
    CHECK(rho.values[g.index(200, 200)] == doctest::Approx(1.0 / (2 * std::numbers::pi * 0.04)).epsilon(1e-9));
}

TEST_CASE("kde symmetry and floor") {
    const Grid g = Grid::line(-1.0, 1.0, 201);
    const DensityField rho = kde_density(free_cloud(1, {-0.5, -0.2, 0.2, 0.5, 0.0}), g, 0.01, 0.0);
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(rho.values[k] == doctest::Approx(rho.values[g.size() - 1 - k]).epsilon(1e-12));

    const DensityField floored = kde_density(free_cloud(1, {-0.5, 0.6}), g, 0.005, 0.05);
    CHECK(*std::min_element(floored.values.begin(), floored.values.end()) >= 0.05);
    CHECK(floored.integral() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_THROWS_AS(kde_density(free_cloud(1, {0.0}), g, 0.0, 0.0), ValidationError);
    CHECK_THROWS_AS(kde_density(free_cloud(1, {0.0}), g, 0.1, 0.6), ValidationError);  // floor alone exceeds mass 1
}

TEST_CASE("boundary specs") {
    const Grid g = Grid::line(0.0, 1.0, 11);
    CHECK_NOTHROW(ends_1d(g).validate(g, 1));
    BoundarySpec touching{{{3}, {4}}, {{-1.0}, {1.0}}};
    CHECK_THROWS_AS(touching.validate(g, 1), ValidationError);
    BoundarySpec empty{{{}, {4}}, {{-1.0}, {1.0}}};
    CHECK_THROWS_AS(empty.validate(g, 1), ValidationError);

    const LabeledCloud lc = attach_labels(1, std::vector<double>{0.02, 0.5, 0.97}, {{0}, {2}});
    const BoundarySpec bc = anchor_regions(g, lc.cloud);
    CHECK(bc.regions[0] == std::vector<std::size_t>{0, 1});
    CHECK(bc.regions[1] == std::vector<std::size_t>{9, 10});
    const MacroField f = initial_field(g, 1, bc);
    CHECK(f.values[1] == -1.0);
    CHECK(f.values[5] == 0.0);
    CHECK(f.values[9] == 1.0);
}

TEST_CASE("1D constant density relaxes to the linear profile") {
    const Grid g = Grid::line(0.0, 1.0, 51);
    RunConfig cfg{1.0, 0.0, 1.0, 1e4};
    cfg.stationarity_tol = 1e-10;
    const MacroProblem p = problem(uniform_density(g), ends_1d(g), cfg);
    const MacroResult r = run_macro(initial_field(g, 1, p.bc), p);
    CHECK(r.stationary);
    double err = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) err = std::max(err, std::abs(r.final.values[k] - (2 * g.coord(k, 0) - 1)));
    CHECK(err <= 1e-6);
}

TEST_CASE("long implicit step reproduces the discrete harmonic interpolant") {
    // Variable density, Dirichlet at node 0 and node 30, Neumann at the right end.
    const Grid g = Grid::line(0.0, 1.0, 41);
    std::vector<double> rv(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) rv[k] = 1.0 + 0.6 * std::sin(3.0 * g.coord(k, 0));
    const DensityField rho = make_density(g, rv);
    const BoundarySpec bc{{{0}, {30}}, {{-1.0}, {1.0}}};
    const MacroProblem p = problem(rho, bc, RunConfig{1.0, 0.0, 1e12, 1e12});
    const MacroField u = macro_step_1d(initial_field(g, 1, bc), p);

    // Oracle: sum over faces a_{k+1/2} (u_{k+1} - u_k) - a_{k-1/2} (u_k - u_{k-1}) = 0 at nodes 1..29,
    // a = face mean of rho^2; the Neumann segment beyond node 30 is flat.
    const std::size_t m = 29;
    std::vector<std::vector<double>> a(m, std::vector<double>(m, 0.0));
    std::vector<double> b(m, 0.0);
    auto face = [&](std::size_t k) { return 0.5 * (rho.values[k] * rho.values[k] + rho.values[k + 1] * rho.values[k + 1]); };
    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t k = r + 1;
        a[r][r] = -(face(k - 1) + face(k));
        if (r > 0) a[r][r - 1] = face(k - 1);
        else b[r] -= face(k - 1) * -1.0;
        if (r + 1 < m) a[r][r + 1] = face(k);
        else b[r] -= face(k) * 1.0;
    }
    const auto x = oracle::dense_solve(a, b);
    for (std::size_t r = 0; r < m; ++r) CHECK(u.values[r + 1] == doctest::Approx(x[r]).epsilon(1e-9));
    for (std::size_t k = 30; k < g.size(); ++k) CHECK(u.values[k] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("2D constant density gives the separable linear profile") {
    const Grid g = Grid::rect(0.0, 1.0, 21, 0.0, 1.0, 17);
    RunConfig cfg{1.0, 0.0, 10.0, 1e4};
    cfg.stationarity_tol = 1e-9;
    MacroProblem p = problem(uniform_density(g), columns_2d(g), cfg);
    p.cg_tol = 1e-12;
    const MacroResult r = run_macro(initial_field(g, 1, p.bc), p);
    CHECK(r.stationary);
    double err = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) err = std::max(err, std::abs(r.final.values[k] - (2 * g.coord(k, 0) - 1)));
    CHECK(err <= 1e-5);
}

TEST_CASE("2D mirror equivariance") {
    const Grid g = Grid::rect(-1.0, 1.0, 25, 0.0, 1.0, 13);
    std::vector<double> rv(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double x = g.coord(k, 0);
        const double y = g.coord(k, 1);
        rv[k] = 0.2 + std::exp(-4 * (x - 0.5) * (x - 0.5) - y) + std::exp(-4 * (x + 0.5) * (x + 0.5) - y);
    }
    MacroProblem p = problem(make_density(g, rv), columns_2d(g), RunConfig{1.0, 2.0, 0.01, 0.5}, 0.1);
    p.cg_tol = 1e-13;
    MacroField u0 = initial_field(g, 1, p.bc);
    for (std::size_t k = 0; k < g.size(); ++k) {
        const std::size_t i = k % 25;
        if (i != 0 && i != 24) u0.values[k] = 0.3 * std::sin(3 * g.coord(k, 0)) * (1 + g.coord(k, 1));
    }
    const MacroResult r = run_macro(u0, p);
    for (std::size_t k = 0; k < g.size(); ++k) {
        const std::size_t i = k % 25;
        const std::size_t j = k / 25;
        CHECK(r.final.values[k] == doctest::Approx(-r.final.values[g.index(24 - i, j)]).epsilon(1e-8).scale(1.0));
    }
}

TEST_CASE("macro runs respect the range and pin Dirichlet nodes") {
    const GeneratedCloud gc = gen_two_gaussians({}, 3);
    const LabeledCloud lc = attach_labels(1, gc.coords, anchors_extremes(gc, 3));
    const Grid g = Grid::line(lc.cloud.box().lo[0], lc.cloud.box().hi[0], 121);
    const DensityField rho = kde_density(lc.cloud, g, 0.01, 1e-3);
    for (double kappa : {0.0, 1.0, 10.0}) {
        MacroProblem p = problem(rho, anchor_regions(g, lc.cloud), RunConfig{1.0, kappa, 0.002, 2.0},
                                 sigma_eta(KernelProfile::indicator(0.25), 1));
        MacroField u0 = initial_field(g, 1, p.bc);
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (u0.values[k] == 0.0) u0.values[k] = 0.9 * std::sin(37.0 * static_cast<double>(k));
        }
        MacroOptions opts;
        opts.snapshot_stride = 50;
        const MacroResult r = run_macro(u0, p, opts);
        CHECK(r.range_excess <= 1e-12);
        for (const MacroField& snap : r.snapshots) {
            for (std::size_t node : p.bc.regions[0]) CHECK(snap.values[node] == -1.0);
            for (std::size_t node : p.bc.regions[1]) CHECK(snap.values[node] == 1.0);
        }
        // Pure implicit diffusion is a gradient step of a convex quadratic.
        if (kappa == 0.0) CHECK(r.max_energy_increase <= 1e-12);
    }
}

TEST_CASE("macro energy dissipation") {
    const GeneratedCloud gc = gen_two_gaussians({}, 3);
    const LabeledCloud lc = attach_labels(1, gc.coords, anchors_extremes(gc, 3));
    const Grid g = Grid::line(lc.cloud.box().lo[0], lc.cloud.box().hi[0], 121);
    const DensityField rho = kde_density(lc.cloud, g, 0.01, 1e-3);
    const double sig = sigma_eta(KernelProfile::indicator(0.25), 1);
    auto increase = [&](double kappa, double frac, double t_end) {
        MacroProblem p = problem(rho, anchor_regions(g, lc.cloud), RunConfig{1.0, kappa, 1.0, t_end}, sig);
        p.config.dt = frac * p.reaction_bound();
        const MacroResult r = run_macro(initial_field(g, 1, p.bc), p, {});
        for (std::size_t k = 1; k < r.trace.size(); ++k) {
            const double e = r.trace.energies[k - 1];
            CHECK(r.trace.energies[k] <= e + 1e-8 * std::max(1.0, std::abs(e)));
        }
        return r.max_energy_increase;
    };
    SUBCASE("kappa 1, near the reaction bound") { CHECK(increase(1.0, 0.9, 20.0) <= 1e-8); }
    SUBCASE("kappa 10") { CHECK(increase(10.0, 0.25, 20.0) <= 1e-8); }
    SUBCASE("kappa 100") { CHECK(increase(100.0, 0.02, 2.0) <= 1e-8); }
}

TEST_CASE("splitting energy creep shrinks with the step") {
    // Explicit reaction after implicit diffusion can raise the Dirichlet term
    // by O(dt^2); the creep must vanish under refinement.
    const GeneratedCloud gc = gen_two_gaussians({}, 3);
    const LabeledCloud lc = attach_labels(1, gc.coords, anchors_extremes(gc, 3));
    const Grid g = Grid::line(lc.cloud.box().lo[0], lc.cloud.box().hi[0], 121);
    const DensityField rho = kde_density(lc.cloud, g, 0.01, 1e-3);
    std::vector<double> inc;
    for (double frac : {0.9, 0.45, 0.225}) {
        MacroProblem p = problem(rho, anchor_regions(g, lc.cloud), RunConfig{1.0, 100.0, 1.0, 2.0},
                                 sigma_eta(KernelProfile::indicator(0.25), 1));
        p.config.dt = frac * p.reaction_bound();
        inc.push_back(run_macro(initial_field(g, 1, p.bc), p, {}).max_energy_increase);
    }
    MESSAGE("relative creep at 0.9/0.45/0.225 of the bound: " << inc[0] << " " << inc[1] << " " << inc[2]);
    CHECK(inc[1] < 0.5 * inc[0]);
    CHECK(inc[2] < 0.5 * inc[1]);
}

TEST_CASE("time rescaling covariance at the scheme level") {
    const Grid g1 = Grid::line(0.0, 1.0, 81);
    const Grid g2 = Grid::rect(0.0, 1.0, 17, 0.0, 1.0, 9);
    for (const Grid& g : {g1, g2}) {
        std::vector<double> rv(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) rv[k] = 0.5 + g.coord(k, 0) * g.coord(k, 0);
        const BoundarySpec bc = g.dim() == 1 ? ends_1d(g) : columns_2d(g);
        MacroProblem a = problem(make_density(g, rv), bc, RunConfig{1.0, 2.0, 0.01, 0.5}, 0.05);
        MacroProblem b = problem(make_density(g, rv), bc, RunConfig{10.0, 20.0, 0.001, 0.05}, 0.05);
        a.cg_tol = b.cg_tol = 1e-14;
        MacroField u = initial_field(g, 1, bc);
        MacroField v = u;
        for (int k = 0; k < 50; ++k) {
            u = macro_step(u, a);
            v = macro_step(v, b);
        }
        CHECK(sup_diff(u.values, v.values) <= 1e-10);
    }
}

TEST_CASE("grid refinement is second order") {
    auto solve = [](std::size_t nodes) {
        const Grid g = Grid::line(0.0, 1.0, nodes);
        std::vector<double> rv(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) rv[k] = 1.0 + 0.5 * std::sin(std::numbers::pi * g.coord(k, 0));
        const MacroProblem p = problem(make_density(g, rv), ends_1d(g), RunConfig{1.0, 0.0, 1e12, 1e12});
        MacroField u = initial_field(g, 1, p.bc);
        for (int k = 0; k < 3; ++k) u = macro_step_1d(u, p);
        return u.values;
    };
    const auto c = solve(21);
    const auto m = solve(41);
    const auto f = solve(81);
    double e1 = 0.0;
    double e2 = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) e1 = std::max(e1, std::abs(c[k] - m[2 * k]));
    for (std::size_t k = 0; k < m.size(); ++k) e2 = std::max(e2, std::abs(m[k] - f[2 * k]));
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.15));
}

TEST_CASE("continuum energy") {
    const Grid g = Grid::line(-1.0, 1.0, 101);
    const DensityField rho = uniform_density(g);
    const DoubleWell w;
    MacroField f{g, 1, std::vector<double>(g.size(), 1.0), 0.0};
    CHECK(continuum_energy(f, rho, w, 1.0, 3.0, 0.2) == 0.0);
    std::fill(f.values.begin(), f.values.end(), 0.0);
    CHECK(continuum_energy(f, rho, w, 1.0, 1.0, 0.2) == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t k = 0; k < g.size(); ++k) f.values[k] = 0.3 * g.coord(k, 0);
    // (g s / 2) rho^2 slope^2 |D| + kappa int rho W(u)
    const double kappa_term = [&] {
        double s = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) s += g.volume(k) * 0.5 * w.value(f.values[k]);
        return s;
    }();
    CHECK(continuum_energy(f, rho, w, 2.0, 0.7, 0.2) ==
          doctest::Approx(0.5 * 2.0 * 0.2 * 0.25 * 0.09 * 2.0 + 0.7 * kappa_term).epsilon(1e-12));
    CHECK(continuum_energy(f, rho, w, 2.0, 0.0, 0.2, 0.5) ==
          doctest::Approx(0.5 * 2.0 * 0.2 * 0.75 * 0.09 * 2.0).epsilon(1e-12));
}

TEST_CASE("nonlocal energy approaches the local one at rate eps^2") {
    const Grid g = Grid::line(-0.5, 0.5, 1001);
    const DensityField rho = uniform_density(g);
    MacroField f{g, 1, std::vector<double>(g.size()), 0.0};
    for (std::size_t k = 0; k < g.size(); ++k) f.values[k] = std::sin(std::numbers::pi * g.coord(k, 0));
    const auto kernel = KernelProfile::gaussian(0.25);
    const double local = continuum_energy(f, rho, DoubleWell(), 1.0, 0.0, sigma_eta(kernel, 1));
    std::vector<double> err;
    for (double eps : {0.2, 0.1, 0.05}) {
        err.push_back(std::abs(nonlocal_energy(f, rho, kernel, eps, 1.0, 0.0, DoubleWell()) - local));
    }
    CHECK(err[1] < err[0]);
    CHECK(err[2] < err[1]);
    const double order = std::log2(err[1] / err[2]);
    CHECK(order > 1.6);
    CHECK(order < 2.4);

    std::fill(f.values.begin(), f.values.end(), 0.5);
    CHECK(nonlocal_energy(f, rho, kernel, 0.1, 1.0, 2.0, DoubleWell()) ==
          doctest::Approx(2.0 * 0.5625).epsilon(1e-12));
    for (std::size_t k = 0; k < g.size(); ++k) f.values[k] = g.coord(k, 0);
    double well = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) well += g.volume(k) * DoubleWell().value(f.values[k]);
    CHECK(nonlocal_energy(f, rho, KernelProfile::indicator(1e-6), 0.1, 1.0, 1.0, DoubleWell()) ==
          doctest::Approx(well).epsilon(1e-12));
}

TEST_CASE("sigma_W and the sharp interface energy") {
    CHECK(sigma_w(DoubleWell()) == doctest::Approx(4.0 / 3.0).epsilon(1e-10));
    CHECK(sigma_w(DoubleWell(WellKind::unit_interval)) == doctest::Approx(1.0 / 6.0).epsilon(1e-10));

    const Grid g = Grid::line(-1.0, 1.0, 200);
    const DensityField rho = uniform_density(g);
    CHECK(rho.values[0] == doctest::Approx(0.5));
    MacroField f{g, 1, std::vector<double>(g.size()), 0.0};
    for (std::size_t k = 0; k < g.size(); ++k) f.values[k] = g.coord(k, 0) < 0.0 ? -1.0 : 1.0;
    const double gamma = 1.5;
    const double sigma = 0.1;
    const GammaDiagnostics d = gamma_diagnostics(f, rho, DoubleWell(), gamma, 10.0, sigma);
    CHECK(d.jumps == 1);
    const double tv = 2.0 * std::pow(0.5, 1.5);
    CHECK(tv == doctest::Approx(0.70711).epsilon(1e-5));
    CHECK(d.sharp_energy == doctest::Approx(std::sqrt(2 * gamma * sigma) * (4.0 / 3.0) * tv).epsilon(1e-9));

    std::fill(f.values.begin(), f.values.end(), 1.0);
    CHECK(gamma_diagnostics(f, rho, DoubleWell(), gamma, 10.0, sigma).sharp_energy == 0.0);
    std::fill(f.values.begin(), f.values.end(), 0.5);
    CHECK_THROWS_AS(gamma_diagnostics(f, rho, DoubleWell(), gamma, 10.0, sigma), ValidationError);
}

TEST_CASE("structure check") {
    const Grid g = Grid::line(0.0, 1.0, 101);
    const DensityField rho = uniform_density(g);
    MacroField f{g, 1, std::vector<double>(g.size()), 0.0};
    for (std::size_t k = 0; k < g.size(); ++k) f.values[k] = std::tanh(50.0 * (g.coord(k, 0) - 0.5));
    StructureReport r = structure_check(f, rho, 1e-6);
    CHECK(r.zero_region_nodes == 0);
    CHECK(r.zero_region_violations.empty());
    CHECK(r.plateaus.size() == 2);
    CHECK(r.plateau_violations == 0);

    for (std::size_t k = 0; k < 50; ++k) f.values[k] = -0.5;  // a flat plateau away from the well
    r = structure_check(f, rho, 1e-6);
    CHECK(r.plateau_violations == 1);

    std::vector<double> rv(g.size(), 1.0);
    std::fill_n(rv.begin() + 40, 21, 0.0);
    const DensityField holes = make_density(g, rv);
    r = structure_check(f, holes, 1e-12);
    CHECK(r.zero_region_nodes == 21);
    CHECK(r.zero_region_violations.size() == 20);  // u(0.5) = 0
}

TEST_CASE("multi-label fields evolve componentwise") {
    const Grid g = Grid::line(0.0, 1.0, 31);
    BoundarySpec bc{{{0}, {15}, {30}}, {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
    MacroProblem p{uniform_density(g), bc, DoubleWell(WellKind::unit_interval), RunConfig{1.0, 1.0, 0.01, 2.0}, 0.1};
    const MacroResult r = run_macro(initial_field(g, 3, bc), p);
    CHECK(r.final.width == 3);
    CHECK(r.final.at(15, 1) == 1.0);
    CHECK(r.final.at(14, 1) > r.final.at(14, 2));
    CHECK(r.range_excess <= 1e-12);
}

TEST_CASE("field csv round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "labelflow_macro_test";
    std::filesystem::create_directories(dir);
    for (const Grid& g : {Grid::line(-0.3, 0.7, 11), Grid::rect(0.0, 1.0, 5, -1.0, 0.5, 4)}) {
        const DensityField rho = uniform_density(g);
        MacroField f{g, 1, std::vector<double>(g.size()), 0.0};
        for (std::size_t k = 0; k < g.size(); ++k) f.values[k] = std::cos(static_cast<double>(k));
        write_field_csv(dir / "f.csv", f, rho);
        const FieldFile back = read_field_csv(dir / "f.csv");
        CHECK(back.field.grid.same_as(g));
        CHECK(back.field.values == f.values);
        CHECK(back.rho.values == rho.values);
    }
    CHECK_THROWS_AS(read_field_csv(dir / "none.csv"), IoError);
    std::filesystem::remove_all(dir);
}
