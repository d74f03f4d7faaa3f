// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--strict] [criterion numbers...]
//
// Without --strict the process exits 0 whatever the verdicts, so the ctest
// entry records the report; with it, any FAIL gives exit 1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "labelflow/compare.hpp"
#include "labelflow/data.hpp"
#include "labelflow/graph.hpp"
#include "labelflow/macro.hpp"
#include "labelflow/micro.hpp"
#include "labelflow/pipeline.hpp"
#include "labelflow/transport.hpp"
#include "support/oracles.hpp"

using namespace labelflow;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Two-Gaussian cloud with `per_side` extreme anchors, unlabeled points first.
LabeledCloud gaussian_cloud(std::uint64_t seed, std::size_t per_side, GeneratedCloud* raw = nullptr) {
    GeneratedCloud g = gen_two_gaussians({}, seed);
    LabeledCloud lc = attach_labels(1, g.coords, anchors_extremes(g, per_side));
    if (raw) *raw = std::move(g);
    return lc;
}

std::vector<std::vector<double>> dense_weights(const WeightGraph& g) {
    std::vector<std::vector<double>> w(g.size(), std::vector<double>(g.size(), 0.0));
    for (const Edge& e : g.edges()) w[e.i][e.j] = w[e.j][e.i] = e.w;
    return w;
}

// Micro runs with the paper's 1D parameters: n = 250, gamma = 250,
// kappa = 0.25, indicator weights with R = 0.25, uniform initial labels.
struct DiscreteRuns {
    double worst_rise = 0.0;   // largest E^{k+1} - E^k relative to max(1, |E^k|)
    double worst_excess = 0.0; // largest distance outside [-1, 1]
    std::size_t steps = 0;
};

DiscreteRuns discrete_runs() {
    DiscreteRuns out;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const LabeledCloud lc = gaussian_cloud(seed, 1);
        const WeightGraph graph = build_weights(lc.cloud, KernelProfile::indicator(0.25), 1.0);
        RunConfig cfg{250.0, 0.25, 1.0, 10.0};
        const MicroSystem probe(lc.cloud, graph, DoubleWell(), cfg);
        cfg.dt = std::min(probe.max_principle_bound(), probe.stability_bound());
        const MicroSystem sys(lc.cloud, graph, DoubleWell(), cfg);
        const auto w = dense_weights(graph);
        const std::size_t n = lc.cloud.n_unlabeled();

        LabelState u = init_labels(lc.cloud, {InitSpec::Kind::uniform}, seed);
        LabelState next = u;
        double e = oracle::dense_energy(w, u.values, n, sys.gamma_eff(), cfg.kappa);
        const auto steps = static_cast<std::size_t>(std::ceil(cfg.t_end / cfg.dt));
        for (std::size_t k = 0; k < steps; ++k) {
            micro_step_into(sys, u, next);
            std::swap(u, next);
            const double e_next = oracle::dense_energy(w, u.values, n, sys.gamma_eff(), cfg.kappa);
            out.worst_rise = std::max(out.worst_rise, (e_next - e) / std::max(1.0, std::abs(e)));
            e = e_next;
            for (double v : u.values) out.worst_excess = std::max(out.worst_excess, std::abs(v) - 1.0);
        }
        out.steps += steps;
    }
    return out;
}

const DiscreteRuns& shared_discrete_runs() {
    static const DiscreteRuns runs = discrete_runs();
    return runs;
}

Verdict c1_dissipation() {
    const DiscreteRuns& r = shared_discrete_runs();
    return {r.worst_rise <= 1e-10,
            fmt("20 seeds, %zu steps, max relative energy rise %.3e (tol 1e-10)", r.steps, r.worst_rise)};
}

Verdict c2_max_principle() {
    const DiscreteRuns& r = shared_discrete_runs();
    return {r.worst_excess <= 1e-12, fmt("20 seeds, max excess beyond [-1,1] %.3e (tol 1e-12)", r.worst_excess)};
}

Verdict c3_two_clusters() {
    GeneratedCloud raw;
    const LabeledCloud lc = gaussian_cloud(7, 3, &raw);
    const WeightGraph graph = build_weights(lc.cloud, KernelProfile::indicator(0.25), 1.0);
    RunConfig cfg{250.0, 0.25, 1.0, 200.0};
    cfg.stationarity_tol = 1e-6;
    cfg.dt = 0.9 * MicroSystem(lc.cloud, graph, DoubleWell(), cfg).stability_bound();
    const MicroSystem sys(lc.cloud, graph, DoubleWell(), cfg);
    const MicroResult r = run_micro(sys, init_labels(lc.cloud, {}, 7));
    const auto cls = classify(r.final);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < cls.size(); ++i) ok += cls[i] == raw.truth[lc.original_index[i]];
    const double frac = static_cast<double>(ok) / static_cast<double>(cls.size());
    return {frac >= 0.95 && r.stationary,
            fmt("agreement %.4f (>= 0.95), stationary=%d at t=%.1f", frac, static_cast<int>(r.stationary), r.time)};
}

Verdict c4_micro_macro() {
    const LabeledCloud lc = gaussian_cloud(7, 10);
    const KernelProfile kernel = KernelProfile::indicator(0.25);
    const WeightGraph graph = build_weights(lc.cloud, kernel, 1.0);
    const Grid grid = Grid::line(lc.cloud.box().lo[0], lc.cloud.box().hi[0], 201);
    const DensityField rho = kde_density(lc.cloud, grid, 0.01, 1e-3);
    const BoundarySpec bc = anchor_regions(grid, lc.cloud);
    bool pass = true;
    std::string detail;
    for (double kappa : {0.0, 1.0, 10.0, 100.0}) {
        RunConfig cfg{1.0, kappa, 1.0, 20000.0};
        cfg.stationarity_tol = 1e-6;
        cfg.dt = 0.9 * MicroSystem(lc.cloud, graph, DoubleWell(), cfg).stability_bound();
        const MicroSystem sys(lc.cloud, graph, DoubleWell(), cfg);
        MicroOptions mo;
        mo.check_dissipation = false;
        const MicroResult mr = run_micro(sys, init_labels(lc.cloud, {}, 7), mo);

        MacroProblem p{rho, bc, DoubleWell(), cfg, sigma_eta(kernel, 1)};
        p.config.dt = kappa > 0.0 ? std::min(0.5 * p.reaction_bound(), 0.01) : 0.01;
        const MacroResult ma = run_macro(initial_field(grid, 1, bc), p);
        const Comparison cmp = compare_micro_macro(lc.cloud, mr.final, ma.final);
        const bool ok = cmp.sign_agreement >= 0.95 && cmp.l2 <= 0.15;
        pass = pass && ok;
        detail += fmt("k=%g: sign %.3f L2 %.3f; ", kappa, cmp.sign_agreement, cmp.l2);
    }
    return {pass, detail + "(sign >= 0.95, L2 <= 0.15)"};
}

// Macro stationary state on the seed-7 two-Gaussian density.
struct SweepState {
    MacroResult result;
    DensityField rho;
};

SweepState macro_gaussian(double kappa) {
    const LabeledCloud lc = gaussian_cloud(7, 3);
    const Grid grid = Grid::line(lc.cloud.box().lo[0], lc.cloud.box().hi[0], 201);
    DensityField rho = kde_density(lc.cloud, grid, 0.01, 1e-3);
    RunConfig cfg{1.0, kappa, 0.01, 2000.0};
    cfg.stationarity_tol = 1e-6;
    MacroProblem p{rho, anchor_regions(grid, lc.cloud), DoubleWell(), cfg,
                   sigma_eta(KernelProfile::indicator(0.25), 1)};
    if (kappa > 0.0) p.config.dt = std::min(0.5 * p.reaction_bound(), 0.01);
    return {run_macro(initial_field(grid, 1, p.bc), p), std::move(rho)};
}

Verdict c5_kappa_sweep() {
    std::vector<double> frac;
    std::vector<double> frac_support;
    std::string detail;
    for (double kappa : {0.0, 10.0, 100.0}) {
        const SweepState s = macro_gaussian(kappa);
        const auto& u = s.result.final.values;
        std::size_t above = 0;
        std::size_t support = 0;
        std::size_t above_support = 0;
        for (std::size_t k = 0; k < u.size(); ++k) {
            const bool big = std::abs(u[k]) > 0.9;
            above += big;
            if (s.rho.values[k] > s.rho.floor) {
                ++support;
                above_support += big;
            }
        }
        frac.push_back(static_cast<double>(above) / static_cast<double>(u.size()));
        frac_support.push_back(static_cast<double>(above_support) / static_cast<double>(support));
        detail += fmt("k=%g: %.3f (unfloored %.3f, stationary %d); ", kappa, frac.back(), frac_support.back(),
                      static_cast<int>(s.result.stationary));
    }
    const bool pass = frac[2] >= frac[1] && frac[1] >= frac[0] && frac_support[2] >= 0.9;
    return {pass, detail + "(monotone, k=100 unfloored >= 0.9)"};
}

Verdict c6_structure() {
    // Part 1: rho = 0 on [0.4, 0.6], regularised diffusion, zero data.
    const Grid grid = Grid::line(0.0, 1.0, 201);
    std::vector<double> rv(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const double x = grid.coord(k, 0);
        rv[k] = (x >= 0.4 - 1e-12 && x <= 0.6 + 1e-12) ? 0.0 : 1.0;
    }
    const DensityField holes = make_density(grid, rv);
    RunConfig cfg{1.0, 10.0, 1.0, 2000.0};
    cfg.stationarity_tol = 1e-6;
    MacroProblem p{holes, {{{0}, {grid.size() - 1}}, {{-1.0}, {1.0}}}, DoubleWell(), cfg,
                   sigma_eta(KernelProfile::indicator(0.25), 1), 0.01};
    p.config.dt = std::min(0.5 * p.reaction_bound(), 0.01);
    const MacroResult r1 = run_macro(initial_field(grid, 1, p.bc), p);
    const StructureReport s1 = structure_check(r1.final, holes, 0.0);
    const bool part1 = s1.zero_region_max_abs <= 1e-8;

    // Part 2: floored KDE density (rho >= floor > 0), kappa = 100.
    const SweepState s = macro_gaussian(100.0);
    const StructureReport s2 = structure_check(s.result.final, s.rho, 0.0);
    const std::size_t plateaus = s2.plateaus.size();
    const double ok_frac =
        plateaus ? static_cast<double>(plateaus - s2.plateau_violations) / static_cast<double>(plateaus) : 0.0;
    const bool part2 = plateaus > 0 && ok_frac >= 0.9;
    return {part1 && part2,
            fmt("zero region: max|u| %.3e over %zu nodes (<= 1e-8), stationary %d; "
                "positive rho: %zu plateaus, %.2f with |u| >= 0.95 (>= 0.9)",
                s1.zero_region_max_abs, s1.zero_region_nodes, static_cast<int>(r1.stationary), plateaus, ok_frac)};
}

Verdict c7_gamma_trend() {
    // Uniform density on [-1, 1] with anchors at the ends. F_k = k E' with E'
    // the continuum energy at (gamma / k^2, 1), so its stationary state comes
    // from the macro flow with those coefficients. The initial line lets the
    // interface form in place.
    const double gamma = 1.0;
    const double sig = sigma_eta(KernelProfile::indicator(0.25), 1);
    std::vector<double> gaps;
    std::string detail;
    for (double kn : {10.0, 100.0, 1000.0}) {
        // Interface width ~ sqrt(gamma sig / rho) / kn; resolve it with ~40 cells.
        const double width = std::sqrt(gamma * sig / 0.5) / kn;
        const auto nodes = static_cast<std::size_t>(std::ceil(2.0 / (width / 40.0))) | 1u;
        const Grid grid = Grid::line(-1.0, 1.0, nodes);
        const DensityField rho = make_density(grid, std::vector<double>(grid.size(), 1.0));
        RunConfig cfg{gamma / (kn * kn), 1.0, 1.0, 200.0};
        cfg.stationarity_tol = 1e-7;
        MacroProblem p{rho, {{{0}, {grid.size() - 1}}, {{-1.0}, {1.0}}}, DoubleWell(), cfg, sig};
        p.config.dt = 0.5 * p.reaction_bound();
        MacroField u0 = initial_field(grid, 1, p.bc);
        for (std::size_t k = 1; k + 1 < grid.size(); ++k) u0.values[k] = grid.coord(k, 0);
        MacroOptions mo;
        mo.trace_stride = 1000;
        const MacroResult r = run_macro(u0, p, mo);
        MacroField sharp = r.final;
        for (double& v : sharp.values) v = v < 0.0 ? -1.0 : 1.0;
        const GammaDiagnostics d = gamma_diagnostics(r.final, rho, DoubleWell(), gamma, kn, sig);
        const GammaDiagnostics ds = gamma_diagnostics(sharp, rho, DoubleWell(), gamma, kn, sig);
        gaps.push_back(std::abs(d.rescaled_energy - ds.sharp_energy) / ds.sharp_energy);
        detail += fmt("k=%g: F=%.5f sharp=%.5f gap %.3f (N=%zu, stationary %d); ", kn, d.rescaled_energy,
                      ds.sharp_energy, gaps.back(), nodes, static_cast<int>(r.stationary));
    }
    const bool pass = gaps[2] <= 0.2 && gaps[1] < gaps[0] && gaps[2] < gaps[1];
    return {pass, detail + "(gap at k=1000 <= 0.2, decreasing)"};
}

Verdict c8_quadrature() {
    const double r = 0.25;
    const double e1 = std::abs(sigma_eta(KernelProfile::indicator(r), 1) / (r * r * r / 3.0) - 1.0);
    const double e2 = std::abs(sigma_eta(KernelProfile::indicator(r), 2) / (std::numbers::pi * std::pow(r, 4) / 8.0) - 1.0);
    const double ew = std::abs(sigma_w(DoubleWell()) - 4.0 / 3.0);
    return {e1 <= 1e-6 && e2 <= 1e-6 && ew <= 1e-8,
            fmt("rel err d=1 %.2e, d=2 %.2e (<= 1e-6); sigma_W abs err %.2e (<= 1e-8)", e1, e2, ew)};
}

Verdict c9_two_moons() {
    std::vector<double> acc;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const GeneratedCloud gen = gen_two_moons(500, 0.1, seed);
        const LabeledCloud lc = attach_labels(2, gen.coords, anchors_hull(gen));
        const WeightGraph graph = build_weights(lc.cloud, KernelProfile::indicator(0.25), 1.0);
        RunConfig cfg{1.0, 10.0, 1.0, 25.0};
        cfg.dt = 0.9 * MicroSystem(lc.cloud, graph, DoubleWell(), cfg).stability_bound();
        const MicroSystem sys(lc.cloud, graph, DoubleWell(), cfg);
        const MicroResult r = run_micro(sys, init_labels(lc.cloud, {}, seed));
        const auto cls = classify(r.final);
        std::size_t ok = 0;
        for (std::size_t i = 0; i < cls.size(); ++i) ok += cls[i] == gen.truth[lc.original_index[i]];
        acc.push_back(static_cast<double>(ok) / static_cast<double>(cls.size()));
    }
    const double med = median(acc);
    const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
    return {med >= 0.9, fmt("median agreement %.4f over 10 seeds (>= 0.9), range [%.3f, %.3f]", med, *lo, *hi)};
}

Verdict c10_digits() {
    std::vector<double> acc;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        DigitsConfig cfg;
        cfg.path = std::filesystem::path(LABELFLOW_DATA_DIR) / "digits.csv";
        cfg.run = RunConfig{1.0, 10.0, 0.0, 20.0};
        cfg.run.seed = seed;
        const DigitsReport r = run_digits(cfg);
        acc.push_back(r.accuracy);
        per_seed += fmt("%.3f ", r.accuracy);
    }
    const double med = median(acc);
    return {med >= 0.70, fmt("median accuracy %.4f over 5 seeds (>= 0.70); per seed %s", med, per_seed.c_str())};
}

Verdict c11_sinkhorn_oracle() {
    const CostMatrix cost = CostMatrix::grid(8, 8);
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> support(1, 4);
    std::uniform_int_distribution<std::size_t> pixel(0, 63);
    std::uniform_real_distribution<double> mass(0.05, 1.0);
    auto draw = [&] {
        std::vector<double> px(64, 0.0);
        const std::size_t k = support(rng);
        std::size_t placed = 0;
        while (placed < k) {
            const std::size_t p = pixel(rng);
            if (px[p] == 0.0) {
                px[p] = mass(rng);
                ++placed;
            }
        }
        return ImageMeasure::from_pixels(8, 8, px);
    };
    SinkhornOptions opts;
    opts.reg = 1e-3 * cost.mean();
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        const ImageMeasure a = draw();
        const ImageMeasure b = draw();
        std::vector<std::size_t> sa, sb;
        for (std::size_t p = 0; p < 64; ++p) {
            if (a.mass[p] > 0.0) sa.push_back(p);
            if (b.mass[p] > 0.0) sb.push_back(p);
        }
        std::vector<double> ma, mb, c;
        for (std::size_t p : sa) ma.push_back(a.mass[p]);
        for (std::size_t q : sb) mb.push_back(b.mass[q]);
        for (std::size_t p : sa) {
            for (std::size_t q : sb) c.push_back(cost(p, q));
        }
        const double exact = std::sqrt(oracle::exact_ot(ma, mb, c));
        const double w2 = sinkhorn_w2(a, b, cost, opts);
        const double rel = exact > 0.0 ? std::abs(w2 - exact) / exact : std::abs(w2);
        worst = std::max(worst, rel);
    }
    return {worst <= 0.01, fmt("50 pairs, worst relative W2 error %.3e (<= 0.01)", worst)};
}

Verdict c12_time_rescaling() {
    const LabeledCloud lc = gaussian_cloud(7, 3);
    const Grid g1 = Grid::line(lc.cloud.box().lo[0], lc.cloud.box().hi[0], 201);
    const GeneratedCloud moons = gen_two_moons(500, 0.1, 0);
    const LabeledCloud lm = attach_labels(2, moons.coords, anchors_hull(moons));
    const Grid g2 = Grid::rect(lm.cloud.box().lo[0], lm.cloud.box().hi[0], 41, lm.cloud.box().lo[1],
                               lm.cloud.box().hi[1], 31);
    double worst = 0.0;
    std::size_t compared = 0;
    for (int which = 0; which < 2; ++which) {
        const PointCloud& cloud = which == 0 ? lc.cloud : lm.cloud;
        const Grid& grid = which == 0 ? g1 : g2;
        const DensityField rho = kde_density(cloud, grid, which == 0 ? 0.01 : 0.02, 1e-3);
        const BoundarySpec bc = anchor_regions(grid, cloud);
        const double sig = sigma_eta(KernelProfile::indicator(0.25), grid.dim());
        MacroProblem a{rho, bc, DoubleWell(), RunConfig{1.0, 10.0, 0.004, 1.0}, sig};
        MacroProblem b{rho, bc, DoubleWell(), RunConfig{10.0, 100.0, 0.0004, 0.1}, sig};
        a.cg_tol = b.cg_tol = 1e-14;
        MacroField u = initial_field(grid, 1, bc);
        MacroField v = u;
        for (int k = 0; k < 100; ++k) {
            u = macro_step(u, a);
            v = macro_step(v, b);
            // Run b at physical time t/10 matches run a at t.
            for (std::size_t q = 0; q < u.values.size(); ++q) worst = std::max(worst, std::abs(u.values[q] - v.values[q]));
            ++compared;
        }
    }
    return {worst <= 1e-10, fmt("1D and 2D, %zu matched times, sup difference %.3e (<= 1e-10)", compared, worst)};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
    bool strict = false;
    std::set<int> only;
    for (int k = 1; k < argc; ++k) {
        if (std::strcmp(argv[k], "--strict") == 0) {
            strict = true;
        } else {
            only.insert(std::atoi(argv[k]));
        }
    }
    const std::vector<Criterion> criteria{
        {1, "discrete energy dissipation", c1_dissipation},
        {2, "discrete maximum principle", c2_max_principle},
        {3, "two-cluster recovery", c3_two_clusters},
        {4, "micro-macro consistency", c4_micro_macro},
        {5, "kappa sweep sharpening", c5_kappa_sweep},
        {6, "structure inheritance", c6_structure},
        {7, "Gamma-diagnostic trend", c7_gamma_trend},
        {8, "sigma_eta and sigma_W quadrature", c8_quadrature},
        {9, "two moons", c9_two_moons},
        {10, "digits", c10_digits},
        {11, "Sinkhorn oracle equivalence", c11_sinkhorn_oracle},
        {12, "time-rescaling covariance", c12_time_rescaling},
    };
    int failed = 0;
    for (const Criterion& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !v.pass;
        std::printf("%s criterion %2d %s | %s | %.1fs\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(),
                    secs);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failed, only.empty() ? criteria.size() : only.size());
    return strict && failed ? 1 : 0;
}
