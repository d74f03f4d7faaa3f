#include "labelflow/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "labelflow/csv.hpp"
#include "labelflow/errors.hpp"
#include "labelflow/parallel.hpp"

namespace labelflow {

ImageMeasure ImageMeasure::from_pixels(std::size_t width, std::size_t height, std::span<const double> pixels) {
    if (width == 0 || height == 0 || pixels.size() != width * height) {
        throw ValidationError("pixel count does not match image shape");
    }
    ImageMeasure m{width, height, {}, 0.0};
    for (double p : pixels) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("pixel intensities must be finite and >= 0");
        m.original_sum += p;
    }
    if (!(m.original_sum > 0.0)) throw ValidationError("image has zero mass");
    m.mass.resize(pixels.size());
    for (std::size_t k = 0; k < pixels.size(); ++k) m.mass[k] = pixels[k] / m.original_sum;
    return m;
}

CostMatrix CostMatrix::grid(std::size_t width, std::size_t height) {
    CostMatrix c{width, height, {}};
    const std::size_t n = width * height;
    c.c.resize(n * n);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) {
            const double dx = static_cast<double>(p % width) - static_cast<double>(q % width);
            const double dy = static_cast<double>(p / width) - static_cast<double>(q / width);
            c.c[p * n + q] = dx * dx + dy * dy;
        }
    }
    return c;
}

double CostMatrix::mean() const {
    double s = 0.0;
    for (double v : c) s += v;
    return s / static_cast<double>(c.size());
}

namespace {

std::vector<std::size_t> support(const ImageMeasure& m) {
    std::vector<std::size_t> s;
    for (std::size_t k = 0; k < m.mass.size(); ++k) {
        if (m.mass[k] > 0.0) s.push_back(k);
    }
    return s;
}

double log_sum_exp(const std::vector<double>& x) {
    const double top = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(top)) return top;
    double s = 0.0;
    for (double v : x) s += std::exp(v - top);
    return top + std::log(s);
}

}  // namespace

double sinkhorn_w2(const ImageMeasure& a_in, const ImageMeasure& b_in, const CostMatrix& cost,
                   const SinkhornOptions& opts) {
    if (a_in.width != b_in.width || a_in.height != b_in.height || a_in.mass.size() != cost.size()) {
        throw ValidationError("measures and cost matrix live on different grids");
    }
    const double reg = opts.reg > 0.0 ? opts.reg : 1e-2 * cost.mean();
    if (!std::isfinite(reg)) throw ValidationError("reg must be finite");
    if (!(opts.tol > 0.0)) throw ValidationError("tol must be positive");
    if (!(opts.relaxation >= 1.0 && opts.relaxation < 2.0)) throw ValidationError("relaxation must lie in [1, 2)");

    // Solve in a canonical orientation so swapping the arguments is exact.
    const bool swap = std::lexicographical_compare(b_in.mass.begin(), b_in.mass.end(), a_in.mass.begin(),
                                                   a_in.mass.end());
    const ImageMeasure& a = swap ? b_in : a_in;
    const ImageMeasure& b = swap ? a_in : b_in;

    const auto ia = support(a);
    const auto ib = support(b);
    if (ia.empty() || ib.empty()) throw ValidationError("measure with empty support");
    const std::size_t m = ia.size();
    const std::size_t n = ib.size();
    std::vector<double> c(m * n), pa(m), pb(n), la(m), lb(n);
    for (std::size_t i = 0; i < m; ++i) {
        pa[i] = a.mass[ia[i]];
        la[i] = std::log(pa[i]);
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] = cost(ia[i], ib[j]);
    }
    for (std::size_t j = 0; j < n; ++j) {
        pb[j] = b.mass[ib[j]];
        lb[j] = std::log(pb[j]);
    }

    std::vector<double> f(m), g(n), kern(m * n), u(m), v(n), scratch;

    // Exact log-domain half-steps; used at start and after each absorption.
    auto log_update = [&] {
        scratch.resize(n);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) scratch[j] = (g[j] - c[i * n + j]) / reg;
            f[i] = reg * (la[i] - log_sum_exp(scratch));
        }
        scratch.resize(m);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < m; ++i) scratch[i] = (f[i] - c[i * n + j]) / reg;
            g[j] = reg * (lb[j] - log_sum_exp(scratch));
        }
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) kern[i * n + j] = std::exp((f[i] + g[j] - c[i * n + j]) / reg);
        }
        std::fill(u.begin(), u.end(), 1.0);
        std::fill(v.begin(), v.end(), 1.0);
    };
    auto violation = [&] {
        double err = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += kern[i * n + j] * v[j];
            err = std::max(err, std::abs(u[i] * s - pa[i]));
        }
        return err;
    };
    auto absorb = [&] {
        for (std::size_t i = 0; i < m; ++i) f[i] += reg * std::log(u[i]);
        for (std::size_t j = 0; j < n; ++j) g[j] += reg * std::log(v[j]);
        log_update();
    };

    const double lo = std::exp(-30.0);
    const double hi = std::exp(30.0);
    auto solve = [&](double omega) {
        std::fill(f.begin(), f.end(), 0.0);
        std::fill(g.begin(), g.end(), 0.0);
        log_update();
        double err = violation();
        for (std::size_t it = 1; err > opts.tol && it <= opts.max_iters; ++it) {
            bool out_of_range = false;
            for (std::size_t i = 0; i < m; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += kern[i * n + j] * v[j];
                const double target = pa[i] / s;
                u[i] = omega == 1.0 ? target : std::pow(u[i], 1.0 - omega) * std::pow(target, omega);
                out_of_range = out_of_range || !(u[i] > lo && u[i] < hi);
            }
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < m; ++i) s += kern[i * n + j] * u[i];
                const double target = pb[j] / s;
                v[j] = omega == 1.0 ? target : std::pow(v[j], 1.0 - omega) * std::pow(target, omega);
                out_of_range = out_of_range || !(v[j] > lo && v[j] < hi);
            }
            if (out_of_range) {
                const bool finite = std::all_of(u.begin(), u.end(), [](double x) { return x > 0.0 && std::isfinite(x); }) &&
                                    std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0 && std::isfinite(x); });
                if (!finite) return std::numeric_limits<double>::infinity();
                absorb();
            }
            if (it % 10 == 0 || out_of_range) err = violation();
        }
        return err;
    };

    double err = solve(opts.relaxation);
    // Over-relaxation can stall on hard pairs; plain iterations always converge.
    if (!(err <= opts.tol) && opts.relaxation != 1.0) err = solve(1.0);
    if (!(err <= opts.tol)) {
        std::ostringstream msg;
        msg << "sinkhorn did not converge in " << opts.max_iters << " iterations; marginal violation " << err;
        throw SolverError(msg.str());
    }

    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) total += u[i] * kern[i * n + j] * v[j] * c[i * n + j];
    }
    return std::sqrt(std::max(total, 0.0));
}

WassersteinGraph wasserstein_weights(std::span<const ImageMeasure> images, double cutoff_frac,
                                     const SinkhornOptions& opts, int threads, OtMetric metric) {
    const std::size_t n = images.size();
    if (n < 2) throw ValidationError("need at least two images");
    if (!(cutoff_frac > 0.0 && cutoff_frac <= 1.0)) throw ValidationError("cutoff_frac must lie in (0, 1]");
    for (const auto& im : images) {
        if (im.width != images[0].width || im.height != images[0].height) {
            throw ValidationError("images differ in shape");
        }
    }
    const CostMatrix cost = CostMatrix::grid(images[0].width, images[0].height);

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    }
    std::vector<double> dist(n * n, 0.0);
    parallel_for_blocks(pairs.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const auto [i, j] = pairs[k];
            double d = 0.0;
            try {
                d = sinkhorn_w2(images[i], images[j], cost, opts);
            } catch (const SolverError& e) {
                throw SolverError("pair (" + std::to_string(i) + ", " + std::to_string(j) + "): " + e.what());
            }
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    });

    std::vector<double> d = dist;
    if (metric == OtMetric::cost) {
        for (double& x : d) x *= x;
    }
    const double cutoff = cutoff_frac * *std::max_element(d.begin(), d.end());
    WassersteinGraph out{n, metric, std::move(dist), std::move(d), cutoff,
                         WeightGraph(n, {}, KernelProfile::inverse_distance(1.0), 1.0)};
    if (cutoff > 0.0) {
        out.graph = build_weights_from_distances(n, out.d, KernelProfile::inverse_distance(cutoff));
    } else {
        // Every image identical: all pairs at distance zero.
        std::vector<Edge> edges;
        for (const auto& [i, j] : pairs) edges.push_back({i, j, 1.0});
        out.graph = WeightGraph(n, std::move(edges), KernelProfile::inverse_distance(1.0), 1.0);
    }
    return out;
}

void write_distance_csv(const std::filesystem::path& path, std::span<const double> distances, std::size_t n,
                        std::span<const std::size_t> ids) {
    if (distances.size() != n * n || ids.size() != n) throw ValidationError("distance matrix shape mismatch");
    std::vector<std::string> header;
    for (std::size_t id : ids) header.push_back(std::to_string(id));
    CsvWriter out(path, header);
    for (std::size_t i = 0; i < n; ++i) out.row(distances.subspan(i * n, n));
    out.close();
}

}  // namespace labelflow
