#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "labelflow/graph.hpp"

namespace labelflow {

/// Nonnegative image normalised to unit mass. Pixel p sits at
/// (p % width, p / width) on the unit grid.
struct ImageMeasure {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> mass;
    double original_sum = 0.0;

    /// Throws ValidationError on negative/non-finite pixels or zero mass.
    static ImageMeasure from_pixels(std::size_t width, std::size_t height, std::span<const double> pixels);
};

/// Squared Euclidean distances between pixel centres.
struct CostMatrix {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> c;  // (w h) x (w h), row-major

    static CostMatrix grid(std::size_t width, std::size_t height);
    std::size_t size() const { return width * height; }
    double operator()(std::size_t p, std::size_t q) const { return c[p * size() + q]; }
    double mean() const;
};

struct SinkhornOptions {
    double reg = 0.0;  // <= 0 selects 1e-2 * mean(C)
    std::size_t max_iters = 20000;
    double tol = 1e-9;  // sup-norm marginal violation
    double relaxation = 1.8;  // over-relaxation factor in [1, 2); 1 is plain Sinkhorn
};

/// Entropic W2 distance sqrt(<P, C>) on the supports of a and b. Scaling
/// iterations run on a kernel rebuilt from log-domain potentials whenever the
/// scalings leave [e^-30, e^30], so small regularisations do not underflow.
/// Over-relaxed iterations share the fixed point of plain Sinkhorn; if they
/// fail to converge the solve restarts without relaxation. Symmetric in
/// (a, b) bitwise.
double sinkhorn_w2(const ImageMeasure& a, const ImageMeasure& b, const CostMatrix& cost,
                   const SinkhornOptions& opts);

/// Pairwise quantity the weights are built from: the transport cost
/// <P, C> = W2^2, or the distance W2 itself.
enum class OtMetric { cost, distance };

struct WassersteinGraph {
    std::size_t n = 0;
    OtMetric metric = OtMetric::cost;
    std::vector<double> distances;  // n x n W2 distances, symmetric
    std::vector<double> d;          // n x n in the chosen metric
    double cutoff = 0.0;            // c_bar = cutoff_frac * max d
    WeightGraph graph;
};

/// w_ij = 1/d_ij for 0 < d_ij <= c_bar, 10 x the largest such weight for
/// d_ij = 0, and no edge otherwise.
WassersteinGraph wasserstein_weights(std::span<const ImageMeasure> images, double cutoff_frac,
                                     const SinkhornOptions& opts, int threads = 1,
                                     OtMetric metric = OtMetric::cost);

/// Full symmetric matrix with a header row of sample ids.
void write_distance_csv(const std::filesystem::path& path, std::span<const double> distances, std::size_t n,
                        std::span<const std::size_t> ids);

}  // namespace labelflow
