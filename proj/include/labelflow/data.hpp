#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "labelflow/core.hpp"
#include "labelflow/transport.hpp"

namespace labelflow {

/// Raw generated points (row-major) with the generating component per point.
struct GeneratedCloud {
    std::size_t dim = 1;
    std::vector<double> coords;
    std::vector<int> truth;

    std::size_t size() const { return coords.size() / dim; }
    /// All points unlabeled, two empty label groups.
    PointCloud unlabeled() const;
};

/// Component parameters; sd1/sd2 are standard deviations.
struct TwoGaussiansSpec {
    std::size_t n = 250;
    double mu1 = -0.25;
    double sd1 = 0.125;
    double mu2 = 0.4;
    double sd2 = 0.1;
};

/// ceil(n/2) draws from N(mu1, sd1^2) (truth 0), then floor(n/2) from
/// N(mu2, sd2^2) (truth 1). Requires n >= 4.
GeneratedCloud gen_two_gaussians(const TwoGaussiansSpec& spec, std::uint64_t seed);

/// Upper arc (cos t, sin t) and lower arc (1 - cos t, 0.5 - sin t) with t
/// evenly spaced on [0, pi], plus isotropic N(0, noise_sd^2) noise.
GeneratedCloud gen_two_moons(std::size_t n, double noise_sd, std::uint64_t seed);

/// Vertices of the convex hull of 2D points, counter-clockwise, collinear
/// points excluded.
std::vector<std::size_t> convex_hull(std::span<const double> coords_2d);

/// Anchor groups for two labels: the `per_side` points with the smallest
/// x_0 form group 0 and the `per_side` largest group 1.
std::vector<std::vector<std::size_t>> anchors_extremes(const GeneratedCloud& cloud, std::size_t per_side);

/// Convex-hull vertices of a 2D cloud, grouped by their ground-truth label.
std::vector<std::vector<std::size_t>> anchors_hull(const GeneratedCloud& cloud);

struct DigitsSample {
    std::vector<ImageMeasure> images;
    std::vector<int> labels;            // true digit per sampled image
    std::vector<std::size_t> rows;      // 0-based source row per sampled image
    std::size_t n_labeled = 0;          // the first n_labeled samples are anchors
    std::vector<std::size_t> per_class_labeled;  // anchor count per digit 0..9
};

/// Reads `path` (64 pixels in 0..16 then a label 0..9 per row), samples
/// n_samples rows without replacement and marks the first n_labeled of the
/// sampled order as labeled.
DigitsSample load_digits_csv(const std::filesystem::path& path, std::size_t n_samples, std::size_t n_labeled,
                             std::uint64_t seed, bool has_header = false);

}  // namespace labelflow
