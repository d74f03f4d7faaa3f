#include "labelflow/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "labelflow/errors.hpp"
#include "labelflow/random.hpp"

namespace labelflow {

PointCloud GeneratedCloud::unlabeled() const { return PointCloud(dim, coords, size(), {{}, {}}); }

GeneratedCloud gen_two_gaussians(const TwoGaussiansSpec& spec, std::uint64_t seed) {
    if (spec.n < 4) throw ValidationError("two-gaussians needs n >= 4, got " + std::to_string(spec.n));
    if (!(spec.sd1 >= 0.0) || !(spec.sd2 >= 0.0)) throw ValidationError("standard deviations must be >= 0");
    GeneratedCloud out;
    out.dim = 1;
    const std::size_t first = spec.n - spec.n / 2;
    RandomStream rng(seed, StreamPurpose::sampling);
    for (std::size_t k = 0; k < spec.n; ++k) {
        const bool a = k < first;
        out.coords.push_back(a ? rng.normal(spec.mu1, spec.sd1) : rng.normal(spec.mu2, spec.sd2));
        out.truth.push_back(a ? 0 : 1);
    }
    return out;
}

GeneratedCloud gen_two_moons(std::size_t n, double noise_sd, std::uint64_t seed) {
    if (n < 4) throw ValidationError("two-moons needs n >= 4, got " + std::to_string(n));
    if (!(noise_sd >= 0.0)) throw ValidationError("noise_sd must be >= 0");
    GeneratedCloud out;
    out.dim = 2;
    const std::size_t upper = n - n / 2;
    const std::size_t lower = n / 2;
    RandomStream rng(seed, StreamPurpose::sampling);
    auto arc = [&](std::size_t count, bool top) {
        for (std::size_t k = 0; k < count; ++k) {
            const double t = count > 1 ? std::numbers::pi * static_cast<double>(k) / static_cast<double>(count - 1)
                                       : 0.0;
            const double x = top ? std::cos(t) : 1.0 - std::cos(t);
            const double y = top ? std::sin(t) : 0.5 - std::sin(t);
            out.coords.push_back(x + rng.normal(0.0, noise_sd));
            out.coords.push_back(y + rng.normal(0.0, noise_sd));
            out.truth.push_back(top ? 0 : 1);
        }
    };
    arc(upper, true);
    arc(lower, false);
    return out;
}

std::vector<std::size_t> convex_hull(std::span<const double> coords_2d) {
    const std::size_t n = coords_2d.size() / 2;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto x = [&](std::size_t i) { return coords_2d[2 * i]; };
    auto y = [&](std::size_t i) { return coords_2d[2 * i + 1]; };
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return x(a) != x(b) ? x(a) < x(b) : (y(a) != y(b) ? y(a) < y(b) : a < b);
    });
    idx.erase(std::unique(idx.begin(), idx.end(),
                          [&](std::size_t a, std::size_t b) { return x(a) == x(b) && y(a) == y(b); }),
              idx.end());
    if (idx.size() < 3) return idx;
    auto cross = [&](std::size_t o, std::size_t a, std::size_t b) {
        return (x(a) - x(o)) * (y(b) - y(o)) - (y(a) - y(o)) * (x(b) - x(o));
    };
    std::vector<std::size_t> hull(2 * idx.size());
    std::size_t k = 0;
    for (std::size_t i : idx) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], i) <= 0.0) --k;
        hull[k++] = i;
    }
    for (std::size_t t = idx.size() - 1, lower = k + 1; t-- > 0;) {
        const std::size_t i = idx[t];
        while (k >= lower && cross(hull[k - 2], hull[k - 1], i) <= 0.0) --k;
        hull[k++] = i;
    }
    hull.resize(k - 1);
    return hull;
}

std::vector<std::vector<std::size_t>> anchors_extremes(const GeneratedCloud& cloud, std::size_t per_side) {
    const std::size_t n = cloud.size();
    if (per_side == 0 || 2 * per_side >= n) {
        throw ValidationError("extremes placement needs 0 < 2 * per_side < n");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return cloud.coords[a * cloud.dim] < cloud.coords[b * cloud.dim];
    });
    std::vector<std::vector<std::size_t>> groups(2);
    groups[0].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(per_side));
    groups[1].assign(idx.end() - static_cast<std::ptrdiff_t>(per_side), idx.end());
    return groups;
}

std::vector<std::vector<std::size_t>> anchors_hull(const GeneratedCloud& cloud) {
    if (cloud.dim != 2) throw ValidationError("hull placement needs a 2D cloud");
    if (cloud.truth.size() != cloud.size()) throw ValidationError("hull placement needs ground truth");
    const int top = *std::max_element(cloud.truth.begin(), cloud.truth.end());
    std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(std::max(top, 1)) + 1);
    for (std::size_t i : convex_hull(cloud.coords)) groups[static_cast<std::size_t>(cloud.truth[i])].push_back(i);
    for (auto& g : groups) std::sort(g.begin(), g.end());
    return groups;
}

DigitsSample load_digits_csv(const std::filesystem::path& path, std::size_t n_samples, std::size_t n_labeled,
                             std::uint64_t seed, bool has_header) {
    if (n_labeled == 0) throw ValidationError("n_labeled must be at least 1");
    if (n_labeled >= n_samples) {
        throw ValidationError("n_labeled (" + std::to_string(n_labeled) + ") must be below n_samples (" +
                              std::to_string(n_samples) + ")");
    }
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());

    std::vector<std::vector<double>> pixels;
    std::vector<int> labels;
    std::vector<std::size_t> line_of;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (has_header && lineno == 1) continue;
        std::vector<int> values;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        while (true) {
            while (p < end && *p == ' ') ++p;
            int v = 0;
            const auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc{}) {
                throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected an integer");
            }
            values.push_back(v);
            p = next;
            while (p < end && *p == ' ') ++p;
            if (p == end) break;
            if (*p != ',') throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected ','");
            ++p;
        }
        if (values.size() != 65) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 65 fields, found " +
                          std::to_string(values.size()));
        }
        for (std::size_t k = 0; k < 64; ++k) {
            if (values[k] < 0 || values[k] > 16) {
                throw IoError(path.string() + ":" + std::to_string(lineno) + ": pixel outside 0..16");
            }
        }
        if (values[64] < 0 || values[64] > 9) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": label outside 0..9");
        }
        pixels.emplace_back(values.begin(), values.begin() + 64);
        labels.push_back(values[64]);
        line_of.push_back(lineno);
    }
    if (in.bad()) throw IoError("read failed: " + path.string());
    if (n_samples > pixels.size()) {
        throw ValidationError("n_samples (" + std::to_string(n_samples) + ") exceeds the " +
                              std::to_string(pixels.size()) + " rows in " + path.string());
    }

    // Partial Fisher-Yates on the selection stream.
    std::vector<std::size_t> order(pixels.size());
    std::iota(order.begin(), order.end(), 0);
    RandomStream rng(seed, StreamPurpose::selection);
    for (std::size_t k = 0; k < n_samples; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, order.size() - 1);
        std::swap(order[k], order[pick(rng.engine())]);
    }

    DigitsSample out;
    out.n_labeled = n_labeled;
    out.per_class_labeled.assign(10, 0);
    for (std::size_t k = 0; k < n_samples; ++k) {
        const std::size_t r = order[k];
        try {
            out.images.push_back(ImageMeasure::from_pixels(8, 8, pixels[r]));
        } catch (const ValidationError&) {
            throw ValidationError(path.string() + ":" + std::to_string(line_of[r]) + ": all-zero image");
        }
        out.labels.push_back(labels[r]);
        out.rows.push_back(r);
        if (k < n_labeled) ++out.per_class_labeled[static_cast<std::size_t>(labels[r])];
    }
    return out;
}

}  // namespace labelflow
