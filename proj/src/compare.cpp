#include "labelflow/compare.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "labelflow/csv.hpp"
#include "labelflow/errors.hpp"

namespace labelflow {

namespace {

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

void score(Comparison& cmp, const std::vector<double>& macro) {
    std::size_t agree = 0;
    double sq = 0.0;
    for (std::size_t k = 0; k < macro.size(); ++k) {
        if (!cmp.occupied[k]) continue;
        ++cmp.occupied_cells;
        const double d = cmp.micro_on_grid[k] - macro[k];
        sq += d * d;
        cmp.sup = std::max(cmp.sup, std::abs(d));
        if (sign_of(cmp.micro_on_grid[k]) == sign_of(macro[k])) ++agree;
    }
    if (cmp.occupied_cells == 0) throw ValidationError("no occupied cells: point cloud and grid do not overlap");
    const double count = static_cast<double>(cmp.occupied_cells);
    cmp.sign_agreement = static_cast<double>(agree) / count;
    cmp.l2 = std::sqrt(sq / count);
}

/// Nodal cell index along one axis, or -1 outside the grid.
long cell_of(const Grid& g, double x, std::size_t axis) {
    const double t = std::round((x - g.lo(axis)) / g.h(axis));
    if (t < 0.0 || t > static_cast<double>(g.nodes(axis) - 1)) return -1;
    return static_cast<long>(t);
}

}  // namespace

Comparison compare_micro_macro(const PointCloud& cloud, const LabelState& micro, const MacroField& macro) {
    const Grid& g = macro.grid;
    if (micro.width != 1 || macro.width != 1) throw ValidationError("comparison needs scalar labels");
    if (cloud.dim() != g.dim()) throw ValidationError("cloud and grid dimensions differ");
    if (micro.size() != cloud.size()) throw ValidationError("state size does not match cloud");
    for (std::size_t a = 0; a < g.dim(); ++a) {
        const double half = 0.5 * g.h(a);
        if (cloud.box().hi[a] < g.lo(a) - half || cloud.box().lo[a] > g.hi(a) + half) {
            throw ValidationError("point cloud and macro grid domains are disjoint");
        }
    }

    Comparison cmp;
    cmp.micro_on_grid.assign(g.size(), std::numeric_limits<double>::quiet_NaN());
    cmp.occupied.assign(g.size(), 0);
    std::vector<double> sum(g.size(), 0.0);
    std::vector<std::size_t> count(g.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto x = cloud.point(i);
        const long ci = cell_of(g, x[0], 0);
        const long cj = g.dim() == 2 ? cell_of(g, x[1], 1) : 0;
        if (ci < 0 || cj < 0) continue;
        const std::size_t node = g.index(static_cast<std::size_t>(ci), static_cast<std::size_t>(cj));
        cmp.occupied[node] = 1;
        sum[node] += micro.values[i];
        ++count[node];
    }

    if (g.dim() == 1) {
        std::vector<std::size_t> order(cloud.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return cloud.point(a)[0] < cloud.point(b)[0]; });
        // Average labels of coincident points so the interpolant is a function.
        std::vector<double> xs;
        std::vector<double> us;
        std::vector<std::size_t> ns;
        for (std::size_t i : order) {
            const double x = cloud.point(i)[0];
            if (!xs.empty() && xs.back() == x) {
                us.back() += micro.values[i];
                ++ns.back();
            } else {
                xs.push_back(x);
                us.push_back(micro.values[i]);
                ns.push_back(1);
            }
        }
        for (std::size_t k = 0; k < us.size(); ++k) us[k] /= static_cast<double>(ns[k]);
        for (std::size_t k = 0; k < g.size(); ++k) {
            const double x = g.coord(k, 0);
            const auto it = std::upper_bound(xs.begin(), xs.end(), x);
            if (it == xs.begin()) {
                cmp.micro_on_grid[k] = us.front();
            } else if (it == xs.end()) {
                cmp.micro_on_grid[k] = us.back();
            } else {
                const std::size_t r = static_cast<std::size_t>(it - xs.begin());
                const double t = (x - xs[r - 1]) / (xs[r] - xs[r - 1]);
                cmp.micro_on_grid[k] = (1.0 - t) * us[r - 1] + t * us[r];
            }
        }
    } else {
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (count[k] > 0) cmp.micro_on_grid[k] = sum[k] / static_cast<double>(count[k]);
        }
    }
    score(cmp, macro.values);
    return cmp;
}

Comparison compare_fields(const MacroField& a, const MacroField& b) {
    if (!a.grid.same_as(b.grid)) throw ValidationError("fields live on different grids");
    if (a.width != 1 || b.width != 1) throw ValidationError("comparison needs scalar fields");
    Comparison cmp;
    cmp.micro_on_grid = a.values;
    cmp.occupied.assign(a.grid.size(), 1);
    score(cmp, b.values);
    return cmp;
}

CellScore score_cells(const PointCloud& cloud, std::span<const int> truth, const MacroField& field,
                      bool interior_only) {
    const Grid& g = field.grid;
    if (field.width != 1) throw ValidationError("cell scoring needs a scalar field");
    if (cloud.dim() != g.dim()) throw ValidationError("cloud and grid dimensions differ");
    if (truth.size() != cloud.size()) throw ValidationError("truth size does not match cloud");
    std::vector<long> votes(g.size(), 0);  // (#truth 1) - (#truth 0)
    std::vector<char> hit(g.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto x = cloud.point(i);
        const long ci = cell_of(g, x[0], 0);
        const long cj = g.dim() == 2 ? cell_of(g, x[1], 1) : 0;
        if (ci < 0 || cj < 0) continue;
        if (interior_only) {
            const auto last_i = static_cast<long>(g.nodes(0)) - 1;
            const auto last_j = static_cast<long>(g.nodes(1)) - 1;
            if (ci == 0 || ci == last_i || (g.dim() == 2 && (cj == 0 || cj == last_j))) continue;
        }
        const std::size_t node = g.index(static_cast<std::size_t>(ci), static_cast<std::size_t>(cj));
        hit[node] = 1;
        votes[node] += truth[i] == 1 ? 1 : (truth[i] == 0 ? -1 : 0);
    }
    CellScore s;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!hit[k] || votes[k] == 0) continue;
        ++s.cells;
        const int majority = votes[k] > 0 ? 1 : 0;
        const double u = field.values[k];
        if ((u > 0.0 && majority == 1) || (u < 0.0 && majority == 0)) ++s.agree;
    }
    if (s.cells == 0) throw ValidationError("no scored cells: point cloud and grid do not overlap");
    s.fraction = static_cast<double>(s.agree) / static_cast<double>(s.cells);
    return s;
}

void write_comparison_csv(const std::filesystem::path& path, const Comparison& cmp, const MacroField& macro) {
    std::vector<std::string> header;
    for (std::size_t a = 0; a < macro.grid.dim(); ++a) header.push_back("x_" + std::to_string(a));
    header.insert(header.end(), {"occupied", "micro", "macro"});
    CsvWriter out(path, header);
    std::vector<double> row(header.size());
    for (std::size_t k = 0; k < macro.grid.size(); ++k) {
        std::size_t q = 0;
        for (std::size_t a = 0; a < macro.grid.dim(); ++a) row[q++] = macro.grid.coord(k, a);
        row[q++] = cmp.occupied[k];
        row[q++] = cmp.micro_on_grid[k];
        row[q++] = macro.values[k];
        out.row(row);
    }
    out.close();
}

}  // namespace labelflow
