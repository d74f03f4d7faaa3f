#include "labelflow/graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <unordered_map>

#include "labelflow/csv.hpp"
#include "labelflow/errors.hpp"
#include "labelflow/parallel.hpp"

namespace labelflow {

double KernelProfile::eval(double s) const {
    switch (kind) {
        case Kind::indicator: return s <= param ? 1.0 : 0.0;
        case Kind::gaussian: return s <= 6.0 * param ? std::exp(-0.5 * (s / param) * (s / param)) : 0.0;
        case Kind::inverse_distance: return (s > 0.0 && s <= param) ? 1.0 / s : 0.0;
    }
    return 0.0;
}

double KernelProfile::support() const {
    return kind == Kind::gaussian ? 6.0 * param : param;
}

void KernelProfile::validate() const {
    if (!(std::isfinite(param) && param > 0.0)) {
        throw ValidationError("kernel parameter must be positive, got " + std::to_string(param));
    }
}

namespace {

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent[std::max(a, b)] = std::min(a, b);
        return true;
    }
};

double scaled_weight(const KernelProfile& k, double dist, double epsilon, std::size_t dim) {
    return std::pow(epsilon, -static_cast<double>(dim)) * k.eval(dist / epsilon);
}

double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

using CellKey = std::array<std::int64_t, 3>;

struct CellHash {
    std::size_t operator()(const CellKey& c) const {
        std::uint64_t h = 1469598103934665603ull;
        for (auto v : c) h = (h ^ static_cast<std::uint64_t>(v)) * 1099511628211ull;
        return h;
    }
};

}  // namespace

WeightGraph::WeightGraph(std::size_t size, std::vector<Edge> edges, KernelProfile kernel, double epsilon)
    : size_(size), edges_(std::move(edges)), kernel_(kernel), epsilon_(epsilon) {
    for (const auto& e : edges_) {
        if (e.i >= e.j || e.j >= size_) throw ValidationError("edge indices must satisfy i < j < size");
        if (!(e.w >= 0.0) || !std::isfinite(e.w)) throw ValidationError("edge weight must be finite and >= 0");
    }
    std::sort(edges_.begin(), edges_.end(),
              [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    for (std::size_t k = 1; k < edges_.size(); ++k) {
        if (edges_[k].i == edges_[k - 1].i && edges_[k].j == edges_[k - 1].j) {
            throw ValidationError("duplicate edge");
        }
    }

    offsets_.assign(size_ + 1, 0);
    for (const auto& e : edges_) {
        ++offsets_[e.i + 1];
        ++offsets_[e.j + 1];
    }
    for (std::size_t i = 0; i < size_; ++i) offsets_[i + 1] += offsets_[i];
    cols_.resize(offsets_[size_]);
    vals_.resize(offsets_[size_]);
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    // Edges are sorted by (i, j), so each row comes out sorted by column:
    // entries j < i arrive first (as the second endpoint), then j > i.
    for (const auto& e : edges_) {
        cols_[fill[e.j]] = e.i;
        vals_[fill[e.j]++] = e.w;
    }
    for (const auto& e : edges_) {
        cols_[fill[e.i]] = e.j;
        vals_[fill[e.i]++] = e.w;
    }

    for (std::size_t i = 0; i < size_; ++i) max_row_sum_ = std::max(max_row_sum_, row_sum(i));

    UnionFind uf(size_);
    std::size_t components = size_;
    for (const auto& e : edges_) {
        if (uf.unite(e.i, e.j)) --components;
    }
    connected_ = components <= 1;
}

double WeightGraph::weight(std::size_t i, std::size_t j) const {
    const auto nb = neighbors(i);
    const auto it = std::lower_bound(nb.begin(), nb.end(), j);
    if (it == nb.end() || *it != j) return 0.0;
    return vals_[offsets_[i] + static_cast<std::size_t>(it - nb.begin())];
}

double WeightGraph::row_sum(std::size_t i) const {
    double s = 0.0;
    for (double w : row_weights(i)) s += w;
    return s;
}

WeightGraph build_weights_brute(const PointCloud& cloud, const KernelProfile& kernel, double epsilon) {
    kernel.validate();
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ValidationError("epsilon must be positive");
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (std::size_t j = i + 1; j < cloud.size(); ++j) {
            const double w = scaled_weight(kernel, distance(cloud.point(i), cloud.point(j)), epsilon, cloud.dim());
            if (w >= kDropThreshold) edges.push_back({i, j, w});
        }
    }
    return WeightGraph(cloud.size(), std::move(edges), kernel, epsilon);
}

WeightGraph build_weights(const PointCloud& cloud, const KernelProfile& kernel, double epsilon, int threads) {
    kernel.validate();
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ValidationError("epsilon must be positive");
    const std::size_t dim = cloud.dim();
    const std::size_t n = cloud.size();
    if (dim > 3) return build_weights_brute(cloud, kernel, epsilon);

    const double cell = kernel.support() * epsilon;
    auto key_of = [&](std::span<const double> x) {
        CellKey key{0, 0, 0};
        for (std::size_t a = 0; a < dim; ++a) {
            key[a] = static_cast<std::int64_t>(std::floor((x[a] - cloud.box().lo[a]) / cell));
        }
        return key;
    };
    std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> cells;
    for (std::size_t i = 0; i < n; ++i) cells[key_of(cloud.point(i))].push_back(i);

    const int offsets_per_axis = 3;
    std::size_t stencil = 1;
    for (std::size_t a = 0; a < dim; ++a) stencil *= offsets_per_axis;

    // Mirrors the block split of parallel_for_blocks so block b owns buffers[b].
    const std::size_t workers =
        std::max<std::size_t>(1, std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1))));
    std::vector<std::vector<Edge>> buffers(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    parallel_for_blocks(n, threads, [&](std::size_t begin, std::size_t end) {
        auto& out = buffers[chunk ? begin / chunk : 0];
        std::vector<Edge> local;
        for (std::size_t i = begin; i < end; ++i) {
            const auto xi = cloud.point(i);
            const CellKey home = key_of(xi);
            local.clear();
            for (std::size_t s = 0; s < stencil; ++s) {
                CellKey key = home;
                std::size_t code = s;
                for (std::size_t a = 0; a < dim; ++a) {
                    key[a] += static_cast<std::int64_t>(code % offsets_per_axis) - 1;
                    code /= offsets_per_axis;
                }
                const auto it = cells.find(key);
                if (it == cells.end()) continue;
                for (std::size_t j : it->second) {
                    if (j <= i) continue;
                    const double w = scaled_weight(kernel, distance(xi, cloud.point(j)), epsilon, dim);
                    if (w >= kDropThreshold) local.push_back({i, j, w});
                }
            }
            std::sort(local.begin(), local.end(), [](const Edge& a, const Edge& b) { return a.j < b.j; });
            out.insert(out.end(), local.begin(), local.end());
        }
    });

    std::vector<Edge> edges;
    for (auto& b : buffers) edges.insert(edges.end(), b.begin(), b.end());
    return WeightGraph(n, std::move(edges), kernel, epsilon);
}

WeightGraph build_weights_from_distances(std::size_t n, std::span<const double> dist,
                                         const KernelProfile& kernel, double epsilon, std::size_t dim) {
    kernel.validate();
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ValidationError("epsilon must be positive");
    if (dist.size() != n * n) {
        throw ValidationError("distance matrix has " + std::to_string(dist.size()) + " entries, expected " +
                              std::to_string(n * n));
    }
    std::vector<Edge> edges;
    std::vector<std::size_t> zero_pairs;
    double max_w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = dist[i * n + j];
            if (!(d >= 0.0)) throw ValidationError("negative or NaN distance at (" + std::to_string(i) + "," +
                                                   std::to_string(j) + ")");
            if (d == 0.0 && kernel.kind == KernelProfile::Kind::inverse_distance) {
                zero_pairs.push_back(edges.size());
                edges.push_back({i, j, 0.0});
                continue;
            }
            const double w = scaled_weight(kernel, d, epsilon, dim);
            if (w >= kDropThreshold) {
                edges.push_back({i, j, w});
                max_w = std::max(max_w, w);
            }
        }
    }
    const double cap = max_w > 0.0 ? 10.0 * max_w : 1.0;
    for (std::size_t k : zero_pairs) edges[k].w = cap;
    return WeightGraph(n, std::move(edges), kernel, epsilon);
}

double sigma_eta(const KernelProfile& kernel, std::size_t dim, std::size_t quadrature_n) {
    if (kernel.kind == KernelProfile::Kind::inverse_distance) {
        throw ValidationError("sigma_eta is not defined for the inverse-distance profile");
    }
    kernel.validate();
    if (dim == 0) throw ValidationError("dimension must be positive");
    if (quadrature_n == 0) throw ValidationError("quadrature_n must be positive");

    // 5-point Gauss-Legendre on [-1, 1].
    static constexpr std::array<double, 5> nodes{0.0, 0.5384693101056831, -0.5384693101056831,
                                                 0.9061798459386640, -0.9061798459386640};
    static constexpr std::array<double, 5> weights{0.5688888888888889, 0.4786286704993665,
                                                   0.4786286704993665, 0.2369268850561891,
                                                   0.2369268850561891};
    const double top = kernel.support();
    const double h = top / static_cast<double>(quadrature_n);
    const double p = static_cast<double>(dim) + 1.0;
    double integral = 0.0;
    for (std::size_t k = 0; k < quadrature_n; ++k) {
        const double mid = (static_cast<double>(k) + 0.5) * h;
        for (std::size_t q = 0; q < nodes.size(); ++q) {
            const double s = mid + 0.5 * h * nodes[q];
            integral += 0.5 * h * weights[q] * kernel.eval(s) * std::pow(s, p);
        }
    }
    const double d = static_cast<double>(dim);
    const double sphere = 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
    return sphere / (2.0 * d) * integral;
}

bool check_connected(const WeightGraph& g) { return g.connected(); }

void write_edges_csv(const std::filesystem::path& path, const WeightGraph& g) {
    const std::vector<std::string> header{"i", "j", "w"};
    CsvWriter out(path, header);
    for (const auto& e : g.edges()) {
        const std::array<double, 3> row{static_cast<double>(e.i), static_cast<double>(e.j), e.w};
        out.row(row);
    }
    out.close();
}

}  // namespace labelflow
