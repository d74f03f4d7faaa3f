#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "labelflow/core.hpp"

namespace labelflow {

/// Radial, nonnegative, non-increasing kernel profile eta(s).
///   indicator(R):        1 for s <= R, else 0
///   gaussian(s0):        exp(-s^2 / (2 s0^2)), truncated at 6 s0
///   inverse_distance(c): 1/s for 0 < s <= c, else 0
struct KernelProfile {
    enum class Kind { indicator, gaussian, inverse_distance };
    Kind kind = Kind::indicator;
    double param = 0.25;

    static KernelProfile indicator(double radius) { return {Kind::indicator, radius}; }
    static KernelProfile gaussian(double scale) { return {Kind::gaussian, scale}; }
    static KernelProfile inverse_distance(double cutoff) { return {Kind::inverse_distance, cutoff}; }

    double eval(double s) const;
    /// Radius beyond which eval() is zero.
    double support() const;
    void validate() const;
};

struct Edge {
    std::size_t i;
    std::size_t j;  // i < j
    double w;
};

/// Sparse symmetric weights. Each undirected edge is stored once in
/// `edges()` (sorted by (i, j)) and twice in the CSR adjacency.
class WeightGraph {
public:
    WeightGraph(std::size_t size, std::vector<Edge> edges, KernelProfile kernel = {}, double epsilon = 1.0);

    std::size_t size() const { return size_; }
    std::size_t num_edges() const { return edges_.size(); }
    const std::vector<Edge>& edges() const { return edges_; }
    const KernelProfile& kernel() const { return kernel_; }
    double epsilon() const { return epsilon_; }

    /// Neighbours of i and their weights (CSR row).
    std::span<const std::size_t> neighbors(std::size_t i) const {
        return {cols_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
    }
    std::span<const double> row_weights(std::size_t i) const {
        return {vals_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
    }
    double weight(std::size_t i, std::size_t j) const;
    double row_sum(std::size_t i) const;
    double max_row_sum() const { return max_row_sum_; }
    std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }
    bool connected() const { return connected_; }

private:
    std::size_t size_;
    std::vector<Edge> edges_;
    KernelProfile kernel_;
    double epsilon_;
    std::vector<std::size_t> offsets_;
    std::vector<std::size_t> cols_;
    std::vector<double> vals_;
    double max_row_sum_ = 0.0;
    bool connected_ = true;
};

/// Weights below this are not stored.
inline constexpr double kDropThreshold = 1e-15;

/// w_ij = eps^-d eta(|X_i - X_j| / eps) over all pairs within the kernel
/// support, found by uniform spatial hashing in d <= 3 and brute force above.
WeightGraph build_weights(const PointCloud& cloud, const KernelProfile& kernel, double epsilon,
                          int threads = 1);

/// Exhaustive O(N^2) pair loop; reference for the hashed search.
WeightGraph build_weights_brute(const PointCloud& cloud, const KernelProfile& kernel, double epsilon);

/// Same rule from a precomputed symmetric N x N distance matrix (row-major),
/// with d = `dim`. For inverse_distance, pairs at distance 0 get
/// 10 x the largest finite weight.
WeightGraph build_weights_from_distances(std::size_t n, std::span<const double> dist,
                                         const KernelProfile& kernel, double epsilon = 1.0,
                                         std::size_t dim = 1);

/// sigma_eta = 1/2 int_{R^d} eta(|x|) |x . e|^2 dx, evaluated via the radial
/// reduction |S^{d-1}|/(2d) int_0^inf eta(s) s^{d+1} ds with `quadrature_n`
/// Gauss-Legendre panels over the support.
double sigma_eta(const KernelProfile& kernel, std::size_t dim, std::size_t quadrature_n = 64);

/// True iff a single component spans every vertex.
bool check_connected(const WeightGraph& g);

void write_edges_csv(const std::filesystem::path& path, const WeightGraph& g);

}  // namespace labelflow
