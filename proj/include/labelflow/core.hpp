#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace labelflow {

/// Axis-aligned bounding box of a point cloud.
struct Box {
    std::vector<double> lo;
    std::vector<double> hi;

    bool contains(std::span<const double> x) const;
};

/// Sample points in `dim` dimensions. The first `n_unlabeled` points carry no
/// label; the remaining points are split into disjoint label groups, group g
/// holding the anchors of label g.
class PointCloud {
public:
    PointCloud(std::size_t dim, std::vector<double> coords, std::size_t n_unlabeled,
               std::vector<std::vector<std::size_t>> groups);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return coords_.size() / dim_; }
    std::size_t n_unlabeled() const { return n_unlabeled_; }
    std::size_t n_labeled() const { return size() - n_unlabeled_; }
    std::size_t num_labels() const { return groups_.size(); }

    std::span<const double> point(std::size_t i) const {
        return {coords_.data() + i * dim_, dim_};
    }
    std::span<const double> coords() const { return coords_; }
    const std::vector<std::vector<std::size_t>>& groups() const { return groups_; }
    const Box& box() const { return box_; }

    bool is_labeled(std::size_t i) const { return i >= n_unlabeled_; }
    /// Label group of an anchor, or nullopt for an unlabeled point.
    std::optional<std::size_t> group_of(std::size_t i) const;

private:
    std::size_t dim_;
    std::vector<double> coords_;
    std::size_t n_unlabeled_;
    std::vector<std::vector<std::size_t>> groups_;
    std::vector<std::uint32_t> group_index_;  // per labeled point
    Box box_;
};

/// A cloud rebuilt with anchors moved to the end, plus the map back to the
/// caller's ordering: `original_index[new_i] = old_i`.
struct LabeledCloud {
    PointCloud cloud;
    std::vector<std::size_t> original_index;
};

/// Attaches label groups (given as indices into `coords`) to raw points.
LabeledCloud attach_labels(std::size_t dim, std::span<const double> coords,
                           const std::vector<std::vector<std::size_t>>& anchors);

// ---------------------------------------------------------------------------
// Double-well potentials

enum class WellKind { symmetric_pm1, unit_interval };

struct WellValue {
    double value;
    double derivative;
};

/// W(t) = (t^2 - 1)^2 with wells at -1, 1, or W(t) = t^2 (t - 1)^2 with wells
/// at 0, 1.
class DoubleWell {
public:
    constexpr explicit DoubleWell(WellKind kind = WellKind::symmetric_pm1) : kind_(kind) {}

    WellKind kind() const { return kind_; }
    double lower_well() const { return kind_ == WellKind::symmetric_pm1 ? -1.0 : 0.0; }
    double upper_well() const { return 1.0; }

    WellValue eval(double t) const;
    double value(double t) const { return eval(t).value; }
    double derivative(double t) const { return eval(t).derivative; }
    double second_derivative(double t) const;
    /// max |W''| over [lo, hi]; exact because W'' is a parabola.
    double max_abs_curvature(double lo, double hi) const;

private:
    WellKind kind_;
};

WellValue eval_double_well(const DoubleWell& w, double t);

// ---------------------------------------------------------------------------
// Label states

/// Per-point label vectors. Two labels use one signed component (anchors -1
/// and +1); k > 2 labels use k components with one-hot anchors.
struct LabelState {
    std::size_t width = 1;
    std::vector<double> values;        // size() * width, point-major
    std::vector<std::uint8_t> frozen;  // 1 exactly on anchors
    std::vector<std::vector<double>> codes;  // anchor vector per label group

    std::size_t size() const { return frozen.size(); }
    double& at(std::size_t i, std::size_t c) { return values[i * width + c]; }
    double at(std::size_t i, std::size_t c) const { return values[i * width + c]; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * width, width}; }
};

std::size_t label_width(std::size_t num_labels);
std::vector<std::vector<double>> label_codes(std::size_t num_labels);

struct InitSpec {
    enum class Kind { zero, uniform, normal };
    Kind kind = Kind::zero;
    double sigma = 0.1;  // standard deviation for Kind::normal
};

/// Anchors set to their codes; unlabeled entries drawn per `spec` from the
/// init sub-stream of `seed`.
LabelState init_labels(const PointCloud& cloud, const InitSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
    double gamma = 1.0;
    double kappa = 0.0;
    double dt = 1e-3;
    double t_end = 1.0;
    double epsilon = 1.0;
    std::uint64_t seed = 0;
    double stationarity_tol = 1e-6;
    int threads = 1;

    /// Throws ValidationError for gamma <= 0, kappa < 0, dt <= 0, t_end <= 0,
    /// epsilon <= 0, stationarity_tol <= 0 or non-finite values.
    void validate() const;
};

// ---------------------------------------------------------------------------
// CSV persistence: header x_0..x_{d-1},frozen,u_0..u_{w-1}[,truth]

struct CloudFile {
    PointCloud cloud;
    LabelState state;
    std::vector<int> truth;  // empty when the file has no truth column
    std::vector<std::size_t> original_index;  // file row of each stored point
};

void write_cloud_csv(const std::filesystem::path& path, const PointCloud& cloud,
                     const LabelState& state, std::span<const int> truth = {});
CloudFile read_cloud_csv(const std::filesystem::path& path);

}  // namespace labelflow
