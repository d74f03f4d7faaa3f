#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "labelflow/core.hpp"
#include "labelflow/graph.hpp"
#include "labelflow/micro.hpp"

namespace labelflow {

/// Regular node grid on an interval or a rectangle. Nodes include the
/// boundary; node (i, j) has flat index j * nodes[0] + i.
class Grid {
public:
    static Grid line(double lo, double hi, std::size_t nodes);
    static Grid rect(double x_lo, double x_hi, std::size_t nx, double y_lo, double y_hi, std::size_t ny);

    std::size_t dim() const { return dim_; }
    std::size_t nodes(std::size_t axis) const { return nodes_[axis]; }
    std::size_t size() const { return nodes_[0] * nodes_[1]; }
    double lo(std::size_t axis) const { return lo_[axis]; }
    double hi(std::size_t axis) const { return hi_[axis]; }
    double h(std::size_t axis) const { return h_[axis]; }
    std::size_t index(std::size_t i, std::size_t j = 0) const { return j * nodes_[0] + i; }
    double coord(std::size_t node, std::size_t axis) const;
    /// Trapezoid weight of a node (cell volume, halved per boundary axis).
    double volume(std::size_t node) const;
    bool same_as(const Grid& other) const;

private:
    Grid(std::size_t dim, std::array<double, 2> lo, std::array<double, 2> hi, std::array<std::size_t, 2> nodes);

    std::size_t dim_;
    std::array<double, 2> lo_;
    std::array<double, 2> hi_;
    std::array<std::size_t, 2> nodes_;
    std::array<double, 2> h_;
};

struct DensityField {
    Grid grid;
    std::vector<double> values;
    double floor = 0.0;
    double bandwidth = 0.0;  // 0 when not from a KDE

    double integral() const;
};

/// Gaussian KDE with covariance bandwidth * I evaluated at the nodes, then
/// rho = max(s * rho_raw, floor) with s chosen so the trapezoid integral is 1.
DensityField kde_density(const PointCloud& cloud, const Grid& grid, double bandwidth, double floor);

/// Wraps given nodal values; with `normalize`, rescales to unit trapezoid mass.
DensityField make_density(const Grid& grid, std::vector<double> values, bool normalize = true);

/// Dirichlet node sets with one anchor vector each; Neumann elsewhere.
struct BoundarySpec {
    std::vector<std::vector<std::size_t>> regions;
    std::vector<std::vector<double>> values;

    /// Regions nonempty, in range, width-consistent, and regions with
    /// different anchors neither share nor touch (8-neighbourhood) a node.
    void validate(const Grid& grid, std::size_t width) const;
};

/// Each labeled point pins the nodes of the grid cell containing it to its
/// group's anchor code.
BoundarySpec anchor_regions(const Grid& grid, const PointCloud& cloud);

struct MacroField {
    Grid grid;
    std::size_t width = 1;
    std::vector<double> values;  // node-major, width per node
    double time = 0.0;

    double at(std::size_t node, std::size_t c = 0) const { return values[node * width + c]; }
};

/// Zero interior with Dirichlet nodes set to their anchors.
MacroField initial_field(const Grid& grid, std::size_t width, const BoundarySpec& bc);

struct MacroProblem {
    DensityField rho;
    BoundarySpec bc;
    DoubleWell potential;
    RunConfig config;
    double sigma_eta = 0.0;
    double background = 0.0;  // r in (r + rho^2)
    bool allow_unstable = false;
    double cg_tol = 1e-8;
    std::size_t cg_max_iters = 20000;

    /// 1 / (kappa * max|W''| on [-1.5, 1.5]).
    double reaction_bound() const;
    void validate(const MacroField& field) const;
};

/// Lie splitting: implicit diffusion rho (u* - u)/dt = g s div((r + rho^2) grad u*)
/// followed by u = u* - dt kappa W'(u*) at nodes with rho > 0. Dirichlet
/// nodes stay pinned; Neumann via mirrored ghost nodes.
MacroField macro_step_1d(const MacroField& field, const MacroProblem& p);
MacroField macro_step_2d(const MacroField& field, const MacroProblem& p);
MacroField macro_step(const MacroField& field, const MacroProblem& p);

struct MacroOptions {
    std::size_t trace_stride = 10;
    std::size_t snapshot_stride = 0;  // 0 keeps no intermediate snapshots
};

struct MacroResult {
    MacroField final;
    EnergyTrace trace;
    std::vector<MacroField> snapshots;
    std::size_t steps = 0;
    bool stationary = false;
    double max_energy_increase = 0.0;  // largest per-step rise, relative to max(1, |E|)
    double range_excess = 0.0;         // largest distance outside [lower well, upper well]
};

/// Steps until t_end or until max |du/dt| < stationarity_tol; the energy is
/// evaluated every step.
MacroResult run_macro(const MacroField& u0, const MacroProblem& p, const MacroOptions& opts = {});

/// (g s/2) int (r + rho^2) |grad u|^2 + kappa int rho W(u), with gradients on
/// cell faces and the face coefficient used by the solver; trapezoid weights.
double continuum_energy(const MacroField& field, const DensityField& rho, const DoubleWell& potential,
                        double gamma, double kappa, double sigma_eta_val, double background = 0.0);

/// (g/4) int int eps^-2 eta_eps(|y-x|) (u(y)-u(x))^2 rho(x) rho(y) + kappa int rho W(u)
/// by double trapezoid sums (1D only).
double nonlocal_energy(const MacroField& field, const DensityField& rho, const KernelProfile& kernel,
                       double epsilon, double gamma, double kappa, const DoubleWell& potential);

/// int_{lower}^{upper} sqrt(W(s)) ds by adaptive Simpson.
double sigma_w(const DoubleWell& potential);

struct GammaDiagnostics {
    double rescaled_energy;
    double sharp_energy;
    std::size_t jumps;
};

/// rescaled = (g s/(2 kappa_n)) int rho^2 |u'|^2 + kappa_n int rho W(u);
/// sharp = sqrt(2 g s) sigma_W sum_jumps 2 rho^{3/2}(x_jump) over sign changes
/// of u (1D). Throws ValidationError if more than 5% of nodes lie outside
/// 0.05 of a well.
GammaDiagnostics gamma_diagnostics(const MacroField& field, const DensityField& rho, const DoubleWell& potential,
                                   double gamma, double kappa_n, double sigma_eta_val);

struct Plateau {
    std::vector<std::size_t> nodes;
    double min_abs = 0.0;
    bool ok = false;  // min |u| >= 0.95
};

struct StructureReport {
    std::vector<std::size_t> zero_region_violations;  // rho <= tol but |u| > 1e-6
    std::vector<Plateau> plateaus;                    // connected flat same-sign sets with rho > tol
    std::size_t plateau_violations = 0;
    double zero_region_max_abs = 0.0;
    std::size_t zero_region_nodes = 0;
};

/// Scalar fields only. A node is flat when every centred difference
/// quotient is at most `flat_tol` in magnitude.
StructureReport structure_check(const MacroField& field, const DensityField& rho, double zero_region_tol,
                                double flat_tol = 0.5);

/// CSV: x_0[,x_1],rho,u_0..u_{w-1}
void write_field_csv(const std::filesystem::path& path, const MacroField& field, const DensityField& rho);

struct FieldFile {
    MacroField field;
    DensityField rho;
};

/// Reads a file written by write_field_csv; the grid is rebuilt from the
/// node coordinates (x_0 varying fastest in 2D).
FieldFile read_field_csv(const std::filesystem::path& path);

}  // namespace labelflow
