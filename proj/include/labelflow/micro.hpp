#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "labelflow/core.hpp"
#include "labelflow/graph.hpp"

namespace labelflow {

/// plain: interaction prefactor gamma/(n+m); eps2: gamma/(eps^2 (n+m)).
enum class Scaling { plain, eps2 };

/// Graph ODE on a fixed cloud. Holds references; cloud and graph must
/// outlive the system.
class MicroSystem {
public:
    MicroSystem(const PointCloud& cloud, const WeightGraph& graph, DoubleWell potential, RunConfig config,
                Scaling scaling = Scaling::plain);

    const PointCloud& cloud() const { return *cloud_; }
    const WeightGraph& graph() const { return *graph_; }
    const DoubleWell& potential() const { return potential_; }
    const RunConfig& config() const { return config_; }
    Scaling scaling() const { return scaling_; }

    double gamma_eff() const;
    /// 1 / (gamma_eff * max_row_sum/(n+m) + kappa * max|W''| on [-1.5, 1.5]).
    double stability_bound() const;
    /// Same with max|W''| taken between the wells; below it, iterates started
    /// between the wells stay there.
    double max_principle_bound() const;

private:
    const PointCloud* cloud_;
    const WeightGraph* graph_;
    DoubleWell potential_;
    RunConfig config_;
    Scaling scaling_;
};

struct StepOptions {
    bool allow_unstable = false;  // skip the dt <= stability_bound check
};

/// One explicit Euler step. Frozen entries are copied.
LabelState micro_step(const MicroSystem& sys, const LabelState& u, const StepOptions& opts = {});

/// Writes the step into `next` (same shape as `u`, must not alias it).
/// Returns max_i |u_i^{k+1} - u_i^k| over all components.
double micro_step_into(const MicroSystem& sys, const LabelState& u, LabelState& next,
                       const StepOptions& opts = {});

struct EnergyTrace {
    std::vector<std::size_t> steps;
    std::vector<double> times;
    std::vector<double> energies;
    std::vector<double> velocity_l2;  // (1/n) sum_i |du_i/dt|^2

    std::size_t size() const { return times.size(); }
};

struct MicroOptions {
    std::size_t trace_stride = 10;  // 1 records every step
    bool check_dissipation = true;
    double dissipation_tol = 1e-10;  // relative to max(1, |E|)
    StepOptions step;
};

struct MicroResult {
    LabelState final;
    EnergyTrace trace;
    std::size_t steps = 0;
    bool stationary = false;
    double time = 0.0;
};

/// Steps until t_end or until max |du/dt| < stationarity_tol. Throws
/// SolverError if the energy rises by more than the dissipation tolerance in
/// one step.
MicroResult run_micro(const MicroSystem& sys, const LabelState& u0, const MicroOptions& opts = {});

/// E = g/(4 n (n+m)) sum_{i,j<=n} w_ij |u_j-u_i|^2
///   + g/(2 n (n+m)) sum_{i<=n, j>n} w_ij |u_j-u_i|^2 + (kappa/n) sum_{i<=n} W(u_i)
/// with g = gamma_eff; W summed over components for multi-label states.
double discrete_energy(const MicroSystem& sys, const LabelState& u);

/// Label index per point: sign for width 1 (negative -> 0, positive -> 1,
/// exactly 0 -> -1), argmax with lowest-index ties otherwise.
std::vector<int> classify(const LabelState& u);

void write_trace_csv(const std::filesystem::path& path, const EnergyTrace& trace);

}  // namespace labelflow
