#include "labelflow/micro.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string>

#include "labelflow/csv.hpp"
#include "labelflow/errors.hpp"
#include "labelflow/parallel.hpp"

namespace labelflow {

MicroSystem::MicroSystem(const PointCloud& cloud, const WeightGraph& graph, DoubleWell potential,
                         RunConfig config, Scaling scaling)
    : cloud_(&cloud), graph_(&graph), potential_(potential), config_(config), scaling_(scaling) {
    config_.validate();
    if (graph.size() != cloud.size()) {
        throw ValidationError("graph has " + std::to_string(graph.size()) + " vertices, cloud has " +
                              std::to_string(cloud.size()) + " points");
    }
    if (cloud.n_unlabeled() == 0) throw ValidationError("cloud has no unlabeled points");
    const bool multi = label_width(cloud.num_labels()) > 1;
    if (multi && potential.kind() != WellKind::unit_interval) {
        throw ValidationError("multi-label states need the unit_interval potential");
    }
    if (!multi && potential.kind() != WellKind::symmetric_pm1) {
        throw ValidationError("two-label states need the symmetric_pm1 potential");
    }
}

double MicroSystem::gamma_eff() const {
    const double g = config_.gamma;
    return scaling_ == Scaling::eps2 ? g / (config_.epsilon * config_.epsilon) : g;
}

namespace {

double bound(const MicroSystem& sys, double curvature) {
    const double n_total = static_cast<double>(sys.cloud().size());
    const double rate = sys.gamma_eff() * sys.graph().max_row_sum() / n_total + sys.config().kappa * curvature;
    return rate > 0.0 ? 1.0 / rate : std::numeric_limits<double>::infinity();
}

void check_shape(const MicroSystem& sys, const LabelState& u) {
    const std::size_t width = label_width(sys.cloud().num_labels());
    if (u.size() != sys.cloud().size() || u.width != width || u.values.size() != u.size() * width) {
        throw ValidationError("label state shape does not match the system");
    }
}

}  // namespace

double MicroSystem::stability_bound() const { return bound(*this, potential_.max_abs_curvature(-1.5, 1.5)); }

double MicroSystem::max_principle_bound() const {
    return bound(*this, potential_.max_abs_curvature(potential_.lower_well(), potential_.upper_well()));
}

double micro_step_into(const MicroSystem& sys, const LabelState& u, LabelState& next, const StepOptions& opts) {
    check_shape(sys, u);
    const RunConfig& cfg = sys.config();
    if (!opts.allow_unstable && cfg.dt > sys.stability_bound()) {
        std::ostringstream msg;
        msg << "dt " << cfg.dt << " exceeds the stability bound " << sys.stability_bound();
        throw ValidationError(msg.str());
    }
    for (double v : u.values) {
        if (!std::isfinite(v)) throw ValidationError("non-finite label value");
    }
    next.width = u.width;
    next.codes = u.codes;
    next.frozen = u.frozen;
    next.values.resize(u.values.size());

    const WeightGraph& g = sys.graph();
    const std::size_t n = sys.cloud().n_unlabeled();
    const std::size_t width = u.width;
    const double coupling = sys.gamma_eff() * cfg.dt / static_cast<double>(sys.cloud().size());
    const double react = sys.config().kappa * cfg.dt;
    const DoubleWell w = sys.potential();

    std::copy(u.values.begin() + static_cast<std::ptrdiff_t>(n * width), u.values.end(),
              next.values.begin() + static_cast<std::ptrdiff_t>(n * width));

    const int threads = cfg.threads;
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(n, static_cast<std::size_t>(threads)));
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<double> block_max(workers, 0.0);
    parallel_for_blocks(n, threads, [&](std::size_t begin, std::size_t end) {
        double local = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const auto nb = g.neighbors(i);
            const auto wt = g.row_weights(i);
            for (std::size_t c = 0; c < width; ++c) {
                const double ui = u.values[i * width + c];
                double lap = 0.0;
                for (std::size_t k = 0; k < nb.size(); ++k) lap += wt[k] * (u.values[nb[k] * width + c] - ui);
                const double updated = ui + coupling * lap - react * w.derivative(ui);
                next.values[i * width + c] = updated;
                local = std::max(local, std::abs(updated - ui));
            }
        }
        block_max[begin / chunk] = local;
    });
    const double delta = *std::max_element(block_max.begin(), block_max.end());
    if (!std::isfinite(delta)) throw SolverError("micro step produced non-finite values");
    return delta;
}

LabelState micro_step(const MicroSystem& sys, const LabelState& u, const StepOptions& opts) {
    LabelState next;
    micro_step_into(sys, u, next, opts);
    return next;
}

double discrete_energy(const MicroSystem& sys, const LabelState& u) {
    check_shape(sys, u);
    const std::size_t n = sys.cloud().n_unlabeled();
    const double n_total = static_cast<double>(sys.cloud().size());
    const std::size_t width = u.width;

    // Each undirected edge with an unlabeled endpoint contributes with weight
    // 1/2: twice at 1/4 when both ends are unlabeled, once at 1/2 otherwise.
    double interaction = 0.0;
    for (const auto& e : sys.graph().edges()) {
        if (e.i >= n) break;  // edges sorted by i; both endpoints labeled from here on
        double sq = 0.0;
        for (std::size_t c = 0; c < width; ++c) {
            const double d = u.values[e.j * width + c] - u.values[e.i * width + c];
            sq += d * d;
        }
        interaction += e.w * sq;
    }
    double well = 0.0;
    for (std::size_t i = 0; i < n * width; ++i) well += sys.potential().value(u.values[i]);

    const double nn = static_cast<double>(n);
    return sys.gamma_eff() / (2.0 * nn * n_total) * interaction + sys.config().kappa / nn * well;
}

MicroResult run_micro(const MicroSystem& sys, const LabelState& u0, const MicroOptions& opts) {
    check_shape(sys, u0);
    const RunConfig& cfg = sys.config();
    if (opts.trace_stride == 0) throw ValidationError("trace_stride must be positive");
    const std::size_t n = sys.cloud().n_unlabeled();
    const std::size_t width = u0.width;

    const double ratio = cfg.t_end / cfg.dt;
    const auto max_steps = static_cast<std::size_t>(
        std::abs(ratio - std::round(ratio)) < 1e-9 * ratio ? std::round(ratio) : std::ceil(ratio));

    MicroResult result;
    LabelState cur = u0;
    LabelState next;
    double energy = discrete_energy(sys, cur);
    auto record = [&](std::size_t step, double v2) {
        result.trace.steps.push_back(step);
        result.trace.times.push_back(static_cast<double>(step) * cfg.dt);
        result.trace.energies.push_back(energy);
        result.trace.velocity_l2.push_back(v2);
    };
    record(0, 0.0);

    std::size_t step = 0;
    while (step < max_steps) {
        const double delta = micro_step_into(sys, cur, next, opts.step);
        ++step;
        const bool recorded = step % opts.trace_stride == 0;
        const bool stationary = delta / cfg.dt < cfg.stationarity_tol;
        const bool last = stationary || step == max_steps;

        if (opts.check_dissipation || recorded || last) {
            const double e_next = discrete_energy(sys, next);
            if (opts.check_dissipation && e_next > energy + opts.dissipation_tol * std::max(1.0, std::abs(energy))) {
                std::ostringstream msg;
                msg.precision(17);
                msg << "energy increased at step " << step << ": " << energy << " -> " << e_next
                    << " (dt " << cfg.dt << ", stability bound " << sys.stability_bound() << ")";
                throw SolverError(msg.str());
            }
            energy = e_next;
        }
        if (recorded || last) {
            double v2 = 0.0;
            for (std::size_t k = 0; k < n * width; ++k) {
                const double v = (next.values[k] - cur.values[k]) / cfg.dt;
                v2 += v * v;
            }
            record(step, v2 / static_cast<double>(n));
        }
        std::swap(cur, next);
        if (stationary) {
            result.stationary = true;
            break;
        }
    }
    result.steps = step;
    result.time = static_cast<double>(step) * cfg.dt;
    result.final = std::move(cur);
    return result;
}

std::vector<int> classify(const LabelState& u) {
    std::vector<int> out(u.size(), -1);
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (u.width == 1) {
            const double v = u.values[i];
            out[i] = v < 0.0 ? 0 : (v > 0.0 ? 1 : -1);
            continue;
        }
        const auto row = u.row(i);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

void write_trace_csv(const std::filesystem::path& path, const EnergyTrace& trace) {
    const std::vector<std::string> header{"step", "time", "energy", "velocity_l2"};
    CsvWriter out(path, header);
    for (std::size_t k = 0; k < trace.size(); ++k) {
        const std::array<double, 4> row{static_cast<double>(trace.steps[k]), trace.times[k], trace.energies[k],
                                        trace.velocity_l2[k]};
        out.row(row);
    }
    out.close();
}

}  // namespace labelflow
