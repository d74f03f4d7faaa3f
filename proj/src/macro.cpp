#include "labelflow/macro.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>

#include "labelflow/csv.hpp"
#include "labelflow/errors.hpp"
#include "labelflow/parallel.hpp"

namespace labelflow {

// ---------------------------------------------------------------------------
// Grid

Grid::Grid(std::size_t dim, std::array<double, 2> lo, std::array<double, 2> hi, std::array<std::size_t, 2> nodes)
    : dim_(dim), lo_(lo), hi_(hi), nodes_(nodes), h_{1.0, 1.0} {
    for (std::size_t a = 0; a < dim_; ++a) {
        if (nodes_[a] < 3) throw ValidationError("grid needs at least 3 nodes per axis");
        if (!(std::isfinite(lo_[a]) && std::isfinite(hi_[a]) && hi_[a] > lo_[a])) {
            throw ValidationError("grid extent must satisfy lo < hi");
        }
        h_[a] = (hi_[a] - lo_[a]) / static_cast<double>(nodes_[a] - 1);
    }
}

Grid Grid::line(double lo, double hi, std::size_t nodes) { return Grid(1, {lo, 0.0}, {hi, 0.0}, {nodes, 1}); }

Grid Grid::rect(double x_lo, double x_hi, std::size_t nx, double y_lo, double y_hi, std::size_t ny) {
    return Grid(2, {x_lo, y_lo}, {x_hi, y_hi}, {nx, ny});
}

double Grid::coord(std::size_t node, std::size_t axis) const {
    const std::size_t k = axis == 0 ? node % nodes_[0] : node / nodes_[0];
    return lo_[axis] + static_cast<double>(k) * h_[axis];
}

double Grid::volume(std::size_t node) const {
    double v = 1.0;
    for (std::size_t a = 0; a < dim_; ++a) {
        const std::size_t k = a == 0 ? node % nodes_[0] : node / nodes_[0];
        v *= (k == 0 || k + 1 == nodes_[a]) ? 0.5 * h_[a] : h_[a];
    }
    return v;
}

bool Grid::same_as(const Grid& other) const {
    return dim_ == other.dim_ && lo_ == other.lo_ && hi_ == other.hi_ && nodes_ == other.nodes_;
}

// ---------------------------------------------------------------------------
// Density

double DensityField::integral() const {
    double s = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) s += grid.volume(k) * values[k];
    return s;
}

DensityField kde_density(const PointCloud& cloud, const Grid& grid, double bandwidth, double floor) {
    if (cloud.size() == 0) throw ValidationError("empty point cloud");
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ValidationError("bandwidth must be positive");
    if (!(floor >= 0.0) || !std::isfinite(floor)) throw ValidationError("floor must be nonnegative");
    if (cloud.dim() != grid.dim()) throw ValidationError("cloud and grid dimensions differ");

    const double d = static_cast<double>(grid.dim());
    const double norm = std::pow(2.0 * std::numbers::pi * bandwidth, -0.5 * d) / static_cast<double>(cloud.size());
    std::vector<double> raw(grid.size(), 0.0);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const auto x = cloud.point(i);
            double r2 = 0.0;
            for (std::size_t a = 0; a < grid.dim(); ++a) {
                const double dx = grid.coord(k, a) - x[a];
                r2 += dx * dx;
            }
            s += std::exp(-0.5 * r2 / bandwidth);
        }
        raw[k] = norm * s;
    }

    DensityField rho{grid, {}, floor, bandwidth};
    auto mass = [&](double scale) {
        double m = 0.0;
        for (std::size_t k = 0; k < raw.size(); ++k) m += grid.volume(k) * std::max(scale * raw[k], floor);
        return m;
    };
    double total_volume = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) total_volume += grid.volume(k);
    if (floor * total_volume >= 1.0) {
        throw ValidationError("floor times domain volume must be below 1");
    }
    double raw_integral = 0.0;
    for (std::size_t k = 0; k < raw.size(); ++k) raw_integral += grid.volume(k) * raw[k];
    if (!(raw_integral > 0.0)) throw ValidationError("density underflows on the grid; widen the bandwidth");

    // mass(scale) is continuous and increasing; mass(1/raw_integral) >= 1.
    double lo = 0.0;
    double hi = 1.0 / raw_integral;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mass(mid) < 1.0 ? lo : hi) = mid;
    }
    rho.values.resize(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) rho.values[k] = std::max(hi * raw[k], floor);
    // Absorb the last bisection residue into the part above the floor.
    const double excess = rho.integral() - 1.0;
    double free_mass = 0.0;
    for (std::size_t k = 0; k < raw.size(); ++k) {
        if (rho.values[k] > floor) free_mass += grid.volume(k) * rho.values[k];
    }
    if (free_mass > 0.0) {
        const double f = 1.0 - excess / free_mass;
        for (auto& v : rho.values) {
            if (v > floor) v = std::max(v * f, floor);
        }
    }
    return rho;
}

DensityField make_density(const Grid& grid, std::vector<double> values, bool normalize) {
    if (values.size() != grid.size()) throw ValidationError("density size does not match grid");
    double lo = std::numeric_limits<double>::infinity();
    for (double v : values) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("density values must be finite and >= 0");
        lo = std::min(lo, v);
    }
    DensityField rho{grid, std::move(values), lo, 0.0};
    if (normalize) {
        const double m = rho.integral();
        if (!(m > 0.0)) throw ValidationError("density has zero mass");
        for (auto& v : rho.values) v /= m;
        rho.floor = lo / m;
    }
    return rho;
}

// ---------------------------------------------------------------------------
// Boundary data

void BoundarySpec::validate(const Grid& grid, std::size_t width) const {
    if (regions.size() != values.size()) throw ValidationError("boundary regions and values differ in count");
    std::vector<int> owner(grid.size(), -1);
    for (std::size_t r = 0; r < regions.size(); ++r) {
        if (regions[r].empty()) throw ValidationError("empty Dirichlet region " + std::to_string(r));
        if (values[r].size() != width) throw ValidationError("Dirichlet value width mismatch");
        for (std::size_t node : regions[r]) {
            if (node >= grid.size()) throw ValidationError("Dirichlet node out of range");
            owner[node] = static_cast<int>(r);
        }
    }
    const std::size_t nx = grid.nodes(0);
    const std::size_t ny = grid.nodes(1);
    for (std::size_t r = 0; r < regions.size(); ++r) {
        for (std::size_t node : regions[r]) {
            const auto i = static_cast<std::ptrdiff_t>(node % nx);
            const auto j = static_cast<std::ptrdiff_t>(node / nx);
            for (std::ptrdiff_t dj = -1; dj <= 1; ++dj) {
                for (std::ptrdiff_t di = -1; di <= 1; ++di) {
                    const auto ii = i + di;
                    const auto jj = j + dj;
                    if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(nx) ||
                        jj >= static_cast<std::ptrdiff_t>(ny)) {
                        continue;
                    }
                    const int other = owner[static_cast<std::size_t>(jj) * nx + static_cast<std::size_t>(ii)];
                    if (other >= 0 && values[static_cast<std::size_t>(other)] != values[r]) {
                        std::ostringstream msg;
                        msg << "Dirichlet regions " << r << " and " << other
                            << " with different anchors touch near node " << node;
                        throw ValidationError(msg.str());
                    }
                }
            }
        }
    }
}

BoundarySpec anchor_regions(const Grid& grid, const PointCloud& cloud) {
    if (cloud.dim() != grid.dim()) throw ValidationError("cloud and grid dimensions differ");
    const auto codes = label_codes(cloud.num_labels());
    std::vector<std::vector<std::size_t>> per_group(cloud.num_labels());
    auto cell_of = [&](double x, std::size_t axis) {
        const double t = std::floor((x - grid.lo(axis)) / grid.h(axis));
        const double top = static_cast<double>(grid.nodes(axis) - 2);
        return static_cast<std::size_t>(std::clamp(t, 0.0, top));
    };
    for (std::size_t i = cloud.n_unlabeled(); i < cloud.size(); ++i) {
        const auto x = cloud.point(i);
        auto& region = per_group[*cloud.group_of(i)];
        const std::size_t ci = cell_of(x[0], 0);
        if (grid.dim() == 1) {
            region.push_back(grid.index(ci));
            region.push_back(grid.index(ci + 1));
        } else {
            const std::size_t cj = cell_of(x[1], 1);
            for (std::size_t dj = 0; dj < 2; ++dj) {
                for (std::size_t di = 0; di < 2; ++di) region.push_back(grid.index(ci + di, cj + dj));
            }
        }
    }
    BoundarySpec bc;
    for (std::size_t g = 0; g < per_group.size(); ++g) {
        auto& region = per_group[g];
        if (region.empty()) continue;
        std::sort(region.begin(), region.end());
        region.erase(std::unique(region.begin(), region.end()), region.end());
        bc.regions.push_back(std::move(region));
        bc.values.push_back(codes[g]);
    }
    bc.validate(grid, label_width(cloud.num_labels()));
    return bc;
}

MacroField initial_field(const Grid& grid, std::size_t width, const BoundarySpec& bc) {
    bc.validate(grid, width);
    MacroField f{grid, width, std::vector<double>(grid.size() * width, 0.0), 0.0};
    for (std::size_t r = 0; r < bc.regions.size(); ++r) {
        for (std::size_t node : bc.regions[r]) {
            std::copy(bc.values[r].begin(), bc.values[r].end(),
                      f.values.begin() + static_cast<std::ptrdiff_t>(node * width));
        }
    }
    return f;
}

double MacroProblem::reaction_bound() const {
    const double rate = config.kappa * potential.max_abs_curvature(-1.5, 1.5);
    return rate > 0.0 ? 1.0 / rate : std::numeric_limits<double>::infinity();
}

void MacroProblem::validate(const MacroField& field) const {
    config.validate();
    if (!field.grid.same_as(rho.grid)) throw ValidationError("field and density grids differ");
    if (field.values.size() != field.grid.size() * field.width) throw ValidationError("field size mismatch");
    if (!(sigma_eta > 0.0) || !std::isfinite(sigma_eta)) throw ValidationError("sigma_eta must be positive");
    if (!(background >= 0.0) || !std::isfinite(background)) throw ValidationError("background must be >= 0");
    if (!(cg_tol > 0.0)) throw ValidationError("cg_tol must be positive");
    bc.validate(field.grid, field.width);
    if (!allow_unstable && config.dt > reaction_bound()) {
        std::ostringstream msg;
        msg << "dt " << config.dt << " exceeds the reaction bound " << reaction_bound();
        throw ValidationError(msg.str());
    }
}

// ---------------------------------------------------------------------------
// Steppers

namespace {

std::vector<int> dirichlet_owner(const Grid& grid, const BoundarySpec& bc) {
    std::vector<int> owner(grid.size(), -1);
    for (std::size_t r = 0; r < bc.regions.size(); ++r) {
        for (std::size_t node : bc.regions[r]) owner[node] = static_cast<int>(r);
    }
    return owner;
}

std::vector<double> face_base(const MacroProblem& p) {
    std::vector<double> c(p.rho.values.size());
    for (std::size_t k = 0; k < c.size(); ++k) c[k] = p.background + p.rho.values[k] * p.rho.values[k];
    return c;
}

class Stepper {
public:
    virtual ~Stepper() = default;
    /// Implicit diffusion for every component, in place.
    virtual void diffuse(MacroField& f) const = 0;
};

class Stepper1D final : public Stepper {
public:
    explicit Stepper1D(const MacroProblem& p) : p_(p), owner_(dirichlet_owner(p.rho.grid, p.bc)) {
        const Grid& g = p.rho.grid;
        const std::size_t n = g.size();
        const double h = g.h(0);
        const double coef = p.config.dt * p.config.gamma * p.sigma_eta / (h * h);
        const auto c = face_base(p);
        std::vector<double> face(n - 1);
        for (std::size_t k = 0; k + 1 < n; ++k) face[k] = 0.5 * (c[k] + c[k + 1]);

        lower_.assign(n, 0.0);
        diag_.assign(n, 0.0);
        upper_.assign(n, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            if (owner_[k] >= 0) {
                diag_[k] = 1.0;
                continue;
            }
            double left = k > 0 ? coef * face[k - 1] : 0.0;
            double right = k + 1 < n ? coef * face[k] : 0.0;
            if (k == 0) right *= 2.0;  // ghost u_{-1} = u_1
            if (k + 1 == n) left *= 2.0;
            lower_[k] = -left;
            upper_[k] = -right;
            diag_[k] = p.rho.values[k] + left + right;
        }

        // Thomas factorisation, reused for every component and step.
        cprime_.assign(n, 0.0);
        pivot_.assign(n, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            const double m = diag_[k] - (k > 0 ? lower_[k] * cprime_[k - 1] : 0.0);
            const double scale = std::abs(diag_[k]) + std::abs(lower_[k]) + std::abs(upper_[k]);
            if (m == 0.0 || std::abs(m) <= 1e-14 * scale || scale == 0.0) singular(k);
            pivot_[k] = m;
            cprime_[k] = upper_[k] / m;
        }
    }

    void diffuse(MacroField& f) const override {
        const std::size_t n = f.grid.size();
        const std::size_t w = f.width;
        std::vector<double> d(n);
        for (std::size_t c = 0; c < w; ++c) {
            for (std::size_t k = 0; k < n; ++k) {
                const double rhs = owner_[k] >= 0 ? p_.bc.values[static_cast<std::size_t>(owner_[k])][c]
                                                  : p_.rho.values[k] * f.values[k * w + c];
                d[k] = (rhs - (k > 0 ? lower_[k] * d[k - 1] : 0.0)) / pivot_[k];
            }
            for (std::size_t k = n - 1; k-- > 0;) d[k] -= cprime_[k] * d[k + 1];
            for (std::size_t k = 0; k < n; ++k) f.values[k * w + c] = d[k];
        }
    }

private:
    [[noreturn]] void singular(std::size_t k) const {
        const Grid& g = p_.rho.grid;
        std::size_t a = k;
        std::size_t b = k;
        auto degenerate = [&](std::size_t j) { return p_.rho.values[j] <= 0.0 && p_.background <= 0.0; };
        while (a > 0 && degenerate(a - 1)) --a;
        while (b + 1 < g.size() && degenerate(b + 1)) ++b;
        std::ostringstream msg;
        msg << "singular diffusion system at node " << k << "; rho and background vanish on ["
            << g.coord(a, 0) << ", " << g.coord(b, 0) << "]";
        throw SolverError(msg.str());
    }

    const MacroProblem& p_;
    std::vector<int> owner_;
    std::vector<double> lower_, diag_, upper_, cprime_, pivot_;
};

class Stepper2D final : public Stepper {
public:
    explicit Stepper2D(const MacroProblem& p) : p_(p), owner_(dirichlet_owner(p.rho.grid, p.bc)) {
        const Grid& g = p.rho.grid;
        const std::size_t nx = g.nodes(0);
        const std::size_t ny = g.nodes(1);
        const double dtg = p.config.dt * p.config.gamma * p.sigma_eta;
        const double cx = dtg / (g.h(0) * g.h(0));
        const double cy = dtg / (g.h(1) * g.h(1));
        const auto c = face_base(p);
        if (p.background <= 0.0) {
            for (std::size_t k = 0; k < g.size(); ++k) {
                if (p.rho.values[k] <= 0.0) {
                    std::ostringstream msg;
                    msg << "degenerate diffusion: rho = 0 at (" << g.coord(k, 0) << ", " << g.coord(k, 1)
                        << ") with zero background";
                    throw SolverError(msg.str());
                }
            }
        }

        free_index_.assign(g.size(), -1);
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (owner_[k] < 0) {
                free_index_[k] = static_cast<std::ptrdiff_t>(free_nodes_.size());
                free_nodes_.push_back(k);
            }
        }
        const std::size_t m = free_nodes_.size();
        diag_.assign(m, 0.0);
        mass_.assign(m, 0.0);
        nb_.assign(m, {});
        nbw_.assign(m, {});
        fixed_.assign(m, {});
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t k = free_nodes_[r];
            const std::size_t i = k % nx;
            const std::size_t j = k / nx;
            const double wx = (i == 0 || i + 1 == nx) ? 0.5 : 1.0;
            const double wy = (j == 0 || j + 1 == ny) ? 0.5 : 1.0;
            mass_[r] = wx * wy * p.rho.values[k];
            double diag = mass_[r];
            auto couple = [&](std::size_t other, double weight) {
                diag += weight;
                if (owner_[other] >= 0) {
                    fixed_[r].push_back({static_cast<std::size_t>(owner_[other]), weight});
                } else {
                    nb_[r].push_back(static_cast<std::size_t>(free_index_[other]));
                    nbw_[r].push_back(weight);
                }
            };
            if (i > 0) couple(k - 1, cx * wy * 0.5 * (c[k] + c[k - 1]));
            if (i + 1 < nx) couple(k + 1, cx * wy * 0.5 * (c[k] + c[k + 1]));
            if (j > 0) couple(k - nx, cy * wx * 0.5 * (c[k] + c[k - nx]));
            if (j + 1 < ny) couple(k + nx, cy * wx * 0.5 * (c[k] + c[k + nx]));
            diag_[r] = diag;
        }
    }

    void diffuse(MacroField& f) const override {
        const std::size_t m = free_nodes_.size();
        const std::size_t w = f.width;
        std::vector<double> b(m), x(m);
        for (std::size_t c = 0; c < w; ++c) {
            for (std::size_t r = 0; r < m; ++r) {
                double rhs = mass_[r] * f.values[free_nodes_[r] * w + c];
                for (const auto& [region, weight] : fixed_[r]) rhs += weight * p_.bc.values[region][c];
                b[r] = rhs;
                x[r] = f.values[free_nodes_[r] * w + c];
            }
            solve(b, x, c);
            for (std::size_t r = 0; r < m; ++r) f.values[free_nodes_[r] * w + c] = x[r];
        }
        for (std::size_t r = 0; r < owner_.size(); ++r) {
            if (owner_[r] >= 0) {
                for (std::size_t c = 0; c < w; ++c) {
                    f.values[r * w + c] = p_.bc.values[static_cast<std::size_t>(owner_[r])][c];
                }
            }
        }
    }

private:
    struct Fixed {
        std::size_t region;
        double weight;
    };

    void apply(const std::vector<double>& x, std::vector<double>& y) const {
        parallel_for_blocks(x.size(), p_.config.threads, [&](std::size_t begin, std::size_t end) {
            for (std::size_t r = begin; r < end; ++r) {
                double s = diag_[r] * x[r];
                for (std::size_t q = 0; q < nb_[r].size(); ++q) s -= nbw_[r][q] * x[nb_[r][q]];
                y[r] = s;
            }
        });
    }

    static double dot(const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
        return s;
    }

    void solve(const std::vector<double>& b, std::vector<double>& x, std::size_t component) const {
        const std::size_t m = b.size();
        if (m == 0) return;
        std::vector<double> r(m), z(m), d(m), q(m);
        apply(x, q);
        for (std::size_t k = 0; k < m; ++k) r[k] = b[k] - q[k];
        const double bnorm = std::sqrt(dot(b, b));
        const double target = p_.cg_tol * (bnorm > 0.0 ? bnorm : 1.0);
        double rnorm = std::sqrt(dot(r, r));
        if (rnorm <= target) return;
        for (std::size_t k = 0; k < m; ++k) z[k] = r[k] / diag_[k];
        d = z;
        double rz = dot(r, z);
        for (std::size_t it = 0; it < p_.cg_max_iters; ++it) {
            apply(d, q);
            const double dq = dot(d, q);
            if (!(dq > 0.0)) break;
            const double alpha = rz / dq;
            for (std::size_t k = 0; k < m; ++k) {
                x[k] += alpha * d[k];
                r[k] -= alpha * q[k];
            }
            rnorm = std::sqrt(dot(r, r));
            if (rnorm <= target) return;
            for (std::size_t k = 0; k < m; ++k) z[k] = r[k] / diag_[k];
            const double rz_next = dot(r, z);
            const double beta = rz_next / rz;
            rz = rz_next;
            for (std::size_t k = 0; k < m; ++k) d[k] = z[k] + beta * d[k];
        }
        std::ostringstream msg;
        msg << "conjugate gradient did not converge for component " << component << " after "
            << p_.cg_max_iters << " iterations; relative residual " << rnorm / (bnorm > 0.0 ? bnorm : 1.0);
        throw SolverError(msg.str());
    }

    const MacroProblem& p_;
    std::vector<int> owner_;
    std::vector<std::ptrdiff_t> free_index_;
    std::vector<std::size_t> free_nodes_;
    std::vector<double> diag_, mass_;
    std::vector<std::vector<std::size_t>> nb_;
    std::vector<std::vector<double>> nbw_;
    std::vector<std::vector<Fixed>> fixed_;
};

std::unique_ptr<Stepper> make_stepper(const MacroProblem& p) {
    if (p.rho.grid.dim() == 1) return std::make_unique<Stepper1D>(p);
    return std::make_unique<Stepper2D>(p);
}

void react(MacroField& f, const MacroProblem& p, const std::vector<int>& owner) {
    const double step = p.config.dt * p.config.kappa;
    if (step == 0.0) return;
    const std::size_t w = f.width;
    for (std::size_t k = 0; k < f.grid.size(); ++k) {
        if (owner[k] >= 0 || !(p.rho.values[k] > 0.0)) continue;
        for (std::size_t c = 0; c < w; ++c) {
            double& u = f.values[k * w + c];
            u -= step * p.potential.derivative(u);
        }
    }
}

MacroField advance(const MacroField& field, const MacroProblem& p, const Stepper& stepper,
                   const std::vector<int>& owner) {
    MacroField next = field;
    stepper.diffuse(next);
    react(next, p, owner);
    next.time = field.time + p.config.dt;
    for (double v : next.values) {
        if (!std::isfinite(v)) throw SolverError("macro step produced non-finite values");
    }
    return next;
}

}  // namespace

MacroField macro_step_1d(const MacroField& field, const MacroProblem& p) {
    if (field.grid.dim() != 1) throw ValidationError("macro_step_1d needs a 1D grid");
    p.validate(field);
    Stepper1D stepper(p);
    return advance(field, p, stepper, dirichlet_owner(field.grid, p.bc));
}

MacroField macro_step_2d(const MacroField& field, const MacroProblem& p) {
    if (field.grid.dim() != 2) throw ValidationError("macro_step_2d needs a 2D grid");
    p.validate(field);
    Stepper2D stepper(p);
    return advance(field, p, stepper, dirichlet_owner(field.grid, p.bc));
}

MacroField macro_step(const MacroField& field, const MacroProblem& p) {
    return field.grid.dim() == 1 ? macro_step_1d(field, p) : macro_step_2d(field, p);
}

MacroResult run_macro(const MacroField& u0, const MacroProblem& p, const MacroOptions& opts) {
    p.validate(u0);
    if (opts.trace_stride == 0) throw ValidationError("trace_stride must be positive");
    const auto stepper = make_stepper(p);
    const auto owner = dirichlet_owner(u0.grid, p.bc);
    const RunConfig& cfg = p.config;
    const double ratio = cfg.t_end / cfg.dt;
    const auto max_steps = static_cast<std::size_t>(
        std::abs(ratio - std::round(ratio)) < 1e-9 * ratio ? std::round(ratio) : std::ceil(ratio));
    const double lower = p.potential.lower_well();
    const double upper = p.potential.upper_well();

    MacroResult result{u0, {}, {}, 0, false, 0.0, 0.0};
    MacroField cur = u0;
    auto energy_of = [&](const MacroField& f) {
        return continuum_energy(f, p.rho, p.potential, cfg.gamma, cfg.kappa, p.sigma_eta, p.background);
    };
    auto excess_of = [&](const MacroField& f) {
        double e = 0.0;
        for (double v : f.values) e = std::max({e, lower - v, v - upper});
        return e;
    };
    double energy = energy_of(cur);
    result.range_excess = excess_of(cur);
    auto record = [&](std::size_t step, double v2) {
        result.trace.steps.push_back(step);
        result.trace.times.push_back(static_cast<double>(step) * cfg.dt);
        result.trace.energies.push_back(energy);
        result.trace.velocity_l2.push_back(v2);
    };
    record(0, 0.0);

    std::size_t step = 0;
    while (step < max_steps) {
        MacroField next = advance(cur, p, *stepper, owner);
        next.time = static_cast<double>(step + 1) * cfg.dt;
        ++step;
        double delta = 0.0;
        double v2 = 0.0;
        for (std::size_t k = 0; k < next.values.size(); ++k) {
            const double dv = next.values[k] - cur.values[k];
            delta = std::max(delta, std::abs(dv));
            v2 += cur.grid.volume(k / cur.width) * (dv / cfg.dt) * (dv / cfg.dt);
        }
        const double e_next = energy_of(next);
        result.max_energy_increase =
            std::max(result.max_energy_increase, (e_next - energy) / std::max(1.0, std::abs(energy)));
        energy = e_next;
        result.range_excess = std::max(result.range_excess, excess_of(next));
        const bool stationary = delta / cfg.dt < cfg.stationarity_tol;
        if (step % opts.trace_stride == 0 || stationary || step == max_steps) record(step, v2);
        if (opts.snapshot_stride > 0 && step % opts.snapshot_stride == 0) result.snapshots.push_back(next);
        cur = std::move(next);
        if (stationary) {
            result.stationary = true;
            break;
        }
    }
    result.steps = step;
    result.final = std::move(cur);
    return result;
}

// ---------------------------------------------------------------------------
// Energies and diagnostics

double continuum_energy(const MacroField& field, const DensityField& rho, const DoubleWell& potential, double gamma,
                        double kappa, double sigma_eta_val, double background) {
    const Grid& g = field.grid;
    if (!g.same_as(rho.grid)) throw ValidationError("field and density grids differ");
    const std::size_t w = field.width;
    const std::size_t nx = g.nodes(0);
    const std::size_t ny = g.nodes(1);
    auto c = [&](std::size_t k) { return background + rho.values[k] * rho.values[k]; };

    double dirichlet = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const std::size_t i = k % nx;
        const std::size_t j = k / nx;
        if (i + 1 < nx) {
            const double wy = g.dim() == 2 && (j == 0 || j + 1 == ny) ? 0.5 : 1.0;
            const double vol = wy * (g.dim() == 2 ? g.h(0) * g.h(1) : g.h(0));
            const double a = 0.5 * (c(k) + c(k + 1));
            for (std::size_t q = 0; q < w; ++q) {
                const double grad = (field.values[(k + 1) * w + q] - field.values[k * w + q]) / g.h(0);
                dirichlet += vol * a * grad * grad;
            }
        }
        if (g.dim() == 2 && j + 1 < ny) {
            const double wx = (i == 0 || i + 1 == nx) ? 0.5 : 1.0;
            const double vol = wx * g.h(0) * g.h(1);
            const double a = 0.5 * (c(k) + c(k + nx));
            for (std::size_t q = 0; q < w; ++q) {
                const double grad = (field.values[(k + nx) * w + q] - field.values[k * w + q]) / g.h(1);
                dirichlet += vol * a * grad * grad;
            }
        }
    }
    double well = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        double s = 0.0;
        for (std::size_t q = 0; q < w; ++q) s += potential.value(field.values[k * w + q]);
        well += g.volume(k) * rho.values[k] * s;
    }
    return 0.5 * gamma * sigma_eta_val * dirichlet + kappa * well;
}

double nonlocal_energy(const MacroField& field, const DensityField& rho, const KernelProfile& kernel,
                       double epsilon, double gamma, double kappa, const DoubleWell& potential) {
    const Grid& g = field.grid;
    if (g.dim() != 1) throw ValidationError("nonlocal_energy is 1D only");
    if (!g.same_as(rho.grid)) throw ValidationError("field and density grids differ");
    if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
    const std::size_t n = g.size();
    const std::size_t w = field.width;
    const double h = g.h(0);
    const auto reach = static_cast<std::size_t>(std::ceil(kernel.support() * epsilon / h)) + 1;

    double pair = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t l_end = std::min(n, k + reach + 1);
        for (std::size_t l = k + 1; l < l_end; ++l) {
            const double s = static_cast<double>(l - k) * h;
            const double eta = kernel.eval(s / epsilon) / epsilon;
            if (eta == 0.0) continue;
            double sq = 0.0;
            for (std::size_t q = 0; q < w; ++q) {
                const double d = field.values[l * w + q] - field.values[k * w + q];
                sq += d * d;
            }
            pair += g.volume(k) * g.volume(l) * eta * sq * rho.values[k] * rho.values[l];
        }
    }
    // Ordered pairs (k, l) and (l, k) both appear in the double integral.
    double well = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        double s = 0.0;
        for (std::size_t q = 0; q < w; ++q) s += potential.value(field.values[k * w + q]);
        well += g.volume(k) * rho.values[k] * s;
    }
    return 0.25 * gamma / (epsilon * epsilon) * 2.0 * pair + kappa * well;
}

double sigma_w(const DoubleWell& potential) {
    auto f = [&](double t) { return std::sqrt(potential.value(t)); };
    std::function<double(double, double, double, double, double, double, int)> simpson =
        [&](double a, double b, double fa, double fm, double fb, double whole, int depth) {
            const double m = 0.5 * (a + b);
            const double lm = 0.5 * (a + m);
            const double rm = 0.5 * (m + b);
            const double flm = f(lm);
            const double frm = f(rm);
            const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if (depth <= 0 || std::abs(left + right - whole) <= 1e-14) {
                return left + right + (left + right - whole) / 15.0;
            }
            return simpson(a, m, fa, flm, fm, left, depth - 1) + simpson(m, b, fm, frm, fb, right, depth - 1);
        };
    const double a = potential.lower_well();
    const double b = potential.upper_well();
    const double fa = f(a);
    const double fb = f(b);
    const double fm = f(0.5 * (a + b));
    return simpson(a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), 40);
}

GammaDiagnostics gamma_diagnostics(const MacroField& field, const DensityField& rho, const DoubleWell& potential,
                                   double gamma, double kappa_n, double sigma_eta_val) {
    const Grid& g = field.grid;
    if (g.dim() != 1 || field.width != 1) throw ValidationError("gamma_diagnostics needs a scalar 1D field");
    if (!(kappa_n > 0.0)) throw ValidationError("kappa_n must be positive");
    GammaDiagnostics out{};
    out.rescaled_energy = continuum_energy(field, rho, potential, gamma / kappa_n, kappa_n, sigma_eta_val, 0.0);

    const double lower = potential.lower_well();
    const double upper = potential.upper_well();
    const double mid = 0.5 * (lower + upper);
    std::size_t mid_range = 0;
    for (double v : field.values) {
        if (std::min(std::abs(v - lower), std::abs(v - upper)) > 0.05) ++mid_range;
    }
    if (static_cast<double>(mid_range) > 0.05 * static_cast<double>(field.values.size())) {
        std::ostringstream msg;
        msg << mid_range << " of " << field.values.size()
            << " nodes lie more than 0.05 from a well; sharp energy undefined";
        throw ValidationError(msg.str());
    }
    double tv = 0.0;
    for (std::size_t k = 0; k + 1 < g.size(); ++k) {
        const double a = field.values[k] - mid;
        const double b = field.values[k + 1] - mid;
        if ((a < 0.0 && b >= 0.0) || (a >= 0.0 && b < 0.0)) {
            const double t = a / (a - b);
            const double r = (1.0 - t) * rho.values[k] + t * rho.values[k + 1];
            tv += (upper - lower) * std::pow(r, 1.5);
            ++out.jumps;
        }
    }
    out.sharp_energy = std::sqrt(2.0 * gamma * sigma_eta_val) * sigma_w(potential) * tv;
    return out;
}

StructureReport structure_check(const MacroField& field, const DensityField& rho, double zero_region_tol,
                                double flat_tol) {
    if (field.width != 1) throw ValidationError("structure_check needs a scalar field");
    const Grid& g = field.grid;
    if (!g.same_as(rho.grid)) throw ValidationError("field and density grids differ");
    const std::size_t nx = g.nodes(0);
    const std::size_t ny = g.nodes(1);
    const auto& u = field.values;
    StructureReport rep;

    for (std::size_t k = 0; k < g.size(); ++k) {
        if (rho.values[k] <= zero_region_tol) {
            ++rep.zero_region_nodes;
            rep.zero_region_max_abs = std::max(rep.zero_region_max_abs, std::abs(u[k]));
            if (std::abs(u[k]) > 1e-6) rep.zero_region_violations.push_back(k);
        }
    }

    auto slope = [&](std::size_t k, std::size_t axis) {
        const std::size_t n = g.nodes(axis);
        const std::size_t stride = axis == 0 ? 1 : nx;
        const std::size_t pos = axis == 0 ? k % nx : k / nx;
        const std::size_t a = pos > 0 ? k - stride : k;
        const std::size_t b = pos + 1 < n ? k + stride : k;
        const double span = static_cast<double>((pos > 0 ? 1 : 0) + (pos + 1 < n ? 1 : 0)) * g.h(axis);
        return (u[b] - u[a]) / span;
    };
    std::vector<char> flat(g.size(), 0);
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (rho.values[k] <= zero_region_tol || u[k] == 0.0) continue;
        bool ok = true;
        for (std::size_t a = 0; a < g.dim(); ++a) ok = ok && std::abs(slope(k, a)) <= flat_tol;
        flat[k] = ok ? 1 : 0;
    }
    std::vector<char> seen(g.size(), 0);
    for (std::size_t start = 0; start < g.size(); ++start) {
        if (!flat[start] || seen[start]) continue;
        Plateau pl;
        pl.min_abs = std::numeric_limits<double>::infinity();
        const bool positive = u[start] > 0.0;
        std::vector<std::size_t> stack{start};
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t k = stack.back();
            stack.pop_back();
            pl.nodes.push_back(k);
            pl.min_abs = std::min(pl.min_abs, std::abs(u[k]));
            const std::size_t i = k % nx;
            const std::size_t j = k / nx;
            std::array<std::size_t, 4> nbs{};
            std::size_t count = 0;
            if (i > 0) nbs[count++] = k - 1;
            if (i + 1 < nx) nbs[count++] = k + 1;
            if (j > 0) nbs[count++] = k - nx;
            if (j + 1 < ny) nbs[count++] = k + nx;
            for (std::size_t q = 0; q < count; ++q) {
                const std::size_t nb = nbs[q];
                if (flat[nb] && !seen[nb] && (u[nb] > 0.0) == positive) {
                    seen[nb] = 1;
                    stack.push_back(nb);
                }
            }
        }
        std::sort(pl.nodes.begin(), pl.nodes.end());
        pl.ok = pl.min_abs >= 0.95;
        if (!pl.ok) ++rep.plateau_violations;
        rep.plateaus.push_back(std::move(pl));
    }
    return rep;
}

void write_field_csv(const std::filesystem::path& path, const MacroField& field, const DensityField& rho) {
    std::vector<std::string> header;
    for (std::size_t a = 0; a < field.grid.dim(); ++a) header.push_back("x_" + std::to_string(a));
    header.emplace_back("rho");
    for (std::size_t c = 0; c < field.width; ++c) header.push_back("u_" + std::to_string(c));
    CsvWriter out(path, header);
    std::vector<double> row(header.size());
    for (std::size_t k = 0; k < field.grid.size(); ++k) {
        std::size_t q = 0;
        for (std::size_t a = 0; a < field.grid.dim(); ++a) row[q++] = field.grid.coord(k, a);
        row[q++] = rho.values[k];
        for (std::size_t c = 0; c < field.width; ++c) row[q++] = field.values[k * field.width + c];
        out.row(row);
    }
    out.close();
}

FieldFile read_field_csv(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    const int c_rho = t.column("rho");
    const int c_u = t.column("u_0");
    const int c_y = t.column("x_1");
    if (t.column("x_0") != 0 || c_rho < 0 || c_u != c_rho + 1) {
        throw IoError(path.string() + ": expected columns x_0[,x_1],rho,u_0..");
    }
    const std::size_t dim = c_y == 1 ? 2 : 1;
    if (static_cast<std::size_t>(c_rho) != dim) throw IoError(path.string() + ": unexpected column order");
    const std::size_t width = t.header.size() - dim - 1;
    const std::size_t total = t.rows.size();
    if (total < 3) throw IoError(path.string() + ": too few nodes for a grid");

    std::size_t nx = total;
    std::size_t ny = 1;
    if (dim == 2) {
        nx = 1;
        while (nx < total && t.rows[nx][1] == t.rows[0][1]) ++nx;
        if (total % nx != 0) throw IoError(path.string() + ": node count is not a rectangle");
        ny = total / nx;
    }
    const Grid grid = dim == 1 ? Grid::line(t.rows.front()[0], t.rows.back()[0], nx)
                               : Grid::rect(t.rows.front()[0], t.rows[nx - 1][0], nx, t.rows.front()[1],
                                            t.rows.back()[1], ny);
    std::vector<double> rho(total);
    std::vector<double> u(total * width);
    for (std::size_t k = 0; k < total; ++k) {
        for (std::size_t a = 0; a < dim; ++a) {
            if (std::abs(t.rows[k][a] - grid.coord(k, a)) > 1e-9 * (1.0 + std::abs(grid.coord(k, a)))) {
                throw IoError(path.string() + ":" + std::to_string(k + 2) + ": node off the regular grid");
            }
        }
        rho[k] = t.rows[k][dim];
        for (std::size_t c = 0; c < width; ++c) u[k * width + c] = t.rows[k][dim + 1 + c];
    }
    return {MacroField{grid, width, std::move(u), 0.0}, make_density(grid, std::move(rho), false)};
}

}  // namespace labelflow
