#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "labelflow/compare.hpp"
#include "labelflow/core.hpp"
#include "labelflow/csv.hpp"
#include "labelflow/data.hpp"
#include "labelflow/errors.hpp"
#include "labelflow/graph.hpp"
#include "labelflow/macro.hpp"
#include "labelflow/micro.hpp"
#include "labelflow/pipeline.hpp"
#include "labelflow/transport.hpp"
#include "manifest.hpp"

namespace labelflow::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Shared plumbing

int resolve_threads(int flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("LABELFLOW_THREADS"); env != nullptr && *env != '\0') {
        int v = 0;
        const char* end = env + std::char_traits<char>::length(env);
        const auto [p, ec] = std::from_chars(env, end, v);
        if (ec != std::errc{} || p != end || v < 1) {
            throw ValidationError(std::string("LABELFLOW_THREADS must be a positive integer, got '") + env + "'");
        }
        return v;
    }
    return 1;
}

fs::path make_out_dir(const std::string& requested, const std::string& command) {
    fs::path dir = requested;
    if (dir.empty()) {
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        localtime_r(&now, &tm);
        std::ostringstream name;
        name << command << '-' << std::put_time(&tm, "%Y%m%d-%H%M%S");
        dir = fs::path("runs") / name.str();
        for (int k = 2; fs::exists(dir); ++k) dir = fs::path("runs") / (name.str() + "-" + std::to_string(k));
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

std::string option_key(const CLI::Option* opt) {
    return opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
}

/// Every option of `sub` with its resolved value (given or default).
void record_config(const CLI::App& sub, Manifest& m) {
    for (const CLI::Option* opt : sub.get_options()) {
        const std::string key = option_key(opt);
        if (key.empty() || key == "help") continue;
        std::string value;
        if (opt->count() > 0) {
            const auto& res = opt->results();
            for (std::size_t k = 0; k < res.size(); ++k) value += (k ? "," : "") + res[k];
        } else {
            value = opt->get_default_str();
        }
        m.config()[key] = value;
    }
}

InitSpec parse_init(const std::string& kind, double sigma) {
    InitSpec s;
    s.sigma = sigma;
    if (kind == "zero") s.kind = InitSpec::Kind::zero;
    else if (kind == "uniform") s.kind = InitSpec::Kind::uniform;
    else if (kind == "normal") s.kind = InitSpec::Kind::normal;
    else throw ValidationError("unknown init '" + kind + "'");
    return s;
}

KernelProfile parse_kernel(const std::string& kind, double radius) {
    if (kind == "indicator") return KernelProfile::indicator(radius);
    if (kind == "gaussian") return KernelProfile::gaussian(radius);
    throw ValidationError("unknown kernel '" + kind + "' (indicator or gaussian)");
}

Scaling parse_scaling(const std::string& s) {
    if (s == "plain") return Scaling::plain;
    if (s == "eps2") return Scaling::eps2;
    throw ValidationError("unknown scaling '" + s + "' (plain or eps2)");
}

std::vector<std::size_t> parse_indices(const std::string& text, const char* flag) {
    std::vector<std::size_t> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item.erase(std::remove(item.begin(), item.end(), ' '), item.end());
        if (item.empty()) continue;
        std::size_t v = 0;
        const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc{} || p != item.data() + item.size()) {
            throw ValidationError(std::string(flag) + ": '" + item + "' is not a row index");
        }
        out.push_back(v);
    }
    return out;
}

std::vector<std::size_t> label_counts(const std::vector<int>& cls, std::size_t labels) {
    std::vector<std::size_t> counts(labels, 0);
    for (int c : cls) {
        if (c >= 0 && static_cast<std::size_t>(c) < labels) ++counts[static_cast<std::size_t>(c)];
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Label placement on a stored cloud

struct PlacementArgs {
    std::string policy = "extremes";
    std::size_t per_side = 3;
    std::string neg;
    std::string pos;

    void add(CLI::App* sub) {
        sub->add_option("--placement", policy, "Anchor placement: extremes, interior, mislabel, hull, keep")
            ->check(CLI::IsMember({"extremes", "interior", "mislabel", "hull", "keep"}));
        sub->add_option("--per-side", per_side, "Anchors per side for the extremes policy");
        sub->add_option("--neg", neg, "Comma-separated file rows anchored to label 0 (interior, mislabel)");
        sub->add_option("--pos", pos, "Comma-separated file rows anchored to label 1 (interior, mislabel)");
    }
};

struct PlacedCloud {
    LabeledCloud labeled;
    std::vector<int> truth;  // in labeled order, empty without ground truth
    std::size_t width = 1;
};

PlacedCloud place_labels(const CloudFile& file, const PlacementArgs& args, Manifest& m) {
    const std::size_t n = file.cloud.size();
    const std::size_t dim = file.cloud.dim();
    GeneratedCloud raw;
    raw.dim = dim;
    raw.coords.resize(n * dim);
    if (!file.truth.empty()) raw.truth.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t row = file.original_index[i];
        std::copy_n(file.cloud.point(i).begin(), dim, raw.coords.begin() + static_cast<std::ptrdiff_t>(row * dim));
        if (!file.truth.empty()) raw.truth[row] = file.truth[i];
    }

    std::vector<std::vector<std::size_t>> anchors;
    const std::string& policy = args.policy;
    if (policy == "keep") {
        for (const auto& g : file.cloud.groups()) {
            std::vector<std::size_t> rows;
            for (std::size_t i : g) rows.push_back(file.original_index[i]);
            anchors.push_back(std::move(rows));
        }
        if (file.cloud.n_labeled() == 0) throw ValidationError("placement 'keep' but the cloud file has no anchors");
    } else {
        if (file.state.width != 1) throw ValidationError("placement '" + policy + "' needs a two-label cloud");
        if (policy == "extremes") {
            anchors = anchors_extremes(raw, args.per_side);
        } else if (policy == "hull") {
            anchors = anchors_hull(raw);
        } else {
            anchors = {parse_indices(args.neg, "--neg"), parse_indices(args.pos, "--pos")};
            if (anchors[0].empty() || anchors[1].empty()) {
                throw ValidationError("placement '" + policy + "' needs --neg and --pos row lists");
            }
            for (const auto& g : anchors) {
                for (std::size_t r : g) {
                    if (r >= n) throw ValidationError("anchor row " + std::to_string(r) + " out of range");
                }
            }
            if (policy == "mislabel" && !raw.truth.empty()) {
                std::size_t wrong = 0;
                for (std::size_t r : anchors[0]) wrong += raw.truth[r] != 0;
                for (std::size_t r : anchors[1]) wrong += raw.truth[r] != 1;
                m.metrics()["anchors_contradicting_truth"] = wrong;
            }
        }
    }

    PlacedCloud out{attach_labels(dim, raw.coords, anchors), {}, file.state.width};
    if (!raw.truth.empty()) {
        out.truth.resize(n);
        for (std::size_t i = 0; i < n; ++i) out.truth[i] = raw.truth[out.labeled.original_index[i]];
    }
    json per_label = json::array();
    for (const auto& g : out.labeled.cloud.groups()) per_label.push_back(g.size());
    m.metrics()["anchors_per_label"] = per_label;
    return out;
}

/// Accuracy of predicted labels against truth over unlabeled points.
double unlabeled_accuracy(const PointCloud& cloud, const std::vector<int>& cls, const std::vector<int>& truth) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < cloud.n_unlabeled(); ++i) ok += cls[i] == truth[i];
    return cloud.n_unlabeled() > 0 ? static_cast<double>(ok) / static_cast<double>(cloud.n_unlabeled()) : 0.0;
}

/// Writes the manifest with the solver exit status before rethrowing.
template <class F>
void guarded(Manifest& m, const fs::path& dir, F&& body) {
    try {
        body();
    } catch (const SolverError& e) {
        m.warn(std::string("solver failure: ") + e.what());
        m.write(dir, kSolver);
        throw;
    }
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
    std::string kind;
    std::size_t n = 0;
    double noise = 0.1;
    double mu1 = -0.25, sd1 = 0.125, mu2 = 0.4, sd2 = 0.1;
    std::uint64_t seed = 0;
    std::string out;
};

int run_gen(const CLI::App& sub, const GenArgs& a) {
    GeneratedCloud g;
    if (a.kind == "two-gaussians") {
        TwoGaussiansSpec spec{a.n == 0 ? 250 : a.n, a.mu1, a.sd1, a.mu2, a.sd2};
        g = gen_two_gaussians(spec, a.seed);
    } else {
        g = gen_two_moons(a.n == 0 ? 500 : a.n, a.noise, a.seed);
    }
    const PointCloud cloud = g.unlabeled();
    const LabelState state = init_labels(cloud, {}, a.seed);

    Manifest m("gen");
    record_config(sub, m);
    m.set_seed(a.seed);
    const fs::path dir = make_out_dir(a.out, "gen");
    const fs::path file = dir / "cloud.csv";
    write_cloud_csv(file, cloud, state, g.truth);
    m.add_output(file);
    m.metrics()["points"] = cloud.size();
    m.metrics()["truth_counts"] = label_counts(g.truth, 2);
    m.metrics()["box_lo"] = cloud.box().lo;
    m.metrics()["box_hi"] = cloud.box().hi;
    m.write(dir, kOk);
    std::cout << "wrote " << file.string() << " (" << cloud.size() << " points)\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// micro

struct MicroArgs {
    std::string cloud;
    PlacementArgs placement;
    std::string kernel = "indicator";
    double radius = 0.25;
    double epsilon = 1.0;
    std::string scaling = "plain";
    double gamma = 250.0;
    double kappa = 0.25;
    double dt = 0.0;
    double t_end = 100.0;
    std::string init = "zero";
    double sigma = 0.1;
    double stationarity_tol = 1e-6;
    std::uint64_t seed = 0;
    int threads = 0;
    std::size_t trace_stride = 10;
    bool allow_unstable = false;
    bool no_dissipation_check = false;
    bool export_edges = false;
    std::string out;
};

int run_micro_cmd(const CLI::App& sub, const MicroArgs& a) {
    const CloudFile file = read_cloud_csv(a.cloud);
    Manifest m("micro");
    m.add_input(a.cloud);
    const PlacedCloud placed = place_labels(file, a.placement, m);
    const PointCloud& cloud = placed.labeled.cloud;

    RunConfig cfg{a.gamma, a.kappa, a.dt > 0.0 ? a.dt : 1.0, a.t_end, a.epsilon, a.seed, a.stationarity_tol,
                  resolve_threads(a.threads)};
    cfg.validate();
    const KernelProfile kernel = parse_kernel(a.kernel, a.radius);
    const Scaling scaling = parse_scaling(a.scaling);
    const DoubleWell potential(placed.width == 1 ? WellKind::symmetric_pm1 : WellKind::unit_interval);
    const WeightGraph graph = build_weights(cloud, kernel, a.epsilon, cfg.threads);
    if (a.dt <= 0.0) cfg.dt = 0.9 * MicroSystem(cloud, graph, potential, cfg, scaling).stability_bound();
    const MicroSystem sys(cloud, graph, potential, cfg, scaling);
    const LabelState u0 = init_labels(cloud, parse_init(a.init, a.sigma), a.seed);

    record_config(sub, m);
    m.set_seed(a.seed);
    const fs::path dir = make_out_dir(a.out, "micro");
    if (!graph.connected()) {
        m.warn("weight graph is disconnected");
        std::cerr << "warning: weight graph is disconnected\n";
    }
    MicroOptions opts;
    opts.trace_stride = a.trace_stride;
    opts.check_dissipation = !a.no_dissipation_check;
    opts.step.allow_unstable = a.allow_unstable;
    MicroResult r{u0, {}, 0, false, 0.0};
    guarded(m, dir, [&] { r = run_micro(sys, u0, opts); });

    const fs::path state_file = dir / "state.csv";
    const fs::path trace_file = dir / "trace.csv";
    write_cloud_csv(state_file, cloud, r.final, placed.truth);
    write_trace_csv(trace_file, r.trace);
    m.add_output(state_file);
    m.add_output(trace_file);
    if (a.export_edges) {
        const fs::path edges_file = dir / "edges.csv";
        write_edges_csv(edges_file, graph);
        m.add_output(edges_file);
    }

    const auto cls = classify(r.final);
    auto& met = m.metrics();
    met["dt"] = cfg.dt;
    met["stability_bound"] = sys.stability_bound();
    met["steps"] = r.steps;
    met["time"] = r.time;
    met["stationary"] = r.stationary;
    met["initial_energy"] = discrete_energy(sys, u0);
    met["final_energy"] = discrete_energy(sys, r.final);
    met["edges"] = graph.num_edges();
    met["connected"] = graph.connected();
    met["cluster_counts"] = label_counts(cls, cloud.num_labels());
    if (!placed.truth.empty()) met["accuracy_unlabeled"] = unlabeled_accuracy(cloud, cls, placed.truth);
    m.write(dir, kOk);
    std::cout << "micro: " << r.steps << " steps, t=" << r.time << (r.stationary ? " (stationary)" : "")
              << ", energy " << met["final_energy"].get<double>() << "; outputs in " << dir.string() << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// macro

struct MacroArgs {
    std::string cloud;
    PlacementArgs placement;
    std::size_t nodes = 201;
    std::size_t nodes_y = 0;
    double bandwidth = 0.01;
    double floor = 1e-3;
    double background = 0.0;
    std::string kernel = "indicator";
    double radius = 0.25;
    double gamma = 1.0;
    double kappa = 0.0;
    double dt = 0.0;
    double t_end = 100.0;
    double stationarity_tol = 1e-6;
    double cg_tol = 1e-8;
    std::uint64_t seed = 0;
    int threads = 0;
    std::size_t trace_stride = 10;
    std::size_t snapshot_stride = 0;
    bool allow_unstable = false;
    std::string out;
};

int run_macro_cmd(const CLI::App& sub, const MacroArgs& a) {
    const CloudFile file = read_cloud_csv(a.cloud);
    Manifest m("macro");
    m.add_input(a.cloud);
    const PlacedCloud placed = place_labels(file, a.placement, m);
    const PointCloud& cloud = placed.labeled.cloud;
    if (cloud.dim() > 2) throw ValidationError("macro solver supports 1D and 2D clouds only");

    const Box& box = cloud.box();
    const Grid grid = cloud.dim() == 1
                          ? Grid::line(box.lo[0], box.hi[0], a.nodes)
                          : Grid::rect(box.lo[0], box.hi[0], a.nodes, box.lo[1], box.hi[1],
                                       a.nodes_y > 0 ? a.nodes_y : a.nodes);
    const DensityField rho = kde_density(cloud, grid, a.bandwidth, a.floor);
    const BoundarySpec bc = anchor_regions(grid, cloud);
    const KernelProfile kernel = parse_kernel(a.kernel, a.radius);
    const DoubleWell potential(placed.width == 1 ? WellKind::symmetric_pm1 : WellKind::unit_interval);

    RunConfig cfg{a.gamma, a.kappa, a.dt > 0.0 ? a.dt : 1.0, a.t_end, 1.0, a.seed, a.stationarity_tol,
                  resolve_threads(a.threads)};
    cfg.validate();
    MacroProblem p{rho, bc, potential, cfg, sigma_eta(kernel, cloud.dim()), a.background};
    p.allow_unstable = a.allow_unstable;
    p.cg_tol = a.cg_tol;
    if (a.dt <= 0.0) p.config.dt = a.kappa > 0.0 ? std::min(0.5 * p.reaction_bound(), 0.01) : 0.01;
    const MacroField u0 = initial_field(grid, placed.width, bc);
    p.validate(u0);

    record_config(sub, m);
    m.set_seed(a.seed);
    const fs::path dir = make_out_dir(a.out, "macro");
    MacroOptions opts;
    opts.trace_stride = a.trace_stride;
    opts.snapshot_stride = a.snapshot_stride;
    MacroResult r{u0, {}, {}, 0, false, 0.0, 0.0};
    guarded(m, dir, [&] { r = run_macro(u0, p, opts); });

    const fs::path field_file = dir / "field.csv";
    const fs::path trace_file = dir / "trace.csv";
    write_field_csv(field_file, r.final, rho);
    write_trace_csv(trace_file, r.trace);
    m.add_output(field_file);
    m.add_output(trace_file);
    if (!r.snapshots.empty()) {
        const fs::path snap_dir = dir / "snapshots";
        fs::create_directories(snap_dir);
        for (std::size_t k = 0; k < r.snapshots.size(); ++k) {
            std::ostringstream name;
            name << "field_" << std::setw(5) << std::setfill('0') << k << ".csv";
            write_field_csv(snap_dir / name.str(), r.snapshots[k], rho);
            m.add_output(snap_dir / name.str());
        }
    }

    auto& met = m.metrics();
    met["dt"] = p.config.dt;
    met["sigma_eta"] = p.sigma_eta;
    met["steps"] = r.steps;
    met["time"] = r.final.time;
    met["stationary"] = r.stationary;
    met["final_energy"] = continuum_energy(r.final, rho, potential, a.gamma, a.kappa, p.sigma_eta, a.background);
    met["max_energy_increase"] = r.max_energy_increase;
    met["range_excess"] = r.range_excess;
    met["snapshots"] = r.snapshots.size();
    if (placed.width == 1) {
        std::size_t sharp = 0;
        for (double v : r.final.values) sharp += std::abs(v) > 0.9;
        met["fraction_abs_above_0.9"] = static_cast<double>(sharp) / static_cast<double>(grid.size());
        if (!placed.truth.empty()) {
            const CellScore s = score_cells(cloud, placed.truth, r.final);
            met["cell_agreement"] = s.fraction;
            met["scored_cells"] = s.cells;
        }
    }
    m.write(dir, kOk);
    std::cout << "macro: " << r.steps << " steps, t=" << r.final.time << (r.stationary ? " (stationary)" : "")
              << "; outputs in " << dir.string() << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// compare

struct CompareArgs {
    std::string micro;
    std::string macro;
    std::string macro_b;
    std::string out;
};

fs::path run_file(const std::string& path, const char* name) {
    const fs::path p = path;
    return fs::is_directory(p) ? p / name : p;
}

int run_compare(const CLI::App& sub, const CompareArgs& a) {
    const fs::path macro_file = run_file(a.macro, "field.csv");
    const FieldFile macro = read_field_csv(macro_file);
    Manifest m("compare");
    m.add_input(macro_file);
    Comparison cmp;
    if (!a.macro_b.empty()) {
        const fs::path other = run_file(a.macro_b, "field.csv");
        const FieldFile b = read_field_csv(other);
        m.add_input(other);
        cmp = compare_fields(b.field, macro.field);
    } else {
        if (a.micro.empty()) throw ValidationError("compare needs --micro or --macro-b");
        const fs::path micro_file = run_file(a.micro, "state.csv");
        const CloudFile micro = read_cloud_csv(micro_file);
        m.add_input(micro_file);
        cmp = compare_micro_macro(micro.cloud, micro.state, macro.field);
    }
    record_config(sub, m);
    const fs::path dir = make_out_dir(a.out, "compare");
    const fs::path out_file = dir / "comparison.csv";
    write_comparison_csv(out_file, cmp, macro.field);
    m.add_output(out_file);
    m.metrics()["occupied_cells"] = cmp.occupied_cells;
    m.metrics()["sign_agreement"] = cmp.sign_agreement;
    m.metrics()["l2"] = cmp.l2;
    m.metrics()["sup"] = cmp.sup;
    m.write(dir, kOk);
    std::cout << "compare: sign agreement " << cmp.sign_agreement << ", L2 " << cmp.l2 << ", sup " << cmp.sup
              << " over " << cmp.occupied_cells << " cells\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// digits

struct DigitsArgs {
    std::string data;
    bool header = false;
    std::size_t n_samples = 320;
    std::size_t n_labeled = 40;
    double cutoff_frac = 0.1;
    std::string metric = "cost";
    double reg = 0.0;
    double tol = 1e-9;
    std::size_t max_iters = 20000;
    double relaxation = 1.8;
    double gamma = 1.0;
    double kappa = 10.0;
    double dt = 0.0;
    double t_end = 20.0;
    std::string init = "zero";
    double sigma = 0.1;
    std::string scaling = "plain";
    std::uint64_t seed = 0;
    int threads = 0;
    bool export_distances = false;
    std::string out;
};

int run_digits_cmd(const CLI::App& sub, const DigitsArgs& a) {
    DigitsConfig cfg;
    cfg.path = a.data;
    cfg.has_header = a.header;
    cfg.n_samples = a.n_samples;
    cfg.n_labeled = a.n_labeled;
    cfg.cutoff_frac = a.cutoff_frac;
    if (a.metric == "cost") cfg.metric = OtMetric::cost;
    else if (a.metric == "distance") cfg.metric = OtMetric::distance;
    else throw ValidationError("unknown metric '" + a.metric + "' (cost or distance)");
    cfg.sinkhorn = {a.reg, a.max_iters, a.tol, a.relaxation};
    cfg.init = parse_init(a.init, a.sigma);
    cfg.scaling = parse_scaling(a.scaling);
    cfg.run = RunConfig{a.gamma, a.kappa, a.dt, a.t_end, 1.0, a.seed, 1e-6, resolve_threads(a.threads)};
    if (!fs::exists(cfg.path)) throw IoError("cannot open " + cfg.path.string());

    Manifest m("digits");
    m.add_input(cfg.path);
    record_config(sub, m);
    m.set_seed(a.seed);
    const DigitsReport r = run_digits(cfg);
    const fs::path dir = make_out_dir(a.out, "digits");

    const fs::path pred_file = dir / "predictions.csv";
    {
        CsvWriter w(pred_file, std::vector<std::string>{"sample", "row", "truth", "predicted", "labeled"});
        for (std::size_t k = 0; k < r.sample.images.size(); ++k) {
            const double row[] = {static_cast<double>(k), static_cast<double>(r.sample.rows[k]),
                                  static_cast<double>(r.sample.labels[k]), static_cast<double>(r.predicted[k]),
                                  k < r.sample.n_labeled ? 1.0 : 0.0};
            w.row(row);
        }
        w.close();
    }
    const fs::path conf_file = dir / "confusion.csv";
    {
        std::vector<std::string> header{"truth"};
        for (int c = 0; c < 10; ++c) header.push_back("predicted_" + std::to_string(c));
        CsvWriter w(conf_file, header);
        std::vector<double> row(11);
        for (std::size_t t = 0; t < 10; ++t) {
            row[0] = static_cast<double>(t);
            for (std::size_t c = 0; c < 10; ++c) row[c + 1] = static_cast<double>(r.confusion[t * 10 + c]);
            w.row(row);
        }
        w.close();
    }
    m.add_output(pred_file);
    m.add_output(conf_file);
    if (a.export_distances) {
        const fs::path dist_file = dir / "distances.csv";
        write_distance_csv(dist_file, r.weights.distances, r.weights.n, r.sample.rows);
        m.add_output(dist_file);
    }

    if (!r.graph.connected()) {
        m.warn("weight graph is disconnected");
        std::cerr << "warning: weight graph is disconnected\n";
    }
    auto& met = m.metrics();
    met["accuracy"] = r.accuracy;
    met["correct"] = r.correct;
    met["scored"] = r.scored;
    met["per_class_labeled"] = r.sample.per_class_labeled;
    met["edges"] = r.graph.num_edges();
    met["connected"] = r.graph.connected();
    met["cutoff"] = r.weights.cutoff;
    met["max_w2_distance"] = *std::max_element(r.weights.distances.begin(), r.weights.distances.end());
    met["micro_steps"] = r.micro.steps;
    met["micro_time"] = r.micro.time;
    met["transport"] = "entropic (Sinkhorn); accuracy drifts from exact-transport weights";
    m.write(dir, kOk);
    std::cout << "digits: accuracy " << r.accuracy << " (" << r.correct << "/" << r.scored << "), " << r.graph.num_edges()
              << " edges; outputs in " << dir.string() << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// replay

struct ReplayArgs {
    std::string manifest;
    std::string out;
};

bool is_path_key(const std::string& key) {
    return key == "cloud" || key == "data" || key == "micro" || key == "macro" || key == "macro-b";
}

int run_replay(const ReplayArgs& a) {
    std::ifstream in(a.manifest);
    if (!in) throw IoError("cannot open " + a.manifest);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw IoError(a.manifest + ": " + e.what());
    }
    const std::string command = doc.at("command").get<std::string>();
    if (command == "replay") throw ValidationError("cannot replay a replay manifest");

    CLI::App app;
    app.option_defaults()->always_capture_default();
    std::function<int()> selected;
    register_commands(app, selected);
    CLI::App* sub = app.get_subcommand(command);

    std::vector<std::string> positional;
    std::vector<std::string> named;
    for (const auto& [key, value] : doc.at("config").items()) {
        if (key == "out" || key == "config") continue;
        std::string v = value.get<std::string>();
        if (is_path_key(key) && !v.empty() && fs::path(v).is_relative() && doc.contains("working_directory")) {
            v = (fs::path(doc["working_directory"].get<std::string>()) / v).string();
        }
        const CLI::Option* opt = nullptr;
        for (const CLI::Option* o : sub->get_options()) {
            if (option_key(o) == key) opt = o;
        }
        if (opt == nullptr) throw ValidationError("manifest option '" + key + "' unknown to " + command);
        if (!opt->nonpositional()) {
            positional.push_back(v);
        } else if (opt->get_expected_min() == 0) {
            if (v == "true" || v == "1") named.push_back("--" + key);
        } else {
            named.push_back("--" + key);
            named.push_back(v);
        }
    }
    const fs::path dir = make_out_dir(a.out, "replay");
    std::vector<std::string> args{command};
    args.insert(args.end(), positional.begin(), positional.end());
    args.insert(args.end(), named.begin(), named.end());
    args.push_back("--out");
    args.push_back(dir.string());
    std::reverse(args.begin(), args.end());
    app.parse(args);
    const int code = selected();
    if (code != kOk) return code;

    std::size_t mismatches = 0;
    for (const auto& [name, digest] : doc.at("outputs").items()) {
        const fs::path p = dir / name;
        if (!fs::exists(p)) {
            std::cerr << "missing output " << name << "\n";
            ++mismatches;
        } else if (sha256_file(p) != digest.get<std::string>()) {
            std::cerr << "digest differs: " << name << "\n";
            ++mismatches;
        }
    }
    if (mismatches > 0) {
        std::cerr << "replay: " << mismatches << " output(s) differ from " << a.manifest << "\n";
        return kReplayMismatch;
    }
    std::cout << "replay: all " << doc.at("outputs").size() << " outputs reproduced bitwise\n";
    return kOk;
}

// ---------------------------------------------------------------------------

void add_threads(CLI::App* sub, int& threads) {
    sub->add_option("--threads", threads, "Worker threads (0: LABELFLOW_THREADS or 1)");
}

}  // namespace

void register_commands(CLI::App& app, std::function<int()>& selected) {
    // Options of command <cmd> are read from a [<cmd>] section; flags win.
    app.set_config("--config", "", "INI/TOML file with one [command] section per command");
    app.fallthrough();
    {
        auto args = std::make_shared<GenArgs>();
        auto* sub = app.add_subcommand("gen", "Generate a synthetic point cloud");
        sub->add_option("kind", args->kind, "two-gaussians or two-moons")
            ->required()
            ->check(CLI::IsMember({"two-gaussians", "two-moons"}));
        sub->add_option("--n", args->n, "Number of points (0: 250 for two-gaussians, 500 for two-moons)");
        sub->add_option("--noise", args->noise, "Two-moons noise standard deviation");
        sub->add_option("--mu1", args->mu1, "Two-gaussians first mean");
        sub->add_option("--sd1", args->sd1, "Two-gaussians first standard deviation");
        sub->add_option("--mu2", args->mu2, "Two-gaussians second mean");
        sub->add_option("--sd2", args->sd2, "Two-gaussians second standard deviation");
        sub->add_option("--seed", args->seed, "Random seed");
        sub->add_option("--out", args->out, "Output directory (default: runs/<command>-<timestamp>)");
        sub->callback([sub, args, &selected] { selected = [sub, args] { return run_gen(*sub, *args); }; });
    }
    {
        auto args = std::make_shared<MicroArgs>();
        auto* sub = app.add_subcommand("micro", "Run the graph label dynamics on a cloud file");
        sub->add_option("--cloud", args->cloud, "Cloud CSV")->required();
        args->placement.add(sub);
        sub->add_option("--kernel", args->kernel, "Kernel profile: indicator or gaussian");
        sub->add_option("--radius", args->radius, "Indicator radius or gaussian scale");
        sub->add_option("--epsilon", args->epsilon, "Kernel scale epsilon");
        sub->add_option("--scaling", args->scaling, "Interaction prefactor: plain or eps2");
        sub->add_option("--gamma", args->gamma, "Interaction strength");
        sub->add_option("--kappa", args->kappa, "Double-well strength");
        sub->add_option("--dt", args->dt, "Time step (0: 0.9 x stability bound)");
        sub->add_option("--t-end", args->t_end, "Final time");
        sub->add_option("--init", args->init, "Initial labels: zero, uniform or normal");
        sub->add_option("--sigma", args->sigma, "Standard deviation for --init normal");
        sub->add_option("--stationarity-tol", args->stationarity_tol, "Stop when max |du/dt| falls below");
        sub->add_option("--seed", args->seed, "Random seed");
        add_threads(sub, args->threads);
        sub->add_option("--trace-stride", args->trace_stride, "Record energy every k steps");
        sub->add_flag("--allow-unstable", args->allow_unstable, "Permit dt above the stability bound");
        sub->add_flag("--no-dissipation-check", args->no_dissipation_check, "Do not abort on energy increase");
        sub->add_flag("--export-edges", args->export_edges, "Write edges.csv");
        sub->add_option("--out", args->out, "Output directory (default: runs/<command>-<timestamp>)");
        sub->callback([sub, args, &selected] { selected = [sub, args] { return run_micro_cmd(*sub, *args); }; });
    }
    {
        auto args = std::make_shared<MacroArgs>();
        auto* sub = app.add_subcommand("macro", "Run the continuum solver on the density of a cloud file");
        sub->add_option("--cloud", args->cloud, "Cloud CSV")->required();
        args->placement.add(sub);
        sub->add_option("--nodes", args->nodes, "Grid nodes per axis");
        sub->add_option("--nodes-y", args->nodes_y, "Grid nodes along y in 2D (0: same as --nodes)");
        sub->add_option("--bandwidth", args->bandwidth, "KDE covariance bandwidth * I");
        sub->add_option("--floor", args->floor, "Density floor");
        sub->add_option("--background", args->background, "Background diffusivity r in (r + rho^2)");
        sub->add_option("--kernel", args->kernel, "Kernel profile for sigma_eta: indicator or gaussian");
        sub->add_option("--radius", args->radius, "Indicator radius or gaussian scale");
        sub->add_option("--gamma", args->gamma, "Interaction strength");
        sub->add_option("--kappa", args->kappa, "Double-well strength");
        sub->add_option("--dt", args->dt, "Time step (0: min(0.5 x reaction bound, 0.01))");
        sub->add_option("--t-end", args->t_end, "Final time");
        sub->add_option("--stationarity-tol", args->stationarity_tol, "Stop when max |du/dt| falls below");
        sub->add_option("--cg-tol", args->cg_tol, "Relative residual for the 2D linear solves");
        sub->add_option("--seed", args->seed, "Random seed (recorded only)");
        add_threads(sub, args->threads);
        sub->add_option("--trace-stride", args->trace_stride, "Record energy every k steps");
        sub->add_option("--snapshot-stride", args->snapshot_stride, "Write a field snapshot every k steps");
        sub->add_flag("--allow-unstable", args->allow_unstable, "Permit dt above the reaction bound");
        sub->add_option("--out", args->out, "Output directory (default: runs/<command>-<timestamp>)");
        sub->callback([sub, args, &selected] { selected = [sub, args] { return run_macro_cmd(*sub, *args); }; });
    }
    {
        auto args = std::make_shared<CompareArgs>();
        auto* sub = app.add_subcommand("compare", "Compare a micro state with a macro field");
        sub->add_option("--micro", args->micro, "Micro run directory or state.csv");
        sub->add_option("--macro", args->macro, "Macro run directory or field.csv")->required();
        sub->add_option("--macro-b", args->macro_b, "Second macro field (field-to-field comparison)");
        sub->add_option("--out", args->out, "Output directory (default: runs/<command>-<timestamp>)");
        sub->callback([sub, args, &selected] { selected = [sub, args] { return run_compare(*sub, *args); }; });
    }
    {
        auto args = std::make_shared<DigitsArgs>();
        auto* sub = app.add_subcommand("digits", "Label digit images through Wasserstein weights");
        sub->add_option("--data", args->data, "Digits CSV: 64 pixels and a label per row")->required();
        sub->add_flag("--header", args->header, "The CSV has a header row");
        sub->add_option("--n-samples", args->n_samples, "Images sampled without replacement");
        sub->add_option("--n-labeled", args->n_labeled, "Leading samples treated as labeled");
        sub->add_option("--cutoff-frac", args->cutoff_frac, "Edge cutoff as a fraction of the largest pair value");
        sub->add_option("--metric", args->metric, "Pair value for weights: cost (W2^2) or distance (W2)")
            ->check(CLI::IsMember({"cost", "distance"}));
        sub->add_option("--reg", args->reg, "Entropic regularisation (0: 1e-2 x mean cost)");
        sub->add_option("--tol", args->tol, "Sinkhorn marginal tolerance");
        sub->add_option("--max-iters", args->max_iters, "Sinkhorn iteration cap");
        sub->add_option("--relaxation", args->relaxation, "Sinkhorn over-relaxation in [1, 2)");
        sub->add_option("--gamma", args->gamma, "Interaction strength");
        sub->add_option("--kappa", args->kappa, "Double-well strength");
        sub->add_option("--dt", args->dt, "Time step (0: 0.9 x stability bound)");
        sub->add_option("--t-end", args->t_end, "Final time");
        sub->add_option("--init", args->init, "Initial labels: zero, uniform or normal");
        sub->add_option("--sigma", args->sigma, "Standard deviation for --init normal");
        sub->add_option("--scaling", args->scaling, "Interaction prefactor: plain or eps2");
        sub->add_option("--seed", args->seed, "Sampling and initialisation seed");
        add_threads(sub, args->threads);
        sub->add_flag("--export-distances", args->export_distances, "Write distances.csv");
        sub->add_option("--out", args->out, "Output directory (default: runs/<command>-<timestamp>)");
        sub->callback([sub, args, &selected] { selected = [sub, args] { return run_digits_cmd(*sub, *args); }; });
    }
    {
        auto args = std::make_shared<ReplayArgs>();
        auto* sub = app.add_subcommand("replay", "Re-run a manifest and check output digests");
        sub->add_option("--manifest", args->manifest, "manifest.json of an earlier run")->required();
        sub->add_option("--out", args->out, "Output directory (default: runs/replay-<timestamp>)");
        sub->callback([args, &selected] { selected = [args] { return run_replay(*args); }; });
    }
}

}  // namespace labelflow::cli
