#include "labelflow/pipeline.hpp"

#include <algorithm>
#include <utility>

namespace labelflow {

DigitsReport run_digits(const DigitsConfig& cfg) {
    RunConfig run = cfg.run;
    const bool auto_dt = run.dt <= 0.0;
    if (auto_dt) run.dt = 1.0;
    run.validate();
    DigitsSample sample = load_digits_csv(cfg.path, cfg.n_samples, cfg.n_labeled, run.seed, cfg.has_header);
    const std::size_t ns = sample.images.size();
    WassersteinGraph weights =
        wasserstein_weights(sample.images, cfg.cutoff_frac, cfg.sinkhorn, run.threads, cfg.metric);

    std::vector<std::vector<std::size_t>> groups(10);
    for (std::size_t k = 0; k < sample.n_labeled; ++k) groups[static_cast<std::size_t>(sample.labels[k])].push_back(k);
    std::vector<double> coords;
    coords.reserve(ns * sample.images.front().mass.size());
    for (const auto& im : sample.images) coords.insert(coords.end(), im.mass.begin(), im.mass.end());
    LabeledCloud cloud = attach_labels(sample.images.front().mass.size(), coords, groups);

    std::vector<std::size_t> where(ns);
    for (std::size_t i = 0; i < ns; ++i) where[cloud.original_index[i]] = i;
    std::vector<Edge> edges;
    edges.reserve(weights.graph.num_edges());
    for (const Edge& e : weights.graph.edges()) {
        const auto [a, b] = std::minmax(where[e.i], where[e.j]);
        edges.push_back({a, b, e.w});
    }
    WeightGraph graph(ns, std::move(edges), weights.graph.kernel(), weights.graph.epsilon());

    const DoubleWell well(WellKind::unit_interval);
    if (auto_dt) run.dt = 0.9 * MicroSystem(cloud.cloud, graph, well, run, cfg.scaling).stability_bound();
    const MicroSystem sys(cloud.cloud, graph, well, run, cfg.scaling);
    MicroResult micro = run_micro(sys, init_labels(cloud.cloud, cfg.init, run.seed));

    DigitsReport r{std::move(sample), std::move(weights), std::move(cloud), std::move(graph), std::move(micro), {}, 0, 0, 0.0, {}};
    const auto cls = classify(r.micro.final);
    r.predicted.assign(ns, -1);
    for (std::size_t i = 0; i < ns; ++i) r.predicted[r.cloud.original_index[i]] = cls[i];
    r.confusion.assign(100, 0);
    for (std::size_t k = r.sample.n_labeled; k < ns; ++k) {
        const int truth = r.sample.labels[k];
        const int guess = r.predicted[k];
        ++r.scored;
        if (guess == truth) ++r.correct;
        if (guess >= 0) ++r.confusion[static_cast<std::size_t>(truth) * 10 + static_cast<std::size_t>(guess)];
    }
    r.accuracy = r.scored > 0 ? static_cast<double>(r.correct) / static_cast<double>(r.scored) : 0.0;
    return r;
}

}  // namespace labelflow
