#include "labelflow/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "labelflow/csv.hpp"
#include "labelflow/errors.hpp"
#include "labelflow/random.hpp"

namespace labelflow {

bool Box::contains(std::span<const double> x) const {
    for (std::size_t a = 0; a < x.size(); ++a) {
        if (x[a] < lo[a] || x[a] > hi[a]) return false;
    }
    return true;
}

PointCloud::PointCloud(std::size_t dim, std::vector<double> coords, std::size_t n_unlabeled,
                       std::vector<std::vector<std::size_t>> groups)
    : dim_(dim), coords_(std::move(coords)), n_unlabeled_(n_unlabeled), groups_(std::move(groups)) {
    if (dim_ == 0) throw ValidationError("point cloud dimension must be positive");
    if (coords_.size() % dim_ != 0) throw ValidationError("coordinate count not a multiple of dim");
    if (groups_.size() < 2) throw ValidationError("need at least two label groups");
    const std::size_t total = size();
    if (n_unlabeled_ > total) throw ValidationError("n_unlabeled exceeds point count");
    for (double c : coords_) {
        if (!std::isfinite(c)) throw ValidationError("non-finite coordinate");
    }

    group_index_.assign(total - n_unlabeled_, std::numeric_limits<std::uint32_t>::max());
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        for (std::size_t i : groups_[g]) {
            if (i < n_unlabeled_ || i >= total) {
                throw ValidationError("labeled id " + std::to_string(i) + " outside [n, n+m)");
            }
            auto& slot = group_index_[i - n_unlabeled_];
            if (slot != std::numeric_limits<std::uint32_t>::max()) {
                throw ValidationError("labeled id " + std::to_string(i) + " in two groups");
            }
            slot = static_cast<std::uint32_t>(g);
        }
    }
    for (std::size_t k = 0; k < group_index_.size(); ++k) {
        if (group_index_[k] == std::numeric_limits<std::uint32_t>::max()) {
            throw ValidationError("point " + std::to_string(n_unlabeled_ + k) +
                                  " is past n_unlabeled but has no label group");
        }
    }

    box_.lo.assign(dim_, std::numeric_limits<double>::infinity());
    box_.hi.assign(dim_, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < total; ++i) {
        for (std::size_t a = 0; a < dim_; ++a) {
            box_.lo[a] = std::min(box_.lo[a], coords_[i * dim_ + a]);
            box_.hi[a] = std::max(box_.hi[a], coords_[i * dim_ + a]);
        }
    }
}

std::optional<std::size_t> PointCloud::group_of(std::size_t i) const {
    if (i < n_unlabeled_) return std::nullopt;
    return group_index_.at(i - n_unlabeled_);
}

LabeledCloud attach_labels(std::size_t dim, std::span<const double> coords,
                           const std::vector<std::vector<std::size_t>>& anchors) {
    if (dim == 0 || coords.size() % dim != 0) throw ValidationError("bad coordinate layout");
    const std::size_t total = coords.size() / dim;
    std::vector<int> owner(total, -1);
    for (std::size_t g = 0; g < anchors.size(); ++g) {
        for (std::size_t i : anchors[g]) {
            if (i >= total) throw ValidationError("anchor index " + std::to_string(i) + " out of range");
            if (owner[i] >= 0) throw ValidationError("anchor index " + std::to_string(i) + " in two groups");
            owner[i] = static_cast<int>(g);
        }
    }

    std::vector<std::size_t> order;
    order.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        if (owner[i] < 0) order.push_back(i);
    }
    const std::size_t n = order.size();
    std::vector<std::vector<std::size_t>> groups(anchors.size());
    for (std::size_t g = 0; g < anchors.size(); ++g) {
        for (std::size_t i : anchors[g]) {
            groups[g].push_back(order.size());
            order.push_back(i);
        }
    }

    std::vector<double> out(coords.size());
    for (std::size_t k = 0; k < total; ++k) {
        std::copy_n(coords.begin() + static_cast<std::ptrdiff_t>(order[k] * dim), dim,
                    out.begin() + static_cast<std::ptrdiff_t>(k * dim));
    }
    return {PointCloud(dim, std::move(out), n, std::move(groups)), std::move(order)};
}

WellValue DoubleWell::eval(double t) const {
    if (kind_ == WellKind::symmetric_pm1) {
        const double s = t * t - 1.0;
        return {s * s, 4.0 * t * s};
    }
    const double q = t * (t - 1.0);
    return {q * q, 2.0 * q * (2.0 * t - 1.0)};
}

double DoubleWell::second_derivative(double t) const {
    if (kind_ == WellKind::symmetric_pm1) return 12.0 * t * t - 4.0;
    return 12.0 * t * t - 12.0 * t + 2.0;
}

double DoubleWell::max_abs_curvature(double lo, double hi) const {
    if (lo > hi) std::swap(lo, hi);
    const double vertex = kind_ == WellKind::symmetric_pm1 ? 0.0 : 0.5;
    double m = std::max(std::abs(second_derivative(lo)), std::abs(second_derivative(hi)));
    if (lo <= vertex && vertex <= hi) m = std::max(m, std::abs(second_derivative(vertex)));
    return m;
}

WellValue eval_double_well(const DoubleWell& w, double t) { return w.eval(t); }

std::size_t label_width(std::size_t num_labels) { return num_labels == 2 ? 1 : num_labels; }

std::vector<std::vector<double>> label_codes(std::size_t num_labels) {
    if (num_labels < 2) throw ValidationError("need at least two labels");
    if (num_labels == 2) return {{-1.0}, {1.0}};
    std::vector<std::vector<double>> codes(num_labels, std::vector<double>(num_labels, 0.0));
    for (std::size_t g = 0; g < num_labels; ++g) codes[g][g] = 1.0;
    return codes;
}

LabelState init_labels(const PointCloud& cloud, const InitSpec& spec, std::uint64_t seed) {
    if (spec.kind == InitSpec::Kind::normal && !(spec.sigma > 0.0)) {
        throw ValidationError("normal initialisation needs sigma > 0");
    }
    LabelState s;
    s.width = label_width(cloud.num_labels());
    s.codes = label_codes(cloud.num_labels());
    s.values.assign(cloud.size() * s.width, 0.0);
    s.frozen.assign(cloud.size(), 0);

    RandomStream rng(seed, StreamPurpose::init);
    for (std::size_t i = 0; i < cloud.n_unlabeled(); ++i) {
        for (std::size_t c = 0; c < s.width; ++c) {
            switch (spec.kind) {
                case InitSpec::Kind::zero: break;
                case InitSpec::Kind::uniform: s.at(i, c) = rng.uniform(-1.0, 1.0); break;
                case InitSpec::Kind::normal: s.at(i, c) = rng.normal(0.0, spec.sigma); break;
            }
        }
    }
    for (std::size_t i = cloud.n_unlabeled(); i < cloud.size(); ++i) {
        const auto& code = s.codes[*cloud.group_of(i)];
        std::copy(code.begin(), code.end(), s.values.begin() + static_cast<std::ptrdiff_t>(i * s.width));
        s.frozen[i] = 1;
    }
    return s;
}

void RunConfig::validate() const {
    auto check = [](bool ok, const char* what) {
        if (!ok) throw ValidationError(what);
    };
    check(std::isfinite(gamma) && gamma > 0.0, "gamma must be positive");
    check(std::isfinite(kappa) && kappa >= 0.0, "kappa must be nonnegative");
    check(std::isfinite(dt) && dt > 0.0, "dt must be positive");
    check(std::isfinite(t_end) && t_end > 0.0, "t_end must be positive");
    check(std::isfinite(epsilon) && epsilon > 0.0, "epsilon must be positive");
    check(std::isfinite(stationarity_tol) && stationarity_tol > 0.0, "stationarity_tol must be positive");
    check(threads >= 1, "threads must be at least 1");
}

void write_cloud_csv(const std::filesystem::path& path, const PointCloud& cloud,
                     const LabelState& state, std::span<const int> truth) {
    if (state.size() != cloud.size()) throw ValidationError("state size does not match cloud");
    if (!truth.empty() && truth.size() != cloud.size()) throw ValidationError("truth size does not match cloud");
    std::vector<std::string> header;
    for (std::size_t a = 0; a < cloud.dim(); ++a) header.push_back("x_" + std::to_string(a));
    header.emplace_back("frozen");
    for (std::size_t c = 0; c < state.width; ++c) header.push_back("u_" + std::to_string(c));
    if (!truth.empty()) header.emplace_back("truth");

    CsvWriter out(path, header);
    std::vector<double> row(header.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        auto it = std::copy(cloud.point(i).begin(), cloud.point(i).end(), row.begin());
        *it++ = state.frozen[i];
        it = std::copy(state.row(i).begin(), state.row(i).end(), it);
        if (!truth.empty()) *it = truth[i];
        out.row(row);
    }
    out.close();
}

CloudFile read_cloud_csv(const std::filesystem::path& path) {
    const CsvTable table = read_csv(path);
    const int frozen_col = table.column("frozen");
    if (frozen_col < 1) throw IoError(path.string() + ": header needs x_0.. columns followed by 'frozen'");
    const auto dim = static_cast<std::size_t>(frozen_col);
    for (std::size_t a = 0; a < dim; ++a) {
        if (table.header[a] != "x_" + std::to_string(a)) {
            throw IoError(path.string() + ": expected column x_" + std::to_string(a));
        }
    }
    const int truth_col = table.column("truth");
    std::size_t width = table.header.size() - dim - 1 - (truth_col >= 0 ? 1 : 0);
    if (width == 0) throw IoError(path.string() + ": no u_ columns");
    for (std::size_t c = 0; c < width; ++c) {
        if (table.header[dim + 1 + c] != "u_" + std::to_string(c)) {
            throw IoError(path.string() + ": expected column u_" + std::to_string(c));
        }
    }
    if (table.rows.empty()) throw IoError(path.string() + ": no data rows");

    const std::size_t num_labels = width == 1 ? 2 : width;
    const auto codes = label_codes(num_labels);
    std::vector<double> coords;
    std::vector<std::vector<std::size_t>> anchors(num_labels);
    std::vector<double> values;
    std::vector<int> truth;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        coords.insert(coords.end(), row.begin(), row.begin() + static_cast<std::ptrdiff_t>(dim));
        const double f = row[dim];
        if (f != 0.0 && f != 1.0) {
            throw IoError(path.string() + ": row " + std::to_string(r + 2) + ": frozen must be 0 or 1");
        }
        auto u = row.begin() + static_cast<std::ptrdiff_t>(dim + 1);
        values.insert(values.end(), u, u + static_cast<std::ptrdiff_t>(width));
        if (f == 1.0) {
            const auto match = std::find_if(codes.begin(), codes.end(), [&](const auto& code) {
                return std::equal(code.begin(), code.end(), u);
            });
            if (match == codes.end()) {
                throw IoError(path.string() + ": row " + std::to_string(r + 2) +
                              ": frozen row does not hold an anchor code");
            }
            anchors[static_cast<std::size_t>(match - codes.begin())].push_back(r);
        }
        if (truth_col >= 0) truth.push_back(static_cast<int>(row[static_cast<std::size_t>(truth_col)]));
    }

    auto labeled = attach_labels(dim, coords, anchors);
    LabelState state;
    state.width = width;
    state.codes = codes;
    state.values.resize(values.size());
    state.frozen.assign(table.rows.size(), 0);
    std::vector<int> truth_out(truth.size());
    for (std::size_t k = 0; k < labeled.original_index.size(); ++k) {
        const std::size_t src = labeled.original_index[k];
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(src * width), width,
                    state.values.begin() + static_cast<std::ptrdiff_t>(k * width));
        state.frozen[k] = labeled.cloud.is_labeled(k) ? 1 : 0;
        if (!truth.empty()) truth_out[k] = truth[src];
    }
    return {std::move(labeled.cloud), std::move(state), std::move(truth_out),
            std::move(labeled.original_index)};
}

}  // namespace labelflow
