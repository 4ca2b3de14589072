#include "pdl/evalmap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pdl/io.hpp"

namespace pdl::evalmap {

namespace {

Matrix to_matrix(const std::vector<encoder::EmbeddingVector>& points) {
    const auto n = static_cast<Eigen::Index>(points.size());
    const auto d = n == 0 ? 0 : static_cast<Eigen::Index>(points.front().values.size());
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& v = points[static_cast<std::size_t>(i)].values;
        if (static_cast<Eigen::Index>(v.size()) != d) {
            throw ValidationError("points differ in dimension");
        }
        for (Eigen::Index j = 0; j < d; ++j) {
            m(i, j) = v[static_cast<std::size_t>(j)];
        }
    }
    return m;
}

double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
    return (a.row(i) - b.row(j)).squaredNorm();
}

}  // namespace

std::vector<ClusterId> nearest_centroids(const Matrix& points, const Matrix& centroids) {
    std::vector<ClusterId> out(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        ClusterId arg = 0;
        for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
            const double d = squared_distance(points, i, centroids, c);
            if (d < best) {
                best = d;
                arg = static_cast<ClusterId>(c);
            }
        }
        out[static_cast<std::size_t>(i)] = arg;
    }
    return out;
}

KMeansResult kmeans(const std::vector<encoder::EmbeddingVector>& input, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters) {
    if (k == 0 || k > input.size()) {
        throw ValidationError(fmt::format("k-means needs 1 <= k <= n (k={}, n={})", k, input.size()));
    }
    if (max_iters == 0) {
        throw ValidationError("max_iters must be >= 1");
    }
    const Matrix points = to_matrix(input);
    const auto n = points.rows();
    const auto K = static_cast<Eigen::Index>(k);
    std::mt19937_64 rng(encoder::mix_seed(seed, 0x6b6d));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // k-means++ seeding.
    Matrix centroids(K, points.cols());
    std::vector<char> chosen(static_cast<std::size_t>(n), 0);
    Eigen::Index first = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    centroids.row(0) = points.row(first);
    chosen[static_cast<std::size_t>(first)] = 1;
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        d2[static_cast<std::size_t>(i)] = squared_distance(points, i, centroids, 0);
    }
    for (Eigen::Index c = 1; c < K; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        Eigen::Index pick = -1;
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double run = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                run += d2[static_cast<std::size_t>(i)];
                if (d2[static_cast<std::size_t>(i)] > 0.0 && run >= target) {
                    pick = i;
                    break;
                }
            }
            if (pick < 0) {
                for (Eigen::Index i = n - 1; i >= 0; --i) {
                    if (d2[static_cast<std::size_t>(i)] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        } else {
            for (Eigen::Index i = 0; i < n; ++i) {
                if (!chosen[static_cast<std::size_t>(i)]) {
                    pick = i;
                    break;
                }
            }
        }
        chosen[static_cast<std::size_t>(pick)] = 1;
        centroids.row(c) = points.row(pick);
        for (Eigen::Index i = 0; i < n; ++i) {
            d2[static_cast<std::size_t>(i)] =
                std::min(d2[static_cast<std::size_t>(i)], squared_distance(points, i, centroids, c));
        }
    }

    KMeansResult r;
    r.assignments = nearest_centroids(points, centroids);
    for (std::size_t it = 0; it < max_iters; ++it) {
        Matrix sums = Matrix::Zero(K, points.cols());
        std::vector<std::size_t> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto c = r.assignments[static_cast<std::size_t>(i)];
            sums.row(c) += points.row(i);
            ++counts[static_cast<std::size_t>(c)];
        }
        std::vector<char> used(static_cast<std::size_t>(n), 0);
        for (Eigen::Index c = 0; c < K; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                continue;
            }
            // Empty cluster: move it onto the point farthest from its current centroid.
            Eigen::Index far = -1;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (used[static_cast<std::size_t>(i)]) {
                    continue;
                }
                const double d = squared_distance(points, i, centroids, r.assignments[static_cast<std::size_t>(i)]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            used[static_cast<std::size_t>(far)] = 1;
            centroids.row(c) = points.row(far);
        }
        auto next = nearest_centroids(points, centroids);
        ++r.iterations;
        if (next == r.assignments) {
            r.converged = true;
            break;
        }
        r.assignments = std::move(next);
    }
    r.centroids = centroids;
    for (Eigen::Index i = 0; i < n; ++i) {
        r.inertia += squared_distance(points, i, centroids, r.assignments[static_cast<std::size_t>(i)]);
    }
    return r;
}

// ---------------------------------------------------------------- mapping

std::string ClusterLabelMap::label_of(ClusterId cluster) const {
    auto it = clusters.find(cluster);
    return it == clusters.end() ? std::string(kOtherLabel) : it->second.label;
}

std::string ClusterLabelMap::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [c, e] : clusters) {
        arr.push_back({{"cluster", c}, {"label", e.label}, {"votes", e.votes}, {"total", e.total}});
    }
    nlohmann::json j;
    j["v"] = 1;
    j["clusters"] = arr;
    return j.dump(2) + "\n";
}

ClusterLabelMap ClusterLabelMap::from_json(std::string_view text) {
    auto j = nlohmann::json::parse(text);
    ClusterLabelMap m;
    for (const auto& e : j.at("clusters")) {
        ClusterLabel l{e.at("label").get<std::string>(), e.at("votes").get<std::size_t>(),
                       e.at("total").get<std::size_t>()};
        if (l.votes > l.total) {
            throw ValidationError("cluster label map entry has more votes than its total");
        }
        m.clusters[e.at("cluster").get<ClusterId>()] = std::move(l);
    }
    return m;
}

std::string ClusterLabelMap::to_csv() const {
    std::string out = "cluster,label,votes,total\n";
    for (const auto& [c, e] : clusters) {
        out += fmt::format("{},{},{},{}\n", c, io::csv_escape(e.label), e.votes, e.total);
    }
    return out;
}

ClusterLabelMap majority_vote_mapping(const std::vector<ClusterId>& assignments,
                                      const std::vector<std::string>& truth_labels, std::size_t k) {
    if (assignments.size() != truth_labels.size()) {
        throw ValidationError("assignments and truth labels differ in length");
    }
    std::map<std::string, std::size_t> global;
    std::vector<std::map<std::string, std::size_t>> per(k);
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        const auto c = assignments[i];
        if (c < 0 || static_cast<std::size_t>(c) >= k) {
            throw ValidationError(fmt::format("cluster id {} outside [0, {})", c, k));
        }
        ++global[truth_labels[i]];
        ++per[static_cast<std::size_t>(c)][truth_labels[i]];
    }
    ClusterLabelMap out;
    for (std::size_t c = 0; c < k; ++c) {
        ClusterLabel e{kOtherLabel, 0, 0};
        const std::string* best = nullptr;
        for (const auto& [label, count] : per[c]) {
            e.total += count;
            // map iteration is lexicographic, so strict comparisons keep the smaller label on full ties
            if (best == nullptr || count > e.votes || (count == e.votes && global[label] > global[*best])) {
                best = &label;
                e.votes = count;
            }
        }
        if (best != nullptr) {
            e.label = *best;
        }
        out.clusters[static_cast<ClusterId>(c)] = e;
    }
    return out;
}

std::vector<std::string> apply_mapping(const ClusterLabelMap& map, const std::vector<ClusterId>& assignments) {
    std::vector<std::string> out;
    out.reserve(assignments.size());
    for (auto c : assignments) {
        out.push_back(map.label_of(c));
    }
    return out;
}

// ---------------------------------------------------------------- scores

std::vector<ClassScore> per_class_scores(const std::vector<std::string>& predicted,
                                         const std::vector<std::string>& truth) {
    if (predicted.size() != truth.size()) {
        throw ValidationError("predicted and truth sequences differ in length");
    }
    if (truth.empty()) {
        throw ValidationError("cannot score an empty labeling");
    }
    struct Tally {
        std::size_t tp = 0, fp = 0, fn = 0;
    };
    std::map<std::string, Tally> t;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (predicted[i] == truth[i]) {
            ++t[truth[i]].tp;
        } else {
            ++t[predicted[i]].fp;
            ++t[truth[i]].fn;
        }
    }
    std::vector<ClassScore> out;
    for (const auto& [label, x] : t) {
        ClassScore s;
        s.label = label;
        s.support = x.tp + x.fn;
        s.precision = x.tp + x.fp == 0 ? 0.0 : static_cast<double>(x.tp) / static_cast<double>(x.tp + x.fp);
        s.recall = s.support == 0 ? 0.0 : static_cast<double>(x.tp) / static_cast<double>(s.support);
        s.f1 = s.precision + s.recall == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
        out.push_back(s);
    }
    return out;
}

double f1_score(const std::vector<std::string>& predicted, const std::vector<std::string>& truth, F1Mode mode) {
    auto scores = per_class_scores(predicted, truth);
    double acc = 0.0;
    if (mode == F1Mode::Macro) {
        for (const auto& s : scores) {
            acc += s.f1;
        }
        return acc / static_cast<double>(scores.size());
    }
    for (const auto& s : scores) {
        acc += s.f1 * static_cast<double>(s.support);
    }
    return acc / static_cast<double>(truth.size());
}

std::vector<int> hungarian_max(const std::vector<std::vector<double>>& score) {
    const std::size_t rows = score.size();
    const std::size_t cols = rows == 0 ? 0 : score.front().size();
    const std::size_t n = std::max(rows, cols);
    if (n == 0) {
        return {};
    }
    double top = 0.0;
    for (const auto& r : score) {
        if (r.size() != cols) {
            throw ValidationError("score matrix rows differ in length");
        }
        for (double v : r) {
            top = std::max(top, v);
        }
    }
    // Minimize (top - score) on the zero-padded square matrix; 1-based potentials formulation.
    auto cost = [&](std::size_t i, std::size_t j) {
        const double s = (i < rows && j < cols) ? score[i][j] : 0.0;
        return top - s;
    };
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) {
                    continue;
                }
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> out(rows, -1);
    for (std::size_t j = 1; j <= n; ++j) {
        const std::size_t i = p[j] - 1;
        if (i < rows && j - 1 < cols) {
            out[i] = static_cast<int>(j - 1);
        }
    }
    return out;
}

double matched_accuracy(const std::vector<int>& clusters, const std::vector<int>& classes) {
    if (clusters.size() != classes.size()) {
        throw ValidationError("cluster and class sequences differ in length");
    }
    if (clusters.empty()) {
        throw ValidationError("cannot match an empty labeling");
    }
    std::map<int, std::size_t> ci, ki;
    for (int c : clusters) {
        ci.emplace(c, ci.size());
    }
    for (int c : classes) {
        ki.emplace(c, ki.size());
    }
    std::vector<std::vector<double>> score(ci.size(), std::vector<double>(ki.size(), 0.0));
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        score[ci[clusters[i]]][ki[classes[i]]] += 1.0;
    }
    auto match = hungarian_max(score);
    double hits = 0.0;
    for (std::size_t r = 0; r < match.size(); ++r) {
        if (match[r] >= 0) {
            hits += score[r][static_cast<std::size_t>(match[r])];
        }
    }
    return hits / static_cast<double>(clusters.size());
}

// ---------------------------------------------------------------- bootstrap

double percentile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw ValidationError("percentile of an empty set");
    }
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

BootstrapInterval bootstrap_ci(const DayMetric& metric, const std::vector<corpus::Day>& test_days,
                               std::size_t replicates, std::uint64_t seed, Diagnostics* diag) {
    if (replicates < 100) {
        throw ValidationError("bootstrap needs at least 100 replicates");
    }
    if (test_days.empty()) {
        throw ValidationError("bootstrap needs at least one test day");
    }
    BootstrapInterval out;
    out.point = metric(test_days);
    if (test_days.size() < 2) {
        warn(diag, "fewer than 2 test days; bootstrap interval degenerates to the point estimate");
        out.mean = out.lower = out.upper = out.point;
        return out;
    }
    std::mt19937_64 rng(encoder::mix_seed(seed, 0xb007));
    std::uniform_int_distribution<std::size_t> pick(0, test_days.size() - 1);
    std::vector<double> values;
    values.reserve(replicates);
    std::vector<corpus::Day> sample(test_days.size());
    for (std::size_t r = 0; r < replicates; ++r) {
        for (auto& d : sample) {
            d = test_days[pick(rng)];
        }
        values.push_back(metric(sample));
    }
    out.replicates = replicates;
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    out.lower = percentile(values, 0.025);
    out.upper = percentile(values, 0.975);
    return out;
}

// ---------------------------------------------------------------- agreement

double cohens_kappa(const std::vector<std::pair<std::string, std::string>>& pairs) {
    if (pairs.empty()) {
        throw ValidationError("cohens_kappa needs at least one pair");
    }
    std::map<std::string, std::size_t> a, b;
    std::size_t agree = 0;
    for (const auto& [x, y] : pairs) {
        ++a[x];
        ++b[y];
        agree += x == y ? 1 : 0;
    }
    const double n = static_cast<double>(pairs.size());
    const double po = static_cast<double>(agree) / n;
    double pe = 0.0;
    for (const auto& [label, count] : a) {
        auto it = b.find(label);
        if (it != b.end()) {
            pe += (static_cast<double>(count) / n) * (static_cast<double>(it->second) / n);
        }
    }
    if (pe >= 1.0 - 1e-12) {
        return po >= 1.0 - 1e-12 ? 1.0 : 0.0;
    }
    return (po - pe) / (1.0 - pe);
}

double fleiss_kappa(const std::vector<std::vector<std::size_t>>& counts, Diagnostics* diag) {
    if (counts.empty() || counts.front().empty()) {
        throw ValidationError("fleiss_kappa needs a non-empty count matrix");
    }
    const std::size_t cats = counts.front().size();
    const std::size_t raters = std::accumulate(counts.front().begin(), counts.front().end(), std::size_t{0});
    if (raters < 2) {
        throw ValidationError("fleiss_kappa needs at least 2 ratings per item");
    }
    const double n = static_cast<double>(raters);
    const double items = static_cast<double>(counts.size());
    std::vector<double> col(cats, 0.0);
    double p_bar = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const auto& row = counts[i];
        if (row.size() != cats) {
            throw ValidationError("fleiss_kappa rows differ in category count");
        }
        const std::size_t sum = std::accumulate(row.begin(), row.end(), std::size_t{0});
        if (sum != raters) {
            throw ValidationError(fmt::format("item {} has {} ratings, expected {}", i, sum, raters));
        }
        double sq = 0.0;
        for (std::size_t j = 0; j < cats; ++j) {
            sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
            col[j] += static_cast<double>(row[j]);
        }
        p_bar += (sq - n) / (n * (n - 1.0));
    }
    p_bar /= items;
    double pe = 0.0;
    for (double c : col) {
        const double p = c / (items * n);
        pe += p * p;
    }
    if (pe >= 1.0 - 1e-12) {
        warn(diag, "all ratings fall in one category; Fleiss kappa defined as 1");
        return 1.0;
    }
    return (p_bar - pe) / (1.0 - pe);
}

std::vector<std::vector<std::size_t>> rating_counts(const std::vector<std::vector<std::string>>& item_labels) {
    std::map<std::string, std::size_t> cats;
    for (const auto& item : item_labels) {
        for (const auto& l : item) {
            cats.emplace(l, 0);
        }
    }
    std::size_t idx = 0;
    for (auto& [label, i] : cats) {
        i = idx++;
    }
    std::vector<std::vector<std::size_t>> out;
    for (const auto& item : item_labels) {
        std::vector<std::size_t> row(cats.size(), 0);
        for (const auto& l : item) {
            ++row[cats[l]];
        }
        out.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------- hierarchy

LabelHierarchy::LabelHierarchy() { add(kOtherLabel); }

void LabelHierarchy::add(const std::string& label, const std::string& parent) {
    if (label.empty()) {
        throw ValidationError("hierarchy labels must be non-empty");
    }
    if (parent_.count(label) != 0) {
        throw ValidationError(fmt::format("duplicate hierarchy label '{}'", label));
    }
    if (!parent.empty() && parent_.count(parent) == 0) {
        throw ValidationError(fmt::format("parent '{}' of '{}' is not in the hierarchy", parent, label));
    }
    parent_.emplace(label, parent);
    order_.push_back(label);
}

bool LabelHierarchy::contains(std::string_view label) const { return parent_.find(label) != parent_.end(); }

std::string LabelHierarchy::level_up(std::string_view label) const {
    auto it = parent_.find(label);
    if (it == parent_.end()) {
        throw ValidationError(fmt::format("label '{}' is not in the hierarchy", label));
    }
    return it->second.empty() ? it->first : it->second;
}

std::string LabelHierarchy::root_of(std::string_view label) const {
    std::string cur = level_up(label);
    std::string prev(label);
    while (cur != prev) {
        prev = cur;
        cur = level_up(cur);
    }
    return cur;
}

std::size_t LabelHierarchy::depth(std::string_view label) const {
    std::size_t d = 0;
    std::string cur(label);
    for (std::string up = level_up(cur); up != cur; up = level_up(cur)) {
        cur = up;
        ++d;
    }
    return d;
}

bool LabelHierarchy::is_ancestor(std::string_view ancestor, std::string_view label) const {
    std::string cur(label);
    for (std::string up = level_up(cur); up != cur; up = level_up(cur)) {
        if (up == ancestor) {
            return true;
        }
        cur = up;
    }
    return false;
}

std::vector<std::string> LabelHierarchy::roots() const {
    std::vector<std::string> out;
    for (const auto& l : order_) {
        if (parent_.at(l).empty()) {
            out.push_back(l);
        }
    }
    return out;
}

std::vector<std::string> LabelHierarchy::children(std::string_view label) const {
    std::vector<std::string> out;
    for (const auto& l : order_) {
        if (parent_.at(l) == label) {
            out.push_back(l);
        }
    }
    return out;
}

std::string LabelHierarchy::to_json() const {
    std::function<nlohmann::json(const std::string&)> node = [&](const std::string& label) {
        nlohmann::json j;
        j["label"] = label;
        j["children"] = nlohmann::json::array();
        for (const auto& c : children(label)) {
            j["children"].push_back(node(c));
        }
        return j;
    };
    nlohmann::json j;
    j["v"] = 1;
    j["roots"] = nlohmann::json::array();
    for (const auto& r : roots()) {
        j["roots"].push_back(node(r));
    }
    return j.dump(2) + "\n";
}

LabelHierarchy LabelHierarchy::from_json(std::string_view text) {
    auto j = nlohmann::json::parse(text);
    LabelHierarchy h;
    std::function<void(const nlohmann::json&, const std::string&)> walk = [&](const nlohmann::json& n,
                                                                              const std::string& parent) {
        const auto label = n.at("label").get<std::string>();
        if (!(parent.empty() && label == kOtherLabel)) {
            h.add(label, parent);
        }
        if (n.contains("children")) {
            for (const auto& c : n.at("children")) {
                walk(c, label);
            }
        }
    };
    for (const auto& r : j.at("roots")) {
        walk(r, "");
    }
    return h;
}

LabelHierarchy LabelHierarchy::load(const std::filesystem::path& path) { return from_json(io::read_file(path)); }

}  // namespace pdl::evalmap
