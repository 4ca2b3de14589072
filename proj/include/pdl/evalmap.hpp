#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdl/common.hpp"
#include "pdl/corpus.hpp"
#include "pdl/encoder.hpp"
#include "pdl/tensor.hpp"

namespace pdl::evalmap {

// ---------------------------------------------------------------- k-means

struct KMeansResult {
    std::vector<ClusterId> assignments;
    Matrix centroids;  // k x D
    std::size_t iterations = 0;
    bool converged = false;
    double inertia = 0.0;  // sum of squared distances to the assigned centroid
};

/// Lloyd iterations from k-means++ seeding (squared Euclidean). Stops when no assignment changes.
/// A cluster that empties is re-seeded at the point farthest from its current centroid.
KMeansResult kmeans(const std::vector<encoder::EmbeddingVector>& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters = 100);

/// Nearest centroid per point (lowest index on ties).
std::vector<ClusterId> nearest_centroids(const Matrix& points, const Matrix& centroids);

// ---------------------------------------------------------------- cluster -> label mapping

struct ClusterLabel {
    std::string label;
    std::size_t votes = 0;
    std::size_t total = 0;

    bool operator==(const ClusterLabel&) const = default;
};

struct ClusterLabelMap {
    std::map<ClusterId, ClusterLabel> clusters;

    /// Mapped label, or "Other" for clusters without an entry.
    std::string label_of(ClusterId cluster) const;

    std::string to_json() const;
    static ClusterLabelMap from_json(std::string_view text);
    std::string to_csv() const;
};

/// Modal truth label per cluster. Ties go to the globally more frequent label, then the lexicographically
/// smaller one. Clusters in [0, k) without members map to "Other" with zero votes.
ClusterLabelMap majority_vote_mapping(const std::vector<ClusterId>& assignments,
                                      const std::vector<std::string>& truth_labels, std::size_t k);

std::vector<std::string> apply_mapping(const ClusterLabelMap& map, const std::vector<ClusterId>& assignments);

// ---------------------------------------------------------------- scores

enum class F1Mode { Weighted, Macro };

struct ClassScore {
    std::string label;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;  // occurrences in truth
};

/// Per-class scores over the union of predicted and true labels, sorted by label.
std::vector<ClassScore> per_class_scores(const std::vector<std::string>& predicted,
                                         const std::vector<std::string>& truth);

/// Weighted: support-weighted mean of per-class F1. Macro: unweighted mean over every class seen in
/// either sequence (classes absent from truth score 0).
double f1_score(const std::vector<std::string>& predicted, const std::vector<std::string>& truth, F1Mode mode);

/// Fraction of items on which the best one-to-one cluster/class pairing agrees (Hungarian assignment).
double matched_accuracy(const std::vector<int>& clusters, const std::vector<int>& classes);

/// Maximum-weight assignment on a rectangular score matrix; returns the column for each row (-1 if unmatched).
std::vector<int> hungarian_max(const std::vector<std::vector<double>>& score);

// ---------------------------------------------------------------- bootstrap

struct BootstrapInterval {
    double point = 0.0;  // metric on the original day set
    double mean = 0.0;   // mean over replicates
    double lower = 0.0;  // 2.5th percentile
    double upper = 0.0;  // 97.5th percentile
    std::size_t replicates = 0;
};

using DayMetric = std::function<double(const std::vector<corpus::Day>& days)>;

/// Resamples test days with replacement and recomputes the metric per replicate (days may repeat).
BootstrapInterval bootstrap_ci(const DayMetric& metric, const std::vector<corpus::Day>& test_days,
                               std::size_t replicates, std::uint64_t seed, Diagnostics* diag = nullptr);

/// Linear-interpolated percentile of sorted values, q in [0, 1].
double percentile(std::vector<double> values, double q);

// ---------------------------------------------------------------- agreement

/// Two-rater agreement; when chance agreement is 1 the result is 1 if observed agreement is 1, else 0.
double cohens_kappa(const std::vector<std::pair<std::string, std::string>>& pairs);

/// Rows are items, columns categories, entries rater counts; every row must sum to the same n >= 2.
/// A single category used everywhere is degenerate: returns 1 with a warning.
double fleiss_kappa(const std::vector<std::vector<std::size_t>>& counts, Diagnostics* diag = nullptr);

/// Items x categories count matrix from per-item label lists.
std::vector<std::vector<std::size_t>> rating_counts(const std::vector<std::vector<std::string>>& item_labels);

// ---------------------------------------------------------------- label hierarchy

/// Rooted label forest. "Other" is always present as a root.
class LabelHierarchy {
public:
    LabelHierarchy();

    /// Adds a node; an empty parent makes it a root. Labels are unique.
    void add(const std::string& label, const std::string& parent = {});

    bool contains(std::string_view label) const;
    /// Parent label, or the label itself for roots. Unknown labels are rejected.
    std::string level_up(std::string_view label) const;
    /// Repeated level_up until a root.
    std::string root_of(std::string_view label) const;
    std::size_t depth(std::string_view label) const;  // roots have depth 0
    /// True when `ancestor` is a proper ancestor of `label`.
    bool is_ancestor(std::string_view ancestor, std::string_view label) const;

    const std::vector<std::string>& labels() const { return order_; }
    std::vector<std::string> roots() const;
    std::vector<std::string> children(std::string_view label) const;

    /// {"v":1,"roots":[{"label":..., "children":[...]}]}
    std::string to_json() const;
    static LabelHierarchy from_json(std::string_view text);
    static LabelHierarchy load(const std::filesystem::path& path);

private:
    std::vector<std::string> order_;
    std::map<std::string, std::string, std::less<>> parent_;
};

}  // namespace pdl::evalmap
