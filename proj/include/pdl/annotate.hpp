#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pdl/common.hpp"
#include "pdl/corpus.hpp"
#include "pdl/evalmap.hpp"
#include "pdl/scan.hpp"

namespace pdl::annotate {

/// One high-confidence window shown to raters.
struct CentroidSample {
    std::string sample_id;
    WindowId window_id = 0;
    ClusterId cluster = 0;
    double confidence = 0.0;
    std::vector<corpus::SensorEvent> events;  // the window's underlying events, when attached

    bool operator==(const CentroidSample&) const = default;
};

/// Per cluster, the m most confident windows (ties by lower window_id). Clusters with fewer than m
/// members (or none, among the k expected) yield what they have plus a warning.
std::vector<CentroidSample> select_centroids(const std::vector<scan::ClusterAssignment>& assignments, std::size_t m,
                                             Diagnostics* diag = nullptr);

/// Fills each sample's events from the window's event index range.
void attach_events(std::vector<CentroidSample>& samples, const std::vector<corpus::Window>& windows,
                   const std::vector<corpus::SensorEvent>& events);

struct RatingRecord {
    std::string sample_id;
    std::string rater_id;
    std::string label;

    bool operator==(const RatingRecord&) const = default;
};

struct Progress {
    std::size_t samples = 0;
    std::size_t scheduled = 0;  // samples x raters per sample
    std::size_t submitted = 0;
    std::size_t complete_samples = 0;  // samples with the full rater count
};

struct AnnotationSession {
    std::string session_id;
    std::string dataset_id;
    std::size_t raters_per_sample = 2;
    std::uint64_t seed = 0;
    std::vector<CentroidSample> samples;  // presentation order
    std::vector<RatingRecord> submissions;

    const CentroidSample& sample(std::string_view sample_id) const;
    bool has_sample(std::string_view sample_id) const;
    /// Ratings for one sample, in submission order.
    std::vector<RatingRecord> ratings_for(std::string_view sample_id) const;
    std::optional<std::string> label_by(std::string_view sample_id, std::string_view rater_id) const;

    Progress progress() const;
    /// First sample in presentation order the rater has not labeled and that still needs raters.
    const CentroidSample* next_for(std::string_view rater_id) const;

    std::string to_json() const;
    static AnnotationSession from_json(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static AnnotationSession load(const std::filesystem::path& path);
};

/// Shuffles the samples deterministically and schedules each for `raters_per_sample` distinct raters.
AnnotationSession create_session(std::vector<CentroidSample> samples, std::size_t raters_per_sample,
                                 std::uint64_t seed, std::string session_id = "session",
                                 std::string dataset_id = "dataset");

/// Records (or replaces) a rater's label for a sample; returns the replaced value if any.
/// Unknown samples raise NotFoundError; labels outside the hierarchy raise ValidationError.
std::optional<std::string> record_label(AnnotationSession& session, std::string_view sample_id,
                                        std::string_view rater_id, std::string_view label,
                                        const evalmap::LabelHierarchy& hierarchy);

/// Modal label per cluster over its ratings. On a tie, each tied candidate that is not an ancestor of another
/// tied candidate is levelled up once and the votes recounted; a remaining tie goes to the lexicographically
/// smallest original candidate. Clusters without ratings map to "Other" with zero votes.
evalmap::ClusterLabelMap cluster_majority_labels(const AnnotationSession& session,
                                                 const evalmap::LabelHierarchy& hierarchy,
                                                 const std::vector<ClusterId>& clusters,
                                                 Diagnostics* diag = nullptr);

struct Agreement {
    double cohen = 0.0;
    std::size_t pairs = 0;
    double fleiss = 0.0;
    std::size_t clusters = 0;  // clusters with the modal rating count, used for Fleiss
};

/// Inter-rater kappa over samples with two or more ratings (first two raters) and cluster-agreement
/// kappa over clusters' pooled ratings; optionally after levelling every label up once.
Agreement session_agreement(const AnnotationSession& session, const evalmap::LabelHierarchy& hierarchy,
                            bool level_up, Diagnostics* diag = nullptr);

struct WindowLabel {
    WindowId window_id = 0;
    ClusterId cluster = 0;
    double confidence = 0.0;
    std::string label;

    bool operator==(const WindowLabel&) const = default;
};

/// Every assigned window takes its cluster's mapped label.
std::vector<WindowLabel> propagate(const evalmap::ClusterLabelMap& map,
                                   const std::vector<scan::ClusterAssignment>& assignments);

/// Per-event label by majority over covering windows; ties go to the tied window with the highest confidence,
/// then the latest start. Events no window covers get "No Label".
std::vector<std::string> reannotate_events(const std::vector<WindowLabel>& labels,
                                           const std::vector<corpus::Window>& windows, std::size_t n_events);

/// CSV with header timestamp,sensor,value,truth_label,discovered_label.
std::string export_labeled_events(const std::vector<corpus::SensorEvent>& events,
                                  const std::vector<std::string>& discovered);

std::string window_labels_to_csv(const std::vector<WindowLabel>& labels);

}  // namespace pdl::annotate
