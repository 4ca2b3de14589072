#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pdl/annotate.hpp"
#include "pdl/common.hpp"
#include "pdl/encoder.hpp"
#include "pdl/evalmap.hpp"
#include "pdl/scan.hpp"

namespace pdl::pipeline {

/// A stage input that is not on disk.
class MissingArtifact : public NotFoundError {
public:
    explicit MissingArtifact(std::filesystem::path path);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

struct PipelineConfig {
    // corpus
    std::string dataset;  // raw event log read by ingest
    std::string dataset_name = "dataset";
    std::string label_map;  // raw -> unified activity table; empty keeps raw labels
    std::size_t window_length = 20;
    std::size_t stride = 1;
    double sample_fraction = 0.10;
    double train_ratio = 0.8;
    double temperature_bin_width = 1.0;
    bool drop_numeric = false;
    std::uint64_t seed = 0;
    std::string out = "run";

    // encoder
    std::size_t embed_dim = 64;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t feedforward_dim = 256;
    double mask_fraction = 0.15;
    std::size_t pretrain_epochs = 3;
    std::size_t pretrain_batch = 32;
    double pretrain_lr = 0.05;
    double pretrain_momentum = 0.9;
    double pretrain_clip = 1.0;

    // neighbors and clustering
    std::size_t h = 20;
    std::size_t k = 20;
    double lambda = 2.0;
    std::size_t scan_epochs = 3;
    std::size_t scan_batch = 64;
    std::size_t neighbors_per_anchor = 1;
    double scan_lr = 0.02;
    double scan_momentum = 0.9;
    double scan_clip = 1.0;
    bool scan_update_encoder = true;
    std::size_t kmeans_max_iters = 100;
    std::size_t threads = 0;

    // annotation
    std::size_t m = 5;
    std::size_t raters_per_sample = 2;
    std::string hierarchy;  // empty: bundled hierarchy
    std::string layout;     // extra layout file for serve

    // evaluation
    std::size_t bootstrap_replicates = 1000;
    bool exclude_unlabeled = false;
    std::size_t kmeans_comparison_seeds = 10;
    std::vector<std::size_t> sweep_ks{10, 15, 20, 30, 40, 50, 60, 100};

    // trends
    std::string period1_start, period1_end, period2_start, period2_end;

    // synthetic household
    std::size_t synth_days = 10;
    std::size_t synth_events_per_day = 450;
    double synth_noise = 0.05;
    std::string synth_start_day = "2009-11-01";
    std::string synth_household;  // JSON household file; empty: bundled planted household

    /// Sets one key from text; unknown keys and malformed values raise ValidationError.
    void set(std::string_view key, std::string_view value);
    std::string get(std::string_view key) const;
    static const std::vector<std::string>& keys();

    /// Applies `key = value` lines; '#' starts a comment.
    void apply_text(std::string_view text);
    /// Every key, one `key=value` line each, in key order.
    std::string to_text() const;

    void validate() const;
    encoder::EncoderConfig encoder_config(std::size_t vocab_size) const;
    scan::ScanConfig scan_config() const;
    std::filesystem::path out_dir() const { return out; }
    std::filesystem::path hierarchy_path() const;
};

/// Artifact file names inside the output directory.
namespace artifact {
inline constexpr const char* kConfig = "config.txt";
inline constexpr const char* kEvents = "events.csv";
inline constexpr const char* kIngestReport = "ingest_report.json";
inline constexpr const char* kVocab = "vocab.json";
inline constexpr const char* kWindows = "windows.jsonl";
inline constexpr const char* kSample = "sample.json";
inline constexpr const char* kSplit = "split.json";
inline constexpr const char* kEncoder = "encoder.bin";
inline constexpr const char* kPretrainLoss = "pretrain_loss.csv";
inline constexpr const char* kEmbeddings = "embeddings.bin";
inline constexpr const char* kNeighbors = "neighbors.jsonl";
inline constexpr const char* kScanEncoder = "scan_encoder.bin";
inline constexpr const char* kHead = "head.bin";
inline constexpr const char* kScanLoss = "scan_loss.csv";
inline constexpr const char* kAssignments = "assignments.jsonl";
inline constexpr const char* kKmeans = "kmeans.json";
inline constexpr const char* kKmeansAssignments = "kmeans_assignments.jsonl";
inline constexpr const char* kCentroids = "centroids.csv";
inline constexpr const char* kSessions = "sessions";
inline constexpr const char* kClusterLabels = "cluster_labels.json";
inline constexpr const char* kClusterLabelsCsv = "cluster_labels.csv";
inline constexpr const char* kWindowLabels = "window_labels.csv";
inline constexpr const char* kLabeledEvents = "labeled_events.csv";
inline constexpr const char* kPropagation = "propagation.json";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kMetricsCsv = "metrics.csv";
inline constexpr const char* kClusterVotes = "cluster_votes.csv";
inline constexpr const char* kProjection = "projection.tsv";
inline constexpr const char* kSweep = "sweep_k.csv";
inline constexpr const char* kSynthLog = "synthetic.log";
inline constexpr const char* kSynthLayout = "layout.json";
inline constexpr const char* kSynthHousehold = "household.json";
inline constexpr const char* kManifests = "manifests";
}  // namespace artifact

struct StageResult {
    std::string stage;
    std::vector<std::string> outputs;
    Diagnostics diagnostics;
};

/// Parses the log, applies the label map, builds the vocabulary, windows, the sample and the day split.
StageResult ingest(const PipelineConfig& config);
/// Masked-token pre-training on the sampled training-day windows; embeds every sampled window.
StageResult pretrain(const PipelineConfig& config);
/// Neighbor graph over the sampled training-day embeddings.
StageResult build_neighbors(const PipelineConfig& config);
/// SCAN fine-tuning, then cluster assignments for every window.
StageResult cluster(const PipelineConfig& config);
/// k-means on the pre-trained embeddings of the sampled windows.
StageResult run_kmeans(const PipelineConfig& config);
/// Centroid selection and annotation session creation.
StageResult centroids(const PipelineConfig& config);
/// Cluster majority labels from the session, window labels and the re-annotated event stream.
/// With `oracle_raters`, unrated schedule slots are first filled from the samples' truth labels.
StageResult propagate(const PipelineConfig& config, bool oracle_raters = false);
/// Majority-vote mapping on training days, F1 with bootstrap intervals on test days, matched accuracy,
/// rater agreement and the projection export.
StageResult evaluate(const PipelineConfig& config);
/// SCAN for every k in `sweep_ks`, macro F1 with bootstrap intervals per k.
StageResult sweep_k(const PipelineConfig& config);
/// Period comparison in the truth and discovered label spaces.
StageResult trends(const PipelineConfig& config);
/// Writes the planted-motif household log, its layout and household description.
StageResult synth(const PipelineConfig& config);

/// Fills missing ratings with each sample's majority truth label (or "Other" when that label is not in the
/// hierarchy), using raters "oracle-1".."oracle-N". Returns the number of ratings added.
std::size_t simulate_ratings(annotate::AnnotationSession& session, const evalmap::LabelHierarchy& hierarchy);

/// Loads the hierarchy, layouts and sessions in the output directory for the HTTP service.
struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
};
void serve(const PipelineConfig& config, const ServeOptions& options);

}  // namespace pdl::pipeline
