#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdl/common.hpp"
#include "pdl/corpus.hpp"
#include "pdl/encoder.hpp"
#include "pdl/neighbors.hpp"
#include "pdl/tensor.hpp"

namespace pdl::scan {

/// Lower clamp applied inside the consistency logarithm.
inline constexpr double kLogFloor = 1e-12;

/// Linear softmax head mapping the [CLS] state to k cluster logits.
struct ClusterHead {
    Matrix weight;  // D x k
    Matrix bias;    // 1 x k

    std::size_t k() const { return static_cast<std::size_t>(weight.cols()); }
    std::size_t input_dim() const { return static_cast<std::size_t>(weight.rows()); }

    static ClusterHead initialize(std::size_t input_dim, std::size_t k, std::uint64_t seed);
    static ClusterHead zeros(std::size_t input_dim, std::size_t k);

    std::vector<NamedTensor> tensors();
    std::vector<Matrix*> tensor_ptrs();

    void save(const std::filesystem::path& path) const;
    static ClusterHead load(const std::filesystem::path& path);
};

struct ScanConfig {
    std::size_t k = 20;
    double lambda = 2.0;
    std::size_t epochs = 10;
    double learning_rate = 0.05;
    double momentum = 0.0;
    double clip_norm = 0.0;
    std::size_t batch_size = 64;
    std::size_t neighbors_per_anchor = 1;
    /// When false only the head is trained and [CLS] states are computed once.
    bool update_encoder = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ClusterAssignment {
    WindowId window_id = 0;
    ClusterId cluster = 0;
    double confidence = 0.0;
    std::vector<double> probs;

    bool operator==(const ClusterAssignment&) const = default;
};

/// Softmax over head logits for one [CLS] state.
std::vector<double> head_probs(const ClusterHead& head, std::span<const double> cls_state);

/// Cluster probabilities for one window (tokens without [CLS]).
std::vector<double> cluster_probs(const encoder::EncoderParams& params, const ClusterHead& head,
                                  std::span<const TokenId> window_tokens);

/// -log(max(<anchor, neighbor>, 1e-12)).
double consistency_loss(std::span<const double> anchor_probs, std::span<const double> neighbor_probs);

/// sum_k P_k log P_k with 0 log 0 = 0; lies in [-ln k, 0].
double entropy_term(std::span<const double> mean_probs);

/// Mean consistency over the (anchor, neighbor) pairs plus lambda times the entropy term of the mean anchor vector.
double scan_loss(const std::vector<std::vector<double>>& anchor_probs,
                 const std::vector<std::vector<double>>& neighbor_probs, double lambda);

/// One SCAN step's inputs: each anchor with its sampled neighbors (token sequences without [CLS]).
struct ScanBatch {
    std::vector<std::span<const TokenId>> anchors;
    std::vector<std::vector<std::span<const TokenId>>> neighbors;  // parallel to anchors
};

/// Batch SCAN loss; accumulates gradients into the non-null gradient holders.
double scan_batch_loss(const encoder::EncoderParams& params, const ClusterHead& head, const ScanBatch& batch,
                       double lambda, encoder::EncoderParams* encoder_grads, ClusterHead* head_grads);

struct ScanResult {
    encoder::EncoderParams params;
    ClusterHead head;
    std::vector<ClusterAssignment> assignments;  // one per input window, input order
    std::vector<double> loss_trace;
};

using ScanEpochCallback = std::function<void(std::size_t epoch, double loss)>;

/// Trains a randomly initialized head (and optionally the encoder) on the neighbor graph's anchors.
ScanResult fine_tune_scan(encoder::EncoderParams params, const neighbors::NeighborGraph& graph,
                          const std::vector<corpus::Window>& windows, const ScanConfig& config,
                          const ScanEpochCallback& on_epoch = {});

std::vector<ClusterAssignment> assign_all(const encoder::EncoderParams& params, const ClusterHead& head,
                                          const std::vector<corpus::Window>& windows);

/// Assignment from a probability vector: argmax (lowest index on ties) and its value.
ClusterAssignment make_assignment(WindowId id, std::vector<double> probs);

std::string assignments_to_jsonl(const std::vector<ClusterAssignment>& assignments);
std::vector<ClusterAssignment> assignments_from_jsonl(std::string_view text);

}  // namespace pdl::scan
