#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pdl/common.hpp"
#include "pdl/corpus.hpp"
#include "pdl/tensor.hpp"

namespace pdl::encoder {

struct EncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 64;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t feedforward_dim = 256;
    std::size_t window_length = 20;
    double mask_fraction = 0.15;
    double learning_rate = 0.05;
    double momentum = 0.0;
    /// Global gradient-norm clip; 0 disables.
    double clip_norm = 0.0;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    /// Window length plus the leading [CLS] slot.
    std::size_t max_seq_len() const { return window_length + 1; }
    std::size_t head_dim() const { return embed_dim / num_heads; }
    void validate() const;
};

struct LayerParams {
    Matrix wq, bq, wk, bk, wv, bv, wo, bo;
    Matrix ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    Matrix w1, b1, w2, b2;
};

/// Pre-norm transformer encoder with learned positions and a masked-token output head.
struct EncoderParams {
    EncoderConfig config;
    Matrix token_embedding;     // vocab x D
    Matrix position_embedding;  // max_seq_len x D
    std::vector<LayerParams> layers;
    Matrix final_gamma, final_beta;
    Matrix mlm_weight;  // D x vocab
    Matrix mlm_bias;    // 1 x vocab

    static EncoderParams initialize(const EncoderConfig& config);
    static EncoderParams zeros(const EncoderConfig& config);

    std::vector<NamedTensor> tensors();
    std::vector<ConstNamedTensor> tensors() const;
    std::vector<Matrix*> tensor_ptrs();

    void save(const std::filesystem::path& path) const;
    static EncoderParams load(const std::filesystem::path& path);
    TensorFile to_tensor_file() const;
    static EncoderParams from_tensor_file(const TensorFile& file);

    bool all_finite() const;
};

struct LayerTrace {
    Matrix input;
    Matrix ln1_hat, ln1_out;
    Eigen::VectorXd ln1_rstd;
    Matrix q, k, v;
    std::vector<Matrix> attention;  // per head, T x T
    Matrix context;
    Matrix mid;
    Matrix ln2_hat, ln2_out;
    Eigen::VectorXd ln2_rstd;
    Matrix ff_pre, ff_act;
};

/// Activations retained by encode() for the backward pass.
struct EncoderTrace {
    std::vector<TokenId> ids;
    std::vector<LayerTrace> layers;
    Matrix final_input, final_hat;
    Eigen::VectorXd final_rstd;
    Matrix hidden;  // T x D, final layer-normed states
};

/// Runs the encoder stack; returns the final hidden states (row 0 is the [CLS] state).
const Matrix& encode(const EncoderParams& params, std::span<const TokenId> input_ids, EncoderTrace& trace);

/// Accumulates parameter gradients for d(loss)/d(hidden) into `grads`.
void backward(const EncoderParams& params, const EncoderTrace& trace, const Matrix& d_hidden, EncoderParams& grads);

struct ForwardOutput {
    Matrix logits;                     // T x vocab
    std::vector<double> cls_embedding; // D
};

ForwardOutput forward(const EncoderParams& params, std::span<const TokenId> input_ids);

/// [CLS] followed by the window tokens.
std::vector<TokenId> with_cls(std::span<const TokenId> window_tokens);

struct MaskedSequence {
    std::vector<TokenId> input_ids;            // includes [CLS] at 0
    std::vector<std::size_t> mask_positions;   // ascending, in input_ids coordinates
    std::vector<TokenId> target_ids;           // original token at each masked position
};

/// Number of masked positions for a window of length l: floor(p * l).
std::size_t mask_count(double p, std::size_t length);

/// Replaces floor(p * l) distinct sensor positions with [MASK]; never [CLS] or [PAD].
MaskedSequence apply_mask(std::span<const TokenId> window_tokens, double p, std::uint64_t seed);

/// Mean negative log-probability of the targets at the masked rows of `logits`.
double mlm_loss(const Matrix& logits, std::span<const TokenId> targets, std::span<const std::size_t> mask_positions);

/// Same loss; also writes d(loss)/d(logits) (zero on unmasked rows).
double mlm_loss_and_grad(const Matrix& logits, std::span<const TokenId> targets,
                         std::span<const std::size_t> mask_positions, Matrix& d_logits);

/// Loss of one masked sequence, accumulating gradients scaled by `weight` into grads (if non-null).
double mlm_sequence_loss(const EncoderParams& params, const MaskedSequence& seq, EncoderParams* grads,
                         double weight = 1.0);

struct TrainResult {
    EncoderParams params;
    std::vector<double> loss_trace;  // mean per-sequence loss per epoch
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

TrainResult train_mlm(const std::vector<corpus::Window>& windows, const EncoderConfig& config,
                      const EpochCallback& on_epoch = {});

/// Continues training from given parameters.
TrainResult train_mlm(const std::vector<corpus::Window>& windows, EncoderParams initial,
                      const EpochCallback& on_epoch = {});

struct EmbeddingVector {
    WindowId window_id = 0;
    std::vector<double> values;
};

std::vector<EmbeddingVector> embed_all(const EncoderParams& params, const std::vector<corpus::Window>& windows);

std::string loss_trace_csv(const std::vector<double>& trace);

/// Deterministic 64-bit mix of a base seed with stream coordinates.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// Embedding matrix persistence (rows follow the ids vector).
void save_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingVector>& embeddings);
std::vector<EmbeddingVector> load_embeddings(const std::filesystem::path& path);

}  // namespace pdl::encoder
