#include "pdl/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "pdl/io.hpp"

namespace pdl::encoder {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
    double u = kGeluC * (x + kGeluA * x * x * x);
    double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, Matrix& hat, Eigen::VectorXd& rstd,
                Matrix& out) {
    const auto rows = x.rows();
    const auto cols = static_cast<double>(x.cols());
    hat.resize(x.rows(), x.cols());
    rstd.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        double mean = x.row(r).sum() / cols;
        double var = (x.row(r).array() - mean).square().sum() / cols;
        rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
        hat.row(r) = (x.row(r).array() - mean) * rstd(r);
    }
    out = hat.array().rowwise() * gamma.row(0).array();
    out.rowwise() += beta.row(0);
}

/// Returns d(input); accumulates d(gamma), d(beta).
Matrix layer_norm_backward(const Matrix& d_out, const Matrix& hat, const Eigen::VectorXd& rstd, const Matrix& gamma,
                           Matrix& d_gamma, Matrix& d_beta) {
    d_gamma.row(0) += (d_out.array() * hat.array()).colwise().sum().matrix();
    d_beta.row(0) += d_out.colwise().sum();
    Matrix d_hat = d_out.array().rowwise() * gamma.row(0).array();
    const double cols = static_cast<double>(d_out.cols());
    Matrix d_in(d_out.rows(), d_out.cols());
    for (Eigen::Index r = 0; r < d_out.rows(); ++r) {
        double mean_dhat = d_hat.row(r).sum() / cols;
        double mean_dhat_hat = d_hat.row(r).dot(hat.row(r)) / cols;
        d_in.row(r) = rstd(r) * (d_hat.row(r).array() - mean_dhat - hat.row(r).array() * mean_dhat_hat).matrix();
    }
    return d_in;
}

void linear(const Matrix& x, const Matrix& w, const Matrix& b, Matrix& out) {
    out.noalias() = x * w;
    out.rowwise() += b.row(0);
}

void linear_backward(const Matrix& x, const Matrix& w, const Matrix& d_out, Matrix& d_w, Matrix& d_b, Matrix* d_x,
                     bool accumulate_dx) {
    d_w.noalias() += x.transpose() * d_out;
    d_b.row(0) += d_out.colwise().sum();
    if (d_x != nullptr) {
        if (accumulate_dx) {
            d_x->noalias() += d_out * w.transpose();
        } else {
            d_x->noalias() = d_out * w.transpose();
        }
    }
}

Matrix make(std::size_t r, std::size_t c) { return Matrix::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)); }

EncoderParams allocate(const EncoderConfig& cfg) {
    const auto d = cfg.embed_dim;
    const auto f = cfg.feedforward_dim;
    EncoderParams p;
    p.config = cfg;
    p.token_embedding = make(cfg.vocab_size, d);
    p.position_embedding = make(cfg.max_seq_len(), d);
    p.layers.resize(cfg.num_layers);
    for (auto& l : p.layers) {
        l.wq = make(d, d);
        l.wk = make(d, d);
        l.wv = make(d, d);
        l.wo = make(d, d);
        l.bq = make(1, d);
        l.bk = make(1, d);
        l.bv = make(1, d);
        l.bo = make(1, d);
        l.ln1_gamma = make(1, d);
        l.ln1_beta = make(1, d);
        l.ln2_gamma = make(1, d);
        l.ln2_beta = make(1, d);
        l.w1 = make(d, f);
        l.b1 = make(1, f);
        l.w2 = make(f, d);
        l.b2 = make(1, d);
    }
    p.final_gamma = make(1, d);
    p.final_beta = make(1, d);
    p.mlm_weight = make(d, cfg.vocab_size);
    p.mlm_bias = make(1, cfg.vocab_size);
    return p;
}

template <class Params, class Fn>
void visit(Params& p, Fn&& fn) {
    fn("token_embedding", p.token_embedding);
    fn("position_embedding", p.position_embedding);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        auto& l = p.layers[i];
        auto n = [i](const char* s) { return fmt::format("layers.{}.{}", i, s); };
        fn(n("wq"), l.wq);
        fn(n("bq"), l.bq);
        fn(n("wk"), l.wk);
        fn(n("bk"), l.bk);
        fn(n("wv"), l.wv);
        fn(n("bv"), l.bv);
        fn(n("wo"), l.wo);
        fn(n("bo"), l.bo);
        fn(n("ln1_gamma"), l.ln1_gamma);
        fn(n("ln1_beta"), l.ln1_beta);
        fn(n("ln2_gamma"), l.ln2_gamma);
        fn(n("ln2_beta"), l.ln2_beta);
        fn(n("w1"), l.w1);
        fn(n("b1"), l.b1);
        fn(n("w2"), l.w2);
        fn(n("b2"), l.b2);
    }
    fn("final_gamma", p.final_gamma);
    fn("final_beta", p.final_beta);
    fn("mlm_weight", p.mlm_weight);
    fn("mlm_bias", p.mlm_bias);
}

}  // namespace

void EncoderConfig::validate() const {
    if (vocab_size < 5) {
        throw ValidationError("vocab_size must cover the 4 special tokens plus at least one sensor token");
    }
    if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
        throw ValidationError(fmt::format("embed_dim {} must be a positive multiple of num_heads {}", embed_dim, num_heads));
    }
    if (num_layers == 0 || feedforward_dim == 0 || window_length == 0) {
        throw ValidationError("num_layers, feedforward_dim and window_length must be positive");
    }
    if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) {
        throw ValidationError("mask fraction must lie in (0, 1)");
    }
    if (batch_size == 0) {
        throw ValidationError("batch_size must be positive");
    }
}

EncoderParams EncoderParams::zeros(const EncoderConfig& config) {
    config.validate();
    return allocate(config);
}

EncoderParams EncoderParams::initialize(const EncoderConfig& config) {
    config.validate();
    EncoderParams p = allocate(config);
    std::mt19937_64 rng(mix_seed(config.seed, 0x1a17));
    const double d = static_cast<double>(config.embed_dim);
    const double f = static_cast<double>(config.feedforward_dim);
    const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.num_layers));
    fill_normal(p.token_embedding, 1.0, rng);
    fill_normal(p.position_embedding, 1.0, rng);
    for (auto& l : p.layers) {
        fill_normal(l.wq, 1.0 / std::sqrt(d), rng);
        fill_normal(l.wk, 1.0 / std::sqrt(d), rng);
        fill_normal(l.wv, 1.0 / std::sqrt(d), rng);
        fill_normal(l.wo, residual_scale / std::sqrt(d), rng);
        fill_normal(l.w1, 1.0 / std::sqrt(d), rng);
        fill_normal(l.w2, residual_scale / std::sqrt(f), rng);
        l.ln1_gamma.setOnes();
        l.ln2_gamma.setOnes();
    }
    p.final_gamma.setOnes();
    fill_normal(p.mlm_weight, 1.0 / std::sqrt(d), rng);
    return p;
}

std::vector<NamedTensor> EncoderParams::tensors() {
    std::vector<NamedTensor> out;
    visit(*this, [&](std::string name, Matrix& m) { out.push_back({std::move(name), &m}); });
    return out;
}

std::vector<ConstNamedTensor> EncoderParams::tensors() const {
    std::vector<ConstNamedTensor> out;
    visit(*this, [&](std::string name, const Matrix& m) { out.push_back({std::move(name), &m}); });
    return out;
}

std::vector<Matrix*> EncoderParams::tensor_ptrs() {
    std::vector<Matrix*> out;
    visit(*this, [&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
}

bool EncoderParams::all_finite() const {
    bool ok = true;
    visit(*this, [&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
}

TensorFile EncoderParams::to_tensor_file() const {
    TensorFile file;
    file.kind = "encoder";
    const auto& c = config;
    file.metadata = {
        {"vocab_size", std::to_string(c.vocab_size)},
        {"embed_dim", std::to_string(c.embed_dim)},
        {"num_layers", std::to_string(c.num_layers)},
        {"num_heads", std::to_string(c.num_heads)},
        {"feedforward_dim", std::to_string(c.feedforward_dim)},
        {"window_length", std::to_string(c.window_length)},
        {"mask_fraction", io::format_double(c.mask_fraction)},
        {"learning_rate", io::format_double(c.learning_rate)},
        {"momentum", io::format_double(c.momentum)},
        {"clip_norm", io::format_double(c.clip_norm)},
        {"epochs", std::to_string(c.epochs)},
        {"batch_size", std::to_string(c.batch_size)},
        {"seed", std::to_string(c.seed)},
    };
    for (const auto& t : tensors()) {
        file.tensors.emplace_back(t.name, *t.value);
    }
    return file;
}

EncoderParams EncoderParams::from_tensor_file(const TensorFile& file) {
    if (file.kind != "encoder") {
        throw ValidationError(fmt::format("expected an encoder parameter file, found '{}'", file.kind));
    }
    auto get = [&](const std::string& k) {
        auto it = file.metadata.find(k);
        if (it == file.metadata.end()) {
            throw ValidationError(fmt::format("encoder file lacks '{}'", k));
        }
        return it->second;
    };
    EncoderConfig c;
    c.vocab_size = std::stoull(get("vocab_size"));
    c.embed_dim = std::stoull(get("embed_dim"));
    c.num_layers = std::stoull(get("num_layers"));
    c.num_heads = std::stoull(get("num_heads"));
    c.feedforward_dim = std::stoull(get("feedforward_dim"));
    c.window_length = std::stoull(get("window_length"));
    c.mask_fraction = std::stod(get("mask_fraction"));
    c.learning_rate = std::stod(get("learning_rate"));
    c.momentum = std::stod(get("momentum"));
    c.clip_norm = std::stod(get("clip_norm"));
    c.epochs = std::stoull(get("epochs"));
    c.batch_size = std::stoull(get("batch_size"));
    c.seed = std::stoull(get("seed"));
    EncoderParams p = EncoderParams::zeros(c);
    for (auto& t : p.tensors()) {
        const Matrix& src = file.at(t.name);
        if (src.rows() != t.value->rows() || src.cols() != t.value->cols()) {
            throw ValidationError(fmt::format("tensor '{}' has shape {}x{}, expected {}x{}", t.name, src.rows(),
                                              src.cols(), t.value->rows(), t.value->cols()));
        }
        *t.value = src;
    }
    return p;
}

void EncoderParams::save(const std::filesystem::path& path) const { to_tensor_file().save(path); }

EncoderParams EncoderParams::load(const std::filesystem::path& path) {
    return from_tensor_file(TensorFile::load(path));
}

const Matrix& encode(const EncoderParams& params, std::span<const TokenId> input_ids, EncoderTrace& trace) {
    const auto& cfg = params.config;
    const auto T = static_cast<Eigen::Index>(input_ids.size());
    if (input_ids.empty() || input_ids.size() > cfg.max_seq_len()) {
        throw ValidationError(fmt::format("input length {} outside [1, {}]", input_ids.size(), cfg.max_seq_len()));
    }
    const auto D = static_cast<Eigen::Index>(cfg.embed_dim);
    const auto H = static_cast<Eigen::Index>(cfg.num_heads);
    const auto dh = D / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    trace.ids.assign(input_ids.begin(), input_ids.end());
    std::vector<bool> key_valid(static_cast<std::size_t>(T));
    Matrix x(T, D);
    for (Eigen::Index t = 0; t < T; ++t) {
        TokenId id = input_ids[static_cast<std::size_t>(t)];
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
            throw ValidationError(fmt::format("token id {} outside vocabulary of size {}", id, cfg.vocab_size));
        }
        key_valid[static_cast<std::size_t>(t)] = id != corpus::Vocabulary::kPad;
        x.row(t) = params.token_embedding.row(id) + params.position_embedding.row(t);
    }

    trace.layers.resize(params.layers.size());
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& L = params.layers[li];
        auto& tr = trace.layers[li];
        tr.input = x;
        layer_norm(x, L.ln1_gamma, L.ln1_beta, tr.ln1_hat, tr.ln1_rstd, tr.ln1_out);
        linear(tr.ln1_out, L.wq, L.bq, tr.q);
        linear(tr.ln1_out, L.wk, L.bk, tr.k);
        linear(tr.ln1_out, L.wv, L.bv, tr.v);
        tr.attention.resize(static_cast<std::size_t>(H));
        tr.context.resize(T, D);
        for (Eigen::Index h = 0; h < H; ++h) {
            Matrix scores = (tr.q.middleCols(h * dh, dh) * tr.k.middleCols(h * dh, dh).transpose()) * scale;
            for (Eigen::Index i = 0; i < T; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (Eigen::Index j = 0; j < T; ++j) {
                    if (key_valid[static_cast<std::size_t>(j)]) {
                        mx = std::max(mx, scores(i, j));
                    }
                }
                double sum = 0.0;
                for (Eigen::Index j = 0; j < T; ++j) {
                    double e = key_valid[static_cast<std::size_t>(j)] ? std::exp(scores(i, j) - mx) : 0.0;
                    scores(i, j) = e;
                    sum += e;
                }
                scores.row(i) /= sum;
            }
            tr.context.middleCols(h * dh, dh).noalias() = scores * tr.v.middleCols(h * dh, dh);
            tr.attention[static_cast<std::size_t>(h)] = std::move(scores);
        }
        Matrix attn_out;
        linear(tr.context, L.wo, L.bo, attn_out);
        tr.mid = x + attn_out;
        layer_norm(tr.mid, L.ln2_gamma, L.ln2_beta, tr.ln2_hat, tr.ln2_rstd, tr.ln2_out);
        linear(tr.ln2_out, L.w1, L.b1, tr.ff_pre);
        tr.ff_act = tr.ff_pre.unaryExpr(&gelu);
        Matrix ff_out;
        linear(tr.ff_act, L.w2, L.b2, ff_out);
        x = tr.mid + ff_out;
    }
    trace.final_input = std::move(x);
    layer_norm(trace.final_input, params.final_gamma, params.final_beta, trace.final_hat, trace.final_rstd,
               trace.hidden);
    return trace.hidden;
}

void backward(const EncoderParams& params, const EncoderTrace& trace, const Matrix& d_hidden, EncoderParams& grads) {
    const auto& cfg = params.config;
    const auto T = static_cast<Eigen::Index>(trace.ids.size());
    const auto D = static_cast<Eigen::Index>(cfg.embed_dim);
    const auto H = static_cast<Eigen::Index>(cfg.num_heads);
    const auto dh = D / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix dx = layer_norm_backward(d_hidden, trace.final_hat, trace.final_rstd, params.final_gamma, grads.final_gamma,
                                    grads.final_beta);

    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& L = params.layers[li];
        auto& G = grads.layers[li];
        const auto& tr = trace.layers[li];

        // Feed-forward block: out = mid + W2 gelu(W1 ln2(mid)).
        Matrix d_mid = dx;
        Matrix d_act;
        linear_backward(tr.ff_act, L.w2, dx, G.w2, G.b2, &d_act, false);
        Matrix d_pre = d_act.array() * tr.ff_pre.unaryExpr(&gelu_grad).array();
        Matrix d_ln2;
        linear_backward(tr.ln2_out, L.w1, d_pre, G.w1, G.b1, &d_ln2, false);
        d_mid += layer_norm_backward(d_ln2, tr.ln2_hat, tr.ln2_rstd, L.ln2_gamma, G.ln2_gamma, G.ln2_beta);

        // Attention block: mid = x + Wo attn(ln1(x)).
        Matrix d_ctx;
        linear_backward(tr.context, L.wo, d_mid, G.wo, G.bo, &d_ctx, false);
        Matrix dq(T, D);
        Matrix dk(T, D);
        Matrix dv(T, D);
        for (Eigen::Index h = 0; h < H; ++h) {
            const Matrix& P = tr.attention[static_cast<std::size_t>(h)];
            auto d_ctx_h = d_ctx.middleCols(h * dh, dh);
            Matrix dP = d_ctx_h * tr.v.middleCols(h * dh, dh).transpose();
            dv.middleCols(h * dh, dh).noalias() = P.transpose() * d_ctx_h;
            Eigen::VectorXd row_dot = (dP.array() * P.array()).rowwise().sum();
            Matrix dS = P.array() * (dP.colwise() - row_dot).array();
            dS *= scale;
            dq.middleCols(h * dh, dh).noalias() = dS * tr.k.middleCols(h * dh, dh);
            dk.middleCols(h * dh, dh).noalias() = dS.transpose() * tr.q.middleCols(h * dh, dh);
        }
        Matrix d_ln1;
        linear_backward(tr.ln1_out, L.wq, dq, G.wq, G.bq, &d_ln1, false);
        linear_backward(tr.ln1_out, L.wk, dk, G.wk, G.bk, &d_ln1, true);
        linear_backward(tr.ln1_out, L.wv, dv, G.wv, G.bv, &d_ln1, true);
        dx = d_mid + layer_norm_backward(d_ln1, tr.ln1_hat, tr.ln1_rstd, L.ln1_gamma, G.ln1_gamma, G.ln1_beta);
    }

    for (Eigen::Index t = 0; t < T; ++t) {
        grads.token_embedding.row(trace.ids[static_cast<std::size_t>(t)]) += dx.row(t);
        grads.position_embedding.row(t) += dx.row(t);
    }
}

ForwardOutput forward(const EncoderParams& params, std::span<const TokenId> input_ids) {
    EncoderTrace trace;
    const Matrix& hidden = encode(params, input_ids, trace);
    ForwardOutput out;
    linear(hidden, params.mlm_weight, params.mlm_bias, out.logits);
    out.cls_embedding.assign(hidden.row(0).data(), hidden.row(0).data() + hidden.cols());
    return out;
}

std::vector<TokenId> with_cls(std::span<const TokenId> window_tokens) {
    std::vector<TokenId> ids;
    ids.reserve(window_tokens.size() + 1);
    ids.push_back(corpus::Vocabulary::kCls);
    ids.insert(ids.end(), window_tokens.begin(), window_tokens.end());
    return ids;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    auto splitmix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

std::size_t mask_count(double p, std::size_t length) {
    return static_cast<std::size_t>(std::floor(p * static_cast<double>(length) + 1e-9));
}

MaskedSequence apply_mask(std::span<const TokenId> window_tokens, double p, std::uint64_t seed) {
    if (!(p > 0.0 && p < 1.0)) {
        throw ValidationError("mask fraction must lie in (0, 1)");
    }
    const std::size_t n_mask = mask_count(p, window_tokens.size());
    if (n_mask == 0) {
        throw ValidationError(fmt::format("floor({} * {}) = 0 masked positions; no training signal", p,
                                          window_tokens.size()));
    }
    MaskedSequence seq;
    seq.input_ids = with_cls(window_tokens);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 1; i < seq.input_ids.size(); ++i) {
        if (seq.input_ids[i] != corpus::Vocabulary::kPad) {
            candidates.push_back(i);
        }
    }
    if (candidates.size() < n_mask) {
        throw ValidationError("not enough non-padding positions to mask");
    }
    std::mt19937_64 rng(seed);
    std::sample(candidates.begin(), candidates.end(), std::back_inserter(seq.mask_positions), n_mask, rng);
    for (auto pos : seq.mask_positions) {
        seq.target_ids.push_back(seq.input_ids[pos]);
        seq.input_ids[pos] = corpus::Vocabulary::kMask;
    }
    return seq;
}

double mlm_loss_and_grad(const Matrix& logits, std::span<const TokenId> targets,
                         std::span<const std::size_t> mask_positions, Matrix& d_logits) {
    if (mask_positions.empty()) {
        throw ValidationError("mlm_loss requires at least one masked position");
    }
    if (targets.size() != mask_positions.size()) {
        throw ValidationError("one target per masked position required");
    }
    d_logits = Matrix::Zero(logits.rows(), logits.cols());
    const double inv = 1.0 / static_cast<double>(mask_positions.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < mask_positions.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(mask_positions[i]);
        const auto target = static_cast<Eigen::Index>(targets[i]);
        if (row >= logits.rows() || target < 0 || target >= logits.cols()) {
            throw ValidationError("masked position or target outside the logits");
        }
        double mx = logits.row(row).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(row).array() - mx).exp();
        double sum = e.sum();
        loss += -(logits(row, target) - mx - std::log(sum));
        d_logits.row(row) = e / sum * inv;
        d_logits(row, target) -= inv;
    }
    return loss * inv;
}

double mlm_loss(const Matrix& logits, std::span<const TokenId> targets, std::span<const std::size_t> mask_positions) {
    Matrix unused;
    return mlm_loss_and_grad(logits, targets, mask_positions, unused);
}

double mlm_sequence_loss(const EncoderParams& params, const MaskedSequence& seq, EncoderParams* grads, double weight) {
    EncoderTrace trace;
    const Matrix& hidden = encode(params, seq.input_ids, trace);
    const auto n = static_cast<Eigen::Index>(seq.mask_positions.size());
    const auto D = hidden.cols();
    // Logits are only needed at the masked rows.
    Matrix h_masked(n, D);
    for (Eigen::Index i = 0; i < n; ++i) {
        h_masked.row(i) = hidden.row(static_cast<Eigen::Index>(seq.mask_positions[static_cast<std::size_t>(i)]));
    }
    Matrix logits;
    linear(h_masked, params.mlm_weight, params.mlm_bias, logits);
    std::vector<std::size_t> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), 0);
    Matrix d_logits;
    double loss = mlm_loss_and_grad(logits, seq.target_ids, rows, d_logits);
    if (grads != nullptr) {
        d_logits *= weight;
        Matrix d_h_masked;
        linear_backward(h_masked, params.mlm_weight, d_logits, grads->mlm_weight, grads->mlm_bias, &d_h_masked, false);
        Matrix d_hidden = Matrix::Zero(hidden.rows(), D);
        for (Eigen::Index i = 0; i < n; ++i) {
            d_hidden.row(static_cast<Eigen::Index>(seq.mask_positions[static_cast<std::size_t>(i)])) += d_h_masked.row(i);
        }
        backward(params, trace, d_hidden, *grads);
    }
    return loss;
}

TrainResult train_mlm(const std::vector<corpus::Window>& windows, const EncoderConfig& config,
                      const EpochCallback& on_epoch) {
    return train_mlm(windows, EncoderParams::initialize(config), on_epoch);
}

TrainResult train_mlm(const std::vector<corpus::Window>& windows, EncoderParams initial,
                      const EpochCallback& on_epoch) {
    const auto& cfg = initial.config;
    cfg.validate();
    if (windows.empty()) {
        throw ValidationError("train_mlm requires at least one window");
    }
    if (mask_count(cfg.mask_fraction, cfg.window_length) == 0) {
        throw ValidationError("mask fraction too small for the window length");
    }
    TrainResult result{std::move(initial), {}};
    auto& params = result.params;
    SgdOptimizer optimizer(cfg.learning_rate, cfg.momentum, cfg.clip_norm);
    EncoderParams grads = EncoderParams::zeros(cfg);
    auto param_ptrs = params.tensor_ptrs();
    auto grad_ptrs = grads.tensor_ptrs();

    std::vector<std::size_t> order(windows.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(mix_seed(cfg.seed, 0xe90c, epoch));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double weight = 1.0 / static_cast<double>(end - start);
            for (auto* g : grad_ptrs) {
                g->setZero();
            }
            for (std::size_t b = start; b < end; ++b) {
                const auto& w = windows[order[b]];
                if (w.token_ids.size() != cfg.window_length) {
                    throw ValidationError(fmt::format("window {} has length {}, encoder expects {}", w.window_id,
                                                      w.token_ids.size(), cfg.window_length));
                }
                auto seq = apply_mask(w.token_ids, cfg.mask_fraction,
                                      mix_seed(cfg.seed, static_cast<std::uint64_t>(w.window_id), epoch + 1));
                double loss = mlm_sequence_loss(params, seq, &grads, weight);
                if (!std::isfinite(loss)) {
                    throw NumericError(fmt::format("non-finite MLM loss at epoch {} (window {})", epoch, w.window_id));
                }
                epoch_loss += loss;
            }
            optimizer.step(param_ptrs, grad_ptrs);
        }
        epoch_loss /= static_cast<double>(windows.size());
        if (!params.all_finite()) {
            throw NumericError(fmt::format("non-finite encoder parameters after epoch {}", epoch));
        }
        result.loss_trace.push_back(epoch_loss);
        if (on_epoch) {
            on_epoch(epoch, epoch_loss);
        }
    }
    return result;
}

std::vector<EmbeddingVector> embed_all(const EncoderParams& params, const std::vector<corpus::Window>& windows) {
    std::vector<EmbeddingVector> out;
    out.reserve(windows.size());
    EncoderTrace trace;
    for (const auto& w : windows) {
        auto ids = with_cls(w.token_ids);
        const Matrix& hidden = encode(params, ids, trace);
        out.push_back({w.window_id, std::vector<double>(hidden.row(0).data(), hidden.row(0).data() + hidden.cols())});
    }
    return out;
}

std::string loss_trace_csv(const std::vector<double>& trace) {
    std::string out = "epoch,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        out += fmt::format("{},{}\n", i, io::format_double(trace[i]));
    }
    return out;
}

void save_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingVector>& embeddings) {
    TensorFile file;
    file.kind = "embeddings";
    const auto n = static_cast<Eigen::Index>(embeddings.size());
    const auto d = embeddings.empty() ? 0 : static_cast<Eigen::Index>(embeddings.front().values.size());
    Matrix ids(n, 1);
    Matrix values(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& e = embeddings[static_cast<std::size_t>(i)];
        if (static_cast<Eigen::Index>(e.values.size()) != d) {
            throw ValidationError("embeddings differ in dimension");
        }
        ids(i, 0) = static_cast<double>(e.window_id);
        values.row(i) = Eigen::Map<const Eigen::RowVectorXd>(e.values.data(), d);
    }
    file.tensors.emplace_back("window_ids", std::move(ids));
    file.tensors.emplace_back("values", std::move(values));
    file.save(path);
}

std::vector<EmbeddingVector> load_embeddings(const std::filesystem::path& path) {
    auto file = TensorFile::load(path);
    if (file.kind != "embeddings") {
        throw ValidationError(fmt::format("'{}' is not an embeddings file", path.string()));
    }
    const Matrix& ids = file.at("window_ids");
    const Matrix& values = file.at("values");
    std::vector<EmbeddingVector> out(static_cast<std::size_t>(ids.rows()));
    for (Eigen::Index i = 0; i < ids.rows(); ++i) {
        auto& e = out[static_cast<std::size_t>(i)];
        e.window_id = static_cast<WindowId>(ids(i, 0));
        e.values.assign(values.row(i).data(), values.row(i).data() + values.cols());
    }
    return out;
}

}  // namespace pdl::encoder
