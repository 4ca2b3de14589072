#include "pdl/scan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace pdl::scan {

using encoder::EncoderParams;
using encoder::EncoderTrace;
using RowVec = Eigen::RowVectorXd;

namespace {

RowVec softmax_row(const RowVec& z) {
    RowVec e = (z.array() - z.maxCoeff()).exp();
    return e / e.sum();
}

RowVec head_logits(const ClusterHead& head, const RowVec& cls) { return cls * head.weight + head.bias; }

/// Objective on probability vectors; fills d(loss)/d(p) when the outputs are non-null.
double objective(const std::vector<RowVec>& pa, const std::vector<std::vector<RowVec>>& pn, double lambda,
                 std::vector<RowVec>* dpa, std::vector<std::vector<RowVec>>* dpn) {
    const std::size_t B = pa.size();
    if (B == 0) {
        throw ValidationError("SCAN batch is empty");
    }
    const auto k = pa.front().size();
    std::size_t pairs = 0;
    for (const auto& list : pn) {
        pairs += list.size();
    }
    if (pairs == 0) {
        throw ValidationError("SCAN batch has no neighbor pairs");
    }
    if (dpa != nullptr) {
        dpa->assign(B, RowVec::Zero(k));
        dpn->resize(B);
        for (std::size_t b = 0; b < B; ++b) {
            (*dpn)[b].assign(pn[b].size(), RowVec::Zero(k));
        }
    }
    const double inv_pairs = 1.0 / static_cast<double>(pairs);
    double consistency = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < pn[b].size(); ++j) {
            const double s = pa[b].dot(pn[b][j]);
            if (s > kLogFloor) {
                consistency -= std::log(s);
                if (dpa != nullptr) {
                    (*dpa)[b] -= pn[b][j] * (inv_pairs / s);
                    (*dpn)[b][j] -= pa[b] * (inv_pairs / s);
                }
            } else {
                consistency -= std::log(kLogFloor);
            }
        }
    }
    consistency *= inv_pairs;

    RowVec mean = RowVec::Zero(k);
    for (const auto& p : pa) {
        mean += p;
    }
    mean /= static_cast<double>(B);
    double entropy = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) {
        if (mean[c] > 0.0) {
            entropy += mean[c] * std::log(mean[c]);
        }
    }
    if (dpa != nullptr && lambda != 0.0) {
        RowVec d_mean(k);
        for (Eigen::Index c = 0; c < k; ++c) {
            d_mean[c] = mean[c] > 0.0 ? lambda * (std::log(mean[c]) + 1.0) / static_cast<double>(B) : 0.0;
        }
        for (auto& d : *dpa) {
            d += d_mean;
        }
    }
    return consistency + lambda * entropy;
}

/// Softmax backward through the head: accumulates head gradients and returns d(loss)/d(cls).
RowVec head_backward(const ClusterHead& head, const RowVec& cls, const RowVec& p, const RowVec& dp,
                     ClusterHead* head_grads) {
    RowVec dz = p.cwiseProduct((dp.array() - dp.dot(p)).matrix());
    if (head_grads != nullptr) {
        head_grads->weight.noalias() += cls.transpose() * dz;
        head_grads->bias += dz;
    }
    return dz * head.weight.transpose();
}

std::vector<double> to_vector(const RowVec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

RowVec to_row(std::span<const double> v) {
    return Eigen::Map<const RowVec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

ClusterHead ClusterHead::zeros(std::size_t input_dim, std::size_t k) {
    if (k < 2) {
        throw ValidationError("a cluster head needs k >= 2");
    }
    if (input_dim == 0) {
        throw ValidationError("cluster head input dimension must be positive");
    }
    ClusterHead h;
    h.weight = Matrix::Zero(static_cast<Eigen::Index>(input_dim), static_cast<Eigen::Index>(k));
    h.bias = Matrix::Zero(1, static_cast<Eigen::Index>(k));
    return h;
}

ClusterHead ClusterHead::initialize(std::size_t input_dim, std::size_t k, std::uint64_t seed) {
    ClusterHead h = zeros(input_dim, k);
    std::mt19937_64 rng(encoder::mix_seed(seed, 0x4ead));
    fill_normal(h.weight, 1.0 / std::sqrt(static_cast<double>(input_dim)), rng);
    return h;
}

std::vector<NamedTensor> ClusterHead::tensors() { return {{"head.weight", &weight}, {"head.bias", &bias}}; }

std::vector<Matrix*> ClusterHead::tensor_ptrs() { return {&weight, &bias}; }

void ClusterHead::save(const std::filesystem::path& path) const {
    TensorFile file;
    file.kind = "cluster_head";
    file.metadata = {{"k", std::to_string(k())}, {"input_dim", std::to_string(input_dim())}};
    file.tensors.emplace_back("head.weight", weight);
    file.tensors.emplace_back("head.bias", bias);
    file.save(path);
}

ClusterHead ClusterHead::load(const std::filesystem::path& path) {
    auto file = TensorFile::load(path);
    if (file.kind != "cluster_head") {
        throw ValidationError(fmt::format("'{}' is not a cluster head file", path.string()));
    }
    ClusterHead h;
    h.weight = file.at("head.weight");
    h.bias = file.at("head.bias");
    if (h.bias.rows() != 1 || h.bias.cols() != h.weight.cols() || h.weight.cols() < 2) {
        throw ValidationError("cluster head tensors have inconsistent shapes");
    }
    return h;
}

void ScanConfig::validate() const {
    if (k < 2) {
        throw ValidationError("k must be >= 2");
    }
    if (!(lambda >= 0.0)) {
        throw ValidationError("lambda must be >= 0");
    }
    if (batch_size == 0) {
        throw ValidationError("batch_size must be positive");
    }
    if (neighbors_per_anchor == 0) {
        throw ValidationError("neighbors_per_anchor must be positive");
    }
    if (!(learning_rate > 0.0)) {
        throw ValidationError("learning_rate must be positive");
    }
    if (momentum < 0.0 || momentum >= 1.0) {
        throw ValidationError("momentum must lie in [0, 1)");
    }
}

std::vector<double> head_probs(const ClusterHead& head, std::span<const double> cls_state) {
    if (cls_state.size() != head.input_dim()) {
        throw ValidationError(fmt::format("state dimension {} does not match head input {}", cls_state.size(),
                                          head.input_dim()));
    }
    return to_vector(softmax_row(head_logits(head, to_row(cls_state))));
}

std::vector<double> cluster_probs(const EncoderParams& params, const ClusterHead& head,
                                  std::span<const TokenId> window_tokens) {
    EncoderTrace trace;
    auto ids = encoder::with_cls(window_tokens);
    const Matrix& hidden = encoder::encode(params, ids, trace);
    RowVec cls = hidden.row(0);
    return head_probs(head, std::span<const double>(cls.data(), static_cast<std::size_t>(cls.size())));
}

double consistency_loss(std::span<const double> anchor_probs, std::span<const double> neighbor_probs) {
    if (anchor_probs.size() != neighbor_probs.size()) {
        throw ValidationError("probability vectors differ in length");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < anchor_probs.size(); ++i) {
        s += anchor_probs[i] * neighbor_probs[i];
    }
    return -std::log(std::max(s, kLogFloor));
}

double entropy_term(std::span<const double> mean_probs) {
    double e = 0.0;
    for (double p : mean_probs) {
        if (p > 0.0) {
            e += p * std::log(p);
        }
    }
    return e;
}

double scan_loss(const std::vector<std::vector<double>>& anchor_probs,
                 const std::vector<std::vector<double>>& neighbor_probs, double lambda) {
    if (anchor_probs.empty() || anchor_probs.size() != neighbor_probs.size()) {
        throw ValidationError("scan_loss needs a non-empty batch of (anchor, neighbor) pairs");
    }
    std::vector<RowVec> pa;
    std::vector<std::vector<RowVec>> pn;
    for (std::size_t i = 0; i < anchor_probs.size(); ++i) {
        if (anchor_probs[i].size() != neighbor_probs[i].size() ||
            anchor_probs[i].size() != anchor_probs.front().size()) {
            throw ValidationError("probability vectors differ in length");
        }
        pa.push_back(to_row(anchor_probs[i]));
        pn.push_back({to_row(neighbor_probs[i])});
    }
    return objective(pa, pn, lambda, nullptr, nullptr);
}

double scan_batch_loss(const EncoderParams& params, const ClusterHead& head, const ScanBatch& batch, double lambda,
                       EncoderParams* encoder_grads, ClusterHead* head_grads) {
    if (batch.anchors.size() != batch.neighbors.size()) {
        throw ValidationError("ScanBatch anchors and neighbor lists differ in length");
    }
    const std::size_t B = batch.anchors.size();
    struct Item {
        EncoderTrace trace;
        RowVec cls;
        RowVec p;
    };
    auto run = [&](std::span<const TokenId> tokens) {
        Item it;
        auto ids = encoder::with_cls(tokens);
        const Matrix& hidden = encoder::encode(params, ids, it.trace);
        it.cls = hidden.row(0);
        it.p = softmax_row(head_logits(head, it.cls));
        return it;
    };
    std::vector<Item> anchors;
    std::vector<std::vector<Item>> nbrs(B);
    std::vector<RowVec> pa;
    std::vector<std::vector<RowVec>> pn(B);
    for (std::size_t b = 0; b < B; ++b) {
        anchors.push_back(run(batch.anchors[b]));
        pa.push_back(anchors.back().p);
        for (const auto& n : batch.neighbors[b]) {
            nbrs[b].push_back(run(n));
            pn[b].push_back(nbrs[b].back().p);
        }
    }
    const bool want_grads = encoder_grads != nullptr || head_grads != nullptr;
    std::vector<RowVec> dpa;
    std::vector<std::vector<RowVec>> dpn;
    const double loss = objective(pa, pn, lambda, want_grads ? &dpa : nullptr, want_grads ? &dpn : nullptr);
    if (!want_grads) {
        return loss;
    }
    const auto D = static_cast<Eigen::Index>(head.input_dim());
    auto push_back_item = [&](const Item& it, const RowVec& dp) {
        RowVec d_cls = head_backward(head, it.cls, it.p, dp, head_grads);
        if (encoder_grads != nullptr) {
            Matrix d_hidden = Matrix::Zero(static_cast<Eigen::Index>(it.trace.ids.size()), D);
            d_hidden.row(0) = d_cls;
            encoder::backward(params, it.trace, d_hidden, *encoder_grads);
        }
    };
    for (std::size_t b = 0; b < B; ++b) {
        push_back_item(anchors[b], dpa[b]);
        for (std::size_t j = 0; j < nbrs[b].size(); ++j) {
            push_back_item(nbrs[b][j], dpn[b][j]);
        }
    }
    return loss;
}

ClusterAssignment make_assignment(WindowId id, std::vector<double> probs) {
    if (probs.empty()) {
        throw ValidationError("empty probability vector");
    }
    ClusterAssignment a;
    a.window_id = id;
    auto best = std::max_element(probs.begin(), probs.end());
    a.cluster = static_cast<ClusterId>(best - probs.begin());
    a.confidence = *best;
    a.probs = std::move(probs);
    return a;
}

std::vector<ClusterAssignment> assign_all(const EncoderParams& params, const ClusterHead& head,
                                          const std::vector<corpus::Window>& windows) {
    std::vector<ClusterAssignment> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        out.push_back(make_assignment(w.window_id, cluster_probs(params, head, w.token_ids)));
    }
    return out;
}

ScanResult fine_tune_scan(EncoderParams params, const neighbors::NeighborGraph& graph,
                          const std::vector<corpus::Window>& windows, const ScanConfig& config,
                          const ScanEpochCallback& on_epoch) {
    config.validate();
    std::unordered_map<WindowId, std::size_t> index;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        index.emplace(windows[i].window_id, i);
    }
    auto lookup = [&](WindowId id) {
        auto it = index.find(id);
        if (it == index.end()) {
            throw ValidationError(fmt::format("neighbor graph references window {} missing from the input", id));
        }
        return it->second;
    };
    // Anchor i of the graph and its neighbor indices into `windows`.
    std::vector<std::size_t> anchor_idx;
    std::vector<std::vector<std::size_t>> neighbor_idx;
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
        if (graph.lists[i].empty()) {
            continue;
        }
        anchor_idx.push_back(lookup(graph.nodes[i]));
        std::vector<std::size_t> ns;
        for (const auto& n : graph.lists[i]) {
            ns.push_back(lookup(n.window_id));
        }
        neighbor_idx.push_back(std::move(ns));
    }
    if (anchor_idx.empty()) {
        throw ValidationError("neighbor graph has no anchors");
    }

    const std::size_t D = params.config.embed_dim;
    ScanResult result{std::move(params), ClusterHead::initialize(D, config.k, config.seed), {}, {}};
    auto& enc = result.params;
    auto& head = result.head;

    // Frozen-encoder mode works from precomputed [CLS] states.
    std::vector<RowVec> frozen;
    if (!config.update_encoder) {
        EncoderTrace trace;
        frozen.reserve(windows.size());
        for (const auto& w : windows) {
            auto ids = encoder::with_cls(w.token_ids);
            frozen.push_back(encoder::encode(enc, ids, trace).row(0));
        }
    }

    std::vector<Matrix*> param_ptrs = head.tensor_ptrs();
    ClusterHead head_grads = ClusterHead::zeros(D, config.k);
    std::vector<Matrix*> grad_ptrs = head_grads.tensor_ptrs();
    EncoderParams enc_grads = EncoderParams::zeros(enc.config);
    if (config.update_encoder) {
        for (auto* p : enc.tensor_ptrs()) {
            param_ptrs.push_back(p);
        }
        for (auto* g : enc_grads.tensor_ptrs()) {
            grad_ptrs.push_back(g);
        }
    }
    SgdOptimizer optimizer(config.learning_rate, config.momentum, config.clip_norm);

    std::vector<std::size_t> order(anchor_idx.size());
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(encoder::mix_seed(config.seed, 0x5ca9, epoch));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            for (auto* g : grad_ptrs) {
                g->setZero();
            }
            // Sampled neighbors per anchor, drawn in batch order from the epoch stream.
            std::vector<std::vector<std::size_t>> picks;
            for (std::size_t b = start; b < end; ++b) {
                const auto& ns = neighbor_idx[order[b]];
                std::vector<std::size_t> chosen;
                std::sample(ns.begin(), ns.end(), std::back_inserter(chosen),
                            std::min(config.neighbors_per_anchor, ns.size()), rng);
                picks.push_back(std::move(chosen));
            }
            double loss = 0.0;
            if (config.update_encoder) {
                ScanBatch batch;
                for (std::size_t b = start; b < end; ++b) {
                    batch.anchors.emplace_back(windows[anchor_idx[order[b]]].token_ids);
                    std::vector<std::span<const TokenId>> ns;
                    for (auto j : picks[b - start]) {
                        ns.emplace_back(windows[j].token_ids);
                    }
                    batch.neighbors.push_back(std::move(ns));
                }
                loss = scan_batch_loss(enc, head, batch, config.lambda, &enc_grads, &head_grads);
            } else {
                std::vector<RowVec> pa;
                std::vector<std::vector<RowVec>> pn;
                for (std::size_t b = start; b < end; ++b) {
                    pa.push_back(softmax_row(head_logits(head, frozen[anchor_idx[order[b]]])));
                    std::vector<RowVec> ps;
                    for (auto j : picks[b - start]) {
                        ps.push_back(softmax_row(head_logits(head, frozen[j])));
                    }
                    pn.push_back(std::move(ps));
                }
                std::vector<RowVec> dpa;
                std::vector<std::vector<RowVec>> dpn;
                loss = objective(pa, pn, config.lambda, &dpa, &dpn);
                for (std::size_t b = start; b < end; ++b) {
                    const std::size_t i = b - start;
                    head_backward(head, frozen[anchor_idx[order[b]]], pa[i], dpa[i], &head_grads);
                    for (std::size_t j = 0; j < picks[i].size(); ++j) {
                        head_backward(head, frozen[picks[i][j]], pn[i][j], dpn[i][j], &head_grads);
                    }
                }
            }
            if (!std::isfinite(loss)) {
                throw NumericError(fmt::format("non-finite SCAN loss at epoch {}", epoch));
            }
            epoch_loss += loss;
            ++n_batches;
            optimizer.step(param_ptrs, grad_ptrs);
        }
        epoch_loss /= static_cast<double>(n_batches);
        if (!head.weight.allFinite() || !head.bias.allFinite() || !enc.all_finite()) {
            throw NumericError(fmt::format("non-finite parameters after SCAN epoch {}", epoch));
        }
        result.loss_trace.push_back(epoch_loss);
        if (on_epoch) {
            on_epoch(epoch, epoch_loss);
        }
    }

    if (config.update_encoder) {
        result.assignments = assign_all(enc, head, windows);
    } else {
        for (std::size_t i = 0; i < windows.size(); ++i) {
            result.assignments.push_back(
                make_assignment(windows[i].window_id, to_vector(softmax_row(head_logits(head, frozen[i])))));
        }
    }
    return result;
}

std::string assignments_to_jsonl(const std::vector<ClusterAssignment>& assignments) {
    std::string out;
    for (const auto& a : assignments) {
        nlohmann::json j;
        j["window_id"] = a.window_id;
        j["cluster"] = a.cluster;
        j["confidence"] = a.confidence;
        j["probs"] = a.probs;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<ClusterAssignment> assignments_from_jsonl(std::string_view text) {
    std::vector<ClusterAssignment> out;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto j = nlohmann::json::parse(line);
        ClusterAssignment a;
        a.window_id = j.at("window_id").get<WindowId>();
        a.cluster = j.at("cluster").get<ClusterId>();
        a.confidence = j.at("confidence").get<double>();
        a.probs = j.at("probs").get<std::vector<double>>();
        if (a.cluster < 0 || static_cast<std::size_t>(a.cluster) >= a.probs.size()) {
            throw ValidationError(fmt::format("assignment for window {} has cluster {} out of range", a.window_id,
                                              a.cluster));
        }
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace pdl::scan
