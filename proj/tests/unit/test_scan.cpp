#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "pdl/scan.hpp"
#include "support/gradcheck.hpp"
#include "support/matching.hpp"
#include "support/motifs.hpp"

using namespace pdl;
using namespace pdl::scan;
using encoder::EncoderConfig;
using encoder::EncoderParams;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.vocab_size = 12;
    c.embed_dim = 8;
    c.num_heads = 2;
    c.num_layers = 2;
    c.feedforward_dim = 16;
    c.window_length = 5;
    c.seed = 13;
    return c;
}

std::vector<double> one_hot(std::size_t k, std::size_t i) {
    std::vector<double> v(k, 0.0);
    v[i] = 1.0;
    return v;
}

std::vector<double> random_probs(std::size_t k, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    std::vector<double> v(k);
    double s = 0;
    for (auto& x : v) {
        x = u(rng);
        s += x;
    }
    for (auto& x : v) {
        x /= s;
    }
    return v;
}

}  // namespace

TEST_CASE("consistency_loss identities") {
    CHECK(consistency_loss(one_hot(4, 2), one_hot(4, 2)) == 0.0);
    CHECK(consistency_loss(one_hot(4, 0), one_hot(4, 1)) == doctest::Approx(-std::log(1e-12)));
    std::vector<double> u(7, 1.0 / 7);
    CHECK(consistency_loss(u, u) == doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("entropy_term bounds") {
    for (std::size_t k : {2u, 5u, 20u}) {
        std::vector<double> u(k, 1.0 / static_cast<double>(k));
        CHECK(entropy_term(u) == doctest::Approx(-std::log(static_cast<double>(k))).epsilon(1e-12));
        CHECK(entropy_term(one_hot(k, 0)) == 0.0);
    }
    CHECK(entropy_term(std::vector<double>{0.5, 0.5}) == doctest::Approx(-std::log(2.0)));

    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        const std::size_t k = 2 + rng() % 30;
        auto p = random_probs(k, rng);
        const double e = entropy_term(p);
        CHECK(e <= 0.0);
        CHECK(e >= -std::log(static_cast<double>(k)) - 1e-12);
    }
}

TEST_CASE("scan_loss algebra") {
    std::vector<std::vector<double>> u(6, std::vector<double>(20, 1.0 / 20));
    CHECK(std::abs(scan_loss(u, u, 2.0) - (-std::log(20.0))) < 1e-9);

    std::vector<std::vector<double>> hot;
    for (std::size_t i = 0; i < 8; ++i) {
        hot.push_back(one_hot(4, i % 4));
    }
    CHECK(scan_loss(hot, hot, 2.0) == doctest::Approx(-2.0 * std::log(4.0)));
    CHECK(scan_loss(hot, hot, 0.0) == 0.0);

    std::mt19937_64 rng(2);
    std::vector<std::vector<double>> a, n;
    double cons = 0;
    for (int i = 0; i < 5; ++i) {
        a.push_back(random_probs(3, rng));
        n.push_back(random_probs(3, rng));
        cons += consistency_loss(a.back(), n.back());
    }
    CHECK(scan_loss(a, n, 0.0) == doctest::Approx(cons / 5).epsilon(1e-12));
    CHECK_THROWS_AS(scan_loss({}, {}, 2.0), ValidationError);
}

TEST_CASE("cluster_probs of a zero head is uniform") {
    auto params = EncoderParams::initialize(tiny_config());
    auto head = ClusterHead::zeros(8, 5);
    std::vector<TokenId> w{4, 5, 6, 7, 8};
    auto p = cluster_probs(params, head, w);
    REQUIRE(p.size() == 5);
    for (double x : p) {
        CHECK(x == doctest::Approx(0.2).epsilon(1e-15));
    }
    auto random_head = ClusterHead::initialize(8, 5, 3);
    auto q = cluster_probs(params, random_head, w);
    CHECK(std::accumulate(q.begin(), q.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(q == cluster_probs(params, random_head, w));
    CHECK_THROWS_AS(ClusterHead::zeros(8, 1), ValidationError);
}

TEST_CASE("SCAN gradients match finite differences for head and encoder") {
    auto cfg = tiny_config();
    auto params = EncoderParams::initialize(cfg);
    auto head = ClusterHead::initialize(cfg.embed_dim, 3, 5);
    std::vector<std::vector<TokenId>> seqs{{4, 5, 6, 7, 8}, {9, 10, 11, 4, 5}, {6, 6, 7, 9, 11},
                                           {4, 11, 5, 10, 6}, {8, 8, 8, 9, 9}, {10, 4, 7, 11, 5}};
    ScanBatch batch;
    batch.anchors = {seqs[0], seqs[1], seqs[2]};
    batch.neighbors = {{seqs[3], seqs[4]}, {seqs[5]}, {seqs[0], seqs[4]}};

    for (double lambda : {0.0, 2.0}) {
        CAPTURE(lambda);
        auto enc_grads = EncoderParams::zeros(cfg);
        auto head_grads = ClusterHead::zeros(cfg.embed_dim, 3);
        scan_batch_loss(params, head, batch, lambda, &enc_grads, &head_grads);

        auto named = params.tensors();
        for (auto& t : head.tensors()) {
            named.push_back(t);
        }
        std::vector<const Matrix*> analytic;
        for (auto* g : enc_grads.tensor_ptrs()) {
            analytic.push_back(g);
        }
        for (auto* g : head_grads.tensor_ptrs()) {
            analytic.push_back(g);
        }
        auto errors = testing::check_gradients(
            named, analytic, [&] { return scan_batch_loss(params, head, batch, lambda, nullptr, nullptr); });
        for (const auto& e : errors) {
            INFO(e.name, " analytic=", e.analytic_norm, " numeric=", e.numeric_norm);
            CHECK(e.relative_error < 1e-4);
        }
    }
}

TEST_CASE("fine_tune_scan: epochs=0, determinism and motif recovery") {
    auto corpus = testing::motif_windows(240, 4, 12, 0.05, 8);
    EncoderConfig cfg;
    cfg.vocab_size = corpus.vocab_size;
    cfg.embed_dim = 16;
    cfg.num_heads = 2;
    cfg.num_layers = 1;
    cfg.feedforward_dim = 32;
    cfg.window_length = 12;
    cfg.epochs = 6;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.9;
    cfg.seed = 4;
    auto pre = encoder::train_mlm(corpus.windows, cfg);
    auto graph = neighbors::build_knn(encoder::embed_all(pre.params, corpus.windows), 10);

    ScanConfig sc;
    sc.k = 4;
    sc.epochs = 0;
    sc.seed = 6;
    auto untrained = fine_tune_scan(pre.params, graph, corpus.windows, sc);
    REQUIRE(untrained.assignments.size() == corpus.windows.size());
    for (const auto& a : untrained.assignments) {
        CHECK(std::accumulate(a.probs.begin(), a.probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(a.confidence >= 0.25 - 1e-12);
        CHECK(a.probs[static_cast<std::size_t>(a.cluster)] == a.confidence);
    }

    sc.epochs = 30;
    sc.batch_size = 32;
    sc.learning_rate = 0.05;
    sc.momentum = 0.9;
    auto run1 = fine_tune_scan(pre.params, graph, corpus.windows, sc);
    auto run2 = fine_tune_scan(pre.params, graph, corpus.windows, sc);
    CHECK(assignments_to_jsonl(run1.assignments) == assignments_to_jsonl(run2.assignments));
    CHECK(run1.loss_trace.back() < run1.loss_trace.front());

    auto again = assign_all(run1.params, run1.head, corpus.windows);
    CHECK(assignments_to_jsonl(again) == assignments_to_jsonl(run1.assignments));

    std::vector<int> clusters;
    for (const auto& a : run1.assignments) {
        clusters.push_back(a.cluster);
    }
    CHECK(testing::brute_force_matched_accuracy(clusters, corpus.motif) >= 0.9);

    SUBCASE("frozen encoder trains the head only") {
        auto frozen_cfg = sc;
        frozen_cfg.update_encoder = false;
        auto frozen = fine_tune_scan(pre.params, graph, corpus.windows, frozen_cfg);
        CHECK(frozen.params.token_embedding == pre.params.token_embedding);
        CHECK(frozen.assignments.size() == corpus.windows.size());
    }
}

TEST_CASE("assignment persistence") {
    std::vector<ClusterAssignment> as{make_assignment(3, {0.2, 0.5, 0.3}), make_assignment(9, {0.4, 0.4, 0.2})};
    CHECK(as[0].cluster == 1);
    CHECK(as[1].cluster == 0);
    auto back = assignments_from_jsonl(assignments_to_jsonl(as));
    CHECK(back == as);

    auto head = ClusterHead::initialize(6, 4, 1);
    auto path = std::filesystem::temp_directory_path() / "pdl_head_roundtrip.bin";
    head.save(path);
    auto loaded = ClusterHead::load(path);
    CHECK(loaded.weight == head.weight);
    CHECK(loaded.bias == head.bias);
    std::filesystem::remove(path);
}
