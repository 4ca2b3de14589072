// One PASS/FAIL line per headline criterion. Exit status is non-zero when any criterion fails.
//
// PDL_MILAN_LOG=<path to a CASAS Milan data file> enables the real-data check; it is skipped otherwise.
// PDL_ACCEPTANCE_DIR overrides the scratch directory (default: a fresh directory under the system temp dir).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>

#include <fmt/format.h>
#include <unistd.h>

#include "pdl/corpus.hpp"
#include "pdl/encoder.hpp"
#include "pdl/evalmap.hpp"
#include "pdl/io.hpp"
#include "pdl/neighbors.hpp"
#include "pdl/pipeline.hpp"
#include "pdl/scan.hpp"
#include "support/gradcheck.hpp"
#include "support/knn_oracle.hpp"
#include "support/matching.hpp"
#include "support/metric_oracles.hpp"
#include "support/tally_oracle.hpp"

using namespace pdl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    enum Status { kPass, kFail, kSkip } status = kFail;
    std::string detail;
};

Outcome pass_if(bool ok, std::string detail) { return {ok ? Outcome::kPass : Outcome::kFail, std::move(detail)}; }

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

fs::path scratch_root() {
    if (const char* dir = std::getenv("PDL_ACCEPTANCE_DIR")) {
        return dir;
    }
    return fs::temp_directory_path() / fmt::format("pdl_acceptance_{}", ::getpid());
}

// ------------------------------------------------------------------ gradient fidelity

Outcome gradient_fidelity() {
    const auto start = Clock::now();
    encoder::EncoderConfig cfg;
    cfg.vocab_size = 12;
    cfg.embed_dim = 8;
    cfg.num_heads = 2;
    cfg.num_layers = 2;
    cfg.feedforward_dim = 16;
    cfg.window_length = 5;  // 6 positions with [CLS]
    cfg.mask_fraction = 0.4;
    cfg.seed = 7;
    auto params = encoder::EncoderParams::initialize(cfg);

    double worst = 0.0;
    std::string worst_name;
    auto track = [&](const std::vector<testing::GroupError>& errors, const char* loss) {
        for (const auto& e : errors) {
            if (e.relative_error > worst) {
                worst = e.relative_error;
                worst_name = fmt::format("{}:{}", loss, e.name);
            }
        }
    };

    const std::vector<TokenId> window{4, 9, 5, 11, 6};
    const auto seq = encoder::apply_mask(window, cfg.mask_fraction, 5);
    auto grads = encoder::EncoderParams::zeros(cfg);
    encoder::mlm_sequence_loss(params, seq, &grads);
    std::vector<const Matrix*> analytic;
    for (auto* g : grads.tensor_ptrs()) {
        analytic.push_back(g);
    }
    track(testing::check_gradients(params.tensors(), analytic,
                                   [&] { return encoder::mlm_sequence_loss(params, seq, nullptr); }),
          "mlm");

    auto head = scan::ClusterHead::initialize(cfg.embed_dim, 3, 5);
    std::vector<std::vector<TokenId>> seqs{{4, 5, 6, 7, 8}, {9, 10, 11, 4, 5}, {6, 6, 7, 9, 11},
                                           {4, 11, 5, 10, 6}, {8, 8, 8, 9, 9}, {10, 4, 7, 11, 5}};
    scan::ScanBatch batch;
    batch.anchors = {seqs[0], seqs[1], seqs[2]};
    batch.neighbors = {{seqs[3], seqs[4]}, {seqs[5]}, {seqs[0], seqs[4]}};
    auto enc_grads = encoder::EncoderParams::zeros(cfg);
    auto head_grads = scan::ClusterHead::zeros(cfg.embed_dim, 3);
    scan::scan_batch_loss(params, head, batch, 2.0, &enc_grads, &head_grads);
    auto named = params.tensors();
    for (auto& t : head.tensors()) {
        named.push_back(t);
    }
    analytic.clear();
    for (auto* g : enc_grads.tensor_ptrs()) {
        analytic.push_back(g);
    }
    for (auto* g : head_grads.tensor_ptrs()) {
        analytic.push_back(g);
    }
    track(testing::check_gradients(named, analytic,
                                   [&] { return scan::scan_batch_loss(params, head, batch, 2.0, nullptr, nullptr); }),
          "scan");

    const double elapsed = seconds_since(start);
    return pass_if(worst < 1e-4 && elapsed < 30.0,
                   fmt::format("max relative error {:.2e} ({}), {:.1f}s", worst, worst_name, elapsed));
}

// ------------------------------------------------------------------ kNN exactness

Outcome knn_exactness() {
    const auto start = Clock::now();
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t mismatches = 0, largest = 0;
    for (int instance = 0; instance < 50; ++instance) {
        const std::size_t n = 2 + rng() % 1999;
        const std::size_t dim = 1 + rng() % 64;
        const std::size_t h = 1 + rng() % 30;
        largest = std::max(largest, n);
        std::vector<encoder::EmbeddingVector> emb;
        for (std::size_t i = 0; i < n; ++i) {
            encoder::EmbeddingVector e;
            e.window_id = static_cast<WindowId>(i * 7 + rng() % 7);
            if (i > 0 && rng() % 10 == 0) {
                e.values = emb[rng() % i].values;  // exact duplicates exercise the id tie-break
            } else {
                for (std::size_t d = 0; d < dim; ++d) {
                    e.values.push_back(normal(rng));
                }
            }
            emb.push_back(std::move(e));
        }
        const auto graph = neighbors::build_knn(emb, h, nullptr, 0);
        const auto oracle = testing::brute_force_knn(emb, h);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<WindowId> ids;
            for (const auto& nb : graph.lists[i]) {
                ids.push_back(nb.window_id);
            }
            if (graph.nodes[i] != emb[i].window_id || ids != oracle.ids[i]) {
                ++mismatches;
            }
        }
    }
    const double elapsed = seconds_since(start);
    return pass_if(mismatches == 0 && elapsed < 60.0,
                   fmt::format("50 instances (n up to {}), {} mismatched lists, {:.1f}s", largest, mismatches, elapsed));
}

// ------------------------------------------------------------------ loss identities

Outcome loss_identities() {
    double worst = 0.0;
    for (std::size_t v : {5u, 12u, 46u, 100u}) {
        const Matrix logits = Matrix::Zero(6, static_cast<Eigen::Index>(v));
        const std::vector<TokenId> targets{4, 1, 3};
        const std::vector<std::size_t> positions{1, 2, 5};
        const double loss = encoder::mlm_loss(logits, targets, positions);
        worst = std::max(worst, std::abs(loss - std::log(static_cast<double>(v))));
    }
    bool bounds = true;
    for (std::size_t k : {2u, 4u, 20u}) {
        std::vector<double> uniform(k, 1.0 / static_cast<double>(k));
        std::vector<double> hot(k, 0.0);
        hot[0] = 1.0;
        worst = std::max(worst, std::abs(scan::entropy_term(uniform) + std::log(static_cast<double>(k))));
        bounds = bounds && scan::entropy_term(hot) == 0.0;
        std::mt19937_64 rng(k);
        for (int i = 0; i < 100; ++i) {
            std::vector<double> p(k);
            double s = 0.0;
            for (auto& x : p) {
                x = static_cast<double>(rng() % 1000 + 1);
                s += x;
            }
            for (auto& x : p) {
                x /= s;
            }
            const double e = scan::entropy_term(p);
            bounds = bounds && e <= 0.0 && e >= -std::log(static_cast<double>(k)) - 1e-12;
        }
    }
    std::vector<std::vector<double>> u(8, std::vector<double>(20, 1.0 / 20));
    const double algebra = scan::scan_loss(u, u, 2.0);
    worst = std::max(worst, std::abs(algebra + std::log(20.0)));
    return pass_if(worst <= 1e-9 && bounds,
                   fmt::format("max deviation {:.1e}, entropy bounds {}, scan_loss(uniform,k=20,lambda=2)={:.12f}", worst,
                               bounds ? "hold" : "violated", algebra));
}

// ------------------------------------------------------------------ metric oracles

Outcome metric_oracles() {
    double worst = 0.0;
    std::vector<std::pair<std::string, std::string>> mixed{{"a", "a"}, {"a", "a"}, {"a", "a"}, {"a", "b"},
                                                           {"a", "a"}, {"b", "b"}, {"b", "b"}, {"b", "a"},
                                                           {"b", "b"}, {"b", "a"}};
    worst = std::max(worst, std::abs(evalmap::cohens_kappa(mixed) - 0.4));  // p_o 0.7, p_e 0.5
    std::vector<std::pair<std::string, std::string>> half;
    for (int i = 0; i < 100; ++i) {
        half.emplace_back("X", i % 2 == 0 ? "X" : "Y");
    }
    worst = std::max(worst, std::abs(evalmap::cohens_kappa(half)));
    worst = std::max(worst, std::abs(evalmap::fleiss_kappa({{1, 1}, {1, 1}}) + 1.0));
    worst = std::max(worst, std::abs(evalmap::fleiss_kappa({{10, 0, 0}, {0, 10, 0}, {0, 0, 10}}) - 1.0));
    const double three = (7.0 / 9.0 - 41.0 / 81.0) / (1.0 - 41.0 / 81.0);
    worst = std::max(worst, std::abs(evalmap::fleiss_kappa({{3, 0}, {2, 1}, {0, 3}}) - three));

    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng() % 300;
        const std::size_t classes = 1 + rng() % 9;
        std::vector<std::string> pred, truth;
        for (std::size_t i = 0; i < n; ++i) {
            truth.push_back(fmt::format("c{}", rng() % classes));
            pred.push_back(fmt::format("c{}", rng() % (classes + 1)));
        }
        const auto oracle = testing::confusion_f1(pred, truth);
        worst = std::max(worst, std::abs(evalmap::f1_score(pred, truth, evalmap::F1Mode::Weighted) - oracle.weighted));
        worst = std::max(worst, std::abs(evalmap::f1_score(pred, truth, evalmap::F1Mode::Macro) - oracle.macro));
    }
    return pass_if(worst <= 1e-9, fmt::format("kappa examples and 100 random F1 labelings, max deviation {:.1e}", worst));
}

// ------------------------------------------------------------------ protocol arithmetic

Outcome protocol_arithmetic() {
    const std::size_t n_events = 433'665;
    std::vector<corpus::SensorEvent> events;
    events.reserve(n_events);
    const auto start = corpus::parse_timestamp("2009-10-16", "00:00:00");
    const char* sensors[] = {"M001", "M002", "M003", "D001", "T001"};
    for (std::size_t i = 0; i < n_events; ++i) {
        corpus::SensorEvent e;
        e.timestamp = start + std::chrono::seconds(i * 12);
        e.sensor_id = sensors[i % 5];
        e.value = i % 5 == 4 ? fmt::format("{}.{}", 18 + i % 7, i % 10) : (i % 2 ? "OFF" : "ON");
        events.push_back(std::move(e));
    }
    const auto vocab = corpus::build_vocabulary(events);
    const auto windows = corpus::make_windows(events, vocab, 20, 1);
    const auto sample = corpus::sample_windows(windows, 0.10, 0);
    const bool ok = windows.size() == 433'646 && sample.size() == 43'364;
    return pass_if(ok, fmt::format("{} events -> {} windows -> {} sampled", n_events, windows.size(), sample.size()));
}

// ------------------------------------------------------------------ synthetic run

struct SyntheticRun {
    fs::path dir;
    double seconds = 0.0;
    std::string error;
};

pipeline::PipelineConfig synthetic_config(const fs::path& dir) {
    pipeline::PipelineConfig c;
    c.out = dir.string();
    c.dataset = (dir / pipeline::artifact::kSynthLog).string();
    c.dataset_name = "synthetic";
    c.sample_fraction = 1.0;
    c.k = 4;
    return c;
}

SyntheticRun run_synthetic(const fs::path& dir) {
    SyntheticRun run{dir, 0.0, {}};
    fs::remove_all(dir);
    const auto start = Clock::now();
    try {
        const auto c = synthetic_config(dir);
        pipeline::synth(c);
        pipeline::ingest(c);
        pipeline::pretrain(c);
        pipeline::build_neighbors(c);
        pipeline::cluster(c);
        pipeline::run_kmeans(c);
        pipeline::centroids(c);
        pipeline::propagate(c, true);
        pipeline::evaluate(c);
    } catch (const std::exception& e) {
        run.error = e.what();
    }
    run.seconds = seconds_since(start);
    return run;
}

Outcome synthetic_end_to_end(const SyntheticRun& run) {
    if (!run.error.empty()) {
        return {Outcome::kFail, "pipeline error: " + run.error};
    }
    namespace art = pipeline::artifact;
    const auto events = corpus::events_from_csv(io::read_file(run.dir / art::kEvents));
    const auto windows = corpus::windows_from_jsonl(io::read_file(run.dir / art::kWindows));
    const auto assignments = scan::assignments_from_jsonl(io::read_file(run.dir / art::kAssignments));
    const auto metrics = io::Json::parse(io::read_file(run.dir / art::kMetrics));

    std::map<std::string, int> class_of;
    std::vector<int> clusters, classes;
    for (const auto& a : assignments) {
        const auto label = corpus::window_truth_label(windows.at(static_cast<std::size_t>(a.window_id)), events);
        classes.push_back(class_of.emplace(label, static_cast<int>(class_of.size())).first->second);
        clusters.push_back(a.cluster);
    }
    const double scan_acc = testing::brute_force_matched_accuracy(clusters, classes);
    const double kmeans_mean = metrics.at("kmeans_seeds").at("matched_accuracy_mean").get<double>();
    const double kmeans_min = metrics.at("kmeans_seeds").at("matched_accuracy_min").get<double>();
    const double kmeans_max = metrics.at("kmeans_seeds").at("matched_accuracy_max").get<double>();
    const std::size_t seeds = metrics.at("kmeans_seeds").at("seeds").get<std::size_t>();
    const double margin = scan_acc - kmeans_mean;
    const bool ok = scan_acc >= 0.90 && margin >= 0.05 && run.seconds < 600.0;
    return pass_if(ok, fmt::format("{} events, {} classes; SCAN accuracy {:.4f}, k-means mean {:.4f} over {} seedings "
                                   "(min {:.4f}, max {:.4f}), margin {:+.1f} points, {:.0f}s",
                                   events.size(), class_of.size(), scan_acc, kmeans_mean, seeds, kmeans_min, kmeans_max,
                                   100.0 * margin, run.seconds));
}

Outcome propagation_totality(const SyntheticRun& run) {
    if (!run.error.empty()) {
        return {Outcome::kFail, "pipeline error: " + run.error};
    }
    namespace art = pipeline::artifact;
    const auto events = corpus::events_from_csv(io::read_file(run.dir / art::kEvents));
    const auto windows = corpus::windows_from_jsonl(io::read_file(run.dir / art::kWindows));
    const auto assignments = scan::assignments_from_jsonl(io::read_file(run.dir / art::kAssignments));
    const auto hierarchy = evalmap::LabelHierarchy::load(synthetic_config(run.dir).hierarchy_path());
    const auto session = annotate::AnnotationSession::load(run.dir / art::kSessions / "synthetic.json");

    std::vector<ClusterId> ks;
    for (ClusterId c = 0; c < 4; ++c) {
        ks.push_back(c);
    }
    const auto map = annotate::cluster_majority_labels(session, hierarchy, ks);
    const auto labels = annotate::propagate(map, assignments);
    const auto per_event = annotate::reannotate_events(labels, windows, events.size());
    const auto oracle = testing::tally_event_labels(labels, windows, events.size());

    std::size_t labeled_windows = 0;
    for (const auto& l : labels) {
        labeled_windows += l.label.empty() ? 0 : 1;
    }
    std::vector<bool> covered(events.size(), false);
    for (const auto& a : assignments) {
        const auto& w = windows.at(static_cast<std::size_t>(a.window_id));
        for (auto i = w.start_event_index; i <= w.end_event_index; ++i) {
            covered[i] = true;
        }
    }
    std::size_t n_covered = 0, covered_labeled = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (covered[i]) {
            ++n_covered;
            covered_labeled += per_event[i] != kNoLabel ? 1 : 0;
        }
    }
    const bool ok = labeled_windows == assignments.size() && covered_labeled == n_covered && per_event == oracle;
    return pass_if(ok, fmt::format("{}/{} windows labeled, {}/{} covered events labeled, tally oracle {}",
                                   labeled_windows, assignments.size(), covered_labeled, n_covered,
                                   per_event == oracle ? "matches" : "differs"));
}

// ------------------------------------------------------------------ determinism

Outcome determinism(const fs::path& root) {
    auto tiny = [](const fs::path& dir) {
        pipeline::PipelineConfig c;
        c.out = dir.string();
        c.dataset = (dir / pipeline::artifact::kSynthLog).string();
        c.dataset_name = "synthetic";
        c.seed = 11;
        c.synth_days = 3;
        c.synth_events_per_day = 200;
        c.sample_fraction = 0.5;
        c.train_ratio = 0.67;
        c.embed_dim = 16;
        c.num_heads = 2;
        c.feedforward_dim = 32;
        c.pretrain_epochs = 1;
        c.scan_epochs = 1;
        c.h = 5;
        c.k = 4;
        c.m = 2;
        c.bootstrap_replicates = 200;
        c.kmeans_comparison_seeds = 3;
        c.sweep_ks = {3, 4};
        c.period1_start = "2009-11-01";
        c.period1_end = "2009-11-01";
        c.period2_start = "2009-11-02";
        c.period2_end = "2009-11-03";
        return c;
    };
    auto run_all = [](const pipeline::PipelineConfig& c) {
        pipeline::synth(c);
        pipeline::ingest(c);
        pipeline::pretrain(c);
        pipeline::build_neighbors(c);
        pipeline::cluster(c);
        pipeline::run_kmeans(c);
        pipeline::centroids(c);
        pipeline::propagate(c, true);
        pipeline::evaluate(c);
        pipeline::sweep_k(c);
        pipeline::trends(c);
    };
    const auto a = root / "determinism_a";
    const auto b = root / "determinism_b";
    fs::remove_all(a);
    fs::remove_all(b);
    try {
        run_all(tiny(a));
        run_all(tiny(b));
        // Rerunning one stage in place must reproduce its own outputs.
        const auto before = io::read_file(a / pipeline::artifact::kAssignments);
        pipeline::cluster(tiny(a));
        const bool in_place = io::read_file(a / pipeline::artifact::kAssignments) == before;

        std::size_t compared = 0, differing = 0;
        for (const auto& entry : fs::recursive_directory_iterator(a)) {
            if (!entry.is_regular_file()) {
                continue;
            }
            const auto rel = fs::relative(entry.path(), a);
            if (rel.string() == pipeline::artifact::kConfig || rel.parent_path() == pipeline::artifact::kManifests) {
                continue;  // these embed the output directory name
            }
            ++compared;
            if (!fs::exists(b / rel) || io::read_file(entry.path()) != io::read_file(b / rel)) {
                ++differing;
                fmt::print(stderr, "determinism: {} differs\n", rel.string());
            }
        }
        return pass_if(differing == 0 && in_place && compared > 20,
                       fmt::format("{} artifacts compared across two full runs, {} differ; in-place stage rerun {}",
                                   compared, differing, in_place ? "identical" : "differs"));
    } catch (const std::exception& e) {
        return {Outcome::kFail, fmt::format("pipeline error: {}", e.what())};
    }
}

// ------------------------------------------------------------------ CASAS Milan (optional)

Outcome milan(const fs::path& root) {
    const char* log = std::getenv("PDL_MILAN_LOG");
    if (log == nullptr || !fs::exists(log)) {
        return {Outcome::kSkip, "set PDL_MILAN_LOG to a CASAS Milan data file to run"};
    }
    const auto dir = root / "milan";
    fs::remove_all(dir);
    pipeline::PipelineConfig c;
    c.out = dir.string();
    c.dataset = log;
    c.dataset_name = "milan";
    c.label_map = (fs::path(c.hierarchy_path()).parent_path() / "label_maps" / "milan.tsv").string();
    const auto start = Clock::now();
    try {
        pipeline::ingest(c);
        pipeline::pretrain(c);
        pipeline::build_neighbors(c);
        pipeline::cluster(c);
        pipeline::evaluate(c);
        pipeline::sweep_k(c);
    } catch (const std::exception& e) {
        return {Outcome::kFail, fmt::format("pipeline error: {}", e.what())};
    }
    const auto metrics = io::Json::parse(io::read_file(dir / pipeline::artifact::kMetrics));
    const double f1 = metrics.at("scan").at("weighted_f1").get<double>();

    // Plateau: beyond k=30 no k's interval lies entirely above the k=30 interval, and before that
    // no k's interval lies entirely below its predecessor's.
    const auto sweep = io::read_file(dir / pipeline::artifact::kSweep);
    std::vector<std::array<double, 4>> rows;
    std::size_t pos = sweep.find('\n') + 1;
    while (pos < sweep.size()) {
        const auto nl = sweep.find('\n', pos);
        const auto cells = io::csv_split(std::string_view(sweep).substr(pos, nl - pos));
        rows.push_back({std::stod(cells[0]), std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])});
        pos = nl + 1;
    }
    bool shape = true;
    const std::array<double, 4>* at30 = nullptr;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i][0] == 30.0) {
            at30 = &rows[i];
        }
        if (i > 0 && rows[i][0] <= 30.0 && rows[i][3] < rows[i - 1][2]) {
            shape = false;
        }
    }
    for (const auto& r : rows) {
        if (at30 != nullptr && r[0] > 30.0 && r[2] > (*at30)[3]) {
            shape = false;
        }
    }
    return pass_if(f1 >= 0.70 && shape, fmt::format("weighted F1 {:.3f} (target 0.70), sweep-k {}, {:.0f}s", f1,
                                                    shape ? "rises then plateaus" : "shape off", seconds_since(start)));
}

}  // namespace

int main() {
    const auto root = scratch_root();
    fs::create_directories(root);
    int failures = 0;
    // A soft target reports FAIL for investigation but does not fail the run.
    auto report = [&](const char* name, const std::function<Outcome()>& check, bool soft = false) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {Outcome::kFail, fmt::format("exception: {}", e.what())};
        }
        const char* tag = o.status == Outcome::kPass ? "PASS" : o.status == Outcome::kSkip ? "SKIP" : "FAIL";
        failures += o.status == Outcome::kFail && !soft ? 1 : 0;
        fmt::print("{} {}: {}{}\n", tag, name, o.detail, soft && o.status == Outcome::kFail ? " (soft target)" : "");
        std::fflush(stdout);
    };

    report("gradient-fidelity", gradient_fidelity);
    report("knn-exactness", knn_exactness);
    report("loss-identities", loss_identities);
    const auto synthetic = run_synthetic(root / "synthetic");
    report("synthetic-end-to-end", [&] { return synthetic_end_to_end(synthetic); });
    report("metric-oracles", metric_oracles);
    report("protocol-arithmetic", protocol_arithmetic);
    report("propagation-totality", [&] { return propagation_totality(synthetic); });
    report("milan-reproduction", [&] { return milan(root); }, true);
    report("determinism", [&] { return determinism(root); });

    if (!std::getenv("PDL_ACCEPTANCE_DIR")) {
        std::error_code ec;
        fs::remove_all(root, ec);
    }
    return failures == 0 ? 0 : 1;
}
