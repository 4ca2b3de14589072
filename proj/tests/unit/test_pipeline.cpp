#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

#include <fmt/format.h>
#include <unistd.h>

#include "pdl/io.hpp"
#include "pdl/pipeline.hpp"

using namespace pdl;
using namespace pdl::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / fmt::format("pdl_pipeline_{}_{}", name, ::getpid());
    fs::remove_all(dir);
    return dir;
}

PipelineConfig tiny(const fs::path& out) {
    PipelineConfig c;
    c.out = out.string();
    c.seed = 3;
    c.dataset_name = "synthetic";
    c.synth_days = 3;
    c.synth_events_per_day = 150;
    c.sample_fraction = 1.0;
    c.train_ratio = 0.67;
    c.embed_dim = 16;
    c.num_heads = 2;
    c.feedforward_dim = 32;
    c.window_length = 10;
    c.pretrain_epochs = 1;
    c.scan_epochs = 1;
    c.h = 5;
    c.k = 4;
    c.m = 2;
    c.bootstrap_replicates = 100;
    c.kmeans_comparison_seeds = 2;
    c.sweep_ks = {2, 3};
    c.dataset = (out / artifact::kSynthLog).string();
    return c;
}

void run_all(const PipelineConfig& c) {
    synth(c);
    ingest(c);
    pretrain(c);
    build_neighbors(c);
    cluster(c);
    run_kmeans(c);
    centroids(c);
    propagate(c, true);
    evaluate(c);
}

io::Json manifest(const fs::path& out, const std::string& stage) {
    return io::Json::parse(io::read_file(out / artifact::kManifests / (stage + ".json")));
}

}  // namespace

TEST_CASE("config text round-trips every key") {
    PipelineConfig c;
    c.set("k", "7");
    c.set("lambda", "1.5");
    c.set("scan_update_encoder", "false");
    c.set("sweep_ks", "3, 5,9");
    c.set("period1_start", "2009-11-01");
    PipelineConfig back;
    back.apply_text(c.to_text());
    for (const auto& key : PipelineConfig::keys()) {
        CHECK(back.get(key) == c.get(key));
    }
    CHECK(back.k == 7);
    CHECK(back.lambda == 1.5);
    CHECK_FALSE(back.scan_update_encoder);
    CHECK(back.sweep_ks == std::vector<std::size_t>{3, 5, 9});

    PipelineConfig commented;
    commented.apply_text("# defaults\n\n  h = 12  # neighbors\n");
    CHECK(commented.h == 12);
}

TEST_CASE("config rejects unknown keys, malformed values and out-of-range settings") {
    PipelineConfig c;
    CHECK_THROWS_AS(c.set("bogus", "1"), ValidationError);
    CHECK_THROWS_AS(c.set("k", "four"), ValidationError);
    CHECK_THROWS_AS(c.set("k", "4x"), ValidationError);
    CHECK_THROWS_AS(c.set("drop_numeric", "maybe"), ValidationError);
    CHECK_THROWS_AS(c.apply_text("k 4\n"), ValidationError);

    auto bad = [](auto mutate) {
        PipelineConfig cfg;
        mutate(cfg);
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    };
    bad([](PipelineConfig& x) { x.k = 1; });
    bad([](PipelineConfig& x) { x.sample_fraction = 0.0; });
    bad([](PipelineConfig& x) { x.train_ratio = 1.0; });
    bad([](PipelineConfig& x) { x.embed_dim = 30; });  // not divisible by 4 heads
    bad([](PipelineConfig& x) { x.bootstrap_replicates = 10; });
    bad([](PipelineConfig& x) { x.sweep_ks.clear(); });
    PipelineConfig{}.validate();
}

TEST_CASE("a stage whose input is absent names the missing file") {
    const auto dir = scratch("missing");
    PipelineConfig c;
    c.out = dir.string();
    try {
        pretrain(c);
        FAIL("pretrain ran without ingest output");
    } catch (const MissingArtifact& e) {
        CHECK(e.path().filename() == artifact::kVocab);
        CHECK(std::string(e.what()).find(artifact::kVocab) != std::string::npos);
    }
    CHECK_THROWS_AS(cluster(c), MissingArtifact);
    CHECK_THROWS_AS(evaluate(c), MissingArtifact);
    CHECK_FALSE(fs::exists(dir / ".lock"));
    fs::remove_all(dir);
}

TEST_CASE("a locked output directory is refused") {
    const auto dir = scratch("lock");
    auto c = tiny(dir);
    {
        io::DirectoryLock held(dir);
        CHECK_THROWS(synth(c));
    }
    CHECK_NOTHROW(synth(c));
    fs::remove_all(dir);
}

TEST_CASE("end-to-end run is byte-identical across reruns and covers every event") {
    const auto a = scratch("det_a");
    const auto b = scratch("det_b");
    run_all(tiny(a));
    run_all(tiny(b));
    for (const char* stage : {"synth", "ingest", "pretrain", "neighbors", "cluster", "kmeans", "centroids",
                              "propagate", "evaluate"}) {
        CAPTURE(stage);
        const auto ma = manifest(a, stage);
        const auto mb = manifest(b, stage);
        CHECK(ma.at("outputs") == mb.at("outputs"));
        CHECK(ma.at("inputs").size() == mb.at("inputs").size());
        for (const auto& [name, hash] : ma.at("outputs").items()) {
            CHECK(io::read_file(a / name) == io::read_file(b / name));
        }
    }

    const auto prop = io::Json::parse(io::read_file(a / artifact::kPropagation));
    CHECK(prop.at("windows_labeled") == prop.at("windows_assigned"));
    CHECK(prop.at("events_covered_labeled") == prop.at("events_covered"));
    // Every cluster that received windows has centroid samples, so only empty clusters stay unrated.
    std::set<ClusterId> used;
    for (const auto& x : scan::assignments_from_jsonl(io::read_file(a / artifact::kAssignments))) {
        used.insert(x.cluster);
    }
    CHECK(prop.at("unrated_clusters").get<std::size_t>() == prop.at("clusters").get<std::size_t>() - used.size());

    const auto metrics = io::Json::parse(io::read_file(a / artifact::kMetrics));
    for (const char* method : {"scan", "kmeans"}) {
        const auto& m = metrics.at(method);
        CHECK(m.at("weighted_f1").get<double>() >= 0.0);
        CHECK(m.at("weighted_f1").get<double>() <= 1.0);
        CHECK(m.at("macro_f1_ci").at("lower").get<double>() <= m.at("macro_f1_ci").at("upper").get<double>());
    }
    CHECK(metrics.at("kmeans_seeds").at("seeds") == 2);
    CHECK(metrics.contains("agreement"));
    CHECK(fs::exists(a / artifact::kProjection));

    const auto c = tiny(a);
    sweep_k(c);
    const auto sweep = io::read_file(a / artifact::kSweep);
    CHECK(sweep.rfind("k,macro_f1,ci_low,ci_high\n2,", 0) == 0);
    CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 3);

    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("sweep-k over the default list writes one row per k") {
    const auto dir = scratch("sweep");
    auto c = tiny(dir);
    c.sweep_ks = PipelineConfig{}.sweep_ks;
    c.scan_update_encoder = false;
    synth(c);
    ingest(c);
    pretrain(c);
    build_neighbors(c);
    sweep_k(c);
    const auto text = io::read_file(dir / artifact::kSweep);
    std::vector<std::size_t> ks;
    std::size_t pos = text.find('\n') + 1;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        const auto cells = io::csv_split(std::string_view(text).substr(pos, nl - pos));
        REQUIRE(cells.size() == 4);
        ks.push_back(std::stoul(cells[0]));
        CHECK(std::stod(cells[2]) <= std::stod(cells[3]));
        pos = nl + 1;
    }
    CHECK(ks == std::vector<std::size_t>{10, 15, 20, 30, 40, 50, 60, 100});
    fs::remove_all(dir);
}

TEST_CASE("centroids keeps an existing session and trends reports both label spaces") {
    const auto dir = scratch("trends");
    auto c = tiny(dir);
    run_all(c);
    const auto session_path = dir / artifact::kSessions / "synthetic.json";
    const auto before = io::read_file(session_path);
    const auto rerun = centroids(c);
    CHECK_FALSE(rerun.diagnostics.empty());
    CHECK(io::read_file(session_path) == before);

    CHECK_THROWS_AS(trends(c), ValidationError);
    c.period1_start = "2009-11-01";
    c.period1_end = "2009-11-01";
    c.period2_start = "2009-11-02";
    c.period2_end = "2009-11-03";
    trends(c);
    for (const char* space : {"truth", "discovered"}) {
        const auto csv = io::read_file(dir / fmt::format("trends_{}.csv", space));
        CHECK(csv.rfind("label,count1,share1,count2,share2,delta_pp\n", 0) == 0);
        CHECK(fs::exists(dir / fmt::format("trends_{}.dat", space)));
    }
    const auto discovered = io::Json::parse(io::read_file(dir / "trends_discovered.json"));
    CHECK(discovered.at("space") == "discovered");
    fs::remove_all(dir);
}

TEST_CASE("simulate_ratings fills exactly the open schedule slots") {
    const auto dir = scratch("oracle");
    auto c = tiny(dir);
    synth(c);
    ingest(c);
    pretrain(c);
    build_neighbors(c);
    cluster(c);
    centroids(c);
    auto session = annotate::AnnotationSession::load(dir / artifact::kSessions / "synthetic.json");
    const auto hierarchy = evalmap::LabelHierarchy::load(c.hierarchy_path());
    annotate::record_label(session, session.samples.front().sample_id, "alice", "Cook", hierarchy);
    const auto added = simulate_ratings(session, hierarchy);
    CHECK(added == session.samples.size() * session.raters_per_sample - 1);
    CHECK(session.progress().complete_samples == session.samples.size());
    CHECK(simulate_ratings(session, hierarchy) == 0);
    fs::remove_all(dir);
}
