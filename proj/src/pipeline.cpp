#include "pdl/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <csignal>
#include <thread>
#include <fstream>
#include <functional>
#include <map>
#include <set>

#include <fmt/format.h>

#include "pdl/corpus.hpp"
#include "pdl/io.hpp"
#include "pdl/neighbors.hpp"
#include "pdl/serve.hpp"
#include "pdl/synth.hpp"
#include "pdl/trends.hpp"

#ifndef PDL_DATA_DIR
#define PDL_DATA_DIR "data"
#endif
#ifndef PDL_VERSION
#define PDL_VERSION "0.0.0"
#endif

namespace pdl::pipeline {

namespace fs = std::filesystem;
using io::Json;

MissingArtifact::MissingArtifact(fs::path path)
    : NotFoundError(fmt::format("missing artifact: {}", path.string())), path_(std::move(path)) {}

// ------------------------------------------------------------------ config

namespace {

enum Stream : std::uint64_t {
    kSampleStream = 1,
    kSplitStream,
    kEncoderStream,
    kScanStream,
    kKmeansStream,
    kSessionStream,
    kBootstrapStream,
};

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    T value{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw ValidationError(fmt::format("config key '{}': '{}' is not a valid number", key, text));
    }
    return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") {
        return true;
    }
    if (text == "false" || text == "0" || text == "no" || text == "off") {
        return false;
    }
    throw ValidationError(fmt::format("config key '{}': '{}' is not a boolean", key, text));
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
        s.remove_suffix(1);
    }
    return s;
}

struct Field {
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, std::string_view key, std::string_view)> set;
};

template <class T>
Field field(T PipelineConfig::*member) {
    Field f;
    f.get = [member](const PipelineConfig& c) {
        const auto& v = c.*member;
        if constexpr (std::is_same_v<T, std::string>) {
            return v;
        } else if constexpr (std::is_same_v<T, bool>) {
            return std::string(v ? "true" : "false");
        } else if constexpr (std::is_same_v<T, double>) {
            return io::format_double(v);
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            return fmt::format("{}", fmt::join(v, ","));
        } else {
            return std::to_string(v);
        }
    };
    f.set = [member](PipelineConfig& c, std::string_view key, std::string_view text) {
        auto& v = c.*member;
        if constexpr (std::is_same_v<T, std::string>) {
            v = std::string(text);
        } else if constexpr (std::is_same_v<T, bool>) {
            v = parse_bool(key, text);
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            std::vector<std::size_t> out;
            std::size_t pos = 0;
            while (pos <= text.size()) {
                const auto comma = text.find(',', pos);
                const auto end = comma == std::string_view::npos ? text.size() : comma;
                out.push_back(parse_number<std::size_t>(key, trim(text.substr(pos, end - pos))));
                pos = end + 1;
            }
            v = std::move(out);
        } else {
            v = parse_number<T>(key, text);
        }
    };
    return f;
}

const std::map<std::string, Field, std::less<>>& fields() {
    static const std::map<std::string, Field, std::less<>> table{
        {"dataset", field(&PipelineConfig::dataset)},
        {"dataset_name", field(&PipelineConfig::dataset_name)},
        {"label_map", field(&PipelineConfig::label_map)},
        {"window_length", field(&PipelineConfig::window_length)},
        {"stride", field(&PipelineConfig::stride)},
        {"sample_fraction", field(&PipelineConfig::sample_fraction)},
        {"train_ratio", field(&PipelineConfig::train_ratio)},
        {"temperature_bin_width", field(&PipelineConfig::temperature_bin_width)},
        {"drop_numeric", field(&PipelineConfig::drop_numeric)},
        {"seed", field(&PipelineConfig::seed)},
        {"out", field(&PipelineConfig::out)},
        {"embed_dim", field(&PipelineConfig::embed_dim)},
        {"num_layers", field(&PipelineConfig::num_layers)},
        {"num_heads", field(&PipelineConfig::num_heads)},
        {"feedforward_dim", field(&PipelineConfig::feedforward_dim)},
        {"mask_fraction", field(&PipelineConfig::mask_fraction)},
        {"pretrain_epochs", field(&PipelineConfig::pretrain_epochs)},
        {"pretrain_batch", field(&PipelineConfig::pretrain_batch)},
        {"pretrain_lr", field(&PipelineConfig::pretrain_lr)},
        {"pretrain_momentum", field(&PipelineConfig::pretrain_momentum)},
        {"pretrain_clip", field(&PipelineConfig::pretrain_clip)},
        {"h", field(&PipelineConfig::h)},
        {"k", field(&PipelineConfig::k)},
        {"lambda", field(&PipelineConfig::lambda)},
        {"scan_epochs", field(&PipelineConfig::scan_epochs)},
        {"scan_batch", field(&PipelineConfig::scan_batch)},
        {"neighbors_per_anchor", field(&PipelineConfig::neighbors_per_anchor)},
        {"scan_lr", field(&PipelineConfig::scan_lr)},
        {"scan_momentum", field(&PipelineConfig::scan_momentum)},
        {"scan_clip", field(&PipelineConfig::scan_clip)},
        {"scan_update_encoder", field(&PipelineConfig::scan_update_encoder)},
        {"kmeans_max_iters", field(&PipelineConfig::kmeans_max_iters)},
        {"threads", field(&PipelineConfig::threads)},
        {"m", field(&PipelineConfig::m)},
        {"raters_per_sample", field(&PipelineConfig::raters_per_sample)},
        {"hierarchy", field(&PipelineConfig::hierarchy)},
        {"layout", field(&PipelineConfig::layout)},
        {"bootstrap_replicates", field(&PipelineConfig::bootstrap_replicates)},
        {"exclude_unlabeled", field(&PipelineConfig::exclude_unlabeled)},
        {"kmeans_comparison_seeds", field(&PipelineConfig::kmeans_comparison_seeds)},
        {"sweep_ks", field(&PipelineConfig::sweep_ks)},
        {"period1_start", field(&PipelineConfig::period1_start)},
        {"period1_end", field(&PipelineConfig::period1_end)},
        {"period2_start", field(&PipelineConfig::period2_start)},
        {"period2_end", field(&PipelineConfig::period2_end)},
        {"synth_days", field(&PipelineConfig::synth_days)},
        {"synth_events_per_day", field(&PipelineConfig::synth_events_per_day)},
        {"synth_noise", field(&PipelineConfig::synth_noise)},
        {"synth_start_day", field(&PipelineConfig::synth_start_day)},
        {"synth_household", field(&PipelineConfig::synth_household)},
    };
    return table;
}

const Field& lookup(std::string_view key) {
    auto it = fields().find(key);
    if (it == fields().end()) {
        throw ValidationError(fmt::format("unknown config key '{}'", key));
    }
    return it->second;
}

}  // namespace

void PipelineConfig::set(std::string_view key, std::string_view value) {
    lookup(key).set(*this, key, trim(value));
}

std::string PipelineConfig::get(std::string_view key) const { return lookup(key).get(*this); }

const std::vector<std::string>& PipelineConfig::keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [name, f] : fields()) {
            out.push_back(name);
        }
        return out;
    }();
    return names;
}

void PipelineConfig::apply_text(std::string_view text) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ValidationError(fmt::format("config line {}: expected key=value", line_no));
        }
        set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

std::string PipelineConfig::to_text() const {
    std::string out;
    for (const auto& [name, f] : fields()) {
        out += fmt::format("{}={}\n", name, f.get(*this));
    }
    return out;
}

void PipelineConfig::validate() const {
    auto require = [](bool ok, std::string_view message) {
        if (!ok) {
            throw ValidationError(std::string(message));
        }
    };
    require(window_length >= 1, "window_length must be at least 1");
    require(stride >= 1, "stride must be at least 1");
    require(sample_fraction > 0.0 && sample_fraction <= 1.0, "sample_fraction must lie in (0, 1]");
    require(train_ratio > 0.0 && train_ratio < 1.0, "train_ratio must lie in (0, 1)");
    require(temperature_bin_width > 0.0, "temperature_bin_width must be positive");
    require(h >= 1, "h must be at least 1");
    require(k >= 2, "k must be at least 2");
    require(lambda >= 0.0, "lambda must be non-negative");
    require(m >= 1, "m must be at least 1");
    require(raters_per_sample >= 1, "raters_per_sample must be at least 1");
    require(bootstrap_replicates >= 100, "bootstrap_replicates must be at least 100");
    require(kmeans_max_iters >= 1, "kmeans_max_iters must be at least 1");
    require(kmeans_comparison_seeds >= 1, "kmeans_comparison_seeds must be at least 1");
    require(!sweep_ks.empty(), "sweep_ks must list at least one k");
    for (auto sk : sweep_ks) {
        require(sk >= 2, "every sweep k must be at least 2");
    }
    encoder_config(8).validate();
    scan_config().validate();
}

encoder::EncoderConfig PipelineConfig::encoder_config(std::size_t vocab_size) const {
    encoder::EncoderConfig c;
    c.vocab_size = vocab_size;
    c.embed_dim = embed_dim;
    c.num_layers = num_layers;
    c.num_heads = num_heads;
    c.feedforward_dim = feedforward_dim;
    c.window_length = window_length;
    c.mask_fraction = mask_fraction;
    c.learning_rate = pretrain_lr;
    c.momentum = pretrain_momentum;
    c.clip_norm = pretrain_clip;
    c.epochs = pretrain_epochs;
    c.batch_size = pretrain_batch;
    c.seed = encoder::mix_seed(seed, kEncoderStream);
    return c;
}

scan::ScanConfig PipelineConfig::scan_config() const {
    scan::ScanConfig c;
    c.k = k;
    c.lambda = lambda;
    c.epochs = scan_epochs;
    c.learning_rate = scan_lr;
    c.momentum = scan_momentum;
    c.clip_norm = scan_clip;
    c.batch_size = scan_batch;
    c.neighbors_per_anchor = neighbors_per_anchor;
    c.update_encoder = scan_update_encoder;
    c.seed = encoder::mix_seed(seed, kScanStream);
    return c;
}

fs::path PipelineConfig::hierarchy_path() const {
    return hierarchy.empty() ? fs::path(PDL_DATA_DIR) / "hierarchy.json" : fs::path(hierarchy);
}

// ------------------------------------------------------------------ stage plumbing

namespace {

/// Holds the output directory lock, tracks inputs and outputs, and writes the stage manifest.
class StageRun {
public:
    StageRun(const PipelineConfig& config, std::string stage)
        : config_(config), dir_(config.out_dir()), lock_(dir_), result_{std::move(stage), {}, {}} {
        config_.validate();
        io::write_file_atomic(dir_ / artifact::kConfig, config_.to_text());
    }

    const fs::path& dir() const { return dir_; }
    Diagnostics& diag() { return result_.diagnostics; }

    /// Path of a required input inside the output directory.
    fs::path input(const std::string& name) { return external_input(dir_ / name, name); }

    fs::path external_input(const fs::path& path, const std::string& name) {
        if (!fs::exists(path)) {
            throw MissingArtifact(path);
        }
        inputs_[name] = path;
        return path;
    }

    bool has(const std::string& name) const { return fs::exists(dir_ / name); }

    void write(const std::string& name, std::string_view contents) {
        fs::create_directories((dir_ / name).parent_path());
        io::write_file_atomic(dir_ / name, contents);
        wrote(name);
    }

    /// Records an output written by another routine.
    void wrote(const std::string& name) {
        if (std::find(result_.outputs.begin(), result_.outputs.end(), name) == result_.outputs.end()) {
            result_.outputs.push_back(name);
        }
    }

    StageResult finish() {
        Json inputs = Json::object();
        for (const auto& [name, path] : inputs_) {
            inputs[name] = io::sha256_file(path);
        }
        Json outputs = Json::object();
        for (const auto& name : result_.outputs) {
            outputs[name] = io::sha256_file(dir_ / name);
        }
        Json cfg = Json::object();
        for (const auto& key : PipelineConfig::keys()) {
            cfg[key] = config_.get(key);
        }
        Json manifest{{"v", 1},
                      {"stage", result_.stage},
                      {"version", PDL_VERSION},
                      {"config", cfg},
                      {"inputs", inputs},
                      {"outputs", outputs}};
        io::write_file_atomic(dir_ / artifact::kManifests / (result_.stage + ".json"), manifest.dump(2) + "\n");
        return std::move(result_);
    }

private:
    const PipelineConfig& config_;
    fs::path dir_;
    io::DirectoryLock lock_;
    StageResult result_;
    std::map<std::string, fs::path> inputs_;
};

std::string resolved_name(const PipelineConfig& config) {
    if (!config.dataset_name.empty() && config.dataset_name != "dataset") {
        return config.dataset_name;
    }
    if (!config.dataset.empty()) {
        return fs::path(config.dataset).stem().string();
    }
    return config.dataset_name.empty() ? "dataset" : config.dataset_name;
}

std::vector<corpus::SensorEvent> load_events(StageRun& run) {
    return corpus::events_from_csv(io::read_file(run.input(artifact::kEvents)));
}

std::vector<corpus::Window> load_windows(StageRun& run) {
    return corpus::windows_from_jsonl(io::read_file(run.input(artifact::kWindows)));
}

std::vector<WindowId> load_sample(StageRun& run) {
    return Json::parse(io::read_file(run.input(artifact::kSample))).at("window_ids").get<std::vector<WindowId>>();
}

corpus::SplitPlan load_split(StageRun& run) {
    const auto j = Json::parse(io::read_file(run.input(artifact::kSplit)));
    corpus::SplitPlan plan;
    for (const auto& d : j.at("train_days")) {
        plan.train_days.insert(corpus::parse_day(d.get<std::string>()));
    }
    for (const auto& d : j.at("test_days")) {
        plan.test_days.insert(corpus::parse_day(d.get<std::string>()));
    }
    plan.seed = j.at("seed").get<std::uint64_t>();
    return plan;
}

std::vector<corpus::Window> select_windows(const std::vector<corpus::Window>& windows,
                                           const std::vector<WindowId>& ids) {
    std::vector<corpus::Window> out;
    out.reserve(ids.size());
    for (auto id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= windows.size() || windows[static_cast<std::size_t>(id)].window_id != id) {
            throw ValidationError(fmt::format("sample references unknown window {}", id));
        }
        out.push_back(windows[static_cast<std::size_t>(id)]);
    }
    return out;
}

std::vector<corpus::Window> train_subset(const std::vector<corpus::Window>& windows, const corpus::SplitPlan& split) {
    std::vector<corpus::Window> out;
    for (const auto& w : windows) {
        if (split.is_train(w.day_key)) {
            out.push_back(w);
        }
    }
    return out;
}

std::vector<encoder::EmbeddingVector> subset_embeddings(const std::vector<encoder::EmbeddingVector>& all,
                                                        const std::set<WindowId>& keep) {
    std::vector<encoder::EmbeddingVector> out;
    for (const auto& e : all) {
        if (keep.contains(e.window_id)) {
            out.push_back(e);
        }
    }
    return out;
}

Matrix to_matrix(const std::vector<encoder::EmbeddingVector>& rows) {
    if (rows.empty()) {
        return {};
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().values.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].values.size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i].values[j];
        }
    }
    return m;
}

std::string day_list_json(const std::set<corpus::Day>& days) {
    Json arr = Json::array();
    for (auto d : days) {
        arr.push_back(corpus::format_day(d));
    }
    return arr.dump();
}

std::size_t assignment_k(const std::vector<scan::ClusterAssignment>& assignments) {
    std::size_t k = 0;
    for (const auto& a : assignments) {
        k = std::max(k, a.probs.size());
    }
    return k;
}

}  // namespace

// ------------------------------------------------------------------ stages

StageResult ingest(const PipelineConfig& config) {
    StageRun run(config, "ingest");
    if (config.dataset.empty()) {
        throw ValidationError("ingest needs a dataset (--dataset or dataset=...)");
    }
    std::ifstream in(run.external_input(config.dataset, "dataset"));
    auto parsed = corpus::parse_event_log(in);
    auto events = std::move(parsed.events);
    for (const auto& w : parsed.report.warnings) {
        run.diag().warn(w);
    }
    if (!config.label_map.empty()) {
        const auto mapping = corpus::LabelMapping::parse(io::read_file(run.external_input(config.label_map, "label_map")));
        events = corpus::apply_label_mapping(std::move(events), mapping);
    }
    if (config.drop_numeric) {
        events = corpus::drop_numeric_events(events);
    }
    if (events.empty()) {
        throw ValidationError(fmt::format("no events parsed from {}", config.dataset));
    }
    const auto vocab = corpus::build_vocabulary(events, config.temperature_bin_width);
    const auto windows = corpus::make_windows(events, vocab, config.window_length, config.stride, &run.diag());
    if (windows.empty()) {
        throw ValidationError(fmt::format("{} events are fewer than the window length {}", events.size(),
                                          config.window_length));
    }
    const auto sample = corpus::sample_windows(windows, config.sample_fraction,
                                               encoder::mix_seed(config.seed, kSampleStream));
    const auto split = corpus::split_by_days(windows, config.train_ratio, encoder::mix_seed(config.seed, kSplitStream));

    std::vector<WindowId> ids;
    for (const auto& w : sample) {
        ids.push_back(w.window_id);
    }
    run.write(artifact::kEvents, corpus::events_to_csv(events));
    run.write(artifact::kVocab, vocab.to_json());
    run.write(artifact::kWindows, corpus::windows_to_jsonl(windows));
    run.write(artifact::kSample, Json{{"v", 1}, {"fraction", config.sample_fraction}, {"window_ids", ids}}.dump() + "\n");
    run.write(artifact::kSplit, fmt::format("{{\"v\":1,\"seed\":{},\"train_days\":{},\"test_days\":{}}}\n", split.seed,
                                            day_list_json(split.train_days), day_list_json(split.test_days)));
    Json skipped = Json::array();
    for (const auto& s : parsed.report.skipped) {
        skipped.push_back({{"line", s.line_number}, {"reason", s.reason}});
    }
    run.write(artifact::kIngestReport, Json{{"v", 1},
                                            {"events", events.size()},
                                            {"skipped_lines", skipped},
                                            {"out_of_order", parsed.report.out_of_order},
                                            {"vocab_size", vocab.size()},
                                            {"windows", windows.size()},
                                            {"sampled", sample.size()},
                                            {"train_days", split.train_days.size()},
                                            {"test_days", split.test_days.size()}}
                                           .dump(2) + "\n");
    return run.finish();
}

StageResult pretrain(const PipelineConfig& config) {
    StageRun run(config, "pretrain");
    const auto vocab = corpus::Vocabulary::from_json(io::read_file(run.input(artifact::kVocab)));
    const auto windows = load_windows(run);
    const auto sampled = select_windows(windows, load_sample(run));
    const auto split = load_split(run);
    const auto train = train_subset(sampled, split);
    if (train.empty()) {
        throw ValidationError("no sampled windows fall on training days");
    }
    auto result = encoder::train_mlm(train, config.encoder_config(vocab.size()));
    result.params.save(run.dir() / artifact::kEncoder);
    run.wrote(artifact::kEncoder);
    run.write(artifact::kPretrainLoss, encoder::loss_trace_csv(result.loss_trace));
    encoder::save_embeddings(run.dir() / artifact::kEmbeddings, encoder::embed_all(result.params, sampled));
    run.wrote(artifact::kEmbeddings);
    return run.finish();
}

StageResult build_neighbors(const PipelineConfig& config) {
    StageRun run(config, "neighbors");
    const auto embeddings = encoder::load_embeddings(run.input(artifact::kEmbeddings));
    const auto windows = load_windows(run);
    const auto split = load_split(run);
    std::set<WindowId> train_ids;
    for (const auto& e : embeddings) {
        if (split.is_train(windows.at(static_cast<std::size_t>(e.window_id)).day_key)) {
            train_ids.insert(e.window_id);
        }
    }
    const auto graph = neighbors::build_knn(subset_embeddings(embeddings, train_ids), config.h, &run.diag(),
                                            static_cast<unsigned>(config.threads));
    run.write(artifact::kNeighbors, graph.to_jsonl());
    return run.finish();
}

namespace {

std::vector<corpus::Window> graph_windows(const neighbors::NeighborGraph& graph,
                                          const std::vector<corpus::Window>& windows) {
    std::vector<WindowId> ids = graph.nodes;
    return select_windows(windows, ids);
}

}  // namespace

StageResult cluster(const PipelineConfig& config) {
    StageRun run(config, "cluster");
    auto params = encoder::EncoderParams::load(run.input(artifact::kEncoder));
    const auto graph = neighbors::NeighborGraph::from_jsonl(io::read_file(run.input(artifact::kNeighbors)));
    const auto windows = load_windows(run);
    auto result = scan::fine_tune_scan(std::move(params), graph, graph_windows(graph, windows), config.scan_config());
    result.params.save(run.dir() / artifact::kScanEncoder);
    run.wrote(artifact::kScanEncoder);
    result.head.save(run.dir() / artifact::kHead);
    run.wrote(artifact::kHead);
    run.write(artifact::kScanLoss, encoder::loss_trace_csv(result.loss_trace));
    run.write(artifact::kAssignments, scan::assignments_to_jsonl(scan::assign_all(result.params, result.head, windows)));
    return run.finish();
}

namespace {

std::vector<scan::ClusterAssignment> one_hot(const std::vector<WindowId>& ids, const std::vector<ClusterId>& clusters,
                                             std::size_t k) {
    std::vector<scan::ClusterAssignment> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::vector<double> probs(k, 0.0);
        probs[static_cast<std::size_t>(clusters[i])] = 1.0;
        out.push_back({ids[i], clusters[i], 1.0, std::move(probs)});
    }
    return out;
}

/// k-means fitted on the training-day embeddings, then every embedding assigned to its nearest centroid.
struct KmeansRun {
    evalmap::KMeansResult fit;
    std::vector<ClusterId> clusters;  // parallel to the full embedding list
};

KmeansRun fit_kmeans(const std::vector<encoder::EmbeddingVector>& embeddings, const std::set<WindowId>& train_ids,
                     std::size_t k, std::uint64_t seed, std::size_t max_iters) {
    KmeansRun out;
    out.fit = evalmap::kmeans(subset_embeddings(embeddings, train_ids), k, seed, max_iters);
    out.clusters = evalmap::nearest_centroids(to_matrix(embeddings), out.fit.centroids);
    return out;
}

std::set<WindowId> train_ids_of(const std::vector<encoder::EmbeddingVector>& embeddings,
                                const std::vector<corpus::Window>& windows, const corpus::SplitPlan& split) {
    std::set<WindowId> ids;
    for (const auto& e : embeddings) {
        if (split.is_train(windows.at(static_cast<std::size_t>(e.window_id)).day_key)) {
            ids.insert(e.window_id);
        }
    }
    return ids;
}

}  // namespace

StageResult run_kmeans(const PipelineConfig& config) {
    StageRun run(config, "kmeans");
    const auto embeddings = encoder::load_embeddings(run.input(artifact::kEmbeddings));
    const auto windows = load_windows(run);
    const auto split = load_split(run);
    const auto km = fit_kmeans(embeddings, train_ids_of(embeddings, windows, split), config.k,
                               encoder::mix_seed(config.seed, kKmeansStream), config.kmeans_max_iters);
    std::vector<WindowId> ids;
    for (const auto& e : embeddings) {
        ids.push_back(e.window_id);
    }
    Json centroids = Json::array();
    for (Eigen::Index r = 0; r < km.fit.centroids.rows(); ++r) {
        std::vector<double> row(km.fit.centroids.row(r).begin(), km.fit.centroids.row(r).end());
        centroids.push_back(row);
    }
    run.write(artifact::kKmeans, Json{{"v", 1},
                                      {"k", config.k},
                                      {"iterations", km.fit.iterations},
                                      {"converged", km.fit.converged},
                                      {"inertia", km.fit.inertia},
                                      {"centroids", centroids}}
                                     .dump() + "\n");
    run.write(artifact::kKmeansAssignments, scan::assignments_to_jsonl(one_hot(ids, km.clusters, config.k)));
    return run.finish();
}

StageResult centroids(const PipelineConfig& config) {
    StageRun run(config, "centroids");
    const auto assignments = scan::assignments_from_jsonl(io::read_file(run.input(artifact::kAssignments)));
    const auto windows = load_windows(run);
    const auto events = load_events(run);
    auto samples = annotate::select_centroids(assignments, config.m, &run.diag());
    annotate::attach_events(samples, windows, events);

    std::string csv = "sample_id,cluster,window_id,confidence,start_event,end_event\n";
    for (const auto& s : samples) {
        const auto& w = windows.at(static_cast<std::size_t>(s.window_id));
        csv += fmt::format("{},{},{},{},{},{}\n", s.sample_id, s.cluster, s.window_id, io::format_double(s.confidence),
                           w.start_event_index, w.end_event_index);
    }
    run.write(artifact::kCentroids, csv);

    const auto name = resolved_name(config);
    const auto session_file = fs::path(artifact::kSessions) / (name + ".json");
    if (run.has(session_file.string())) {
        run.diag().warn(fmt::format("session {} exists and was kept; delete it to schedule the new centroids",
                                    (run.dir() / session_file).string()));
        return run.finish();
    }
    const auto session = annotate::create_session(std::move(samples), config.raters_per_sample,
                                                  encoder::mix_seed(config.seed, kSessionStream), name, name);
    run.write(session_file.string(), session.to_json());
    return run.finish();
}

std::size_t simulate_ratings(annotate::AnnotationSession& session, const evalmap::LabelHierarchy& hierarchy) {
    std::size_t added = 0;
    for (const auto& sample : session.samples) {
        std::map<std::string, std::size_t> votes;
        for (const auto& e : sample.events) {
            ++votes[e.label_or_no_label()];
        }
        std::string label = kOtherLabel;
        std::size_t best = 0;
        for (const auto& [l, n] : votes) {
            if (n > best) {
                best = n;
                label = l;
            }
        }
        if (!hierarchy.contains(label)) {
            label = kOtherLabel;
        }
        for (std::size_t r = 1; r <= session.raters_per_sample; ++r) {
            const auto rater = fmt::format("oracle-{}", r);
            if (session.ratings_for(sample.sample_id).size() >= session.raters_per_sample) {
                break;
            }
            if (!session.label_by(sample.sample_id, rater)) {
                annotate::record_label(session, sample.sample_id, rater, label, hierarchy);
                ++added;
            }
        }
    }
    return added;
}

StageResult propagate(const PipelineConfig& config, bool oracle_raters) {
    StageRun run(config, "propagate");
    const auto hierarchy = evalmap::LabelHierarchy::load(run.external_input(config.hierarchy_path(), "hierarchy"));
    const auto session_name = (fs::path(artifact::kSessions) / (resolved_name(config) + ".json")).string();
    auto session = annotate::AnnotationSession::load(run.input(session_name));
    const auto assignments = scan::assignments_from_jsonl(io::read_file(run.input(artifact::kAssignments)));
    const auto windows = load_windows(run);
    const auto events = load_events(run);

    if (oracle_raters) {
        const auto added = simulate_ratings(session, hierarchy);
        run.write(session_name, session.to_json());
        run.diag().warn(fmt::format("{} ratings filled from truth labels", added));
    }
    const auto k = assignment_k(assignments);
    std::vector<ClusterId> clusters;
    for (std::size_t c = 0; c < k; ++c) {
        clusters.push_back(static_cast<ClusterId>(c));
    }
    const auto map = annotate::cluster_majority_labels(session, hierarchy, clusters, &run.diag());
    const auto labels = annotate::propagate(map, assignments);
    const auto per_event = annotate::reannotate_events(labels, windows, events.size());

    std::vector<bool> covered(events.size(), false);
    std::set<WindowId> assigned;
    for (const auto& a : assignments) {
        assigned.insert(a.window_id);
    }
    for (const auto& w : windows) {
        if (assigned.contains(w.window_id)) {
            for (auto i = w.start_event_index; i <= w.end_event_index; ++i) {
                covered[i] = true;
            }
        }
    }
    std::size_t n_covered = 0, n_labeled_covered = 0, unrated = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (covered[i]) {
            ++n_covered;
            n_labeled_covered += per_event[i] != kNoLabel ? 1 : 0;
        }
    }
    for (const auto& [c, l] : map.clusters) {
        unrated += l.total == 0 ? 1 : 0;
    }
    run.write(artifact::kClusterLabels, map.to_json());
    run.write(artifact::kClusterLabelsCsv, map.to_csv());
    run.write(artifact::kWindowLabels, annotate::window_labels_to_csv(labels));
    run.write(artifact::kLabeledEvents, annotate::export_labeled_events(events, per_event));
    run.write(artifact::kPropagation, Json{{"v", 1},
                                          {"windows_assigned", assignments.size()},
                                          {"windows_labeled", labels.size()},
                                          {"events", events.size()},
                                          {"events_covered", n_covered},
                                          {"events_covered_labeled", n_labeled_covered},
                                          {"clusters", k},
                                          {"unrated_clusters", unrated}}
                                         .dump(2) + "\n");
    return run.finish();
}

// ------------------------------------------------------------------ evaluation

namespace {

struct Labeled {
    std::vector<corpus::Window> windows;  // evaluated sampled windows
    std::vector<std::string> truth;
    std::vector<bool> is_train;
};

Labeled labeled_sample(const std::vector<corpus::Window>& sampled, const std::vector<corpus::SensorEvent>& events,
                       const corpus::SplitPlan& split, bool exclude_unlabeled) {
    Labeled out;
    for (const auto& w : sampled) {
        auto label = corpus::window_truth_label(w, events);
        if (exclude_unlabeled && (label == kNoLabel || label == kOtherLabel)) {
            continue;
        }
        out.windows.push_back(w);
        out.truth.push_back(std::move(label));
        out.is_train.push_back(split.is_train(w.day_key));
    }
    return out;
}

struct MethodScore {
    double weighted = 0.0;
    double macro = 0.0;
    evalmap::BootstrapInterval weighted_ci;
    evalmap::BootstrapInterval macro_ci;
    double matched_accuracy = 0.0;
    std::size_t test_windows = 0;
};

std::vector<int> class_ids(const std::vector<std::string>& labels) {
    std::map<std::string, int> ids;
    std::vector<int> out;
    for (const auto& l : labels) {
        out.push_back(ids.emplace(l, static_cast<int>(ids.size())).first->second);
    }
    return out;
}

double matched_accuracy_of(const std::vector<ClusterId>& clusters, const std::vector<std::string>& truth) {
    return evalmap::matched_accuracy(std::vector<int>(clusters.begin(), clusters.end()), class_ids(truth));
}

/// Test-day predictions grouped by day for bootstrap resampling.
struct DayGroups {
    std::map<corpus::Day, std::vector<std::size_t>> rows;
    std::vector<corpus::Day> days;
};

MethodScore score_method(const Labeled& data, const std::vector<ClusterId>& clusters, std::size_t k,
                         const PipelineConfig& config, Diagnostics* diag) {
    std::vector<ClusterId> train_clusters;
    std::vector<std::string> train_truth;
    std::vector<ClusterId> test_clusters;
    std::vector<std::string> test_truth;
    DayGroups groups;
    for (std::size_t i = 0; i < data.windows.size(); ++i) {
        if (data.is_train[i]) {
            train_clusters.push_back(clusters[i]);
            train_truth.push_back(data.truth[i]);
        } else {
            groups.rows[data.windows[i].day_key].push_back(test_clusters.size());
            test_clusters.push_back(clusters[i]);
            test_truth.push_back(data.truth[i]);
        }
    }
    if (train_clusters.empty() || test_clusters.empty()) {
        throw ValidationError("evaluation needs sampled windows on both training and test days");
    }
    const auto mapping = evalmap::majority_vote_mapping(train_clusters, train_truth, k);
    const auto predicted = evalmap::apply_mapping(mapping, test_clusters);
    for (const auto& [day, rows] : groups.rows) {
        groups.days.push_back(day);
    }

    auto day_metric = [&](evalmap::F1Mode mode) {
        return [&, mode](const std::vector<corpus::Day>& days) {
            std::vector<std::string> p, t;
            for (auto d : days) {
                for (auto r : groups.rows.at(d)) {
                    p.push_back(predicted[r]);
                    t.push_back(test_truth[r]);
                }
            }
            return evalmap::f1_score(p, t, mode);
        };
    };
    MethodScore s;
    s.test_windows = test_clusters.size();
    s.weighted = evalmap::f1_score(predicted, test_truth, evalmap::F1Mode::Weighted);
    s.macro = evalmap::f1_score(predicted, test_truth, evalmap::F1Mode::Macro);
    const auto boot_seed = encoder::mix_seed(config.seed, kBootstrapStream);
    s.weighted_ci = evalmap::bootstrap_ci(day_metric(evalmap::F1Mode::Weighted), groups.days,
                                          config.bootstrap_replicates, boot_seed, diag);
    s.macro_ci = evalmap::bootstrap_ci(day_metric(evalmap::F1Mode::Macro), groups.days, config.bootstrap_replicates,
                                       boot_seed, diag);
    s.matched_accuracy = matched_accuracy_of(clusters, data.truth);
    return s;
}

Json interval_json(const evalmap::BootstrapInterval& ci) {
    return {{"point", ci.point}, {"mean", ci.mean}, {"lower", ci.lower}, {"upper", ci.upper}, {"replicates", ci.replicates}};
}

Json score_json(const MethodScore& s) {
    return {{"weighted_f1", s.weighted},
            {"macro_f1", s.macro},
            {"weighted_f1_ci", interval_json(s.weighted_ci)},
            {"macro_f1_ci", interval_json(s.macro_ci)},
            {"matched_accuracy", s.matched_accuracy},
            {"test_windows", s.test_windows}};
}

void score_rows(std::string& csv, const std::string& method, const MethodScore& s) {
    auto row = [&](const char* metric, double v) { csv += fmt::format("{},{},{}\n", method, metric, io::format_double(v)); };
    row("weighted_f1", s.weighted);
    row("weighted_f1_ci_low", s.weighted_ci.lower);
    row("weighted_f1_ci_high", s.weighted_ci.upper);
    row("macro_f1", s.macro);
    row("macro_f1_ci_low", s.macro_ci.lower);
    row("macro_f1_ci_high", s.macro_ci.upper);
    row("matched_accuracy", s.matched_accuracy);
}

std::vector<ClusterId> clusters_for(const std::vector<corpus::Window>& windows,
                                    const std::vector<scan::ClusterAssignment>& assignments) {
    std::map<WindowId, ClusterId> by_id;
    for (const auto& a : assignments) {
        by_id[a.window_id] = a.cluster;
    }
    std::vector<ClusterId> out;
    for (const auto& w : windows) {
        auto it = by_id.find(w.window_id);
        if (it == by_id.end()) {
            throw ValidationError(fmt::format("window {} has no cluster assignment", w.window_id));
        }
        out.push_back(it->second);
    }
    return out;
}

}  // namespace

StageResult evaluate(const PipelineConfig& config) {
    StageRun run(config, "evaluate");
    const auto windows = load_windows(run);
    const auto events = load_events(run);
    const auto sampled = select_windows(windows, load_sample(run));
    const auto split = load_split(run);
    const auto assignments = scan::assignments_from_jsonl(io::read_file(run.input(artifact::kAssignments)));
    const auto data = labeled_sample(sampled, events, split, config.exclude_unlabeled);
    if (data.windows.empty()) {
        throw ValidationError("no windows left to evaluate");
    }
    const auto k = assignment_k(assignments);
    const auto scan_clusters = clusters_for(data.windows, assignments);
    const auto scan_score = score_method(data, scan_clusters, k, config, &run.diag());

    Json metrics{{"v", 1},
                 {"windows", {{"evaluated", data.windows.size()},
                              {"train", std::count(data.is_train.begin(), data.is_train.end(), true)},
                              {"test", std::count(data.is_train.begin(), data.is_train.end(), false)},
                              {"test_days", split.test_days.size()}}},
                 {"k", k},
                 {"scan", score_json(scan_score)}};
    std::string csv = "method,metric,value\n";
    score_rows(csv, "scan", scan_score);

    std::vector<ClusterId> kmeans_clusters;
    if (run.has(artifact::kKmeansAssignments)) {
        const auto km = scan::assignments_from_jsonl(io::read_file(run.input(artifact::kKmeansAssignments)));
        kmeans_clusters = clusters_for(data.windows, km);
        const auto km_score = score_method(data, kmeans_clusters, assignment_k(km), config, &run.diag());
        metrics["kmeans"] = score_json(km_score);
        score_rows(csv, "kmeans", km_score);
    }

    if (run.has(artifact::kEmbeddings)) {
        // Expected k-means accuracy over several seedings on the same pre-trained embeddings.
        const auto embeddings = encoder::load_embeddings(run.input(artifact::kEmbeddings));
        const auto train_ids = train_ids_of(embeddings, windows, split);
        std::map<WindowId, std::size_t> row_of;
        for (std::size_t i = 0; i < embeddings.size(); ++i) {
            row_of[embeddings[i].window_id] = i;
        }
        std::vector<double> accuracies;
        for (std::size_t s = 0; s < config.kmeans_comparison_seeds; ++s) {
            const auto km = fit_kmeans(embeddings, train_ids, k, encoder::mix_seed(config.seed, kKmeansStream, s),
                                       config.kmeans_max_iters);
            std::vector<ClusterId> clusters;
            for (const auto& w : data.windows) {
                clusters.push_back(km.clusters.at(row_of.at(w.window_id)));
            }
            accuracies.push_back(matched_accuracy_of(clusters, data.truth));
        }
        double mean = 0.0;
        for (double a : accuracies) {
            mean += a;
        }
        mean /= static_cast<double>(accuracies.size());
        metrics["kmeans_seeds"] = {{"seeds", accuracies.size()},
                                   {"matched_accuracy", accuracies},
                                   {"matched_accuracy_mean", mean},
                                   {"matched_accuracy_min", *std::min_element(accuracies.begin(), accuracies.end())},
                                   {"matched_accuracy_max", *std::max_element(accuracies.begin(), accuracies.end())}};
        csv += fmt::format("kmeans_seeds,matched_accuracy_mean,{}\n", io::format_double(mean));

        std::string tsv = "window_id\tday\ttruth_label\tscan_cluster\tkmeans_cluster";
        const auto dim = embeddings.empty() ? 0 : embeddings.front().values.size();
        for (std::size_t d = 0; d < dim; ++d) {
            tsv += fmt::format("\te{}", d);
        }
        tsv += "\n";
        for (std::size_t i = 0; i < data.windows.size(); ++i) {
            const auto& w = data.windows[i];
            tsv += fmt::format("{}\t{}\t{}\t{}\t{}", w.window_id, corpus::format_day(w.day_key), data.truth[i],
                               scan_clusters[i], kmeans_clusters.empty() ? std::string() : std::to_string(kmeans_clusters[i]));
            for (double v : embeddings[row_of.at(w.window_id)].values) {
                tsv += "\t" + io::format_double(v);
            }
            tsv += "\n";
        }
        run.write(artifact::kProjection, tsv);
    }

    // Per-cluster truth vote summary over every evaluated window.
    run.write(artifact::kClusterVotes, evalmap::majority_vote_mapping(scan_clusters, data.truth, k).to_csv());

    const auto session_name = (fs::path(artifact::kSessions) / (resolved_name(config) + ".json")).string();
    if (run.has(session_name)) {
        const auto session = annotate::AnnotationSession::load(run.input(session_name));
        if (!session.submissions.empty()) {
            const auto hierarchy = evalmap::LabelHierarchy::load(run.external_input(config.hierarchy_path(), "hierarchy"));
            const auto raw = annotate::session_agreement(session, hierarchy, false, &run.diag());
            const auto up = annotate::session_agreement(session, hierarchy, true, &run.diag());
            auto agreement = [](const annotate::Agreement& a) {
                return Json{{"cohen", a.cohen}, {"pairs", a.pairs}, {"fleiss", a.fleiss}, {"clusters", a.clusters}};
            };
            metrics["agreement"] = {{"raw", agreement(raw)}, {"level_up", agreement(up)}};
            csv += fmt::format("agreement,cohen,{}\nagreement,fleiss,{}\nagreement,cohen_level_up,{}\nagreement,fleiss_level_up,{}\n",
                               io::format_double(raw.cohen), io::format_double(raw.fleiss), io::format_double(up.cohen),
                               io::format_double(up.fleiss));
        }
    }
    run.write(artifact::kMetrics, metrics.dump(2) + "\n");
    run.write(artifact::kMetricsCsv, csv);
    return run.finish();
}

StageResult sweep_k(const PipelineConfig& config) {
    StageRun run(config, "sweep-k");
    const auto params = encoder::EncoderParams::load(run.input(artifact::kEncoder));
    const auto graph = neighbors::NeighborGraph::from_jsonl(io::read_file(run.input(artifact::kNeighbors)));
    const auto windows = load_windows(run);
    const auto events = load_events(run);
    const auto sampled = select_windows(windows, load_sample(run));
    const auto split = load_split(run);
    const auto data = labeled_sample(sampled, events, split, config.exclude_unlabeled);
    const auto anchors = graph_windows(graph, windows);

    std::string csv = "k,macro_f1,ci_low,ci_high\n";
    for (auto k : config.sweep_ks) {
        auto sc = config.scan_config();
        sc.k = k;
        const auto result = scan::fine_tune_scan(params, graph, anchors, sc);
        const auto assignments = scan::assign_all(result.params, result.head, data.windows);
        const auto score = score_method(data, clusters_for(data.windows, assignments), k, config, &run.diag());
        csv += fmt::format("{},{},{},{}\n", k, io::format_double(score.macro), io::format_double(score.macro_ci.lower),
                           io::format_double(score.macro_ci.upper));
    }
    run.write(artifact::kSweep, csv);
    return run.finish();
}

StageResult trends(const PipelineConfig& config) {
    StageRun run(config, "trends");
    for (const char* key : {"period1_start", "period1_end", "period2_start", "period2_end"}) {
        if (config.get(key).empty()) {
            throw ValidationError(fmt::format("trends needs {} (YYYY-MM-DD)", key));
        }
    }
    const auto windows = load_windows(run);
    const auto events = load_events(run);
    const auto p1s = corpus::parse_day(config.period1_start), p1e = corpus::parse_day(config.period1_end);
    const auto p2s = corpus::parse_day(config.period2_start), p2e = corpus::parse_day(config.period2_end);

    auto report = [&](const std::vector<trends::DatedLabel>& labeled, const std::string& space) {
        const auto d1 = trends::period_distribution(labeled, p1s, p1e);
        const auto d2 = trends::period_distribution(labeled, p2s, p2e);
        const auto delta = trends::compare_periods(d1, d2);
        run.write(fmt::format("trends_{}.csv", space), trends::report_csv(d1, d2, delta));
        run.write(fmt::format("trends_{}.json", space), trends::report_json(d1, d2, delta, space).dump(2) + "\n");
        run.write(fmt::format("trends_{}.dat", space), trends::plot_data(delta));
    };
    report(trends::truth_labels(windows, events), "truth");

    std::map<WindowId, std::string> discovered;
    if (run.has(artifact::kWindowLabels)) {
        const auto text = io::read_file(run.input(artifact::kWindowLabels));
        std::size_t pos = text.find('\n') + 1;  // header
        while (pos < text.size()) {
            const auto nl = text.find('\n', pos);
            const auto cells = io::csv_split(std::string_view(text).substr(pos, nl - pos));
            pos = nl == std::string::npos ? text.size() : nl + 1;
            if (cells.size() >= 4) {
                // Discovered labels carry their cluster so distinct clusters with one name stay apart.
                discovered[std::stoll(cells[0])] = fmt::format("CL{} {}", cells[1], cells[3]);
            }
        }
    } else {
        for (const auto& a : scan::assignments_from_jsonl(io::read_file(run.input(artifact::kAssignments)))) {
            discovered[a.window_id] = fmt::format("CL{}", a.cluster);
        }
    }
    report(trends::date_labels(windows, discovered), "discovered");
    return run.finish();
}

StageResult synth(const PipelineConfig& config) {
    StageRun run(config, "synth");
    synth::SynthConfig sc;
    if (!config.synth_household.empty()) {
        sc.household = synth::HouseholdSpec::from_json(
            Json::parse(io::read_file(run.external_input(config.synth_household, "synth_household"))));
    }
    if (config.dataset_name != "dataset" && !config.dataset_name.empty()) {
        sc.household.name = config.dataset_name;
    }
    sc.days = config.synth_days;
    sc.events_per_day = config.synth_events_per_day;
    sc.noise = config.synth_noise;
    sc.start_day = config.synth_start_day;
    sc.seed = config.seed;
    const auto events = synth::generate(sc);
    run.write(artifact::kSynthLog, corpus::serialize_event_log(events));
    run.write(artifact::kSynthLayout, synth::make_layout(sc.household).to_json().dump(2) + "\n");
    run.write(artifact::kSynthHousehold, sc.household.to_json().dump(2) + "\n");
    return run.finish();
}

void serve(const PipelineConfig& config, const ServeOptions& options) {
    config.validate();
    const fs::path dir = config.out_dir();
    io::DirectoryLock lock(dir);
    const auto hierarchy_path = config.hierarchy_path();
    if (!fs::exists(hierarchy_path)) {
        throw MissingArtifact(hierarchy_path);
    }
    serve::Service service(evalmap::LabelHierarchy::load(hierarchy_path), dir / artifact::kSessions);
    std::vector<fs::path> layouts;
    const fs::path bundled = fs::path(PDL_DATA_DIR) / "layouts";
    if (fs::is_directory(bundled)) {
        for (const auto& entry : fs::directory_iterator(bundled)) {
            layouts.push_back(entry.path());
        }
        std::sort(layouts.begin(), layouts.end());
    }
    if (fs::exists(dir / artifact::kSynthLayout)) {
        layouts.push_back(dir / artifact::kSynthLayout);
    }
    if (!config.layout.empty()) {
        if (!fs::exists(config.layout)) {
            throw MissingArtifact(config.layout);
        }
        layouts.push_back(config.layout);
    }
    for (const auto& path : layouts) {
        service.add_layout(serve::HouseLayout::load(path));
    }
    const auto loaded = service.load_sessions();
    if (loaded == 0) {
        throw MissingArtifact(dir / artifact::kSessions / (resolved_name(config) + ".json"));
    }
    const auto name = resolved_name(config);
    if (fs::exists(dir / artifact::kAssignments) && fs::exists(dir / artifact::kWindows) &&
        fs::exists(dir / artifact::kEvents)) {
        serve::ExportContext context;
        context.events = corpus::events_from_csv(io::read_file(dir / artifact::kEvents));
        context.windows = corpus::windows_from_jsonl(io::read_file(dir / artifact::kWindows));
        context.assignments = scan::assignments_from_jsonl(io::read_file(dir / artifact::kAssignments));
        for (std::size_t c = 0; c < assignment_k(context.assignments); ++c) {
            context.clusters.push_back(static_cast<ClusterId>(c));
        }
        try {
            service.set_export_context(name, std::move(context));
        } catch (const NotFoundError&) {
            // Sessions for other datasets still serve; only export is unavailable.
        }
    }
    // SIGINT/SIGTERM stop the server normally so the directory lock is released. The signals are blocked
    // before any server thread exists and collected by one waiting thread.
    sigset_t stop_signals, previous;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, &previous);
    serve::HttpServer server(service);
    std::atomic<bool> finished{false};
    std::thread waiter([&] {
        const timespec tick{0, 200'000'000};
        while (!finished.load()) {
            if (sigtimedwait(&stop_signals, nullptr, &tick) > 0) {
                server.stop();
                return;
            }
        }
    });
    try {
        const int port = server.bind(options.host, options.port);
        fmt::print("serving {} session(s) on http://{}:{}\n", loaded, options.host, port);
        std::fflush(stdout);
        server.listen();
    } catch (...) {
        finished = true;
        waiter.join();
        pthread_sigmask(SIG_SETMASK, &previous, nullptr);
        throw;
    }
    finished = true;
    waiter.join();
    pthread_sigmask(SIG_SETMASK, &previous, nullptr);
}

}  // namespace pdl::pipeline
