// pdl: command-line driver for the daily-living pattern pipeline.

#include <cstdio>
#include <functional>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "pdl/io.hpp"
#include "pdl/pipeline.hpp"

namespace {

namespace pipe = pdl::pipeline;

enum ExitCode : int { kOk = 0, kFailure = 1, kMissingArtifact = 2, kInvalid = 3 };

struct CommonOptions {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string dataset;

    pipe::PipelineConfig resolve() const {
        pipe::PipelineConfig config;
        if (!config_file.empty()) {
            config.apply_text(pdl::io::read_file(config_file));
        }
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) {
                throw pdl::ValidationError(fmt::format("--set expects key=value, got '{}'", kv));
            }
            config.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (seed) {
            config.seed = *seed;
        }
        if (!out.empty()) {
            config.out = out;
        }
        if (!dataset.empty()) {
            config.dataset = dataset;
        }
        return config;
    }
};

void add_common(CLI::App* sub, CommonOptions& opts) {
    sub->add_option("--config", opts.config_file, "key=value configuration file");
    sub->add_option("--set", opts.overrides, "override one configuration key (key=value), repeatable");
    sub->add_option("--seed", opts.seed, "master seed");
    sub->add_option("--out", opts.out, "output directory");
    sub->add_option("--dataset", opts.dataset, "raw event log");
}

void report(const pipe::StageResult& result, const pipe::PipelineConfig& config) {
    for (const auto& w : result.diagnostics.warnings) {
        fmt::print(stderr, "warning: {}\n", w);
    }
    for (const auto& o : result.outputs) {
        fmt::print("{}\n", (config.out_dir() / o).string());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Discovers daily-living patterns in smart-home sensor logs."};
    app.require_subcommand(1);
    app.set_version_flag("--version", PDL_VERSION);

    CommonOptions opts;
    std::function<void()> action;
    bool oracle_raters = false;
    pipe::ServeOptions serve_options;
    bool print_config = false;

    using Stage = pipe::StageResult (*)(const pipe::PipelineConfig&);
    const std::vector<std::tuple<const char*, const char*, Stage>> stages{
        {"ingest", "parse the log, build vocabulary, windows, sample and day split", &pipe::ingest},
        {"pretrain", "masked-token pre-training and embeddings", &pipe::pretrain},
        {"neighbors", "exact cosine neighbor graph", &pipe::build_neighbors},
        {"cluster", "SCAN fine-tuning and cluster assignments", &pipe::cluster},
        {"kmeans", "k-means baseline on the pre-trained embeddings", &pipe::run_kmeans},
        {"centroids", "select high-confidence samples and create the annotation session", &pipe::centroids},
        {"evaluate", "F1 with bootstrap intervals, matched accuracy and agreement", &pipe::evaluate},
        {"sweep-k", "macro F1 for each k in sweep_ks", &pipe::sweep_k},
        {"trends", "compare label distributions between two periods", &pipe::trends},
        {"synth", "write the planted-motif synthetic household", &pipe::synth},
    };
    for (const auto& [name, help, fn] : stages) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub, opts);
        sub->add_flag("--print-config", print_config, "print the resolved configuration and exit");
        sub->callback([&, fn = fn] {
            action = [&, fn] {
                const auto config = opts.resolve();
                if (print_config) {
                    fmt::print("{}", config.to_text());
                    return;
                }
                report(fn(config), config);
            };
        });
    }

    auto* propagate = app.add_subcommand("propagate", "map clusters to rated labels and re-annotate the events");
    add_common(propagate, opts);
    propagate->add_flag("--oracle-raters", oracle_raters, "fill missing ratings from the samples' truth labels");
    propagate->callback([&] {
        action = [&] {
            const auto config = opts.resolve();
            report(pipe::propagate(config, oracle_raters), config);
        };
    });

    auto* serve = app.add_subcommand("serve", "HTTP annotation service");
    add_common(serve, opts);
    serve->add_option("--host", serve_options.host, "bind address");
    serve->add_option("--port", serve_options.port, "port; 0 picks a free one");
    serve->callback([&] { action = [&] { pipe::serve(opts.resolve(), serve_options); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        action();
        return kOk;
    } catch (const pipe::MissingArtifact& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kMissingArtifact;
    } catch (const pdl::ValidationError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kInvalid;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kFailure;
    }
}
