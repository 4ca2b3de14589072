#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pdl/corpus.hpp"
#include "pdl/evalmap.hpp"
#include "pdl/io.hpp"
#include "pdl/neighbors.hpp"
#include "pdl/pipeline.hpp"
#include "pdl/synth.hpp"

namespace py = pybind11;
using namespace pdl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<encoder::EmbeddingVector> rows_of(const Array& points, std::optional<std::vector<WindowId>> ids) {
    if (points.ndim() != 2) {
        throw ValidationError("expected a 2-d array of embeddings");
    }
    const auto n = static_cast<std::size_t>(points.shape(0));
    const auto dim = static_cast<std::size_t>(points.shape(1));
    if (ids && ids->size() != n) {
        throw ValidationError("ids and embedding rows differ in length");
    }
    auto view = points.unchecked<2>();
    std::vector<encoder::EmbeddingVector> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].window_id = ids ? (*ids)[i] : static_cast<WindowId>(i);
        out[i].values.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            out[i].values[d] = view(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(d));
        }
    }
    return out;
}

py::dict event_dict(const corpus::SensorEvent& e) {
    py::dict d;
    d["timestamp"] = corpus::format_timestamp(e.timestamp);
    d["sensor_id"] = e.sensor_id;
    d["value"] = e.value;
    d["truth_label"] = e.label_or_no_label();
    return d;
}

pipeline::PipelineConfig config_from(const py::dict& settings) {
    pipeline::PipelineConfig c;
    for (const auto& [key, value] : settings) {
        c.set(py::str(key).cast<std::string>(), py::str(value).cast<std::string>());
    }
    return c;
}

py::dict stage_dict(const pipeline::StageResult& r) {
    py::dict d;
    d["stage"] = r.stage;
    d["outputs"] = r.outputs;
    d["warnings"] = r.diagnostics.warnings;
    return d;
}

}  // namespace

PYBIND11_MODULE(_pdl, m) {
    m.doc() = "Daily-living pattern discovery core";
    m.attr("__version__") = PDL_VERSION;

    // Translators run newest first, so the derived MissingArtifact goes last.
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_LookupError);
    py::register_exception<pipeline::MissingArtifact>(m, "MissingArtifact", PyExc_FileNotFoundError);

    m.def(
        "parse_event_log",
        [](const std::string& text) {
            auto r = corpus::parse_event_log_text(text);
            py::list events;
            for (const auto& e : r.events) {
                events.append(event_dict(e));
            }
            py::list skipped;
            for (const auto& s : r.report.skipped) {
                skipped.append(py::make_tuple(s.line_number, s.reason));
            }
            py::dict out;
            out["events"] = events;
            out["skipped"] = skipped;
            out["out_of_order"] = r.report.out_of_order;
            out["warnings"] = r.report.warnings;
            return out;
        },
        py::arg("text"), "Parses a CASAS-style log into event dicts plus a report.");
    m.def("window_count", &corpus::window_count, py::arg("n_events"), py::arg("length"), py::arg("stride") = 1);
    m.def("make_token", &corpus::make_token, py::arg("sensor_id"), py::arg("value"), py::arg("bin_width") = 1.0);
    m.def(
        "synthesize",
        [](std::size_t days, std::size_t events_per_day, double noise, std::uint64_t seed) {
            synth::SynthConfig c;
            c.days = days;
            c.events_per_day = events_per_day;
            c.noise = noise;
            c.seed = seed;
            return corpus::serialize_event_log(synth::generate(c));
        },
        py::arg("days") = 10, py::arg("events_per_day") = 450, py::arg("noise") = 0.05, py::arg("seed") = 0,
        "Raw log text for the planted-motif household.");

    m.def("cosine_similarity", [](std::vector<double> a, std::vector<double> b) {
        return neighbors::cosine_similarity(a, b);
    });
    m.def(
        "build_knn",
        [](const Array& points, std::size_t h, std::optional<std::vector<WindowId>> ids) {
            const auto g = neighbors::build_knn(rows_of(points, std::move(ids)), h);
            std::vector<std::vector<WindowId>> nbr;
            std::vector<std::vector<double>> sims;
            for (const auto& list : g.lists) {
                auto& ni = nbr.emplace_back();
                auto& si = sims.emplace_back();
                for (const auto& n : list) {
                    ni.push_back(n.window_id);
                    si.push_back(n.similarity);
                }
            }
            return py::make_tuple(nbr, sims);
        },
        py::arg("points"), py::arg("h"), py::arg("ids") = py::none(),
        "Exact cosine neighbors: (neighbor id lists, similarity lists).");
    m.def(
        "kmeans",
        [](const Array& points, std::size_t k, std::uint64_t seed, std::size_t max_iters) {
            const auto r = evalmap::kmeans(rows_of(points, std::nullopt), k, seed, max_iters);
            py::dict d;
            d["assignments"] = r.assignments;
            d["inertia"] = r.inertia;
            d["iterations"] = r.iterations;
            d["converged"] = r.converged;
            return d;
        },
        py::arg("points"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iters") = 100);
    m.def(
        "f1_score",
        [](const std::vector<std::string>& predicted, const std::vector<std::string>& truth, const std::string& mode) {
            if (mode != "weighted" && mode != "macro") {
                throw ValidationError("mode must be 'weighted' or 'macro'");
            }
            return evalmap::f1_score(predicted, truth,
                                     mode == "weighted" ? evalmap::F1Mode::Weighted : evalmap::F1Mode::Macro);
        },
        py::arg("predicted"), py::arg("truth"), py::arg("mode") = "weighted");
    m.def("matched_accuracy", &evalmap::matched_accuracy, py::arg("clusters"), py::arg("classes"));
    m.def("cohens_kappa", &evalmap::cohens_kappa, py::arg("pairs"));
    m.def(
        "fleiss_kappa", [](const std::vector<std::vector<std::size_t>>& counts) { return evalmap::fleiss_kappa(counts); },
        py::arg("counts"));

    m.def("config_keys", &pipeline::PipelineConfig::keys);
    m.def(
        "config_text", [](const py::dict& settings) { return config_from(settings).to_text(); },
        py::arg("settings") = py::dict(), "Resolved key=value configuration for the given overrides.");

    using Stage = pipeline::StageResult (*)(const pipeline::PipelineConfig&);
    const std::pair<const char*, Stage> stages[] = {
        {"ingest", &pipeline::ingest},       {"pretrain", &pipeline::pretrain}, {"neighbors", &pipeline::build_neighbors},
        {"cluster", &pipeline::cluster},     {"kmeans_stage", &pipeline::run_kmeans}, {"centroids", &pipeline::centroids},
        {"evaluate", &pipeline::evaluate},   {"sweep_k", &pipeline::sweep_k},   {"trends", &pipeline::trends},
        {"synth", &pipeline::synth},
    };
    for (const auto& [name, fn] : stages) {
        m.def(
            name,
            [fn = fn](const py::dict& settings) {
                const auto config = config_from(settings);
                pipeline::StageResult result;
                {
                    py::gil_scoped_release release;
                    result = fn(config);
                }
                return stage_dict(result);
            },
            py::arg("settings"));
    }
    m.def(
        "propagate",
        [](const py::dict& settings, bool oracle_raters) {
            const auto config = config_from(settings);
            pipeline::StageResult result;
            {
                py::gil_scoped_release release;
                result = pipeline::propagate(config, oracle_raters);
            }
            return stage_dict(result);
        },
        py::arg("settings"), py::arg("oracle_raters") = false);
}
