#include "pdl/serve.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace pdl::serve {

namespace {

constexpr int kVersion = 1;

struct WrongMethod {
    std::string expected;
};

std::vector<std::string> split_path(std::string_view path) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos < path.size()) {
        const auto next = path.find('/', pos);
        const auto end = next == std::string_view::npos ? path.size() : next;
        if (end > pos) {
            parts.emplace_back(path.substr(pos, end - pos));
        }
        pos = end + 1;
    }
    return parts;
}

Response json_response(const io::Json& body, int status = 200) {
    return {status, "application/json", body.dump()};
}

Point point_from_json(const io::Json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        throw ValidationError(fmt::format("{}: expected [x, y]", where));
    }
    Point p{j[0].get<double>(), j[1].get<double>()};
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
        throw ValidationError(fmt::format("{}: coordinates must lie in [0,1]", where));
    }
    return p;
}

Shape shape_from_json(const io::Json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("name") || !j["name"].is_string() || !j.contains("polygon") ||
        !j["polygon"].is_array()) {
        throw ValidationError(fmt::format("{}: expected {{name, polygon}}", where));
    }
    Shape s{j["name"].get<std::string>(), {}};
    if (s.name.empty()) {
        throw ValidationError(fmt::format("{}: empty name", where));
    }
    if (j["polygon"].size() < 3) {
        throw ValidationError(fmt::format("{}: polygon needs at least 3 vertices", where));
    }
    for (std::size_t i = 0; i < j["polygon"].size(); ++i) {
        s.polygon.push_back(point_from_json(j["polygon"][i], fmt::format("{}.polygon[{}]", where, i)));
    }
    return s;
}

io::Json shape_to_json(const Shape& s) {
    io::Json poly = io::Json::array();
    for (const auto& p : s.polygon) {
        poly.push_back({p.x, p.y});
    }
    return {{"name", s.name}, {"polygon", poly}};
}

io::Json hierarchy_tree(const evalmap::LabelHierarchy& h) {
    return io::Json::parse(h.to_json());
}

std::string require_string(const io::Json& body, const char* field) {
    if (!body.contains(field) || !body[field].is_string() || body[field].get<std::string>().empty()) {
        throw ValidationError(fmt::format("field '{}' must be a non-empty string", field));
    }
    return body[field].get<std::string>();
}

}  // namespace

std::vector<std::string> HouseLayout::unplaced(const std::set<std::string>& ids) const {
    std::vector<std::string> out;
    for (const auto& id : ids) {
        if (!sensors.contains(id)) {
            out.push_back(id);
        }
    }
    return out;
}

io::Json HouseLayout::to_json() const {
    io::Json rooms_j = io::Json::array();
    for (const auto& r : rooms) {
        rooms_j.push_back(shape_to_json(r));
    }
    io::Json furniture_j = io::Json::array();
    for (const auto& f : furniture) {
        furniture_j.push_back(shape_to_json(f));
    }
    io::Json sensors_j = io::Json::object();
    for (const auto& [id, p] : sensors) {
        sensors_j[id] = {p.x, p.y};
    }
    return {{"v", kVersion}, {"dataset", dataset}, {"rooms", rooms_j}, {"sensors", sensors_j},
            {"furniture", furniture_j}};
}

HouseLayout HouseLayout::from_json(const io::Json& j) {
    if (!j.is_object()) {
        throw ValidationError("layout: expected an object");
    }
    if (j.value("v", 0) != kVersion) {
        throw ValidationError(fmt::format("layout: unsupported version {}", j.value("v", io::Json()).dump()));
    }
    HouseLayout out;
    if (!j.contains("dataset") || !j["dataset"].is_string() || j["dataset"].get<std::string>().empty()) {
        throw ValidationError("layout.dataset: expected a non-empty string");
    }
    out.dataset = j["dataset"].get<std::string>();
    if (!j.contains("rooms") || !j["rooms"].is_array() || j["rooms"].empty()) {
        throw ValidationError("layout.rooms: expected a non-empty array");
    }
    for (std::size_t i = 0; i < j["rooms"].size(); ++i) {
        out.rooms.push_back(shape_from_json(j["rooms"][i], fmt::format("layout.rooms[{}]", i)));
    }
    if (!j.contains("sensors") || !j["sensors"].is_object()) {
        throw ValidationError("layout.sensors: expected an object");
    }
    for (const auto& [id, p] : j["sensors"].items()) {
        out.sensors[id] = point_from_json(p, fmt::format("layout.sensors.{}", id));
    }
    if (j.contains("furniture")) {
        if (!j["furniture"].is_array()) {
            throw ValidationError("layout.furniture: expected an array");
        }
        for (std::size_t i = 0; i < j["furniture"].size(); ++i) {
            out.furniture.push_back(shape_from_json(j["furniture"][i], fmt::format("layout.furniture[{}]", i)));
        }
    }
    return out;
}

HouseLayout HouseLayout::load(const std::filesystem::path& path) {
    try {
        return from_json(io::Json::parse(io::read_file(path)));
    } catch (const io::Json::exception& e) {
        throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::vector<Activation> replay_activations(const std::vector<corpus::SensorEvent>& events,
                                           const HouseLayout* layout) {
    std::vector<const corpus::SensorEvent*> ordered;
    for (const auto& e : events) {
        ordered.push_back(&e);
    }
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto* a, const auto* b) { return a->timestamp < b->timestamp; });
    std::vector<Activation> out;
    for (const auto* e : ordered) {
        const auto offset = std::chrono::duration_cast<std::chrono::milliseconds>(e->timestamp -
                                                                                  ordered.front()->timestamp);
        out.push_back({e->sensor_id, e->value, offset.count(),
                       layout == nullptr || layout->sensors.contains(e->sensor_id)});
    }
    return out;
}

io::Json progress_json(const annotate::Progress& progress) {
    return {{"samples", progress.samples},
            {"scheduled", progress.scheduled},
            {"submitted", progress.submitted},
            {"complete_samples", progress.complete_samples}};
}

io::Json replay_payload(const annotate::CentroidSample& sample, const evalmap::LabelHierarchy& hierarchy,
                        const HouseLayout* layout, const annotate::Progress& progress) {
    io::Json acts = io::Json::array();
    std::set<std::string> unplaced;
    for (const auto& a : replay_activations(sample.events, layout)) {
        acts.push_back({{"sensor_id", a.sensor_id}, {"value", a.value}, {"offset_ms", a.offset_ms}});
        if (!a.placed) {
            unplaced.insert(a.sensor_id);
        }
    }
    return {{"v", kVersion},
            {"done", false},
            {"sample_id", sample.sample_id},
            {"cluster_id", sample.cluster},
            {"activations", acts},
            {"unplaced", unplaced},
            {"label_options", hierarchy_tree(hierarchy)},
            {"progress", progress_json(progress)}};
}

Response error_response(int status, std::string_view code, std::string_view message) {
    return json_response({{"v", kVersion}, {"error", {{"code", code}, {"message", message}}}}, status);
}

Service::Service(evalmap::LabelHierarchy hierarchy, std::filesystem::path session_dir)
    : hierarchy_(std::move(hierarchy)), session_dir_(std::move(session_dir)) {
    std::filesystem::create_directories(session_dir_);
}

void Service::add_layout(HouseLayout layout) {
    auto name = layout.dataset;
    layouts_.insert_or_assign(std::move(name), std::move(layout));
}

std::filesystem::path Service::session_path(const std::string& id) const {
    return session_dir_ / (id + ".json");
}

void Service::add_session(annotate::AnnotationSession session, std::optional<ExportContext> context) {
    if (session.session_id.empty() ||
        session.session_id.find_first_of("/\\.") != std::string::npos) {
        throw ValidationError(fmt::format("invalid session id '{}'", session.session_id));
    }
    const auto path = session_path(session.session_id);
    if (std::filesystem::exists(path)) {
        session = annotate::AnnotationSession::load(path);
    } else {
        session.save(path);
    }
    auto s = std::make_unique<Slot>();
    s->session = std::move(session);
    if (context) {
        s->context = std::make_shared<const ExportContext>(std::move(*context));
    }
    std::unique_lock lock(slots_mutex_);
    auto id = s->session.session_id;
    slots_.insert_or_assign(std::move(id), std::move(s));
}

std::size_t Service::load_sessions() {
    std::size_t n = 0;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(session_dir_)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        auto session = annotate::AnnotationSession::load(f);
        {
            std::shared_lock lock(slots_mutex_);
            if (slots_.contains(session.session_id)) {
                continue;
            }
        }
        add_session(std::move(session));
        ++n;
    }
    return n;
}

void Service::set_export_context(const std::string& session_id, ExportContext context) {
    auto& s = slot(session_id);
    std::lock_guard lock(s.mutex);
    s.context = std::make_shared<const ExportContext>(std::move(context));
}

Service::Slot& Service::slot(const std::string& id) const {
    std::shared_lock lock(slots_mutex_);
    auto it = slots_.find(id);
    if (it == slots_.end()) {
        throw NotFoundError(fmt::format("unknown session '{}'", id));
    }
    return *it->second;
}

annotate::AnnotationSession Service::snapshot(const std::string& session_id) const {
    auto& s = slot(session_id);
    std::lock_guard lock(s.mutex);
    return s.session;
}

Response Service::handle(const Request& request) {
    try {
        const auto parts = split_path(request.path);
        const auto n = parts.size();
        if (n < 2 || parts[0] != "api") {
            return error_response(404, "not_found", fmt::format("no route for {}", request.path));
        }
        auto only = [&](const char* method) {
            if (request.method != method) {
                throw WrongMethod{method};
            }
        };
        try {
            if (parts[1] == "layout" && n == 3) {
                only("GET");
                return get_layout(parts[2]);
            }
            if (parts[1] == "hierarchy" && n == 2) {
                only("GET");
                return get_hierarchy();
            }
            if (parts[1] == "export" && n == 3) {
                only("GET");
                return get_export(parts[2]);
            }
            if (parts[1] == "session" && n == 3) {
                only("GET");
                return get_session(parts[2], request);
            }
            if (parts[1] == "session" && n == 4) {
                if (parts[3] == "next") {
                    only("GET");
                    return get_next(parts[2], request);
                }
                if (parts[3] == "progress") {
                    only("GET");
                    return get_progress(parts[2]);
                }
                if (parts[3] == "label") {
                    only("POST");
                    return post_label(parts[2], request);
                }
            }
        } catch (const WrongMethod& e) {
            return error_response(405, "method_not_allowed", fmt::format("{} requires {}", request.path, e.expected));
        }
        return error_response(404, "not_found", fmt::format("no route for {}", request.path));
    } catch (const NotFoundError& e) {
        return error_response(404, "not_found", e.what());
    } catch (const ValidationError& e) {
        return error_response(400, "validation", e.what());
    } catch (const io::Json::exception& e) {
        return error_response(400, "validation", fmt::format("malformed JSON: {}", e.what()));
    } catch (const std::exception& e) {
        return error_response(500, "internal", e.what());
    }
}

Response Service::get_layout(const std::string& dataset) const {
    auto it = layouts_.find(dataset);
    if (it == layouts_.end()) {
        throw NotFoundError(fmt::format("no layout for dataset '{}'", dataset));
    }
    return json_response(it->second.to_json());
}

Response Service::get_hierarchy() const {
    return json_response(hierarchy_tree(hierarchy_));
}

Response Service::get_session(const std::string& id, const Request& request) const {
    auto& s = slot(id);
    std::lock_guard lock(s.mutex);
    const auto& session = s.session;
    auto rater = request.query.find("rater");
    io::Json samples = io::Json::array();
    io::Json mine = io::Json::object();
    for (const auto& sample : session.samples) {
        const auto ratings = session.ratings_for(sample.sample_id);
        io::Json entry{{"sample_id", sample.sample_id}, {"cluster_id", sample.cluster}, {"ratings", ratings.size()}};
        if (rater != request.query.end()) {
            const auto own = session.label_by(sample.sample_id, rater->second);
            entry["labeled_by_you"] = own.has_value();
            if (own) {
                mine[sample.sample_id] = *own;
            }
        }
        samples.push_back(std::move(entry));
    }
    io::Json body{{"v", kVersion},
                  {"session_id", session.session_id},
                  {"dataset", session.dataset_id},
                  {"raters_per_sample", session.raters_per_sample},
                  {"progress", progress_json(session.progress())},
                  {"samples", samples}};
    if (rater != request.query.end()) {
        body["rater"] = rater->second;
        body["your_labels"] = mine;
    }
    return json_response(body);
}

Response Service::get_next(const std::string& id, const Request& request) const {
    auto rater = request.query.find("rater");
    if (rater == request.query.end() || rater->second.empty()) {
        throw ValidationError("query parameter 'rater' is required");
    }
    auto& s = slot(id);
    std::lock_guard lock(s.mutex);
    const auto* next = s.session.next_for(rater->second);
    if (next == nullptr) {
        return json_response({{"v", kVersion}, {"done", true}, {"progress", progress_json(s.session.progress())}});
    }
    auto layout = layouts_.find(s.session.dataset_id);
    return json_response(replay_payload(*next, hierarchy_, layout == layouts_.end() ? nullptr : &layout->second,
                                        s.session.progress()));
}

Response Service::post_label(const std::string& id, const Request& request) {
    const auto body = io::Json::parse(request.body);
    if (!body.is_object()) {
        throw ValidationError("request body must be a JSON object");
    }
    const auto sample_id = require_string(body, "sample_id");
    const auto rater = require_string(body, "rater");
    const auto label = require_string(body, "label");

    auto& s = slot(id);
    std::lock_guard lock(s.mutex);
    auto updated = s.session;
    const auto previous = annotate::record_label(updated, sample_id, rater, label, hierarchy_);
    updated.save(session_path(id));
    s.session = std::move(updated);
    return json_response({{"v", kVersion},
                          {"sample_id", sample_id},
                          {"rater", rater},
                          {"label", label},
                          {"previous", previous ? io::Json(*previous) : io::Json()},
                          {"progress", progress_json(s.session.progress())}});
}

Response Service::get_progress(const std::string& id) const {
    auto& s = slot(id);
    std::lock_guard lock(s.mutex);
    auto body = progress_json(s.session.progress());
    body["v"] = kVersion;
    body["session_id"] = id;
    return json_response(body);
}

Response Service::get_export(const std::string& id) const {
    annotate::AnnotationSession session;
    std::shared_ptr<const ExportContext> context;
    {
        auto& s = slot(id);
        std::lock_guard lock(s.mutex);
        session = s.session;
        context = s.context;
    }
    if (!context) {
        return error_response(409, "no_export_context",
                              fmt::format("session '{}' has no propagation inputs loaded", id));
    }
    std::set<ClusterId> rated;
    for (const auto& r : session.submissions) {
        rated.insert(session.sample(r.sample_id).cluster);
    }
    std::vector<std::string> missing;
    for (auto c : context->clusters) {
        if (!rated.contains(c)) {
            missing.push_back(std::to_string(c));
        }
    }
    if (!missing.empty()) {
        return error_response(409, "clusters_unmapped",
                              fmt::format("clusters unmapped: {}", fmt::join(missing, ",")));
    }
    const auto map = annotate::cluster_majority_labels(session, hierarchy_, context->clusters);
    const auto labels = annotate::propagate(map, context->assignments);
    const auto per_event = annotate::reannotate_events(labels, context->windows, context->events.size());
    return {200, "text/csv", annotate::export_labeled_events(context->events, per_event)};
}

}  // namespace pdl::serve
