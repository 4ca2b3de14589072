#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "pdl/annotate.hpp"
#include "pdl/corpus.hpp"
#include "pdl/evalmap.hpp"
#include "pdl/io.hpp"
#include "pdl/scan.hpp"

namespace pdl::serve {

struct Point {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point&) const = default;
};

struct Shape {
    std::string name;
    std::vector<Point> polygon;  // normalized [0,1]^2, at least 3 vertices

    bool operator==(const Shape&) const = default;
};

/// Simplified floor plan: room and furniture polygons plus sensor positions, all in the unit square.
struct HouseLayout {
    std::string dataset;
    std::vector<Shape> rooms;
    std::map<std::string, Point> sensors;
    std::vector<Shape> furniture;

    /// Sensor ids from `ids` that the layout does not place, sorted.
    std::vector<std::string> unplaced(const std::set<std::string>& ids) const;

    io::Json to_json() const;
    /// Validates coordinates, polygon sizes and names; throws ValidationError with the offending path.
    static HouseLayout from_json(const io::Json& j);
    static HouseLayout load(const std::filesystem::path& path);
};

/// One activation relative to the first event of the replayed window.
struct Activation {
    std::string sensor_id;
    std::string value;
    std::int64_t offset_ms = 0;
    bool placed = true;
};

/// Activations ordered by time with offsets from the earliest event (first offset 0).
std::vector<Activation> replay_activations(const std::vector<corpus::SensorEvent>& events,
                                           const HouseLayout* layout);

io::Json replay_payload(const annotate::CentroidSample& sample, const evalmap::LabelHierarchy& hierarchy,
                        const HouseLayout* layout, const annotate::Progress& progress);

/// Windows, events and assignments behind a session, used to propagate its labels for export.
struct ExportContext {
    std::vector<corpus::SensorEvent> events;
    std::vector<corpus::Window> windows;
    std::vector<scan::ClusterAssignment> assignments;
    std::vector<ClusterId> clusters;  // every cluster that must be mapped before export
};

struct Request {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
};

struct Response {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

/// Request router over the annotation state, free of any socket handling.
///
/// Sessions live in memory and in `<session_dir>/<id>.json`; every accepted label is written
/// to disk before the response is produced. Mutations of one session are serialized.
class Service {
public:
    Service(evalmap::LabelHierarchy hierarchy, std::filesystem::path session_dir);

    void add_layout(HouseLayout layout);
    /// Registers a new session and persists it; an existing file with the same id is kept instead.
    void add_session(annotate::AnnotationSession session, std::optional<ExportContext> context = std::nullopt);
    /// Loads every *.json session file in the session directory.
    std::size_t load_sessions();
    void set_export_context(const std::string& session_id, ExportContext context);

    Response handle(const Request& request);

    /// A copy of the current session state.
    annotate::AnnotationSession snapshot(const std::string& session_id) const;

private:
    struct Slot {
        mutable std::mutex mutex;
        annotate::AnnotationSession session;
        std::shared_ptr<const ExportContext> context;
    };

    Slot& slot(const std::string& id) const;
    std::filesystem::path session_path(const std::string& id) const;

    Response get_layout(const std::string& dataset) const;
    Response get_session(const std::string& id, const Request& request) const;
    Response get_next(const std::string& id, const Request& request) const;
    Response post_label(const std::string& id, const Request& request);
    Response get_progress(const std::string& id) const;
    Response get_export(const std::string& id) const;
    Response get_hierarchy() const;

    evalmap::LabelHierarchy hierarchy_;
    std::filesystem::path session_dir_;
    std::map<std::string, HouseLayout> layouts_;
    mutable std::shared_mutex slots_mutex_;
    std::map<std::string, std::unique_ptr<Slot>> slots_;
};

io::Json progress_json(const annotate::Progress& progress);
Response error_response(int status, std::string_view code, std::string_view message);

/// Blocks serving `service` over HTTP until `stop` is called from another thread or the process ends.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace pdl::serve
