// Eigen must precede httplib: <resolv.h> defines a `_res` macro that collides with Eigen parameter names.
#include "pdl/serve.hpp"

#include <httplib.h>

namespace pdl::serve {

struct HttpServer::Impl {
    Service& service;
    httplib::Server server;

    explicit Impl(Service& s) : service(s) {}

    void forward(const httplib::Request& req, httplib::Response& res) {
        Request r{req.method, req.path, {}, req.body};
        for (const auto& [key, value] : req.params) {
            r.query.emplace(key, value);
        }
        const auto out = service.handle(r);
        res.status = out.status;
        res.set_content(out.body, out.content_type);
    }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) { impl_->forward(req, res); };
    impl_->server.Get("/api/.*", handler);
    impl_->server.Post("/api/.*", handler);
    impl_->server.Put("/api/.*", handler);
    impl_->server.Delete("/api/.*", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        return impl_->server.bind_to_any_port(host);
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_->server.is_running()) {
        impl_->server.stop();
    }
}

}  // namespace pdl::serve
