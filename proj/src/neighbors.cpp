#include "pdl/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pdl/tensor.hpp"

namespace pdl::neighbors {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ValidationError(fmt::format("cosine_similarity: length {} vs {}", a.size(), b.size()));
    }
    double ab = 0.0;
    double aa = 0.0;
    double bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) {
        throw ValidationError("cosine_similarity: zero-norm vector");
    }
    return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

std::size_t NeighborGraph::index_of(WindowId id) const {
    auto it = std::find(nodes.begin(), nodes.end(), id);
    if (it == nodes.end()) {
        throw NotFoundError(fmt::format("window {} not in neighbor graph", id));
    }
    return static_cast<std::size_t>(it - nodes.begin());
}

const std::vector<Neighbor>& NeighborGraph::neighbors_of(WindowId id) const { return lists[index_of(id)]; }

std::string NeighborGraph::to_jsonl() const {
    std::string out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        nlohmann::json j;
        j["window_id"] = nodes[i];
        std::vector<WindowId> ids;
        std::vector<double> sims;
        for (const auto& n : lists[i]) {
            ids.push_back(n.window_id);
            sims.push_back(n.similarity);
        }
        j["neighbors"] = ids;
        j["sims"] = sims;
        out += j.dump();
        out += '\n';
    }
    return out;
}

NeighborGraph NeighborGraph::from_jsonl(std::string_view text) {
    NeighborGraph g;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto j = nlohmann::json::parse(line);
        auto ids = j.at("neighbors").get<std::vector<WindowId>>();
        auto sims = j.at("sims").get<std::vector<double>>();
        if (ids.size() != sims.size()) {
            throw ValidationError("neighbor record with mismatched neighbors/sims");
        }
        std::vector<Neighbor> list;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            list.push_back({ids[i], sims[i]});
        }
        g.h = std::max(g.h, list.size());
        g.nodes.push_back(j.at("window_id").get<WindowId>());
        g.lists.push_back(std::move(list));
    }
    return g;
}

NeighborGraph build_knn(const std::vector<encoder::EmbeddingVector>& embeddings, std::size_t h, Diagnostics* diag,
                        unsigned threads) {
    const std::size_t n = embeddings.size();
    if (n < 2) {
        throw ValidationError("build_knn needs at least 2 embeddings");
    }
    if (h < 1) {
        throw ValidationError("h must be >= 1");
    }
    const std::size_t dim = embeddings.front().values.size();
    if (h >= n) {
        warn(diag, fmt::format("h={} >= population {}; using {} neighbors", h, n, n - 1));
        h = n - 1;
    }

    Matrix unit(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& v = embeddings[i].values;
        if (v.size() != dim) {
            throw ValidationError("embeddings differ in dimension");
        }
        double sq = 0.0;
        for (double x : v) {
            sq += x * x;
        }
        if (sq == 0.0) {
            throw ValidationError(fmt::format("window {} has a zero-norm embedding", embeddings[i].window_id));
        }
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t d = 0; d < dim; ++d) {
            unit(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = v[d] * inv;
        }
    }

    NeighborGraph g;
    g.h = h;
    g.nodes.reserve(n);
    for (const auto& e : embeddings) {
        g.nodes.push_back(e.window_id);
    }
    g.lists.resize(n);

    constexpr std::size_t kBlock = 256;
    const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
    auto process = [&](std::size_t first_block, std::size_t stride) {
        std::vector<std::size_t> order(n);
        for (std::size_t b = first_block; b < n_blocks; b += stride) {
            const std::size_t lo = b * kBlock;
            const std::size_t rows = std::min(kBlock, n - lo);
            Matrix sims = unit.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(rows)) *
                          unit.transpose();
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t self = lo + r;
                auto sim = [&](std::size_t j) { return sims(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)); };
                order.resize(n);
                std::iota(order.begin(), order.end(), 0);
                order.erase(order.begin() + static_cast<std::ptrdiff_t>(self));
                auto better = [&](std::size_t x, std::size_t y) {
                    const double sx = sim(x);
                    const double sy = sim(y);
                    if (sx != sy) {
                        return sx > sy;
                    }
                    return g.nodes[x] < g.nodes[y];
                };
                std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(h), order.end(), better);

                // Blocked products can round identical columns differently, so anything near the cut-off
                // is rescored with one fixed-order dot product per pair; exact duplicates then tie exactly.
                const double cutoff = sim(order[h - 1]) - 1e-9;
                std::vector<std::pair<double, std::size_t>> finalists;
                for (std::size_t j : order) {
                    if (sim(j) >= cutoff) {
                        double dot = 0.0;
                        for (std::size_t d = 0; d < dim; ++d) {
                            dot += unit(static_cast<Eigen::Index>(self), static_cast<Eigen::Index>(d)) *
                                   unit(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(d));
                        }
                        finalists.emplace_back(std::clamp(dot, -1.0, 1.0), j);
                    }
                }
                std::sort(finalists.begin(), finalists.end(), [&](const auto& x, const auto& y) {
                    if (x.first != y.first) {
                        return x.first > y.first;
                    }
                    return g.nodes[x.second] < g.nodes[y.second];
                });
                auto& list = g.lists[self];
                list.reserve(h);
                for (std::size_t k = 0; k < h; ++k) {
                    list.push_back({g.nodes[finalists[k].second], finalists[k].first});
                }
            }
        }
    };

    if (threads == 0) {
        threads = std::max(1u, std::thread::hardware_concurrency());
    }
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_blocks));
    if (threads <= 1) {
        process(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back(process, t, threads);
        }
        for (auto& th : pool) {
            th.join();
        }
    }
    return g;
}

}  // namespace pdl::neighbors
