#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdl/common.hpp"
#include "pdl/encoder.hpp"

namespace pdl::neighbors {

/// a.b / (|a| |b|); throws on a zero-norm input or a length mismatch.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct Neighbor {
    WindowId window_id = 0;
    double similarity = 0.0;

    bool operator==(const Neighbor&) const = default;
};

/// h most cosine-similar other windows per node, ordered by (similarity desc, window_id asc).
struct NeighborGraph {
    std::size_t h = 0;
    std::vector<WindowId> nodes;
    std::vector<std::vector<Neighbor>> lists;  // parallel to nodes

    const std::vector<Neighbor>& neighbors_of(WindowId id) const;
    std::size_t index_of(WindowId id) const;

    std::string to_jsonl() const;
    static NeighborGraph from_jsonl(std::string_view text);
};

/// Exact h-nearest-neighbor graph. When h >= population, every node gets population-1 neighbors
/// and a warning is recorded. `threads` = 0 picks the hardware concurrency; output never depends on it.
NeighborGraph build_knn(const std::vector<encoder::EmbeddingVector>& embeddings, std::size_t h,
                        Diagnostics* diag = nullptr, unsigned threads = 1);

}  // namespace pdl::neighbors
