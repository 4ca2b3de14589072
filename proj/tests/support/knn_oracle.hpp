#pragma once

// All-pairs nearest-neighbor reference: direct cosine per pair, full sort.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pdl/encoder.hpp"

namespace pdl::testing {

struct KnnOracle {
    std::vector<std::vector<WindowId>> ids;
    std::vector<std::vector<double>> sims;
};

inline KnnOracle brute_force_knn(const std::vector<encoder::EmbeddingVector>& emb, std::size_t h) {
    KnnOracle out;
    const std::size_t n = emb.size();
    h = std::min(h, n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, WindowId>> cand;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) {
                continue;
            }
            double ab = 0, aa = 0, bb = 0;
            for (std::size_t d = 0; d < emb[i].values.size(); ++d) {
                ab += emb[i].values[d] * emb[j].values[d];
                aa += emb[i].values[d] * emb[i].values[d];
                bb += emb[j].values[d] * emb[j].values[d];
            }
            cand.emplace_back(ab / std::sqrt(aa * bb), emb[j].window_id);
        }
        std::sort(cand.begin(), cand.end(), [](const auto& x, const auto& y) {
            if (x.first != y.first) {
                return x.first > y.first;
            }
            return x.second < y.second;
        });
        std::vector<WindowId> ids;
        std::vector<double> sims;
        for (std::size_t k = 0; k < h; ++k) {
            ids.push_back(cand[k].second);
            sims.push_back(cand[k].first);
        }
        out.ids.push_back(ids);
        out.sims.push_back(sims);
    }
    return out;
}

}  // namespace pdl::testing
