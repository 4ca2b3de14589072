#pragma once

// Central finite-difference gradient checking, independent of the analytic backward pass.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pdl/tensor.hpp"

namespace pdl::testing {

struct GroupError {
    std::string name;
    double relative_error = 0.0;
    double analytic_norm = 0.0;
    double numeric_norm = 0.0;
};

/// For each tensor, ||analytic - numeric|| / max(||analytic||, ||numeric||).
/// Groups whose gradient is identically zero (e.g. attention key biases, which softmax
/// cancels) are compared absolutely: both norms must stay below `zero_floor`.
inline std::vector<GroupError> check_gradients(const std::vector<NamedTensor>& params,
                                               const std::vector<const Matrix*>& analytic,
                                               const std::function<double()>& loss, double eps = 1e-5,
                                               double zero_floor = 1e-8) {
    std::vector<GroupError> out;
    for (std::size_t g = 0; g < params.size(); ++g) {
        Matrix& p = *params[g].value;
        Matrix numeric(p.rows(), p.cols());
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + eps;
            const double up = loss();
            p.data()[i] = saved - eps;
            const double down = loss();
            p.data()[i] = saved;
            numeric.data()[i] = (up - down) / (2.0 * eps);
        }
        const Matrix& a = *analytic[g];
        GroupError e;
        e.name = params[g].name;
        e.analytic_norm = a.norm();
        e.numeric_norm = numeric.norm();
        const double denom = std::max({e.analytic_norm, e.numeric_norm, 1e-300});
        e.relative_error = denom < zero_floor ? 0.0 : (a - numeric).norm() / denom;
        out.push_back(e);
    }
    return out;
}

}  // namespace pdl::testing
