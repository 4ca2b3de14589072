#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pdl {

/// Dense row-major matrix of doubles; vectors are stored as 1 x n matrices.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NamedTensor {
    std::string name;
    Matrix* value;
};

struct ConstNamedTensor {
    std::string name;
    const Matrix* value;
};

/// Fills with N(0, stddev^2) draws in row-major order.
void fill_normal(Matrix& m, double stddev, std::mt19937_64& rng);

double squared_norm(const std::vector<Matrix*>& tensors);

/// Stochastic gradient descent with optional heavy-ball momentum and global-norm clipping.
class SgdOptimizer {
public:
    SgdOptimizer(double learning_rate, double momentum, double clip_norm);

    /// params[i] -= lr * v[i], v[i] = momentum * v[i] + clip(grads)[i].
    void step(const std::vector<Matrix*>& params, const std::vector<Matrix*>& grads);

    double learning_rate() const { return lr_; }

private:
    double lr_;
    double momentum_;
    double clip_norm_;
    std::vector<Matrix> velocity_;
};

/// Self-describing parameter file: magic, version, metadata, shape table, little-endian f64 payload.
struct TensorFile {
    static constexpr std::uint32_t kVersion = 1;

    std::string kind;
    std::map<std::string, std::string> metadata;
    std::vector<std::pair<std::string, Matrix>> tensors;

    void save(const std::filesystem::path& path) const;
    std::string serialize() const;
    static TensorFile load(const std::filesystem::path& path);
    static TensorFile deserialize(const std::string& bytes);

    const Matrix& at(const std::string& name) const;
};

}  // namespace pdl
