#include "pdl/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "pdl/common.hpp"
#include "pdl/io.hpp"

namespace pdl {

void fill_normal(Matrix& m, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = dist(rng);
    }
}

double squared_norm(const std::vector<Matrix*>& tensors) {
    double total = 0.0;
    for (const auto* t : tensors) {
        total += t->squaredNorm();
    }
    return total;
}

SgdOptimizer::SgdOptimizer(double learning_rate, double momentum, double clip_norm)
    : lr_(learning_rate), momentum_(momentum), clip_norm_(clip_norm) {
    if (!(learning_rate > 0.0)) {
        throw ValidationError("learning rate must be positive");
    }
    if (momentum < 0.0 || momentum >= 1.0) {
        throw ValidationError("momentum must lie in [0, 1)");
    }
}

void SgdOptimizer::step(const std::vector<Matrix*>& params, const std::vector<Matrix*>& grads) {
    if (params.size() != grads.size()) {
        throw ValidationError("parameter/gradient count mismatch");
    }
    double scale = 1.0;
    if (clip_norm_ > 0.0) {
        double norm = std::sqrt(squared_norm(grads));
        if (norm > clip_norm_) {
            scale = clip_norm_ / norm;
        }
    }
    if (momentum_ == 0.0) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            *params[i] -= (lr_ * scale) * *grads[i];
        }
        return;
    }
    if (velocity_.empty()) {
        velocity_.reserve(params.size());
        for (const auto* p : params) {
            velocity_.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity_[i] = momentum_ * velocity_[i] + scale * *grads[i];
        *params[i] -= lr_ * velocity_[i];
    }
}

namespace {

constexpr char kMagic[8] = {'P', 'D', 'L', 'T', 'E', 'N', 'S', '1'};

template <class T>
void put(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
        std::reverse(bytes.begin(), bytes.end());
        out.append(bytes.data(), bytes.size());
    } else {
        char buf[sizeof(T)];
        std::memcpy(buf, &value, sizeof(T));
        out.append(buf, sizeof(T));
    }
}

void put_string(std::string& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        need(sizeof(T));
        std::array<char, sizeof(T)> buf{};
        std::memcpy(buf.data(), bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(buf.begin(), buf.end());
        }
        pos_ += sizeof(T);
        return std::bit_cast<T>(buf);
    }

    std::string get_string() {
        auto n = get<std::uint32_t>();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw ValidationError("truncated tensor file");
        }
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string TensorFile::serialize() const {
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put_string(out, kind);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(metadata.size()));
    for (const auto& [k, v] : metadata) {
        put_string(out, k);
        put_string(out, v);
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
        put_string(out, name);
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    }
    for (const auto& [name, m] : tensors) {
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            put<double>(out, m.data()[i]);
        }
    }
    return out;
}

void TensorFile::save(const std::filesystem::path& path) const { io::write_file_atomic(path, serialize()); }

TensorFile TensorFile::deserialize(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ValidationError("not a parameter file (bad magic)");
    }
    Reader r(bytes);
    for (std::size_t i = 0; i < sizeof(kMagic); ++i) {
        r.get<char>();
    }
    auto version = r.get<std::uint32_t>();
    if (version != kVersion) {
        throw ValidationError(fmt::format("unsupported parameter file version {}", version));
    }
    TensorFile file;
    file.kind = r.get_string();
    auto n_meta = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto k = r.get_string();
        file.metadata[k] = r.get_string();
    }
    auto n_tensors = r.get<std::uint32_t>();
    std::vector<std::pair<std::string, std::pair<std::uint64_t, std::uint64_t>>> shapes;
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        auto name = r.get_string();
        auto rows = r.get<std::uint64_t>();
        auto cols = r.get<std::uint64_t>();
        shapes.push_back({name, {rows, cols}});
    }
    for (const auto& [name, shape] : shapes) {
        Matrix m(static_cast<Eigen::Index>(shape.first), static_cast<Eigen::Index>(shape.second));
        r.need(static_cast<std::size_t>(m.size()) * sizeof(double));
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = r.get<double>();
        }
        file.tensors.emplace_back(name, std::move(m));
    }
    if (r.remaining() != 0) {
        throw ValidationError("trailing bytes in parameter file");
    }
    return file;
}

TensorFile TensorFile::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

const Matrix& TensorFile::at(const std::string& name) const {
    for (const auto& [n, m] : tensors) {
        if (n == name) {
            return m;
        }
    }
    throw ValidationError(fmt::format("parameter file lacks tensor '{}'", name));
}

}  // namespace pdl
