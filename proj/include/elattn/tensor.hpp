#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "elattn/errors.hpp"

namespace elattn {

// Compute precision. f32 rounds every op result through IEEE single
// precision; it exists for benchmark realism and is never used by the
// equivalence gates.
enum class Precision { f64, f32 };

inline Precision& active_precision() {
    static Precision p = Precision::f64;
    return p;
}

struct PrecisionGuard {
    Precision saved;
    explicit PrecisionGuard(Precision p) : saved(active_precision()) { active_precision() = p; }
    ~PrecisionGuard() { active_precision() = saved; }
};

inline double quantize(double x) {
    return active_precision() == Precision::f32 ? static_cast<double>(static_cast<float>(x)) : x;
}

// Optional observer for tensor allocations. Tests use it to assert that
// the EL path never materializes per-head key/value tensors.
using AllocHook = std::function<void(const std::vector<int64_t>&)>;

inline AllocHook& tensor_alloc_hook() {
    static AllocHook hook;
    return hook;
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        if (shape_.empty() || shape_.size() > 4)
            throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape_.size()));
        int64_t total = 1;
        for (int64_t d : shape_) {
            if (d <= 0) throw ShapeError("tensor dimensions must be positive");
            total *= d;
        }
        data_.assign(static_cast<size_t>(total), 0.0);
        if (tensor_alloc_hook()) tensor_alloc_hook()(shape_);
    }

    Tensor(std::initializer_list<int64_t> shape) : Tensor(std::vector<int64_t>(shape)) {}

    static Tensor from(std::vector<int64_t> shape, std::vector<double> values) {
        Tensor t(std::move(shape));
        if (values.size() != t.data_.size())
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape product " + std::to_string(t.data_.size()));
        t.data_ = std::move(values);
        return t;
    }

    static Tensor identity(int64_t n) {
        Tensor t({n, n});
        for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    // 2-D accessors (most of the attention math is rank 2).
    int64_t rows() const { return shape_.empty() ? 0 : (ndim() == 1 ? 1 : shape_[0]); }
    int64_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

    double& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * cols() + j)]; }
    double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * cols() + j)]; }
    double& at(int64_t b, int64_t i, int64_t j) {
        return data_[static_cast<size_t>((b * shape_[1] + i) * shape_[2] + j)];
    }
    double at(int64_t b, int64_t i, int64_t j) const {
        return data_[static_cast<size_t>((b * shape_[1] + i) * shape_[2] + j)];
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    Tensor reshape(std::vector<int64_t> shape) const {
        Tensor t(std::move(shape));
        if (t.size() != size()) throw ShapeError("reshape changes element count");
        t.data_ = data_;
        return t;
    }

    Tensor row(int64_t i) const {
        Tensor r({1, cols()});
        for (int64_t j = 0; j < cols(); ++j) r.at(0, j) = at(i, j);
        return r;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
        os << "]";
        return os.str();
    }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

// SplitMix64. Fully specified so checkpoints regenerate identically on
// every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

private:
    uint64_t state_;
};

namespace detail {

inline void ensure_finite(const Tensor& t, const char* op) {
    for (double v : t.data())
        if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul expects rank-2 operands, got " + a.shape_str() + " and " + b.shape_str());
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul inner dimensions differ: " + a.shape_str() + " vs " + b.shape_str());
    const int64_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    Tensor c({m, p});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t t = 0; t < k; ++t) {
            const double av = a.at(i, t);
            if (av == 0.0) continue;
            for (int64_t j = 0; j < p; ++j) c.at(i, j) += av * b.at(t, j);
        }
    }
    for (double& v : c.data()) v = quantize(v);
    detail::ensure_finite(c, "matmul");
    return c;
}

inline Tensor batched_matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || b.ndim() != 3)
        throw ShapeError("batched_matmul expects rank-3 operands, got " + a.shape_str() + " and " +
                         b.shape_str());
    if (a.dim(0) != b.dim(0))
        throw ShapeError("batched_matmul first dimensions differ: " + a.shape_str() + " vs " +
                         b.shape_str());
    if (a.dim(2) != b.dim(1))
        throw ShapeError("batched_matmul inner dimensions differ: " + a.shape_str() + " vs " +
                         b.shape_str());
    const int64_t n = a.dim(0), m = a.dim(1), k = a.dim(2), p = b.dim(2);
    Tensor c({n, m, p});
    for (int64_t s = 0; s < n; ++s)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t t = 0; t < k; ++t) {
                const double av = a.at(s, i, t);
                for (int64_t j = 0; j < p; ++j) c.at(s, i, j) += av * b.at(s, t, j);
            }
    for (double& v : c.data()) v = quantize(v);
    detail::ensure_finite(c, "batched_matmul");
    return c;
}

inline Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose expects rank-2, got " + a.shape_str());
    Tensor t({a.dim(1), a.dim(0)});
    for (int64_t i = 0; i < a.dim(0); ++i)
        for (int64_t j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
    return t;
}

// softmax(X / sqrt(d)) along the last dimension, with per-row max
// subtraction (legal by shift invariance).
inline Tensor scaled_softmax_rows(const Tensor& x, int64_t d) {
    if (d < 1) throw ParamError("softmax normalization constant must be >= 1");
    if (x.cols() < 1) throw ShapeError("scaled_softmax_rows: empty last dimension");
    detail::ensure_finite(x, "scaled_softmax_rows(input)");
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    const int64_t n = x.cols();
    const int64_t rows = x.size() / n;
    Tensor out = x;
    for (int64_t r = 0; r < rows; ++r) {
        double* p = out.data().data() + r * n;
        double mx = p[0] * inv;
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, p[j] * inv);
        double sum = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            p[j] = std::exp(p[j] * inv - mx);
            sum += p[j];
        }
        for (int64_t j = 0; j < n; ++j) p[j] = quantize(p[j] / sum);
    }
    detail::ensure_finite(out, "scaled_softmax_rows");
    return out;
}

inline Tensor seeded_uniform(const std::vector<int64_t>& shape, Rng& rng, double lo, double hi) {
    if (!(lo < hi)) throw ParamError("seeded_uniform: lo must be < hi");
    Tensor t(shape);
    for (double& v : t.data()) v = quantize(lo + (hi - lo) * rng.next_double());
    return t;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    if (eps <= 0.0) throw ParamError("layer_norm: eps must be positive");
    const int64_t d = x.cols();
    if (gain.size() != d || shift.size() != d)
        throw ShapeError("layer_norm: gain/shift length must equal last dimension " + std::to_string(d));
    const int64_t rows = x.size() / d;
    Tensor out = x;
    for (int64_t r = 0; r < rows; ++r) {
        double* p = out.data().data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += p[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (p[j] - mean) * (p[j] - mean);
        var /= static_cast<double>(d);
        const double denom = std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j)
            p[j] = quantize((p[j] - mean) / denom * gain.at(j) + shift.at(j));
    }
    detail::ensure_finite(out, "layer_norm");
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shapes differ: " + a.shape_str() + " vs " + b.shape_str());
    Tensor c = a;
    for (int64_t i = 0; i < c.size(); ++i) c.at(i) = quantize(c.at(i) + b.at(i));
    return c;
}

// Adds a length-d vector to every row of a (...xd) tensor.
inline Tensor add_row_vector(const Tensor& a, const Tensor& v) {
    const int64_t d = a.cols();
    if (v.size() != d)
        throw ShapeError("add_row_vector: vector length " + std::to_string(v.size()) +
                         " vs row width " + std::to_string(d));
    Tensor c = a;
    const int64_t rows = c.size() / d;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) c.at(r * d + j) = quantize(c.at(r * d + j) + v.at(j));
    return c;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff: shapes differ: " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

}  // namespace elattn
