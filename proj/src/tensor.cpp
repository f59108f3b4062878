#include "steerlab/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

namespace steerlab {

static std::size_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) {
        throw DimensionError("tensor shape must have at least one dimension");
    }
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw DimensionError("tensor dimensions must be positive, got " + std::to_string(d));
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(checked_numel(shape_), scalar(0)) {}

Tensor::Tensor(std::vector<int> shape, std::vector<scalar> data) : shape_(std::move(shape)) {
    if (checked_numel(shape_) != data.size()) {
        throw DimensionError("tensor data length does not match shape");
    }
    data_ = std::move(data);
}

Tensor Tensor::full(std::vector<int> shape, scalar v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

std::span<scalar> Tensor::slice3(int i, int j) {
    const int b = shape_[1], d = shape_[2];
    return {data_.data() + (static_cast<size_t>(i) * b + j) * d, static_cast<size_t>(d)};
}

std::span<const scalar> Tensor::slice3(int i, int j) const {
    const int b = shape_[1], d = shape_[2];
    return {data_.data() + (static_cast<size_t>(i) * b + j) * d, static_cast<size_t>(d)};
}

bool Tensor::all_finite() const {
    for (scalar v : data_) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

static void ensure_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) {
        throw DomainError(std::string(op) + " produced a non-finite value");
    }
}

namespace kernels {

void mm(const scalar* a, const scalar* b, scalar* c, int m, int k, int n) {
    std::vector<double> acc(static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) {
        for (double& x : acc) x = 0.0;
        const scalar* arow = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = static_cast<double>(arow[p]);
            const scalar* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                acc[static_cast<size_t>(j)] += av * static_cast<double>(brow[j]);
            }
        }
        scalar* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = static_cast<scalar>(acc[static_cast<size_t>(j)]);
    }
}

void mm_acc(const scalar* a, const scalar* b, scalar* c, int m, int k, int n) {
    std::vector<double> acc(static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) {
        scalar* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) acc[static_cast<size_t>(j)] = static_cast<double>(crow[j]);
        const scalar* arow = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = static_cast<double>(arow[p]);
            const scalar* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                acc[static_cast<size_t>(j)] += av * static_cast<double>(brow[j]);
            }
        }
        for (int j = 0; j < n; ++j) crow[j] = static_cast<scalar>(acc[static_cast<size_t>(j)]);
    }
}

void mm_at_b_acc(const scalar* a, const scalar* b, scalar* c, int m, int k, int n) {
    // c[p, j] += sum_i a[i, p] * b[i, j], i ascending
    std::vector<double> acc(static_cast<size_t>(n));
    for (int p = 0; p < k; ++p) {
        scalar* crow = c + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) acc[static_cast<size_t>(j)] = static_cast<double>(crow[j]);
        for (int i = 0; i < m; ++i) {
            const double av = static_cast<double>(a[static_cast<size_t>(i) * k + p]);
            const scalar* brow = b + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                acc[static_cast<size_t>(j)] += av * static_cast<double>(brow[j]);
            }
        }
        for (int j = 0; j < n; ++j) crow[j] = static_cast<scalar>(acc[static_cast<size_t>(j)]);
    }
}

void mm_a_bt_acc(const scalar* a, const scalar* b, scalar* c, int m, int n, int k) {
    // c[i, p] += sum_j a[i, j] * b[p, j], j ascending
    for (int i = 0; i < m; ++i) {
        const scalar* arow = a + static_cast<size_t>(i) * n;
        scalar* crow = c + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const scalar* brow = b + static_cast<size_t>(p) * n;
            double acc = static_cast<double>(crow[p]);
            for (int j = 0; j < n; ++j) {
                acc += static_cast<double>(arow[j]) * static_cast<double>(brow[j]);
            }
            crow[p] = static_cast<scalar>(acc);
        }
    }
}

double dot(const scalar* a, const scalar* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

void softmax_inplace(scalar* x, int n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(x[i]));
    double sum = 0.0;
    std::vector<double> e(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        e[static_cast<size_t>(i)] = std::exp(static_cast<double>(x[i]) - mx);
        sum += e[static_cast<size_t>(i)];
    }
    for (int i = 0; i < n; ++i) x[i] = static_cast<scalar>(e[static_cast<size_t>(i)] / sum);
}

void layernorm_forward(const scalar* x, const scalar* g, const scalar* b, scalar* out,
                       int n, double eps) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += static_cast<double>(x[i]);
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = static_cast<double>(x[i]) - mean;
        var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < n; ++i) {
        const double norm = (static_cast<double>(x[i]) - mean) * inv;
        out[i] = static_cast<scalar>(norm * static_cast<double>(g[i]) + static_cast<double>(b[i]));
    }
}

} // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul expects rank-2 tensors");
    }
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul inner dimensions differ: " + std::to_string(a.dim(1)) +
                             " vs " + std::to_string(b.dim(0)));
    }
    Tensor c({a.dim(0), b.dim(1)});
    kernels::mm(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
    ensure_finite(c, "matmul");
    return c;
}

Tensor softmax(const Tensor& x) {
    if (x.rank() != 1) {
        throw DimensionError("softmax expects a rank-1 tensor");
    }
    if (x.numel() == 0) {
        throw DomainError("softmax of empty input");
    }
    Tensor out = x;
    kernels::softmax_inplace(out.data(), static_cast<int>(out.numel()));
    ensure_finite(out, "softmax");
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() != 1 || gain.rank() != 1 || bias.rank() != 1) {
        throw DimensionError("layernorm expects rank-1 tensors");
    }
    if (x.numel() != gain.numel() || x.numel() != bias.numel()) {
        throw DimensionError("layernorm length mismatch");
    }
    if (!(eps > 0.0)) {
        throw DomainError("layernorm eps must be positive");
    }
    Tensor out({static_cast<int>(x.numel())});
    kernels::layernorm_forward(x.data(), gain.data(), bias.data(), out.data(),
                               static_cast<int>(x.numel()), eps);
    ensure_finite(out, "layernorm");
    return out;
}

} // namespace steerlab
