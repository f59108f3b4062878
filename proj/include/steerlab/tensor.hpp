#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "steerlab/errors.hpp"

namespace steerlab {

// Global float precision, fixed at build configuration.
#ifdef STEERLAB_SCALAR_F64
using scalar = double;
#else
using scalar = float;
#endif

// Dense row-major tensor. The only math substrate used by the model and
// steering code. All reductions accumulate in 64-bit with a fixed
// left-to-right order so results are bit-reproducible on a given build.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<scalar> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, scalar v);

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }

    scalar* data() { return data_.data(); }
    const scalar* data() const { return data_.data(); }
    std::span<scalar> values() { return data_; }
    std::span<const scalar> values() const { return data_; }

    scalar& at(std::size_t i) { return data_[i]; }
    scalar at(std::size_t i) const { return data_[i]; }
    scalar& at2(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    scalar at2(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }

    // Contiguous d-length slice of a rank-3 [a, b, d] tensor at (i, j).
    std::span<scalar> slice3(int i, int j);
    std::span<const scalar> slice3(int i, int j) const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    std::vector<int> shape_;
    std::vector<scalar> data_;
};

// Checked public operations. Outputs are verified finite.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Unchecked kernels for hot loops. Same deterministic summation order as the
// checked ops; callers own shape agreement.
namespace kernels {

// c[m,n] = a[m,k] * b[k,n]
void mm(const scalar* a, const scalar* b, scalar* c, int m, int k, int n);
// c[m,n] += a[m,k] * b[k,n]
void mm_acc(const scalar* a, const scalar* b, scalar* c, int m, int k, int n);
// c[k,n] += a[m,k]^T * b[m,n]
void mm_at_b_acc(const scalar* a, const scalar* b, scalar* c, int m, int k, int n);
// c[m,k] += a[m,n] * b[k,n]^T
void mm_a_bt_acc(const scalar* a, const scalar* b, scalar* c, int m, int n, int k);

double dot(const scalar* a, const scalar* b, int n);
void softmax_inplace(scalar* x, int n);
void layernorm_forward(const scalar* x, const scalar* g, const scalar* b, scalar* out,
                       int n, double eps);

} // namespace kernels

} // namespace steerlab
