#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "subnetcl/error.hpp"

namespace subnetcl {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), v(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }

    std::size_t size() const { return v.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// C = A(m,k) * B(k,n)
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A^T(k,m) * B(k,n)
Matrix matmul_trans_a(const Matrix& a, const Matrix& b);
// C = A(m,k) * B^T(n,k)
Matrix matmul_trans_b(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

/// Deterministic row-partitioned parallel loop. Thread count comes from
/// SUBNETCL_THREADS (default 1); each index is handled by exactly one thread
/// so results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

std::size_t kernel_threads();

}  // namespace subnetcl
