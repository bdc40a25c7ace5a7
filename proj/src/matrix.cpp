#include "subnetcl/matrix.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

namespace subnetcl {

std::size_t kernel_threads() {
    static const std::size_t n = [] {
        const char* env = std::getenv("SUBNETCL_THREADS");
        if (!env) return std::size_t{1};
        long v = std::strtol(env, nullptr, 10);
        return v > 1 ? static_cast<std::size_t>(v) : std::size_t{1};
    }();
    return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    std::size_t nthreads = std::min(kernel_threads(), n);
    if (nthreads <= 1) {
        body(0, n);
        return;
    }
    std::vector<std::thread> workers;
    std::size_t chunk = (n + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
        std::size_t lo = t * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& w : workers) w.join();
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw DimensionError("matmul: inner dims disagree");
    Matrix c(a.rows, b.cols);
    parallel_for(a.rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const double* arow = &a.v[i * a.cols];
            double* crow = &c.v[i * c.cols];
            for (std::size_t k = 0; k < a.cols; ++k) {
                double aik = arow[k];
                if (aik == 0.0) continue;
                const double* brow = &b.v[k * b.cols];
                for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
            }
        }
    });
    return c;
}

Matrix matmul_trans_a(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw DimensionError("matmul_trans_a: inner dims disagree");
    Matrix c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = &a.v[k * a.cols];
        const double* brow = &b.v[k * b.cols];
        for (std::size_t i = 0; i < a.cols; ++i) {
            double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = &c.v[i * c.cols];
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

Matrix matmul_trans_b(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw DimensionError("matmul_trans_b: inner dims disagree");
    Matrix c(a.rows, b.rows);
    parallel_for(a.rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const double* arow = &a.v[i * a.cols];
            double* crow = &c.v[i * c.cols];
            for (std::size_t j = 0; j < b.rows; ++j) {
                const double* brow = &b.v[j * b.cols];
                double acc = 0.0;
                for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
                crow[j] = acc;
            }
        }
    });
    return c;
}

bool all_finite(const Matrix& m) {
    for (double x : m.v)
        if (!std::isfinite(x)) return false;
    return true;
}

bool all_finite(const Vector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace subnetcl
