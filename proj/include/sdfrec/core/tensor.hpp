#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "sdfrec/core/error.hpp"
#include "sdfrec/core/parallel.hpp"

namespace sdfrec {

// Dense row-major matrix of doubles. Vectors are n x 1 or 1 x n; scalars 1 x 1.
class Tensor {
public:
    Tensor() = default;
    Tensor(int rows, int cols) : rows_(rows), cols_(cols), data_((size_t)rows * cols, 0.0) {}
    Tensor(int rows, int cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if ((size_t)rows * cols != data_.size()) throw ShapeError("tensor data size mismatch");
    }

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data_[0] = v;
        return t;
    }
    static Tensor full(int r, int c, double v) {
        Tensor t(r, c);
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    long size() const { return (long)data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(int r) { return data_.data() + (size_t)r * cols_; }
    const double* row(int r) const { return data_.data() + (size_t)r * cols_; }
    double& operator()(int r, int c) { return data_[(size_t)r * cols_ + c]; }
    double operator()(int r, int c) const { return data_[(size_t)r * cols_ + c]; }
    double& at(long i) { return data_[i]; }
    double at(long i) const { return data_[i]; }
    double value() const {
        if (size() != 1) throw ShapeError("value() on non-scalar tensor");
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const {
        return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor reshaped(int r, int c) const {
        if ((long)r * c != size()) throw ShapeError("reshape size mismatch " + shape_str());
        Tensor t = *this;
        t.rows_ = r;
        t.cols_ = c;
        return t;
    }

private:
    int rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

namespace detail {

// All three kernels accumulate each output element sequentially over k in a
// fixed order, so results are independent of batch size, tiling and thread
// count. Parallelism is over disjoint output rows.
constexpr long kGemmGrain = 64;  // rows per parallel chunk

// C[M x N] = A[M x K] * B[K x N]
inline void gemm_nn(const double* A, const double* B, double* C, int M, int K, int N) {
    constexpr int JB = 16;
    auto rows = [&](long i_begin, long i_end) {
        long i = i_begin;
        for (; i + 4 <= i_end; i += 4) {
            const double* a0 = A + (size_t)(i + 0) * K;
            const double* a1 = A + (size_t)(i + 1) * K;
            const double* a2 = A + (size_t)(i + 2) * K;
            const double* a3 = A + (size_t)(i + 3) * K;
            int j0 = 0;
            for (; j0 + JB <= N; j0 += JB) {
                double c0[JB] = {0}, c1[JB] = {0}, c2[JB] = {0}, c3[JB] = {0};
                for (int k = 0; k < K; ++k) {
                    const double* b = B + (size_t)k * N + j0;
                    double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
                    for (int j = 0; j < JB; ++j) {
                        double bj = b[j];
                        c0[j] += v0 * bj;
                        c1[j] += v1 * bj;
                        c2[j] += v2 * bj;
                        c3[j] += v3 * bj;
                    }
                }
                std::memcpy(C + (size_t)(i + 0) * N + j0, c0, sizeof(c0));
                std::memcpy(C + (size_t)(i + 1) * N + j0, c1, sizeof(c1));
                std::memcpy(C + (size_t)(i + 2) * N + j0, c2, sizeof(c2));
                std::memcpy(C + (size_t)(i + 3) * N + j0, c3, sizeof(c3));
            }
            for (; j0 < N; ++j0) {
                for (int r = 0; r < 4; ++r) {
                    const double* a = A + (size_t)(i + r) * K;
                    double s = 0;
                    for (int k = 0; k < K; ++k) s += a[k] * B[(size_t)k * N + j0];
                    C[(size_t)(i + r) * N + j0] = s;
                }
            }
        }
        for (; i < i_end; ++i) {
            const double* a = A + (size_t)i * K;
            double* c = C + (size_t)i * N;
            int j0 = 0;
            for (; j0 + JB <= N; j0 += JB) {
                double acc[JB] = {0};
                for (int k = 0; k < K; ++k) {
                    double av = a[k];
                    const double* b = B + (size_t)k * N + j0;
                    for (int j = 0; j < JB; ++j) acc[j] += av * b[j];
                }
                std::memcpy(c + j0, acc, sizeof(acc));
            }
            for (; j0 < N; ++j0) {
                double s = 0;
                for (int k = 0; k < K; ++k) s += a[k] * B[(size_t)k * N + j0];
                c[j0] = s;
            }
        }
    };
    if ((long)M * K * N > 1 << 18)
        parallel_for(M, kGemmGrain, rows);
    else
        rows(0, M);
}

// C[M x N] = A[M x K] * B[N x K]^T  (dot products of rows)
inline void gemm_nt(const double* A, const double* B, double* C, int M, int K, int N) {
    auto rows = [&](long i_begin, long i_end) {
        for (long i = i_begin; i < i_end; ++i) {
            const double* a = A + (size_t)i * K;
            double* c = C + (size_t)i * N;
            for (int j = 0; j < N; ++j) {
                const double* b = B + (size_t)j * K;
                double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
                int k = 0;
                for (; k + 4 <= K; k += 4) {
                    s0 += a[k] * b[k];
                    s1 += a[k + 1] * b[k + 1];
                    s2 += a[k + 2] * b[k + 2];
                    s3 += a[k + 3] * b[k + 3];
                }
                double s = (s0 + s1) + (s2 + s3);
                for (; k < K; ++k) s += a[k] * b[k];
                c[j] = s;
            }
        }
    };
    if ((long)M * K * N > 1 << 18)
        parallel_for(M, kGemmGrain, rows);
    else
        rows(0, M);
}

// C[M x N] = A[K x M]^T * B[K x N]  (typical weight-gradient shape)
inline void gemm_tn(const double* A, const double* B, double* C, int M, int K, int N) {
    constexpr int JB = 16;
    auto rows = [&](long i_begin, long i_end) {
        for (long i = i_begin; i < i_end; ++i) {
            double* c = C + (size_t)i * N;
            int j0 = 0;
            for (; j0 + JB <= N; j0 += JB) {
                double acc[JB] = {0};
                for (int k = 0; k < K; ++k) {
                    double av = A[(size_t)k * M + i];
                    const double* b = B + (size_t)k * N + j0;
                    for (int j = 0; j < JB; ++j) acc[j] += av * b[j];
                }
                std::memcpy(c + j0, acc, sizeof(acc));
            }
            for (; j0 < N; ++j0) {
                double s = 0;
                for (int k = 0; k < K; ++k) s += A[(size_t)k * M + i] * B[(size_t)k * N + j0];
                c[j0] = s;
            }
        }
    };
    if ((long)M * K * N > 1 << 18)
        parallel_for(M, kGemmGrain, rows);
    else
        rows(0, M);
}

}  // namespace detail

enum class Trans { N, T };

// General matrix product with optional transposes, C = op(A) * op(B).
inline Tensor matmul(const Tensor& a, const Tensor& b, Trans ta = Trans::N, Trans tb = Trans::N) {
    int am = ta == Trans::N ? a.rows() : a.cols();
    int ak = ta == Trans::N ? a.cols() : a.rows();
    int bk = tb == Trans::N ? b.rows() : b.cols();
    int bn = tb == Trans::N ? b.cols() : b.rows();
    if (ak != bk)
        throw ShapeError("matmul inner dim mismatch " + a.shape_str() + " x " + b.shape_str());
    Tensor c(am, bn);
    if (ta == Trans::N && tb == Trans::N)
        detail::gemm_nn(a.data(), b.data(), c.data(), am, ak, bn);
    else if (ta == Trans::N && tb == Trans::T)
        detail::gemm_nt(a.data(), b.data(), c.data(), am, ak, bn);
    else if (ta == Trans::T && tb == Trans::N)
        detail::gemm_tn(a.data(), b.data(), c.data(), am, ak, bn);
    else {
        // A^T * B^T = (B * A)^T; rare, do it the simple way.
        Tensor t = matmul(b, a, Trans::N, Trans::N);
        Tensor r(t.cols(), t.rows());
        for (int i = 0; i < t.rows(); ++i)
            for (int j = 0; j < t.cols(); ++j) r(j, i) = t(i, j);
        return r;
    }
    return c;
}

}  // namespace sdfrec
