#pragma once

#include <cstdint>
#include <string>

#include "vaxpred/matrix.hpp"

// Dense kernels used by the model. Parallelization rule: every output element
// is written by exactly one thread and inner accumulation loops run serially
// in a fixed order, so results are bit-identical regardless of thread count.
// The `if` clauses keep tiny problems (gradient checks, unit tests) serial.

namespace vaxpred {

namespace detail {
inline void require_shape(bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("shape mismatch in ") + what);
}
}  // namespace detail

/// C = A * B
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require_shape(a.cols() == b.rows(), "matmul");
    const std::int64_t m = static_cast<std::int64_t>(a.rows());
    const std::int64_t k = static_cast<std::int64_t>(a.cols());
    const std::int64_t n = static_cast<std::int64_t>(b.cols());
    Matrix<T> c(a.rows(), b.cols());
#pragma omp parallel for schedule(static) if (m * k * n > 16384)
    for (std::int64_t i = 0; i < m; ++i) {
        T* ci = c.row_ptr(static_cast<std::size_t>(i));
        const T* ai = a.row_ptr(static_cast<std::size_t>(i));
        for (std::int64_t p = 0; p < k; ++p) {
            const T aip = ai[p];
            const T* bp = b.row_ptr(static_cast<std::size_t>(p));
            for (std::int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
    return c;
}

/// C = A * B^T
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require_shape(a.cols() == b.cols(), "matmul_nt");
    const std::int64_t m = static_cast<std::int64_t>(a.rows());
    const std::int64_t k = static_cast<std::int64_t>(a.cols());
    const std::int64_t n = static_cast<std::int64_t>(b.rows());
    Matrix<T> c(a.rows(), b.rows());
#pragma omp parallel for schedule(static) if (m * k * n > 16384)
    for (std::int64_t i = 0; i < m; ++i) {
        T* ci = c.row_ptr(static_cast<std::size_t>(i));
        const T* ai = a.row_ptr(static_cast<std::size_t>(i));
        for (std::int64_t j = 0; j < n; ++j) {
            const T* bj = b.row_ptr(static_cast<std::size_t>(j));
            T acc{};
            for (std::int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
    return c;
}

/// C = A^T * B
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
    detail::require_shape(a.rows() == b.rows(), "matmul_tn");
    const std::int64_t m = static_cast<std::int64_t>(a.cols());
    const std::int64_t k = static_cast<std::int64_t>(a.rows());
    const std::int64_t n = static_cast<std::int64_t>(b.cols());
    Matrix<T> c(a.cols(), b.cols());
#pragma omp parallel for schedule(static) if (m * k * n > 16384)
    for (std::int64_t i = 0; i < m; ++i) {
        T* ci = c.row_ptr(static_cast<std::size_t>(i));
        for (std::int64_t p = 0; p < k; ++p) {
            const T api = a(static_cast<std::size_t>(p), static_cast<std::size_t>(i));
            const T* bp = b.row_ptr(static_cast<std::size_t>(p));
            for (std::int64_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
    return c;
}

/// Row-wise softmax with max subtraction, in place.
template <typename T>
void softmax_rows_inplace(Matrix<T>& s) {
    const std::int64_t m = static_cast<std::int64_t>(s.rows());
    const std::int64_t n = static_cast<std::int64_t>(s.cols());
#pragma omp parallel for schedule(static) if (m * n > 16384)
    for (std::int64_t i = 0; i < m; ++i) {
        T* row = s.row_ptr(static_cast<std::size_t>(i));
        T mx = row[0];
        for (std::int64_t j = 1; j < n; ++j) mx = row[j] > mx ? row[j] : mx;
        T sum{};
        for (std::int64_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::int64_t j = 0; j < n; ++j) row[j] /= sum;
    }
}

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
    detail::require_shape(a.same_shape(b), "add_inplace");
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

template <typename T>
void axpy_inplace(T alpha, const Matrix<T>& x, Matrix<T>& y) {
    detail::require_shape(x.same_shape(y), "axpy_inplace");
    for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] += alpha * x.data()[i];
}

template <typename T>
void scale_inplace(Matrix<T>& a, T alpha) {
    for (T& v : a.data()) v *= alpha;
}

/// Copy columns [col0, col0+width) of src into a new matrix.
template <typename T>
Matrix<T> take_cols(const Matrix<T>& src, std::size_t col0, std::size_t width) {
    detail::require_shape(col0 + width <= src.cols(), "take_cols");
    Matrix<T> out(src.rows(), width);
    for (std::size_t i = 0; i < src.rows(); ++i) {
        const T* s = src.row_ptr(i) + col0;
        T* d = out.row_ptr(i);
        for (std::size_t j = 0; j < width; ++j) d[j] = s[j];
    }
    return out;
}

/// Overwrite columns [col0, col0+src.cols()) of dst with src.
template <typename T>
void copy_cols_inplace(Matrix<T>& dst, const Matrix<T>& src, std::size_t col0) {
    detail::require_shape(dst.rows() == src.rows() && col0 + src.cols() <= dst.cols(),
                          "copy_cols_inplace");
    for (std::size_t i = 0; i < src.rows(); ++i) {
        T* d = dst.row_ptr(i) + col0;
        const T* s = src.row_ptr(i);
        for (std::size_t j = 0; j < src.cols(); ++j) d[j] = s[j];
    }
}

/// Add src into columns [col0, col0+width) of dst.
template <typename T>
void add_cols_inplace(Matrix<T>& dst, const Matrix<T>& src, std::size_t col0) {
    detail::require_shape(dst.rows() == src.rows() && col0 + src.cols() <= dst.cols(),
                          "add_cols_inplace");
    for (std::size_t i = 0; i < src.rows(); ++i) {
        T* d = dst.row_ptr(i) + col0;
        const T* s = src.row_ptr(i);
        for (std::size_t j = 0; j < src.cols(); ++j) d[j] += s[j];
    }
}

}  // namespace vaxpred
