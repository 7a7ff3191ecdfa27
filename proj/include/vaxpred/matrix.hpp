#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vaxpred/common.hpp"

namespace vaxpred {

/// Dense row-major matrix. Rows are contiguous, so kernels can hand one row
/// per thread without any cross-thread accumulation.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T value = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, value) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    T* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
    const T* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool all_finite() const {
        for (const T& v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    void fill(T value) {
        for (T& v : data_) v = value;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Mat = Matrix<double>;
using MatF = Matrix<float>;

template <typename T>
Matrix<T> zeros_like(const Matrix<T>& m) {
    return Matrix<T>(m.rows(), m.cols());
}

}  // namespace vaxpred
