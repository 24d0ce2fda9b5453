#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace fwsvd {

/// Dense row-major matrix of doubles.
///
/// A 0×0 matrix is the default-constructed "empty" value; every matrix that
/// carries data has rows() ≥ 1 and cols() ≥ 1.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    /// Builds from nested rows, e.g. Matrix::from_rows({{1, 2}, {3, 4}}).
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(std::size_t n);
    static Matrix diagonal(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    Matrix transposed() const;

    /// Throws ValidationError naming the first non-finite entry.
    void require_finite(const char* what = "matrix") const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without forming the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without forming the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

/// diag(d)·a
Matrix scale_rows(const Matrix& a, std::span<const double> d);
/// a·diag(d)
Matrix scale_cols(const Matrix& a, std::span<const double> d);

double frobenius_norm(const Matrix& a);

/// ‖a − b‖_F. Throws ValidationError on shape mismatch.
double frobenius_error(const Matrix& a, const Matrix& b);

/// Σ_ij fisher_ij·(w_ij − w_hat_ij)², the element-weighted reconstruction
/// objective. Rejects shape mismatch and negative weights.
double weighted_frobenius_error(const Matrix& w, const Matrix& w_hat, const Matrix& fisher);

/// Largest absolute entry of a − b.
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace fwsvd
