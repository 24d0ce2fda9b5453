#pragma once

// Helpers and independent oracles shared by the unit and acceptance suites.
// Nothing here calls into the SVD or factorizer code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "fwsvd/matrix.hpp"
#include "fwsvd/net.hpp"
#include "fwsvd/random.hpp"

namespace fwsvd::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

inline std::vector<double> random_positive(std::size_t n, Rng& rng, double lo = 0.05, double hi = 5.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline double orthonormality_defect(const Matrix& q) {
    double worst = 0.0;
    for (std::size_t a = 0; a < q.cols(); ++a) {
        for (std::size_t b = 0; b < q.cols(); ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < q.rows(); ++i) s += q(i, a) * q(i, b);
            worst = std::max(worst, std::abs(s - (a == b ? 1.0 : 0.0)));
        }
    }
    return worst;
}

/// Singular values as square roots of the eigenvalues of the smaller Gram
/// matrix, from Eigen's symmetric eigensolver; sorted non-increasing.
inline std::vector<double> singular_values_via_eigen(const Matrix& w) {
    const bool tall = w.rows() >= w.cols();
    const std::size_t k = tall ? w.cols() : w.rows();
    Eigen::MatrixXd gram(k, k);
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
            double s = 0.0;
            if (tall)
                for (std::size_t i = 0; i < w.rows(); ++i) s += w(i, a) * w(i, b);
            else
                for (std::size_t j = 0; j < w.cols(); ++j) s += w(a, j) * w(b, j);
            gram(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = s;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    std::vector<double> s(k);
    for (std::size_t i = 0; i < k; ++i)
        s[i] = std::sqrt(std::max(0.0, es.eigenvalues()(static_cast<Eigen::Index>(i))));
    std::sort(s.begin(), s.end(), std::greater<>());
    return s;
}

/// Row-weighted objective Σ_i w_i Σ_j (W − A·B)_ij², evaluated directly.
inline double row_objective(const Matrix& w, const std::vector<double>& weights, const Matrix& a,
                            const Matrix& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            double p = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) p += a(i, k) * b(k, j);
            const double d = w(i, j) - p;
            total += weights[i] * d * d;
        }
    }
    return total;
}

/// Best objective reached by plain gradient descent with Armijo backtracking
/// on the row-weighted rank-r objective, over several random restarts.
inline double gradient_descent_oracle(const Matrix& w, const std::vector<double>& weights,
                                      std::size_t r, std::size_t steps, std::size_t restarts,
                                      std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = w.rows();
    const std::size_t m = w.cols();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t restart = 0; restart < restarts; ++restart) {
        Matrix a = random_matrix(n, r, rng, 0.5);
        Matrix b = random_matrix(r, m, rng, 0.5);
        double f = row_objective(w, weights, a, b);
        double step = 1e-2;
        for (std::size_t it = 0; it < steps; ++it) {
            Matrix resid(n, m);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    double p = 0.0;
                    for (std::size_t k = 0; k < r; ++k) p += a(i, k) * b(k, j);
                    resid(i, j) = weights[i] * (p - w(i, j));
                }
            Matrix ga(n, r), gb(r, m);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < r; ++k) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < m; ++j) s += resid(i, j) * b(k, j);
                    ga(i, k) = 2.0 * s;
                }
            for (std::size_t k = 0; k < r; ++k)
                for (std::size_t j = 0; j < m; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < n; ++i) s += a(i, k) * resid(i, j);
                    gb(k, j) = 2.0 * s;
                }
            double gnorm2 = 0.0;
            for (double v : ga.data()) gnorm2 += v * v;
            for (double v : gb.data()) gnorm2 += v * v;
            if (gnorm2 < 1e-30) break;

            step *= 2.0;
            for (;;) {
                Matrix a2 = a, b2 = b;
                for (std::size_t e = 0; e < a2.size(); ++e) a2.data()[e] -= step * ga.data()[e];
                for (std::size_t e = 0; e < b2.size(); ++e) b2.data()[e] -= step * gb.data()[e];
                const double f2 = row_objective(w, weights, a2, b2);
                if (f2 <= f - 0.5 * step * gnorm2 || step < 1e-20) {
                    if (f2 <= f) {
                        a = std::move(a2);
                        b = std::move(b2);
                        f = f2;
                    }
                    break;
                }
                step *= 0.5;
            }
        }
        best = std::min(best, f);
    }
    return best;
}

/// Central-difference derivative of the mean batch loss with respect to one
/// scalar parameter, addressed by block and offset in parameter_blocks order.
inline double finite_difference(NetModel model, const Dataset& batch, std::size_t block,
                                std::size_t offset, double h) {
    auto blocks = model.parameter_blocks();
    const double orig = blocks[block][offset];
    blocks[block][offset] = orig + h;
    const double up = forward(model, batch).loss;
    blocks[block][offset] = orig - h;
    const double down = forward(model, batch).loss;
    blocks[block][offset] = orig;
    return (up - down) / (2.0 * h);
}

inline double gradient_relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-7});
}

/// Regression batch with Gaussian inputs and targets.
inline Dataset random_regression(std::size_t n, std::size_t in, std::size_t out, Rng& rng) {
    Dataset d;
    d.inputs = random_matrix(n, in, rng);
    d.targets = random_matrix(n, out, rng);
    return d;
}

}  // namespace fwsvd::testing
