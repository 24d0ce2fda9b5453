#include "fwsvd/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>

#include "fwsvd/error.hpp"

namespace fwsvd {

namespace {

constexpr double kOrthoTol = 1e-12;
constexpr int kMaxSweeps = 100;

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void rotate(std::span<double> p, std::span<double> q, double c, double s) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double x = p[i];
        const double y = q[i];
        p[i] = c * x - s * y;
        q[i] = s * x + c * y;
    }
}

// Column-major scratch store: column j occupies [j*len, (j+1)*len).
struct Columns {
    std::size_t len;
    std::size_t count;
    std::vector<double> data;

    std::span<double> col(std::size_t j) { return {data.data() + j * len, len}; }
    std::span<const double> col(std::size_t j) const { return {data.data() + j * len, len}; }
};

// Replaces column j of u with a unit vector orthogonal to every column marked
// in `fixed`. The standard basis vector with the largest residual after
// projection is used; its residual norm is at least 1/√N because fewer than N
// orthonormal columns are fixed.
void complete_column(Matrix& u, std::size_t j, const std::vector<bool>& fixed) {
    const std::size_t n = u.rows();
    std::vector<double> cand(n);
    std::vector<double> best(n);
    double best_norm = -1.0;
    for (std::size_t e = 0; e < n; ++e) {
        std::fill(cand.begin(), cand.end(), 0.0);
        cand[e] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t c = 0; c < u.cols(); ++c) {
                if (c == j || !fixed[c]) continue;
                double proj = 0.0;
                for (std::size_t i = 0; i < n; ++i) proj += u(i, c) * cand[i];
                for (std::size_t i = 0; i < n; ++i) cand[i] -= proj * u(i, c);
            }
        }
        const double norm = std::sqrt(dot(cand, cand));
        if (norm > best_norm + 1e-12) {
            best_norm = norm;
            best = cand;
        }
    }
    for (std::size_t i = 0; i < n; ++i) u(i, j) = best[i] / best_norm;
}

// SVD of a tall matrix (rows ≥ cols).
SvdResult jacobi_tall(const Matrix& w) {
    const std::size_t n = w.rows();
    const std::size_t m = w.cols();

    Columns a{n, m, std::vector<double>(n * m)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) a.data[j * n + i] = w(i, j);
    Columns v{m, m, std::vector<double>(m * m, 0.0)};
    for (std::size_t j = 0; j < m; ++j) v.data[j * m + j] = 1.0;

    const double negligible = std::numeric_limits<double>::epsilon() * frobenius_norm(w);
    const double negligible_sq = negligible * negligible;

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < m; ++p) {
            for (std::size_t q = p + 1; q < m; ++q) {
                auto cp = a.col(p);
                auto cq = a.col(q);
                const double alpha = dot(cp, cp);
                const double beta = dot(cq, cq);
                if (alpha <= negligible_sq || beta <= negligible_sq) continue;
                const double gamma = dot(cp, cq);
                if (std::abs(gamma) <= kOrthoTol * std::sqrt(alpha) * std::sqrt(beta)) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate(cp, cq, c, s);
                rotate(v.col(p), v.col(q), c, s);
                rotated = true;
            }
        }
        if (!rotated) break;
    }

    std::vector<double> norms(m);
    for (std::size_t j = 0; j < m; ++j) norms[j] = std::sqrt(dot(a.col(j), a.col(j)));

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    SvdResult out{Matrix(n, m), std::vector<double>(m), Matrix(m, m)};
    std::vector<bool> fixed(m, false);
    std::vector<std::size_t> deficient;
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t j = order[k];
        out.s[k] = norms[j];
        auto vc = v.col(j);
        for (std::size_t i = 0; i < m; ++i) out.v(i, k) = vc[i];
        if (norms[j] > negligible) {
            auto ac = a.col(j);
            for (std::size_t i = 0; i < n; ++i) out.u(i, k) = ac[i] / norms[j];
            fixed[k] = true;
        } else {
            deficient.push_back(k);
        }
    }
    for (std::size_t k : deficient) {
        complete_column(out.u, k, fixed);
        fixed[k] = true;
    }
    return out;
}

void apply_sign_convention(SvdResult& f) {
    for (std::size_t k = 0; k < f.rank(); ++k) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < f.u.rows(); ++i) {
            const double mag = std::abs(f.u(i, k));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (f.u(arg, k) < 0.0) {
            for (std::size_t i = 0; i < f.u.rows(); ++i) f.u(i, k) = -f.u(i, k);
            for (std::size_t i = 0; i < f.v.rows(); ++i) f.v(i, k) = -f.v(i, k);
        }
    }
}

}  // namespace

SvdResult svd(const Matrix& w) {
    if (w.rows() == 0 || w.cols() == 0) throw ValidationError("svd: empty matrix");
    w.require_finite("svd input");

    SvdResult f;
    if (w.rows() >= w.cols()) {
        f = jacobi_tall(w);
    } else {
        SvdResult t = jacobi_tall(w.transposed());
        f.u = std::move(t.v);
        f.s = std::move(t.s);
        f.v = std::move(t.u);
    }
    apply_sign_convention(f);
    return f;
}

SvdResult truncate(const SvdResult& f, std::size_t r) {
    if (r < 1 || r > f.rank()) {
        std::ostringstream os;
        os << "truncate: rank " << r << " outside [1, " << f.rank() << "]";
        throw ValidationError(os.str());
    }
    SvdResult out{Matrix(f.u.rows(), r), std::vector<double>(f.s.begin(), f.s.begin() + r),
                  Matrix(f.v.rows(), r)};
    for (std::size_t i = 0; i < f.u.rows(); ++i)
        for (std::size_t k = 0; k < r; ++k) out.u(i, k) = f.u(i, k);
    for (std::size_t i = 0; i < f.v.rows(); ++i)
        for (std::size_t k = 0; k < r; ++k) out.v(i, k) = f.v(i, k);
    return out;
}

Matrix reconstruct(const SvdResult& f) {
    if (f.u.cols() != f.rank() || f.v.cols() != f.rank())
        throw ValidationError("reconstruct: factor shapes disagree with rank");
    return matmul_nt(scale_cols(f.u, f.s), f.v);
}

}  // namespace fwsvd
