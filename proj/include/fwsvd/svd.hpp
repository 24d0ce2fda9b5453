#pragma once

#include <cstddef>
#include <vector>

#include "fwsvd/matrix.hpp"

namespace fwsvd {

/// Thin singular value decomposition W = U·diag(s)·Vᵀ.
///
/// u is N×k and v is M×k with orthonormal columns; s is non-increasing and
/// nonnegative. A freshly computed decomposition has k = min(N, M), trailing
/// zeros included.
struct SvdResult {
    Matrix u;
    std::vector<double> s;
    Matrix v;

    std::size_t rank() const noexcept { return s.size(); }
};

/// One-sided (Hestenes) Jacobi SVD.
///
/// Cyclic sweeps rotate column pairs until every pair satisfies
/// |⟨a_p, a_q⟩| ≤ 1e-12·‖a_p‖‖a_q‖. Output is deterministic: pairs are
/// ordered by a stable sort on s, and each pair is signed so that the
/// largest-magnitude entry of its left vector (lowest index on ties) is
/// nonnegative. Left vectors of numerically zero singular values are
/// completed to an orthonormal basis.
///
/// Throws ValidationError if W is empty or holds a non-finite entry.
SvdResult svd(const Matrix& w);

/// Leading-r slice of a decomposition. Requires 1 ≤ r ≤ f.rank().
SvdResult truncate(const SvdResult& f, std::size_t r);

/// U·diag(s)·Vᵀ
Matrix reconstruct(const SvdResult& f);

}  // namespace fwsvd
