#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "fwsvd/error.hpp"
#include "fwsvd/matrix.hpp"
#include "fwsvd/svd.hpp"
#include "test_support.hpp"

using namespace fwsvd;
using fwsvd::testing::orthonormality_defect;
using fwsvd::testing::random_matrix;

TEST(Matrix, FrobeniusErrorOfIdenticalMatricesIsZero) {
    const Matrix a = Matrix::from_rows({{1, -2}, {3.5, 4}});
    EXPECT_EQ(frobenius_error(a, a), 0.0);
}

TEST(Matrix, FrobeniusErrorThreeFourFive) {
    EXPECT_DOUBLE_EQ(frobenius_error(Matrix::from_rows({{3, 4}}), Matrix::from_rows({{0, 0}})), 5.0);
}

TEST(Matrix, FrobeniusErrorRejectsShapeMismatch) {
    EXPECT_THROW(frobenius_error(Matrix(2, 3), Matrix(3, 2)), ValidationError);
}

TEST(Matrix, WeightedErrorHandValue) {
    const Matrix w = Matrix::identity(2);
    const Matrix f = Matrix::from_rows({{4, 0}, {0, 9}});
    EXPECT_DOUBLE_EQ(weighted_frobenius_error(w, Matrix(2, 2), f), 13.0);
}

TEST(Matrix, WeightedErrorWithUnitWeightsIsSquaredError) {
    Rng rng(3);
    const Matrix a = random_matrix(5, 4, rng);
    const Matrix b = random_matrix(5, 4, rng);
    const double e = frobenius_error(a, b);
    EXPECT_NEAR(weighted_frobenius_error(a, b, Matrix(5, 4, 1.0)), e * e, 1e-12 * e * e);
    EXPECT_EQ(weighted_frobenius_error(a, a, Matrix(5, 4, 2.0)), 0.0);
}

TEST(Matrix, WeightedErrorRejectsNegativeWeights) {
    EXPECT_THROW(weighted_frobenius_error(Matrix(1, 2), Matrix(1, 2), Matrix::from_rows({{1, -1}})),
                 ValidationError);
}

TEST(Matrix, ConstructorRejectsWrongDataLength) {
    EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ValidationError);
}

TEST(Matrix, RequireFiniteNamesTheEntry) {
    Matrix m(2, 2);
    m(1, 0) = std::nan("");
    try {
        m.require_finite("weights");
        FAIL() << "expected a ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("(1, 0)"), std::string::npos) << e.what();
    }
}

TEST(Matrix, ProductsAgreeWithExplicitTranspose) {
    Rng rng(5);
    const Matrix a = random_matrix(4, 3, rng);
    const Matrix b = random_matrix(4, 5, rng);
    const Matrix c = random_matrix(6, 3, rng);
    EXPECT_LE(max_abs_diff(matmul_tn(a, b), matmul(a.transposed(), b)), 1e-14);
    EXPECT_LE(max_abs_diff(matmul_nt(a, c), matmul(a, c.transposed())), 1e-14);
}

TEST(Svd, DiagonalMatrix) {
    const SvdResult f = svd(Matrix::from_rows({{3, 0}, {0, 1}}));
    ASSERT_EQ(f.rank(), 2u);
    EXPECT_NEAR(f.s[0], 3.0, 1e-15);
    EXPECT_NEAR(f.s[1], 1.0, 1e-15);
    EXPECT_LE(max_abs_diff(f.u, Matrix::identity(2)), 1e-15);
    EXPECT_LE(max_abs_diff(f.v, Matrix::identity(2)), 1e-15);
}

TEST(Svd, ZeroMatrix) {
    const SvdResult f = svd(Matrix(2, 2));
    EXPECT_EQ(f.s, (std::vector<double>{0.0, 0.0}));
    EXPECT_LE(orthonormality_defect(f.u), 1e-12);
    EXPECT_LE(orthonormality_defect(f.v), 1e-12);
}

TEST(Svd, TwoByTwoMatchesCharacteristicPolynomial) {
    // WᵀW = [[10,14],[14,20]]; λ² − 30λ + 4 = 0.
    const double l1 = (30.0 + std::sqrt(884.0)) / 2.0;
    const double l2 = (30.0 - std::sqrt(884.0)) / 2.0;
    const SvdResult f = svd(Matrix::from_rows({{1, 2}, {3, 4}}));
    EXPECT_NEAR(f.s[0], std::sqrt(l1), 1e-12);
    EXPECT_NEAR(f.s[1], std::sqrt(l2), 1e-12);
    EXPECT_NEAR(f.s[0], 5.4650, 5e-5);
    EXPECT_NEAR(f.s[1], 0.3660, 5e-5);
}

TEST(Svd, RejectsEmptyAndNonFinite) {
    EXPECT_THROW(svd(Matrix()), ValidationError);
    Matrix m(2, 2, 1.0);
    m(0, 1) = INFINITY;
    EXPECT_THROW(svd(m), ValidationError);
}

TEST(Svd, SignConventionLargestLeftEntryNonnegative) {
    Rng rng(11);
    const SvdResult f = svd(random_matrix(7, 5, rng));
    for (std::size_t c = 0; c < f.rank(); ++c) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < f.u.rows(); ++i)
            if (std::abs(f.u(i, c)) > std::abs(f.u(best, c))) best = i;
        EXPECT_GE(f.u(best, c), 0.0);
    }
}

TEST(Svd, RankDeficientInputKeepsOrthonormalFactors) {
    // Rank 1 in a 4×3 shape: two zero singular values need completion.
    Matrix w(4, 3);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) w(i, j) = static_cast<double>(i + 1) * static_cast<double>(j + 2);
    const SvdResult f = svd(w);
    EXPECT_LE(orthonormality_defect(f.u), 1e-10);
    EXPECT_LE(orthonormality_defect(f.v), 1e-10);
    EXPECT_LE(f.s[1], 1e-12 * f.s[0]);
    EXPECT_LE(frobenius_error(w, reconstruct(f)), 1e-12 * frobenius_norm(w));
}

TEST(Svd, RandomShapesSatisfyInvariants) {
    Rng rng(2024);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 1 + rng.below(60);
        const std::size_t m = 1 + rng.below(60);
        const Matrix w = random_matrix(n, m, rng);
        const SvdResult f = svd(w);
        ASSERT_EQ(f.rank(), std::min(n, m));
        for (std::size_t i = 1; i < f.rank(); ++i) EXPECT_GE(f.s[i - 1], f.s[i]);
        EXPECT_GE(f.s.back(), 0.0);
        EXPECT_LE(orthonormality_defect(f.u), 1e-8);
        EXPECT_LE(orthonormality_defect(f.v), 1e-8);
        const double norm = frobenius_norm(w);
        EXPECT_LE(frobenius_error(w, reconstruct(f)), 1e-8 * norm);
        const double energy = std::inner_product(f.s.begin(), f.s.end(), f.s.begin(), 0.0);
        EXPECT_NEAR(energy, norm * norm, 1e-10 * norm * norm);
    }
}

TEST(Svd, IsBitwiseDeterministic) {
    Rng rng(8);
    const Matrix w = random_matrix(23, 17, rng);
    const SvdResult a = svd(w);
    const SvdResult b = svd(w);
    EXPECT_EQ(a.u, b.u);
    EXPECT_EQ(a.v, b.v);
    EXPECT_EQ(a.s, b.s);
}

TEST(Svd, WideMatrixMatchesTransposeSpectrum) {
    Rng rng(9);
    const Matrix w = random_matrix(5, 12, rng);
    const SvdResult wide = svd(w);
    const SvdResult tall = svd(w.transposed());
    for (std::size_t i = 0; i < wide.rank(); ++i) EXPECT_NEAR(wide.s[i], tall.s[i], 1e-12 * tall.s[0]);
}

TEST(Truncate, FullRankIsIdentity) {
    Rng rng(12);
    const Matrix w = random_matrix(9, 6, rng);
    const SvdResult f = svd(w);
    EXPECT_LE(frobenius_error(w, reconstruct(truncate(f, f.rank()))), 1e-8 * frobenius_norm(w));
}

TEST(Truncate, DroppingZeroValueIsExact) {
    SvdResult f;
    f.u = Matrix::identity(3);
    f.v = Matrix::identity(3);
    f.s = {5, 3, 0};
    EXPECT_LE(max_abs_diff(reconstruct(truncate(f, 2)), reconstruct(f)), 1e-10);
}

TEST(Truncate, TailEnergyIdentity) {
    Rng rng(13);
    const Matrix w = random_matrix(100, 80, rng);
    const SvdResult f = svd(w);
    double tail = 0.0;
    for (std::size_t i = 40; i < f.rank(); ++i) tail += f.s[i] * f.s[i];
    EXPECT_NEAR(frobenius_error(w, reconstruct(truncate(f, 40))), std::sqrt(tail), 1e-9 * std::sqrt(tail));
}

TEST(Truncate, RejectsOutOfRangeRank) {
    const SvdResult f = svd(Matrix::identity(3));
    EXPECT_THROW(truncate(f, 0), ValidationError);
    EXPECT_THROW(truncate(f, 4), ValidationError);
}

TEST(Truncate, EckartYoungAgainstRandomFactorizations) {
    Rng rng(14);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(12);
        const std::size_t m = 2 + rng.below(12);
        const std::size_t r = 1 + rng.below(std::min(n, m));
        const Matrix w = random_matrix(n, m, rng);
        const double best = frobenius_error(w, reconstruct(truncate(svd(w), r)));
        const Matrix other = matmul(random_matrix(n, r, rng), random_matrix(r, m, rng));
        EXPECT_LE(best, frobenius_error(w, other) + 1e-9);
    }
}

TEST(Reconstruct, ZeroSpectrumGivesZeroMatrix) {
    Rng rng(15);
    SvdResult f = svd(random_matrix(4, 3, rng));
    std::fill(f.s.begin(), f.s.end(), 0.0);
    EXPECT_EQ(frobenius_norm(reconstruct(f)), 0.0);
}

TEST(Reconstruct, RankOneOuterProduct) {
    SvdResult f;
    f.u = Matrix::from_rows({{1}, {0}, {0}});
    f.v = Matrix::from_rows({{0}, {1}, {0}});
    f.s = {2};
    const Matrix expected = Matrix::from_rows({{0, 2, 0}, {0, 0, 0}, {0, 0, 0}});
    EXPECT_EQ(reconstruct(f), expected);
}
