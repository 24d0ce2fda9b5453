#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fwsvd/fisher.hpp"
#include "fwsvd/matrix.hpp"
#include "fwsvd/net.hpp"

namespace fwsvd {

enum class Method { Svd, Fwsvd };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);

struct CompressionSpec {
    Method method = Method::Fwsvd;
    /// Fraction of min(N, M) kept, in (0, 1].
    double rank_ratio = 1.0;
    /// Overrides rank_ratio for every targeted layer.
    std::optional<std::size_t> rank;
    /// Dense layers to compress; empty means all of them.
    std::set<std::string> layers;
};

struct LayerReport {
    std::string layer;
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::size_t rank = 0;
    std::size_t params_before = 0;
    std::size_t params_after = 0;
    /// ‖W − A·B‖_F
    double err_unweighted = 0.0;
    /// Σ_i importance_i Σ_j (W − A·B)_ij², only when a Fisher map was given.
    std::optional<double> err_weighted;
};

struct CompressionReport {
    Method method = Method::Svd;
    std::vector<LayerReport> layers;  // model order
};

/// max(1, ⌊ratio·min(N, M)⌋). The product is nudged by 1e-9 before flooring
/// so ratios such as 0.29 on 100 columns give 29 and not 28.
std::size_t rank_for_ratio(std::size_t n, std::size_t m, double ratio);

/// A = U_r·diag(s_r), B = V_rᵀ: the best unweighted rank-r approximation.
FactorizedLinear factorize_svd(const Matrix& w, std::optional<std::vector<double>> bias,
                               std::size_t r, std::string name = {});

/// Row-weighted rank-r approximation: SVD of diag(√importance)·W, with the
/// weights divided back out of the left factor.
FactorizedLinear factorize_fwsvd(const Matrix& w, const ImportanceVector& importance,
                                 std::optional<std::vector<double>> bias, std::size_t r,
                                 std::string name = {});

/// Σ_i importance_i Σ_j (w − w_hat)_ij², the row-shared weighted objective.
double row_weighted_error(const Matrix& w, const Matrix& w_hat, const ImportanceVector& importance);

/// Replaces every targeted dense layer by its factorization. FWSVD requires a
/// Fisher map covering each targeted layer; SVD uses one only for reporting.
std::pair<NetModel, CompressionReport> compress_model(const NetModel& model,
                                                      const FisherMap* fisher,
                                                      const CompressionSpec& spec);

}  // namespace fwsvd
