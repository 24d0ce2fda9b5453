#include "fwsvd/factorizer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <variant>

#include "fwsvd/error.hpp"
#include "fwsvd/svd.hpp"

namespace fwsvd {

namespace {

void check_rank(const Matrix& w, std::size_t r) {
    const std::size_t k = std::min(w.rows(), w.cols());
    if (r < 1 || r > k) {
        std::ostringstream os;
        os << "rank " << r << " outside [1, " << k << "] for a " << w.rows() << "x" << w.cols()
           << " matrix";
        throw ValidationError(os.str());
    }
}

}  // namespace

std::string_view to_string(Method m) { return m == Method::Svd ? "svd" : "fwsvd"; }

Method parse_method(std::string_view s) {
    if (s == "svd") return Method::Svd;
    if (s == "fwsvd") return Method::Fwsvd;
    throw ValidationError("unknown method '" + std::string(s) + "' (expected svd or fwsvd)");
}

std::size_t rank_for_ratio(std::size_t n, std::size_t m, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) {
        std::ostringstream os;
        os << "rank ratio " << ratio << " outside (0, 1]";
        throw ValidationError(os.str());
    }
    const std::size_t k = std::min(n, m);
    const auto r = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(k) + 1e-9));
    return std::clamp<std::size_t>(r, 1, k);
}

FactorizedLinear factorize_svd(const Matrix& w, std::optional<std::vector<double>> bias,
                               std::size_t r, std::string name) {
    check_rank(w, r);
    const SvdResult f = truncate(svd(w), r);
    return FactorizedLinear{std::move(name), scale_cols(f.u, f.s), f.v.transposed(),
                            std::move(bias)};
}

FactorizedLinear factorize_fwsvd(const Matrix& w, const ImportanceVector& importance,
                                 std::optional<std::vector<double>> bias, std::size_t r,
                                 std::string name) {
    check_rank(w, r);
    if (importance.values.size() != w.rows())
        throw ValidationError("importance length " + std::to_string(importance.values.size()) +
                              " does not match " + std::to_string(w.rows()) + " rows");
    std::vector<double> root(w.rows());
    std::vector<double> inv_root(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const double v = importance.values[i];
        if (!(v > 0.0) || !std::isfinite(v)) {
            std::ostringstream os;
            os << "importance of row " << i << " is " << v << "; must be positive";
            throw ValidationError(os.str());
        }
        root[i] = std::sqrt(v);
        inv_root[i] = 1.0 / root[i];
    }
    const SvdResult f = truncate(svd(scale_rows(w, root)), r);
    Matrix a = scale_rows(scale_cols(f.u, f.s), inv_root);
    return FactorizedLinear{std::move(name), std::move(a), f.v.transposed(), std::move(bias)};
}

double row_weighted_error(const Matrix& w, const Matrix& w_hat, const ImportanceVector& importance) {
    if (w.rows() != w_hat.rows() || w.cols() != w_hat.cols())
        throw ValidationError("row_weighted_error: shape mismatch");
    if (importance.values.size() != w.rows())
        throw ValidationError("row_weighted_error: importance length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) {
            const double d = w(i, j) - w_hat(i, j);
            row += d * d;
        }
        total += importance.values[i] * row;
    }
    return total;
}

std::pair<NetModel, CompressionReport> compress_model(const NetModel& model,
                                                      const FisherMap* fisher,
                                                      const CompressionSpec& spec) {
    if (!spec.rank && !(spec.rank_ratio > 0.0 && spec.rank_ratio <= 1.0))
        throw ValidationError("rank ratio must lie in (0, 1]");
    const auto dense = model.linear_layer_names();
    for (const auto& name : spec.layers)
        if (std::find(dense.begin(), dense.end(), name) == dense.end())
            throw ValidationError("layer filter names unknown dense layer '" + name + "'");
    if (spec.method == Method::Fwsvd && fisher == nullptr)
        throw ValidationError("FWSVD requires a Fisher map");

    CompressionReport report;
    report.method = spec.method;
    NetModel out = model;
    for (const auto& slot : model.layers()) {
        const auto* layer = std::get_if<LinearLayer>(&slot.layer);
        if (!layer) continue;
        if (!spec.layers.empty() && !spec.layers.contains(layer->name)) continue;

        const Matrix& w = layer->weight;
        const std::size_t r = spec.rank ? *spec.rank
                                        : rank_for_ratio(w.rows(), w.cols(), spec.rank_ratio);

        std::optional<ImportanceVector> importance;
        if (fisher) {
            auto it = fisher->weights.find(layer->name);
            if (it == fisher->weights.end())
                throw ValidationError("Fisher map has no entry for layer '" + layer->name + "'");
            if (it->second.rows() != w.rows() || it->second.cols() != w.cols())
                throw ValidationError("Fisher entry for layer '" + layer->name +
                                      "' has the wrong shape");
            importance = row_importance(it->second);
        }

        FactorizedLinear f = spec.method == Method::Svd
                                 ? factorize_svd(w, layer->bias, r, layer->name)
                                 : factorize_fwsvd(w, *importance, layer->bias, r, layer->name);
        const Matrix approx = f.product();

        LayerReport row;
        row.layer = layer->name;
        row.inputs = w.rows();
        row.outputs = w.cols();
        row.rank = r;
        row.params_before = layer->parameter_count();
        row.params_after = f.parameter_count();
        row.err_unweighted = frobenius_error(w, approx);
        if (importance) row.err_weighted = row_weighted_error(w, approx, *importance);
        report.layers.push_back(std::move(row));

        out = replace_layer(out, layer->name, std::move(f));
    }
    return {std::move(out), std::move(report)};
}

}  // namespace fwsvd
