#include "fwsvd/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <exception>
#include <thread>
#include <variant>

#include "fwsvd/error.hpp"

namespace fwsvd {

namespace {

struct Accumulator {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

Accumulator make_accumulator(const NetModel& model, const std::vector<std::size_t>& dense) {
    Accumulator acc;
    for (std::size_t l : dense) {
        const auto& layer = std::get<LinearLayer>(model.layers()[l].layer);
        acc.weights.emplace_back(layer.inputs(), layer.outputs());
        acc.biases.emplace_back(layer.bias ? layer.outputs() : 0, 0.0);
    }
    return acc;
}

void accumulate_range(const NetModel& model, const Dataset& data,
                      const std::vector<std::size_t>& dense, std::size_t begin, std::size_t end,
                      Accumulator& acc) {
    for (std::size_t i = begin; i < end; ++i) {
        const Gradients g = backward(model, data.slice(i, i + 1));
        for (std::size_t k = 0; k < dense.size(); ++k) {
            const LayerGradient& lg = g.layers[dense[k]];
            auto dst = acc.weights[k].data();
            auto src = lg.weights.front().data();
            for (std::size_t e = 0; e < src.size(); ++e) {
                if (!std::isfinite(src[e])) {
                    std::ostringstream os;
                    os << "non-finite gradient at example " << i << " in layer '"
                       << layer_name(model.layers()[dense[k]].layer) << "'";
                    throw NumericalError(os.str());
                }
                dst[e] += src[e] * src[e];
            }
            for (std::size_t e = 0; e < lg.bias.size(); ++e) {
                if (!std::isfinite(lg.bias[e])) {
                    std::ostringstream os;
                    os << "non-finite bias gradient at example " << i;
                    throw NumericalError(os.str());
                }
                acc.biases[k][e] += lg.bias[e] * lg.bias[e];
            }
        }
    }
}

}  // namespace

FisherMap FisherMap::scaled(double c) const {
    FisherMap out = *this;
    for (auto& [name, m] : out.weights)
        for (double& v : m.data()) v *= c;
    for (auto& [name, b] : out.biases)
        for (double& v : b) v *= c;
    return out;
}

FisherMap accumulate_fisher(const NetModel& model, const Dataset& data,
                            const FisherOptions& options) {
    if (data.size() == 0) throw ValidationError("accumulate_fisher: empty dataset");
    std::vector<std::size_t> dense;
    for (std::size_t l = 0; l < model.layers().size(); ++l)
        if (std::holds_alternative<LinearLayer>(model.layers()[l].layer)) dense.push_back(l);
    if (dense.empty()) throw ValidationError("accumulate_fisher: model has no dense layers");

    const std::size_t n = data.size();
    const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, n);

    std::vector<Accumulator> shards;
    for (std::size_t w = 0; w < workers; ++w) shards.push_back(make_accumulator(model, dense));

    if (workers == 1) {
        accumulate_range(model, data, dense, 0, n, shards[0]);
    } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::jthread> threads;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = n * w / workers;
            const std::size_t end = n * (w + 1) / workers;
            threads.emplace_back([&, w, begin, end] {
                try {
                    accumulate_range(model, data, dense, begin, end, shards[w]);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        threads.clear();
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    Accumulator& total = shards[0];
    for (std::size_t w = 1; w < workers; ++w) {
        for (std::size_t k = 0; k < dense.size(); ++k) {
            total.weights[k] = total.weights[k] + shards[w].weights[k];
            for (std::size_t e = 0; e < total.biases[k].size(); ++e)
                total.biases[k][e] += shards[w].biases[k][e];
        }
    }

    const double inv_n = 1.0 / static_cast<double>(n);
    FisherMap out;
    out.example_count = n;
    for (std::size_t k = 0; k < dense.size(); ++k) {
        const auto& layer = std::get<LinearLayer>(model.layers()[dense[k]].layer);
        out.weights.emplace(layer.name, inv_n * total.weights[k]);
        if (layer.bias) {
            for (double& v : total.biases[k]) v *= inv_n;
            out.biases.emplace(layer.name, std::move(total.biases[k]));
        }
    }
    return out;
}

ImportanceVector row_importance(const Matrix& fisher) {
    if (fisher.empty()) throw ValidationError("row_importance: empty matrix");
    ImportanceVector out;
    out.values.resize(fisher.rows(), 0.0);
    for (std::size_t i = 0; i < fisher.rows(); ++i) {
        for (std::size_t j = 0; j < fisher.cols(); ++j) {
            const double f = fisher(i, j);
            if (!(f >= 0.0) || !std::isfinite(f)) {
                std::ostringstream os;
                os << "row_importance: invalid Fisher entry " << f << " at (" << i << ", " << j
                   << ")";
                throw ValidationError(os.str());
            }
            out.values[i] += f;
        }
    }
    double mean = 0.0;
    for (double v : out.values) mean += v;
    mean /= static_cast<double>(out.values.size());
    const double floor = 1e-6 * mean + 1e-12;
    out.diagonal.resize(out.values.size());
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        out.values[i] = std::max(out.values[i], floor);
        out.diagonal[i] = std::sqrt(out.values[i]);
    }
    return out;
}

void check_fisher_covers(const FisherMap& fisher, const NetModel& model) {
    const auto names = model.linear_layer_names();
    for (const auto& name : names) {
        auto it = fisher.weights.find(name);
        if (it == fisher.weights.end())
            throw ValidationError("Fisher map has no entry for layer '" + name + "'");
        const auto& layer = std::get<LinearLayer>(model.layers()[*model.find(name)].layer);
        if (it->second.rows() != layer.inputs() || it->second.cols() != layer.outputs())
            throw ValidationError("Fisher entry for layer '" + name + "' has the wrong shape");
    }
    for (const auto& [name, m] : fisher.weights) {
        if (std::find(names.begin(), names.end(), name) == names.end())
            throw ValidationError("Fisher map names layer '" + name +
                                  "' which is not a dense layer of the model");
    }
}

}  // namespace fwsvd
