#include "fwsvd/net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "fwsvd/error.hpp"

namespace fwsvd {

namespace {

constexpr double kDivergenceLimit = 1e12;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

void add_bias(Matrix& z, const std::optional<std::vector<double>>& bias) {
    if (!bias) return;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        auto r = z.row(i);
        for (std::size_t j = 0; j < z.cols(); ++j) r[j] += (*bias)[j];
    }
}

void activate(Matrix& z, Activation act) {
    switch (act) {
        case Activation::Identity:
            return;
        case Activation::Tanh:
            for (double& v : z.data()) v = std::tanh(v);
            return;
        case Activation::Relu:
            for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
            return;
    }
}

// Multiplies the upstream gradient by the activation derivative, expressed
// through the activation output.
void activation_backward(Matrix& grad, const Matrix& out, Activation act) {
    auto g = grad.data();
    auto o = out.data();
    switch (act) {
        case Activation::Identity:
            return;
        case Activation::Tanh:
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - o[i] * o[i];
            return;
        case Activation::Relu:
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!(o[i] > 0.0)) g[i] = 0.0;
            return;
    }
}

std::vector<double> column_sums(const Matrix& m) {
    std::vector<double> s(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) s[j] += r[j];
    }
    return s;
}

void check_batch(const NetModel& model, const Dataset& batch) {
    if (model.layers().empty()) throw ValidationError("model has no layers");
    if (batch.size() == 0) throw ValidationError("empty batch");
    if (batch.inputs.cols() != model.input_dim()) {
        std::ostringstream os;
        os << "layer '" << layer_name(model.layers().front().layer) << "' expects "
           << model.input_dim() << " inputs, batch has " << batch.inputs.cols();
        throw ValidationError(os.str());
    }
    if (model.loss_head() == LossHead::MeanSquaredError) {
        if (batch.targets.rows() != batch.size() || batch.targets.cols() != model.output_dim()) {
            std::ostringstream os;
            os << "layer '" << layer_name(model.layers().back().layer) << "' produces "
               << model.output_dim() << " outputs, targets are " << batch.targets.rows() << "x"
               << batch.targets.cols();
            throw ValidationError(os.str());
        }
    } else {
        if (batch.labels.size() != batch.size())
            throw ValidationError("cross-entropy head needs one label per example");
        for (std::size_t l : batch.labels)
            if (l >= model.output_dim()) {
                std::ostringstream os;
                os << "label " << l << " out of range for " << model.output_dim() << " classes";
                throw ValidationError(os.str());
            }
    }
}

struct Tape {
    std::vector<Matrix> inputs;    // input to layer l
    std::vector<Matrix> hidden;    // X·A for factorized layers
    std::vector<Matrix> outputs;   // post-activation output of layer l
};

Matrix run_forward(const NetModel& model, const Matrix& x, Tape* tape) {
    Matrix h = x;
    for (const auto& slot : model.layers()) {
        Matrix z;
        Matrix mid;
        std::visit(overloaded{[&](const LinearLayer& l) {
                                  z = matmul(h, l.weight);
                                  add_bias(z, l.bias);
                              },
                              [&](const FactorizedLinear& l) {
                                  mid = matmul(h, l.a);
                                  z = matmul(mid, l.b);
                                  add_bias(z, l.bias);
                              }},
                   slot.layer);
        activate(z, slot.activation);
        if (tape) {
            tape->inputs.push_back(std::move(h));
            tape->hidden.push_back(std::move(mid));
            tape->outputs.push_back(z);
        }
        h = std::move(z);
    }
    return h;
}

// Mean loss and, optionally, its gradient with respect to the outputs.
double loss_and_grad(const NetModel& model, const Matrix& y, const Dataset& batch, Matrix* dy) {
    const std::size_t n = y.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    if (dy) *dy = Matrix(y.rows(), y.cols());
    if (model.loss_head() == LossHead::MeanSquaredError) {
        for (std::size_t i = 0; i < n; ++i) {
            double ex = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) {
                const double d = y(i, j) - batch.targets(i, j);
                ex += d * d;
                if (dy) (*dy)(i, j) = 2.0 * d * inv_n;
            }
            total += ex;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            auto r = y.row(i);
            const double mx = *std::max_element(r.begin(), r.end());
            double sum = 0.0;
            for (double v : r) sum += std::exp(v - mx);
            const double lse = mx + std::log(sum);
            total += lse - r[batch.labels[i]];
            if (dy) {
                for (std::size_t j = 0; j < y.cols(); ++j) {
                    const double p = std::exp(r[j] - lse);
                    (*dy)(i, j) = (p - (j == batch.labels[i] ? 1.0 : 0.0)) * inv_n;
                }
            }
        }
    }
    return total * inv_n;
}

std::string describe(const Layer& layer) {
    std::ostringstream os;
    os << "layer '" << layer_name(layer) << "' (" << layer_inputs(layer) << "x"
       << layer_outputs(layer) << ")";
    return os.str();
}

void validate_layer(const Layer& layer) {
    std::visit(overloaded{[](const LinearLayer& l) {
                              if (l.weight.empty())
                                  throw ValidationError("layer '" + l.name + "' has empty weight");
                              l.weight.require_finite(("layer '" + l.name + "' weight").c_str());
                          },
                          [](const FactorizedLinear& l) {
                              if (l.a.empty() || l.b.empty() || l.a.cols() != l.b.rows())
                                  throw ValidationError("layer '" + l.name +
                                                        "' has inconsistent factor shapes");
                              l.a.require_finite(("layer '" + l.name + "' A").c_str());
                              l.b.require_finite(("layer '" + l.name + "' B").c_str());
                          }},
               layer);
    const auto& bias = std::visit([](const auto& l) -> const auto& { return l.bias; }, layer);
    if (bias) {
        if (bias->size() != layer_outputs(layer))
            throw ValidationError(describe(layer) + " bias length " +
                                  std::to_string(bias->size()));
        for (double b : *bias)
            if (!std::isfinite(b)) throw ValidationError(describe(layer) + " has non-finite bias");
    }
}

}  // namespace

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
    }
    return "?";
}

std::string_view to_string(LossHead h) {
    return h == LossHead::MeanSquaredError ? "mse" : "softmax_cross_entropy";
}

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "eval"; }

Activation parse_activation(std::string_view s) {
    if (s == "identity") return Activation::Identity;
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw ValidationError("unknown activation '" + std::string(s) + "'");
}

LossHead parse_loss_head(std::string_view s) {
    if (s == "mse") return LossHead::MeanSquaredError;
    if (s == "softmax_cross_entropy") return LossHead::SoftmaxCrossEntropy;
    throw ValidationError("unknown loss head '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "eval") return Split::Eval;
    throw ValidationError("unknown split '" + std::string(s) + "'");
}

std::size_t LinearLayer::parameter_count() const noexcept {
    return weight.size() + (bias ? bias->size() : 0);
}

std::size_t FactorizedLinear::parameter_count() const noexcept {
    return a.size() + b.size() + (bias ? bias->size() : 0);
}

const std::string& layer_name(const Layer& layer) {
    return std::visit([](const auto& l) -> const std::string& { return l.name; }, layer);
}

std::size_t layer_inputs(const Layer& layer) {
    return std::visit([](const auto& l) { return l.inputs(); }, layer);
}

std::size_t layer_outputs(const Layer& layer) {
    return std::visit([](const auto& l) { return l.outputs(); }, layer);
}

NetModel::NetModel(std::vector<LayerSlot> layers, LossHead head)
    : layers_(std::move(layers)), head_(head) {
    std::set<std::string, std::less<>> names;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& layer = layers_[i].layer;
        validate_layer(layer);
        if (!names.insert(layer_name(layer)).second)
            throw ValidationError("duplicate layer name '" + layer_name(layer) + "'");
        if (i > 0 && layer_inputs(layer) != layer_outputs(layers_[i - 1].layer))
            throw ValidationError(describe(layer) + " does not accept the " +
                                  std::to_string(layer_outputs(layers_[i - 1].layer)) +
                                  " outputs of " + describe(layers_[i - 1].layer));
    }
}

std::size_t NetModel::input_dim() const {
    return layers_.empty() ? 0 : layer_inputs(layers_.front().layer);
}

std::size_t NetModel::output_dim() const {
    return layers_.empty() ? 0 : layer_outputs(layers_.back().layer);
}

std::size_t NetModel::parameter_count() const {
    std::size_t total = 0;
    for (const auto& slot : layers_)
        total += std::visit([](const auto& l) { return l.parameter_count(); }, slot.layer);
    return total;
}

std::optional<std::size_t> NetModel::find(std::string_view name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layer_name(layers_[i].layer) == name) return i;
    return std::nullopt;
}

std::vector<std::string> NetModel::linear_layer_names() const {
    std::vector<std::string> names;
    for (const auto& slot : layers_)
        if (const auto* l = std::get_if<LinearLayer>(&slot.layer)) names.push_back(l->name);
    return names;
}

std::vector<std::span<double>> NetModel::parameter_blocks() {
    std::vector<std::span<double>> blocks;
    for (auto& slot : layers_) {
        std::visit(overloaded{[&](LinearLayer& l) { blocks.push_back(l.weight.data()); },
                              [&](FactorizedLinear& l) {
                                  blocks.push_back(l.a.data());
                                  blocks.push_back(l.b.data());
                              }},
                   slot.layer);
        auto& bias = std::visit([](auto& l) -> auto& { return l.bias; }, slot.layer);
        if (bias) blocks.push_back(*bias);
    }
    return blocks;
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw ValidationError("dataset slice out of range");
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return gather(idx);
}

Dataset Dataset::gather(std::span<const std::size_t> indices) const {
    Dataset out;
    out.split = split;
    out.inputs = Matrix(indices.size(), inputs.cols());
    const bool has_targets = !targets.empty();
    if (has_targets) out.targets = Matrix(indices.size(), targets.cols());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        if (i >= size()) throw ValidationError("dataset index out of range");
        std::copy_n(inputs.row(i).begin(), inputs.cols(), out.inputs.row(k).begin());
        if (has_targets) std::copy_n(targets.row(i).begin(), targets.cols(), out.targets.row(k).begin());
        if (!labels.empty()) out.labels.push_back(labels[i]);
    }
    return out;
}

void Dataset::validate() const {
    if (!targets.empty() && targets.rows() != inputs.rows())
        throw ValidationError("dataset inputs and targets differ in length");
    if (!labels.empty() && labels.size() != inputs.rows())
        throw ValidationError("dataset inputs and labels differ in length");
    if (targets.empty() && labels.empty() && inputs.rows() > 0)
        throw ValidationError("dataset has neither targets nor labels");
    inputs.require_finite("dataset inputs");
    targets.require_finite("dataset targets");
}

std::vector<std::span<const double>> Gradients::blocks() const {
    std::vector<std::span<const double>> out;
    for (const auto& g : layers) {
        for (const auto& w : g.weights) out.push_back(w.data());
        if (!g.bias.empty()) out.emplace_back(g.bias);
    }
    return out;
}

ForwardResult forward(const NetModel& model, const Dataset& batch) {
    check_batch(model, batch);
    ForwardResult r;
    r.outputs = run_forward(model, batch.inputs, nullptr);
    r.loss = loss_and_grad(model, r.outputs, batch, nullptr);
    return r;
}

Gradients backward(const NetModel& model, const Dataset& batch) {
    check_batch(model, batch);
    Tape tape;
    const Matrix y = run_forward(model, batch.inputs, &tape);
    Matrix grad;
    Gradients out;
    out.loss = loss_and_grad(model, y, batch, &grad);
    out.layers.resize(model.layers().size());

    for (std::size_t l = model.layers().size(); l-- > 0;) {
        const auto& slot = model.layers()[l];
        activation_backward(grad, tape.outputs[l], slot.activation);
        LayerGradient& g = out.layers[l];
        const Matrix& in = tape.inputs[l];
        std::visit(overloaded{[&](const LinearLayer& layer) {
                                  g.weights.push_back(matmul_tn(in, grad));
                                  if (layer.bias) g.bias = column_sums(grad);
                                  if (l > 0) grad = matmul_nt(grad, layer.weight);
                              },
                              [&](const FactorizedLinear& layer) {
                                  const Matrix& mid = tape.hidden[l];
                                  Matrix dmid = matmul_nt(grad, layer.b);
                                  g.weights.push_back(matmul_tn(in, dmid));
                                  g.weights.push_back(matmul_tn(mid, grad));
                                  if (layer.bias) g.bias = column_sums(grad);
                                  if (l > 0) grad = matmul_nt(dmid, layer.a);
                              }},
                   slot.layer);
    }
    return out;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ValidationError("learning rate must be positive");
    if (batch_size == 0) throw ValidationError("batch size must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ValidationError("Adam betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw ValidationError("Adam epsilon must be positive");
}

NetModel train(NetModel model, const Dataset& data, const TrainConfig& config) {
    config.validate();
    if (data.size() == 0) throw ValidationError("train: empty dataset");
    if (config.epochs == 0) return model;

    Rng rng(config.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    auto params = model.parameter_blocks();
    std::vector<std::vector<double>> m1, m2;
    if (config.optimizer == Optimizer::Adam) {
        for (const auto& p : params) {
            m1.emplace_back(p.size(), 0.0);
            m2.emplace_back(p.size(), 0.0);
        }
    }
    std::uint64_t step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            const Dataset batch =
                data.gather(std::span<const std::size_t>(order.data() + start, stop - start));
            const Gradients g = backward(model, batch);
            if (!std::isfinite(g.loss) || g.loss > kDivergenceLimit) {
                std::ostringstream os;
                os << "training diverged at epoch " << epoch << ", batch " << batch_index
                   << " (loss " << g.loss << ")";
                throw NumericalError(os.str());
            }
            const auto grads = g.blocks();
            ++step;
            if (config.optimizer == Optimizer::Sgd) {
                for (std::size_t b = 0; b < params.size(); ++b)
                    for (std::size_t k = 0; k < params[b].size(); ++k)
                        params[b][k] -= config.learning_rate * grads[b][k];
            } else {
                const double c1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
                const double c2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step));
                for (std::size_t b = 0; b < params.size(); ++b) {
                    for (std::size_t k = 0; k < params[b].size(); ++k) {
                        const double gk = grads[b][k];
                        m1[b][k] = config.adam_beta1 * m1[b][k] + (1.0 - config.adam_beta1) * gk;
                        m2[b][k] = config.adam_beta2 * m2[b][k] + (1.0 - config.adam_beta2) * gk * gk;
                        const double mhat = m1[b][k] / c1;
                        const double vhat = m2[b][k] / c2;
                        params[b][k] -=
                            config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_epsilon);
                    }
                }
            }
        }
    }
    return model;
}

double evaluate(const NetModel& model, const Dataset& data, Metric metric) {
    if (data.size() == 0) throw ValidationError("evaluate: empty dataset");
    if (metric == Metric::Accuracy && model.loss_head() != LossHead::SoftmaxCrossEntropy)
        throw ValidationError("accuracy requires a softmax cross-entropy head");
    const ForwardResult r = forward(model, data);
    if (metric == Metric::Loss) return r.loss;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < r.outputs.rows(); ++i) {
        auto row = r.outputs.row(i);
        const auto best = static_cast<std::size_t>(
            std::distance(row.begin(), std::max_element(row.begin(), row.end())));
        if (best == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

NetModel swap_layer(const NetModel& model, std::string_view name, Layer replacement) {
    const auto idx = model.find(name);
    if (!idx) throw ValidationError("unknown layer '" + std::string(name) + "'");
    const Layer& current = model.layers()[*idx].layer;
    if (layer_inputs(current) != layer_inputs(replacement) ||
        layer_outputs(current) != layer_outputs(replacement))
        throw ValidationError("replacement for " + describe(current) + " has shape " +
                              std::to_string(layer_inputs(replacement)) + "x" +
                              std::to_string(layer_outputs(replacement)));
    std::vector<LayerSlot> layers = model.layers();
    layers[*idx].layer = std::move(replacement);
    std::visit([&](auto& l) { l.name = std::string(name); }, layers[*idx].layer);
    NetModel out(std::move(layers), model.loss_head());
    out.provenance = model.provenance;
    return out;
}

}  // namespace

NetModel replace_layer(const NetModel& model, std::string_view name, FactorizedLinear layer) {
    return swap_layer(model, name, Layer(std::move(layer)));
}

NetModel replace_layer(const NetModel& model, std::string_view name, LinearLayer layer) {
    return swap_layer(model, name, Layer(std::move(layer)));
}

NetModel make_mlp(std::span<const std::size_t> widths, std::span<const Activation> activations,
                  LossHead head, bool with_bias, Rng& rng) {
    if (widths.size() < 2 || activations.size() + 1 != widths.size())
        throw ValidationError("make_mlp: need one activation per layer");
    std::vector<LayerSlot> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t n = widths[l];
        const std::size_t m = widths[l + 1];
        if (n == 0 || m == 0) throw ValidationError("make_mlp: zero width");
        const double limit = std::sqrt(6.0 / static_cast<double>(n + m));
        LinearLayer layer{"fc" + std::to_string(l + 1), Matrix(n, m), std::nullopt};
        for (double& w : layer.weight.data()) w = rng.uniform(-limit, limit);
        if (with_bias) layer.bias = std::vector<double>(m, 0.0);
        layers.push_back({std::move(layer), activations[l]});
    }
    return NetModel(std::move(layers), head);
}

}  // namespace fwsvd
