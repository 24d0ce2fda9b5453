#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fwsvd/matrix.hpp"
#include "fwsvd/random.hpp"

namespace fwsvd {

enum class Activation { Identity, Tanh, Relu };
enum class LossHead { MeanSquaredError, SoftmaxCrossEntropy };
enum class Metric { Loss, Accuracy };
enum class Split { Train, Eval };

std::string_view to_string(Activation a);
std::string_view to_string(LossHead h);
std::string_view to_string(Split s);
Activation parse_activation(std::string_view s);
LossHead parse_loss_head(std::string_view s);
Split parse_split(std::string_view s);

/// Z = X·W + b with W stored inputs × outputs.
struct LinearLayer {
    std::string name;
    Matrix weight;
    std::optional<std::vector<double>> bias;

    std::size_t inputs() const noexcept { return weight.rows(); }
    std::size_t outputs() const noexcept { return weight.cols(); }
    std::size_t parameter_count() const noexcept;
};

/// Z = (X·A)·B + b: a linear layer split into two thinner ones.
struct FactorizedLinear {
    std::string name;
    Matrix a;  // inputs × rank
    Matrix b;  // rank × outputs
    std::optional<std::vector<double>> bias;

    std::size_t inputs() const noexcept { return a.rows(); }
    std::size_t outputs() const noexcept { return b.cols(); }
    std::size_t rank() const noexcept { return a.cols(); }
    /// N·r + M·r, plus M with a bias.
    std::size_t parameter_count() const noexcept;
    /// The dense matrix A·B this layer applies.
    Matrix product() const { return matmul(a, b); }
};

using Layer = std::variant<LinearLayer, FactorizedLinear>;

const std::string& layer_name(const Layer& layer);
std::size_t layer_inputs(const Layer& layer);
std::size_t layer_outputs(const Layer& layer);

struct LayerSlot {
    Layer layer;
    Activation activation = Activation::Identity;
};

/// Feed-forward stack of (linear layer, pointwise nonlinearity) pairs with a
/// loss head. The constructor rejects duplicate names, dimension mismatches
/// between neighbours and non-finite parameters.
class NetModel {
public:
    NetModel() = default;
    NetModel(std::vector<LayerSlot> layers, LossHead head);

    const std::vector<LayerSlot>& layers() const noexcept { return layers_; }
    LossHead loss_head() const noexcept { return head_; }
    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::size_t parameter_count() const;

    std::optional<std::size_t> find(std::string_view name) const;
    /// Names of the dense (not factorized) layers, in model order.
    std::vector<std::string> linear_layer_names() const;

    /// Mutable views of every parameter block in canonical order: for each
    /// layer its weight (or A then B), then its bias when present.
    std::vector<std::span<double>> parameter_blocks();

    /// Free-form provenance (seed, training recipe) carried into manifests.
    std::map<std::string, std::string> provenance;

private:
    std::vector<LayerSlot> layers_;
    LossHead head_ = LossHead::MeanSquaredError;
};

/// Inputs with either regression targets (n × out) or class labels (n).
struct Dataset {
    Matrix inputs;
    Matrix targets;
    std::vector<std::size_t> labels;
    Split split = Split::Train;

    std::size_t size() const noexcept { return inputs.rows(); }
    bool is_classification() const noexcept { return !labels.empty(); }

    /// Examples [begin, end).
    Dataset slice(std::size_t begin, std::size_t end) const;
    Dataset gather(std::span<const std::size_t> indices) const;
    /// Checks lengths agree and every value is finite.
    void validate() const;
};

struct ForwardResult {
    Matrix outputs;
    double loss = 0.0;
};

struct LayerGradient {
    std::vector<Matrix> weights;  // {dW} or {dA, dB}
    std::vector<double> bias;     // empty when the layer has none
};

struct Gradients {
    std::vector<LayerGradient> layers;
    double loss = 0.0;

    /// Same block order as NetModel::parameter_blocks().
    std::vector<std::span<const double>> blocks() const;
};

/// Mean loss over the batch. Per-example MSE is Σ_j (y_j − t_j)²; per-example
/// cross-entropy is −log softmax(y)[label].
ForwardResult forward(const NetModel& model, const Dataset& batch);

/// Gradient of the mean batch loss with respect to every parameter.
Gradients backward(const NetModel& model, const Dataset& batch);

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
    double learning_rate = 2e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 30;
    std::uint64_t seed = 42;
    Optimizer optimizer = Optimizer::Adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const;
};

/// Minibatch training with a seeded shuffle each epoch. Throws NumericalError
/// naming the epoch and batch when the loss turns non-finite or exceeds 1e12.
NetModel train(NetModel model, const Dataset& data, const TrainConfig& config);

double evaluate(const NetModel& model, const Dataset& data, Metric metric);

/// Swaps the named layer. Rejects unknown names and input/output mismatch.
NetModel replace_layer(const NetModel& model, std::string_view name, FactorizedLinear layer);
NetModel replace_layer(const NetModel& model, std::string_view name, LinearLayer layer);

/// Dense layers with Glorot-uniform weights (±√(6/(N+M))) and zero biases,
/// named fc1, fc2, …; widths has one more entry than activations.
NetModel make_mlp(std::span<const std::size_t> widths, std::span<const Activation> activations,
                  LossHead head, bool with_bias, Rng& rng);

}  // namespace fwsvd
