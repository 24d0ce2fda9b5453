#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fwsvd/matrix.hpp"
#include "fwsvd/net.hpp"

namespace fwsvd {

/// Empirical Fisher information per dense layer: the mean over examples of
/// the squared per-example loss gradient, one matrix per weight.
struct FisherMap {
    std::map<std::string, Matrix> weights;
    /// Same estimate for biases. Carried along but not used by factorization.
    std::map<std::string, std::vector<double>> biases;
    std::size_t example_count = 0;

    /// Scales every entry by c > 0.
    FisherMap scaled(double c) const;
};

/// Fisher reduced to one weight per matrix row.
struct ImportanceVector {
    std::vector<double> values;    // floored row sums
    std::vector<double> diagonal;  // √values
};

struct FisherOptions {
    /// Examples are split into contiguous shards, one per worker; shards are
    /// merged in ascending order.
    std::size_t workers = 1;
};

/// Accumulates squared gradients example by example (batch size 1) and
/// divides by the dataset size. Covers exactly model.linear_layer_names().
/// Throws NumericalError naming the example if a gradient is non-finite.
FisherMap accumulate_fisher(const NetModel& model, const Dataset& data,
                            const FisherOptions& options = {});

/// Row sums of a Fisher matrix, floored at 1e-6·mean + 1e-12 so the
/// resulting diagonal is invertible.
ImportanceVector row_importance(const Matrix& fisher);

/// Throws ValidationError unless the map's keys equal the model's dense layer
/// names and shapes, naming the first offending layer.
void check_fisher_covers(const FisherMap& fisher, const NetModel& model);

}  // namespace fwsvd
