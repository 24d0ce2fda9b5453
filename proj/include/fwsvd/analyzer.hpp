#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fwsvd/factorizer.hpp"
#include "fwsvd/fisher.hpp"
#include "fwsvd/net.hpp"
#include "fwsvd/svd.hpp"

namespace fwsvd {

/// Contiguous groups over singular value indices, largest values first.
/// ranges[g] is the half-open 0-based index range of group g+1.
struct GroupPartition {
    std::size_t k = 0;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;

    std::size_t count() const noexcept { return ranges.size(); }
};

/// Splits k sorted values into G groups whose sizes differ by at most one;
/// the first k mod G groups carry the extra element. Requires 1 ≤ G ≤ k.
GroupPartition group_partition(std::size_t k, std::size_t groups);

/// Reconstruction with the singular values of group `group` (1-based) zeroed.
Matrix group_truncate_layer(const SvdResult& f, std::size_t group, const GroupPartition& p);

/// Loss is reported for regression heads, accuracy for classification heads.
Metric default_metric(const NetModel& model);

/// Drop relative to baseline with "positive = worse": metric − baseline for
/// losses, baseline − metric for accuracy.
double performance_drop(Metric metric, double baseline, double value);

struct GroupRow {
    Method method = Method::Svd;
    std::size_t group = 0;  // 1-based
    double drop = 0.0;
    /// Mean over truncated layers of ‖W − W̄‖_F / ‖W‖_F.
    double recon_err_mean = 0.0;
};

struct GroupTruncationReport {
    Metric metric = Metric::Loss;
    double baseline = 0.0;
    std::size_t groups = 0;
    std::vector<GroupRow> rows;  // SVD groups 1..G, then FWSVD groups 1..G
    /// Dense layers left intact because they have fewer than G singular values.
    std::vector<std::string> skipped_layers;
};

/// Group truncation attack: for each method and each group g, zero group g in
/// every dense layer at once, evaluate, and record the drop and the mean
/// relative reconstruction error. The FWSVD variant partitions and truncates
/// the spectrum of diag(√importance)·W and divides the weights back out.
GroupTruncationReport run_group_truncation(const NetModel& model, const FisherMap& fisher,
                                           const Dataset& data, std::size_t groups);

struct SweepRow {
    Method method = Method::Svd;
    double ratio = 0.0;
    double metric_raw = 0.0;
    std::optional<double> metric_finetuned;
};

struct RankSweepReport {
    Metric metric = Metric::Loss;
    double baseline = 0.0;
    std::vector<double> ratios;
    std::vector<SweepRow> rows;  // SVD ratios ascending, then FWSVD
};

struct SweepOptions {
    std::vector<double> ratios;
    /// Fine-tuning recipe applied to each compressed copy, if any.
    std::optional<TrainConfig> finetune;
    /// Data for fine-tuning; required when finetune is set.
    const Dataset* finetune_data = nullptr;
};

/// Compresses a fresh copy of the model at each ratio with each method and
/// evaluates it on `eval`, optionally after fine-tuning. Ratios must be
/// strictly increasing and lie in (0, 1].
RankSweepReport run_rank_sweep(const NetModel& model, const FisherMap& fisher,
                               const Dataset& eval, const SweepOptions& options);

struct DemoOptions {
    std::size_t input_dim = 64;
    std::size_t output_dim = 1;
    std::size_t hidden_width = 64;
    std::size_t rare_dims = 8;
    double rare_probability = 0.05;
    /// Scale of a rare feature's value when it is active.
    double rare_amplitude = 20.0;
    /// Extra factor on the teacher weights of rare features. With the
    /// amplitude above, an active rare feature moves the target 10× as much
    /// as a common one while its student weight row stays small.
    double rare_weight_scale = 0.5;
    std::size_t train_size = 4096;
    std::size_t eval_size = 1024;
    double noise_std = 0.1;
};

/// Synthetic teacher–student regression task with rare but heavily weighted
/// input features, so that the student's Fisher information is far from
/// uniform across weight rows. The teacher is a single linear layer, the
/// student a 2-hidden-layer tanh MLP, and labels carry Gaussian noise.
struct DemoTask {
    NetModel teacher;
    NetModel student;
    Dataset train;
    Dataset eval;
    std::vector<std::size_t> rare_dims;
};

DemoTask make_demo_task(std::uint64_t seed, const DemoOptions& options = {});

/// Training recipe used for the demo student.
TrainConfig demo_train_config(std::uint64_t seed);

}  // namespace fwsvd
