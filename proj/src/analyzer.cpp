#include "fwsvd/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <variant>

#include "fwsvd/error.hpp"

namespace fwsvd {

GroupPartition group_partition(std::size_t k, std::size_t groups) {
    if (groups < 1 || groups > k) {
        std::ostringstream os;
        os << "group count " << groups << " outside [1, " << k << "]";
        throw ValidationError(os.str());
    }
    GroupPartition p;
    p.k = k;
    const std::size_t base = k / groups;
    const std::size_t extra = k % groups;
    std::size_t begin = 0;
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t size = base + (g < extra ? 1 : 0);
        p.ranges.emplace_back(begin, begin + size);
        begin += size;
    }
    return p;
}

Matrix group_truncate_layer(const SvdResult& f, std::size_t group, const GroupPartition& p) {
    if (group < 1 || group > p.count()) {
        std::ostringstream os;
        os << "group " << group << " outside [1, " << p.count() << "]";
        throw ValidationError(os.str());
    }
    if (p.k != f.rank()) throw ValidationError("partition does not match the decomposition rank");
    SvdResult kept = f;
    const auto [begin, end] = p.ranges[group - 1];
    for (std::size_t i = begin; i < end; ++i) kept.s[i] = 0.0;
    return reconstruct(kept);
}

Metric default_metric(const NetModel& model) {
    return model.loss_head() == LossHead::SoftmaxCrossEntropy ? Metric::Accuracy : Metric::Loss;
}

double performance_drop(Metric metric, double baseline, double value) {
    return metric == Metric::Loss ? value - baseline : baseline - value;
}

namespace {

// One dense layer's decomposition in the space where truncation happens.
struct LayerSpectrum {
    std::string name;
    Matrix weight;
    SvdResult factors;
    std::vector<double> inv_root;  // empty for plain SVD
};

Matrix truncated_weight(const LayerSpectrum& ls, std::size_t group, const GroupPartition& p) {
    Matrix w = group_truncate_layer(ls.factors, group, p);
    return ls.inv_root.empty() ? w : scale_rows(w, ls.inv_root);
}

}  // namespace

GroupTruncationReport run_group_truncation(const NetModel& model, const FisherMap& fisher,
                                           const Dataset& data, std::size_t groups) {
    if (groups < 2) throw ValidationError("group truncation needs at least 2 groups");
    check_fisher_covers(fisher, model);

    GroupTruncationReport report;
    report.metric = default_metric(model);
    report.groups = groups;
    report.baseline = evaluate(model, data, report.metric);

    std::vector<const LinearLayer*> targets;
    for (const auto& slot : model.layers()) {
        const auto* layer = std::get_if<LinearLayer>(&slot.layer);
        if (!layer) continue;
        if (std::min(layer->inputs(), layer->outputs()) < groups)
            report.skipped_layers.push_back(layer->name);
        else
            targets.push_back(layer);
    }
    if (targets.empty())
        throw ValidationError("no dense layer has at least " + std::to_string(groups) +
                              " singular values");

    for (Method method : {Method::Svd, Method::Fwsvd}) {
        std::vector<LayerSpectrum> spectra;
        for (const LinearLayer* layer : targets) {
            LayerSpectrum ls{layer->name, layer->weight, {}, {}};
            if (method == Method::Svd) {
                ls.factors = svd(layer->weight);
            } else {
                const ImportanceVector imp = row_importance(fisher.weights.at(layer->name));
                ls.factors = svd(scale_rows(layer->weight, imp.diagonal));
                ls.inv_root.resize(imp.diagonal.size());
                for (std::size_t i = 0; i < imp.diagonal.size(); ++i)
                    ls.inv_root[i] = 1.0 / imp.diagonal[i];
            }
            spectra.push_back(std::move(ls));
        }

        for (std::size_t g = 1; g <= groups; ++g) {
            NetModel attacked = model;
            double err_sum = 0.0;
            for (const auto& ls : spectra) {
                const GroupPartition p = group_partition(ls.factors.rank(), groups);
                Matrix w = truncated_weight(ls, g, p);
                const double norm = frobenius_norm(ls.weight);
                err_sum += norm > 0.0 ? frobenius_error(ls.weight, w) / norm : 0.0;
                const auto& orig =
                    std::get<LinearLayer>(model.layers()[*model.find(ls.name)].layer);
                attacked = replace_layer(attacked, ls.name, LinearLayer{ls.name, std::move(w), orig.bias});
            }
            const double value = evaluate(attacked, data, report.metric);
            report.rows.push_back({method, g, performance_drop(report.metric, report.baseline, value),
                                   err_sum / static_cast<double>(spectra.size())});
        }
    }
    return report;
}

RankSweepReport run_rank_sweep(const NetModel& model, const FisherMap& fisher,
                               const Dataset& eval, const SweepOptions& options) {
    for (std::size_t i = 0; i < options.ratios.size(); ++i) {
        const double r = options.ratios[i];
        if (!(r > 0.0 && r <= 1.0))
            throw ValidationError("sweep ratio " + std::to_string(r) + " outside (0, 1]");
        if (i > 0 && !(r > options.ratios[i - 1]))
            throw ValidationError("sweep ratios must be strictly increasing");
    }
    if (options.finetune && options.finetune_data == nullptr)
        throw ValidationError("fine-tuning requested without fine-tuning data");
    check_fisher_covers(fisher, model);

    RankSweepReport report;
    report.metric = default_metric(model);
    report.baseline = evaluate(model, eval, report.metric);
    report.ratios = options.ratios;

    for (Method method : {Method::Svd, Method::Fwsvd}) {
        for (double ratio : options.ratios) {
            CompressionSpec spec;
            spec.method = method;
            spec.rank_ratio = ratio;
            NetModel compressed = compress_model(model, &fisher, spec).first;
            SweepRow row{method, ratio, evaluate(compressed, eval, report.metric), std::nullopt};
            if (options.finetune) {
                NetModel tuned = train(std::move(compressed), *options.finetune_data, *options.finetune);
                row.metric_finetuned = evaluate(tuned, eval, report.metric);
            }
            report.rows.push_back(row);
        }
    }
    return report;
}

DemoTask make_demo_task(std::uint64_t seed, const DemoOptions& opt) {
    if (opt.rare_dims > opt.input_dim) throw ValidationError("more rare dims than inputs");
    Rng root(seed);
    Rng teacher_rng(root.next());
    Rng data_rng(root.next());
    Rng student_rng(root.next());

    DemoTask task;

    std::vector<std::size_t> dims(opt.input_dim);
    std::iota(dims.begin(), dims.end(), std::size_t{0});
    for (std::size_t i = 0; i < opt.rare_dims; ++i)
        std::swap(dims[i], dims[i + teacher_rng.below(opt.input_dim - i)]);
    task.rare_dims.assign(dims.begin(), dims.begin() + static_cast<std::ptrdiff_t>(opt.rare_dims));
    std::sort(task.rare_dims.begin(), task.rare_dims.end());
    std::vector<bool> is_rare(opt.input_dim, false);
    for (std::size_t d : task.rare_dims) is_rare[d] = true;

    Matrix tw(opt.input_dim, opt.output_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(opt.input_dim));
    for (std::size_t i = 0; i < opt.input_dim; ++i)
        for (std::size_t j = 0; j < opt.output_dim; ++j)
            tw(i, j) = teacher_rng.normal() * scale * (is_rare[i] ? opt.rare_weight_scale : 1.0);
    task.teacher = NetModel({{LinearLayer{"teacher", std::move(tw), std::nullopt}, Activation::Identity}},
                            LossHead::MeanSquaredError);

    auto make_split = [&](std::size_t n, Split split) {
        Dataset d;
        d.split = split;
        d.inputs = Matrix(n, opt.input_dim);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < opt.input_dim; ++j) {
                if (is_rare[j]) {
                    const bool active = data_rng.uniform() < opt.rare_probability;
                    const double v = opt.rare_amplitude * data_rng.normal();
                    d.inputs(i, j) = active ? v : 0.0;
                } else {
                    d.inputs(i, j) = data_rng.normal();
                }
            }
        }
        d.targets = matmul(d.inputs, std::get<LinearLayer>(task.teacher.layers()[0].layer).weight);
        if (opt.noise_std > 0.0)
            for (double& t : d.targets.data()) t += opt.noise_std * data_rng.normal();
        return d;
    };
    task.train = make_split(opt.train_size, Split::Train);
    task.eval = make_split(opt.eval_size, Split::Eval);

    const std::vector<std::size_t> widths{opt.input_dim, opt.hidden_width, opt.hidden_width,
                                          opt.output_dim};
    const std::vector<Activation> acts{Activation::Tanh, Activation::Tanh, Activation::Identity};
    task.student = make_mlp(widths, acts, LossHead::MeanSquaredError, true, student_rng);
    task.student.provenance["seed"] = std::to_string(seed);
    return task;
}

TrainConfig demo_train_config(std::uint64_t seed) {
    TrainConfig c;
    c.seed = seed;
    return c;
}

}  // namespace fwsvd
