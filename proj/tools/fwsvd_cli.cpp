// Command-line front end: train the demo task, estimate Fisher information,
// compress, and run the truncation / rank-sweep analyses.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fwsvd/analyzer.hpp"
#include "fwsvd/checkpoint.hpp"
#include "fwsvd/error.hpp"
#include "fwsvd/factorizer.hpp"
#include "fwsvd/fisher.hpp"
#include "fwsvd/net.hpp"

namespace fs = std::filesystem;
using namespace fwsvd;

namespace {

struct CommandConfig {
    std::string model;
    std::string fisher;
    std::string data;
    std::string train_data;
    std::string out;
    std::string report;
    std::string method = "fwsvd";
    double ratio = 0.3;
    std::string ratios = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0";
    std::size_t groups = 10;
    std::uint64_t seed = 42;
    std::size_t finetune_epochs = 0;
    std::size_t epochs = 0;
    std::size_t workers = 1;
};

void log(const std::string& line) { std::cerr << "[fwsvd] " << line << '\n'; }

std::vector<double> parse_ratio_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("cannot parse ratio '" + item + "'");
        }
    }
    if (out.empty()) throw UsageError("--ratios is empty");
    return out;
}

TrainConfig finetune_config(const CommandConfig& cfg) {
    TrainConfig t = demo_train_config(cfg.seed);
    t.epochs = cfg.finetune_epochs;
    return t;
}

CsvMeta report_meta(const CommandConfig& cfg) { return {{"seed", std::to_string(cfg.seed)}}; }

void cmd_train_demo(const CommandConfig& cfg) {
    const fs::path dir = cfg.out;
    DemoTask task = make_demo_task(cfg.seed);
    TrainConfig tc = demo_train_config(cfg.seed);
    if (cfg.epochs > 0) tc.epochs = cfg.epochs;
    const double before = evaluate(task.student, task.eval, Metric::Loss);
    log("training demo student: seed " + std::to_string(cfg.seed) + ", " + std::to_string(tc.epochs) +
        " epochs, initial eval loss " + format_real(before));
    NetModel student = train(task.student, task.train, tc);
    student.provenance["train.epochs"] = std::to_string(tc.epochs);
    student.provenance["train.batch_size"] = std::to_string(tc.batch_size);
    student.provenance["train.learning_rate"] = format_real(tc.learning_rate);
    student.provenance["train.optimizer"] = tc.optimizer == Optimizer::Adam ? "adam" : "sgd";
    const double after = evaluate(student, task.eval, Metric::Loss);
    log("final eval loss " + format_real(after));

    save_model(student, dir / "model.fwsv");
    save_model(task.teacher, dir / "teacher.fwsv");
    save_dataset(task.train, dir / "train.fwsv");
    save_dataset(task.eval, dir / "eval.fwsv");
    log("wrote " + dir.string());
}

void cmd_fisher(const CommandConfig& cfg) {
    const NetModel model = load_model(cfg.model);
    const Dataset data = load_dataset(cfg.data);
    log("accumulating Fisher over " + std::to_string(data.size()) + " examples");
    const FisherMap fisher = accumulate_fisher(model, data, FisherOptions{cfg.workers});
    save_fisher(fisher, cfg.out);
    log("wrote " + cfg.out);
}

void cmd_compress(const CommandConfig& cfg) {
    CompressionSpec spec;
    spec.method = parse_method(cfg.method);
    spec.rank_ratio = cfg.ratio;
    const NetModel model = load_model(cfg.model);
    std::optional<FisherMap> fisher;
    if (!cfg.fisher.empty()) fisher = load_fisher(cfg.fisher, model);

    auto [compressed, report] = compress_model(model, fisher ? &*fisher : nullptr, spec);
    log("compressed " + std::to_string(report.layers.size()) + " layers with " + cfg.method + ": " +
        std::to_string(model.parameter_count()) + " -> " + std::to_string(compressed.parameter_count()) +
        " parameters");
    if (cfg.finetune_epochs > 0) {
        const Dataset data = load_dataset(cfg.data);
        log("fine-tuning for " + std::to_string(cfg.finetune_epochs) + " epochs");
        compressed = train(std::move(compressed), data, finetune_config(cfg));
    }
    compressed.provenance["compress.method"] = cfg.method;
    compressed.provenance["compress.ratio"] = format_real(cfg.ratio);
    save_model(compressed, cfg.out);
    const fs::path report_path = cfg.report.empty() ? fs::path(cfg.out + ".csv") : fs::path(cfg.report);
    write_csv(report, report_path);
    log("wrote " + cfg.out + " and " + report_path.string());
}

void cmd_group_truncation(const CommandConfig& cfg) {
    const NetModel model = load_model(cfg.model);
    const FisherMap fisher = load_fisher(cfg.fisher, model);
    const Dataset data = load_dataset(cfg.data);
    const auto report = run_group_truncation(model, fisher, data, cfg.groups);
    for (const auto& name : report.skipped_layers)
        log("layer '" + name + "' has fewer than " + std::to_string(cfg.groups) + " singular values; left intact");
    write_csv(report, cfg.out, report_meta(cfg));
    log("wrote " + cfg.out);
}

void cmd_rank_sweep(const CommandConfig& cfg) {
    const NetModel model = load_model(cfg.model);
    const FisherMap fisher = load_fisher(cfg.fisher, model);
    const Dataset data = load_dataset(cfg.data);
    SweepOptions opt;
    opt.ratios = parse_ratio_list(cfg.ratios);
    std::optional<Dataset> train_data;
    if (cfg.finetune_epochs > 0) {
        train_data = load_dataset(cfg.train_data);
        opt.finetune = finetune_config(cfg);
        opt.finetune_data = &*train_data;
    }
    const auto report = run_rank_sweep(model, fisher, data, opt);
    write_csv(report, cfg.out, report_meta(cfg));
    log("wrote " + cfg.out);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fisher-weighted low-rank compression of linear layers"};
    app.require_subcommand(1);
    CommandConfig cfg;

    auto* train_demo = app.add_subcommand("train-demo", "Train the synthetic teacher-student demo task");
    train_demo->add_option("--seed", cfg.seed, "Root random seed")->capture_default_str();
    train_demo->add_option("--out", cfg.out, "Output directory")->required();
    train_demo->add_option("--epochs", cfg.epochs, "Override the training epoch count");

    auto* fisher = app.add_subcommand("fisher", "Estimate empirical Fisher information");
    fisher->add_option("--model", cfg.model, "Model container")->required();
    fisher->add_option("--data", cfg.data, "Dataset container")->required();
    fisher->add_option("--out", cfg.out, "Output Fisher container")->required();
    fisher->add_option("--workers", cfg.workers, "Accumulation threads")->capture_default_str();
    fisher->add_option("--seed", cfg.seed, "Unused; accepted for uniformity")->capture_default_str();

    auto* compress = app.add_subcommand("compress", "Factorize dense layers with SVD or FWSVD");
    compress->add_option("--model", cfg.model, "Model container")->required();
    compress->add_option("--fisher", cfg.fisher, "Fisher container (required for fwsvd)");
    compress->add_option("--method", cfg.method, "svd or fwsvd")->capture_default_str();
    compress->add_option("--ratio", cfg.ratio, "Rank ratio in (0, 1]")->capture_default_str();
    compress->add_option("--finetune-epochs", cfg.finetune_epochs, "Fine-tuning epochs after compression");
    compress->add_option("--data", cfg.data, "Training data for fine-tuning");
    compress->add_option("--seed", cfg.seed, "Fine-tuning seed")->capture_default_str();
    compress->add_option("--out", cfg.out, "Output model container")->required();
    compress->add_option("--report", cfg.report, "CSV report path (default: <out>.csv)");

    auto* groups = app.add_subcommand("group-truncation", "Grouped singular-value truncation attack");
    groups->add_option("--model", cfg.model, "Model container")->required();
    groups->add_option("--fisher", cfg.fisher, "Fisher container")->required();
    groups->add_option("--data", cfg.data, "Evaluation dataset")->required();
    groups->add_option("--groups", cfg.groups, "Number of groups")->capture_default_str();
    groups->add_option("--seed", cfg.seed, "Seed recorded in the report header")->capture_default_str();
    groups->add_option("--out", cfg.out, "Output CSV")->required();

    auto* sweep = app.add_subcommand("rank-sweep", "Evaluate SVD and FWSVD over rank ratios");
    sweep->add_option("--model", cfg.model, "Model container")->required();
    sweep->add_option("--fisher", cfg.fisher, "Fisher container")->required();
    sweep->add_option("--data", cfg.data, "Evaluation dataset")->required();
    sweep->add_option("--ratios", cfg.ratios, "Comma-separated rank ratios")->capture_default_str();
    sweep->add_option("--finetune-epochs", cfg.finetune_epochs, "Fine-tuning epochs per compressed copy");
    sweep->add_option("--train-data", cfg.train_data, "Training data for fine-tuning");
    sweep->add_option("--seed", cfg.seed, "Fine-tuning seed")->capture_default_str();
    sweep->add_option("--out", cfg.out, "Output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(Error::Category::Usage);
    }

    try {
        if (compress->parsed()) {
            if (cfg.method != "svd" && cfg.method != "fwsvd")
                throw UsageError("--method must be svd or fwsvd");
            if (cfg.method == "fwsvd" && cfg.fisher.empty())
                throw UsageError("--method fwsvd requires --fisher");
            if (cfg.finetune_epochs > 0 && cfg.data.empty())
                throw UsageError("--finetune-epochs requires --data");
        }
        if (sweep->parsed()) {
            parse_ratio_list(cfg.ratios);
            if (cfg.finetune_epochs > 0 && cfg.train_data.empty())
                throw UsageError("--finetune-epochs requires --train-data");
        }

        if (train_demo->parsed()) cmd_train_demo(cfg);
        if (fisher->parsed()) cmd_fisher(cfg);
        if (compress->parsed()) cmd_compress(cfg);
        if (groups->parsed()) cmd_group_truncation(cfg);
        if (sweep->parsed()) cmd_rank_sweep(cfg);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return static_cast<int>(e.category());
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(Error::Category::Io);
    }
    return 0;
}
