#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "fka/ablate.hpp"
#include "fka/errors.hpp"
#include "fka/train.hpp"

namespace fs = std::filesystem;
using namespace fka;

namespace {

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << j.dump(2) << '\n';
}

void print_evaluation(const Evaluation& e) {
    std::cout << e.report.to_json().dump() << '\n';
    if (e.localization.n > 0) {
        std::cout << "localization: pixel_accuracy " << e.localization.pixel_accuracy << " mean_iou "
                  << e.localization.mean_iou << " over " << e.localization.n << " image-manipulated samples\n";
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Forgery-knowledge-augmented fake news detection on synthetic data"};
    app.require_subcommand(1);

    std::string style = "alpha", out, config_path, ckpt, data, report_path;
    int n_train = 2000, n_test = 500;
    std::uint64_t seed = 1;
    std::vector<std::string> datasets;

    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset (train/ and test/ splits)");
    gen->add_option("--style", style, "Domain style: alpha, beta, gamma, delta")->capture_default_str();
    gen->add_option("--out", out, "Output directory")->required();
    gen->add_option("--train", n_train, "Training pairs, half real")->capture_default_str();
    gen->add_option("--test", n_test, "Test pairs, half real")->capture_default_str();
    gen->add_option("--seed", seed, "Dataset seed")->capture_default_str();

    auto* tr = app.add_subcommand("train", "Train a model from a config file");
    tr->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    tr->add_option("--out", out, "Checkpoint path")->required();

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one dataset");
    ev->add_option("--ckpt", ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", data, "Split directory or dataset root (uses test/)")->required();
    ev->add_option("--report", report_path, "JSON report output");

    auto* cd = app.add_subcommand("cross-domain", "Evaluate a checkpoint on several datasets");
    cd->add_option("--ckpt", ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
    cd->add_option("--data", datasets, "Comma-separated dataset list")->required()->delimiter(',');
    cd->add_option("--report", report_path, "JSON report output (array)");

    auto* ab = app.add_subcommand("ablate", "Run the module and prompt ablation grids");
    ab->add_option("--config", config_path, "Base config file")->required()->check(CLI::ExistingFile);
    ab->add_option("--out", out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            SplitCounts counts{n_train / 2, n_train - n_train / 2, n_test / 2, n_test - n_test / 2};
            build_dataset(builtin_style(style), counts, seed, out);
            std::cout << "wrote " << out << " (" << n_train << " train, " << n_test << " test, style " << style
                      << ")\n";
        } else if (tr->parsed()) {
            const auto config = load_config(config_path);
            const auto result = train(config, out, &std::cout);
            std::cout << "final checkpoint " << result.final_checkpoint.string() << ", best epoch "
                      << result.best_epoch << " -> " << result.best_checkpoint.string() << '\n';
        } else if (ev->parsed()) {
            const auto loaded = load_model(ckpt);
            const auto dir = resolve_split_dir(data, "test");
            const auto samples = load_split(dir);
            const auto e = evaluate(*loaded.model, samples, domain_of(samples, data), dir.filename().string());
            print_evaluation(e);
            if (!report_path.empty()) write_json(report_path, e.report.to_json());
        } else if (cd->parsed()) {
            const auto loaded = load_model(ckpt);
            std::vector<fs::path> paths(datasets.begin(), datasets.end());
            auto all = nlohmann::ordered_json::array();
            for (const auto& e : cross_domain(*loaded.model, paths)) {
                print_evaluation(e);
                all.push_back(e.report.to_json());
            }
            if (!report_path.empty()) write_json(report_path, all);
        } else if (ab->parsed()) {
            const auto config = load_config(config_path);
            const auto report = ablate(config, ablation_variants(), out, &std::cout);
            std::cout << report.table();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
