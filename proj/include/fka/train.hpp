#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fka/config.hpp"
#include "fka/metrics.hpp"
#include "fka/model.hpp"

namespace fka {

struct StepLog {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0;
    LossBreakdown loss;

    nlohmann::ordered_json to_json() const;
};

struct TrainResult {
    std::vector<StepLog> steps;
    std::filesystem::path final_checkpoint;
    std::filesystem::path best_checkpoint;
    std::size_t best_epoch = 0;
    /// Σ|grad| over the run for every trainable parameter.
    std::map<std::string, double> grad_abs_sum;
};

/// Builds a model for `config` with its foundation warm-started, or loaded
/// from the foundation cache when one with the same settings exists.
std::unique_ptr<ForgeryModel> build_model(const TrainConfig& config, std::ostream* log = nullptr);

/// Cache file for the foundation of `config`; empty without a cache dir.
std::filesystem::path foundation_cache_path(const TrainConfig& config);

/// Trains the trainable parameters of `model` on `data`. Writes
///   OUT         final checkpoint
///   OUT.best    checkpoint of the epoch with the lowest mean loss
///   OUT.config  the config text
///   OUT.log     one JSON loss breakdown per step
/// A non-finite loss aborts with a NumericError naming step and component.
TrainResult train(ForgeryModel& model, const TrainConfig& config, const std::vector<Sample>& data,
                  const std::filesystem::path& out, std::ostream* log = nullptr);

/// Loads config and data from `config`, builds the model and trains it.
TrainResult train(const TrainConfig& config, const std::filesystem::path& out, std::ostream* log = nullptr);

struct LocalizationStats {
    double pixel_accuracy = 0;  // argmax(M_s) vs pooled mask, image-manipulated samples
    double mean_iou = 0;
    std::size_t n = 0;
};

struct Evaluation {
    MetricsReport report;
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<int> predictions;
    LocalizationStats localization;
};

Evaluation evaluate(const ForgeryModel& model, const std::vector<Sample>& data, const std::string& domain,
                    const std::string& split);

struct LoadedModel {
    TrainConfig config;
    std::unique_ptr<ForgeryModel> model;
};

/// Reads CKPT.config and CKPT. VersionError when they disagree.
LoadedModel load_model(const std::filesystem::path& checkpoint);

/// One report per dataset, in the given order.
std::vector<Evaluation> cross_domain(const ForgeryModel& model, const std::vector<std::filesystem::path>& datasets);

/// Domain tag of a split (from its samples), or the directory name.
std::string domain_of(const std::vector<Sample>& data, const std::filesystem::path& dir);

} // namespace fka
