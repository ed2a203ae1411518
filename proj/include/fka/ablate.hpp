#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fka/train.hpp"

namespace fka {

struct Variant {
    std::string name;
    std::string grid;  // "modules" or "prompts"
    ModuleToggles toggles;
};

/// Module grid {baseline, +cross_modal, +artifact, full} followed by the
/// prompt grid {-SPT, -CAH, -SPT-CAH, full}. The baseline keeps soft prompts
/// and answer heuristics and drops both knowledge modules.
std::vector<Variant> ablation_variants();

struct VariantResult {
    Variant variant;
    std::vector<Evaluation> evaluations;  // one per evaluation dataset
    double mean_auc = 0, mean_eer = 0, mean_acc = 0;
    std::filesystem::path checkpoint;
    std::map<std::string, double> grad_abs_sum;  // per trainable parameter, over the run
};

struct AblationReport {
    std::vector<VariantResult> rows;

    nlohmann::ordered_json to_json() const;
    /// Plain-text table, one row per variant.
    std::string table() const;
    const VariantResult& row(const std::string& grid, const std::string& name) const;
};

/// Trains every variant of `variants` on the base config's training data and
/// evaluates on its evaluation datasets. Variants with identical toggles are
/// trained once. Writes DIR/<variant>/model.ckpt*, DIR/ablation.json and
/// DIR/ablation.txt.
AblationReport ablate(const TrainConfig& base, const std::vector<Variant>& variants, const std::filesystem::path& dir,
                      std::ostream* log = nullptr);

} // namespace fka
