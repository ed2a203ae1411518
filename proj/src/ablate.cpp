#include "fka/ablate.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#include "fka/checkpoint.hpp"
#include "fka/errors.hpp"

namespace fka {

namespace fs = std::filesystem;

std::vector<Variant> ablation_variants() {
    return {
        {"baseline", "modules", {false, false, true, true}},
        {"+cross_modal", "modules", {true, false, true, true}},
        {"+artifact", "modules", {false, true, true, true}},
        {"full", "modules", {true, true, true, true}},
        {"-SPT", "prompts", {true, true, false, true}},
        {"-CAH", "prompts", {true, true, true, false}},
        {"-SPT-CAH", "prompts", {true, true, false, false}},
        {"full", "prompts", {true, true, true, true}},
    };
}

namespace {

bool same_toggles(const ModuleToggles& a, const ModuleToggles& b) {
    return a.cross_modal == b.cross_modal && a.artifact == b.artifact && a.soft_prompt == b.soft_prompt &&
           a.answer_heuristics == b.answer_heuristics;
}

std::string dir_name(const Variant& v) {
    std::string out;
    for (char c : v.name) out += (c == '+' ? 'p' : c == '-' ? 'm' : c);
    return out;
}

} // namespace

nlohmann::ordered_json AblationReport::to_json() const {
    auto rows_json = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["variant"] = r.variant.name;
        j["grid"] = r.variant.grid;
        j["cross_modal"] = r.variant.toggles.cross_modal;
        j["artifact"] = r.variant.toggles.artifact;
        j["soft_prompt"] = r.variant.toggles.soft_prompt;
        j["answer_heuristics"] = r.variant.toggles.answer_heuristics;
        j["mean_auc"] = r.mean_auc;
        j["mean_eer"] = r.mean_eer;
        j["mean_acc"] = r.mean_acc;
        auto reports = nlohmann::ordered_json::array();
        for (const auto& e : r.evaluations) reports.push_back(e.report.to_json());
        j["reports"] = reports;
        rows_json.push_back(j);
    }
    nlohmann::ordered_json out;
    out["variants"] = rows_json;
    return out;
}

std::string AblationReport::table() const {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-8s %-14s %4s %4s %4s %4s %8s %8s %8s\n", "grid", "variant", "CM", "ART", "SPT",
                  "CAH", "AUC", "EER", "ACC");
    out += line;
    for (const auto& r : rows) {
        const auto& t = r.variant.toggles;
        auto mark = [](bool b) { return b ? "x" : "-"; };
        std::snprintf(line, sizeof line, "%-8s %-14s %4s %4s %4s %4s %8.4f %8.4f %8.4f\n", r.variant.grid.c_str(),
                      r.variant.name.c_str(), mark(t.cross_modal), mark(t.artifact), mark(t.soft_prompt),
                      mark(t.answer_heuristics), r.mean_auc, r.mean_eer, r.mean_acc);
        out += line;
    }
    return out;
}

const VariantResult& AblationReport::row(const std::string& grid, const std::string& name) const {
    for (const auto& r : rows) {
        if (r.variant.grid == grid && r.variant.name == name) return r;
    }
    throw UsageError("no ablation row " + grid + "/" + name);
}

AblationReport ablate(const TrainConfig& base, const std::vector<Variant>& variants, const fs::path& dir,
                      std::ostream* log) {
    base.validate();
    if (base.train_data.empty()) throw ConfigError("data.train is not set");
    if (base.eval_data.empty()) throw ConfigError("data.eval lists no evaluation datasets");
    const auto train_data = load_split(resolve_split_dir(base.train_data, "train"));
    std::vector<std::vector<Sample>> eval_sets;
    std::vector<std::string> eval_domains, eval_splits;
    for (const auto& d : base.eval_data) {
        const auto split_dir = resolve_split_dir(d, "test");
        eval_sets.push_back(load_split(split_dir));
        eval_domains.push_back(domain_of(eval_sets.back(), d));
        eval_splits.push_back(split_dir.filename().string());
    }

    // The foundation does not depend on the toggles; build it once.
    std::vector<CheckpointEntry> foundation;
    {
        auto model = build_model(base, log);
        foundation = snapshot(model->foundation_parameters());
    }

    fs::create_directories(dir);
    AblationReport report;
    for (const auto& v : variants) {
        const VariantResult* done = nullptr;
        for (const auto& r : report.rows) {
            if (same_toggles(r.variant.toggles, v.toggles)) done = &r;
        }
        if (done) {
            VariantResult copy = *done;
            copy.variant = v;
            report.rows.push_back(copy);
            continue;
        }
        if (log) *log << "ablation: training " << v.grid << "/" << v.name << '\n';
        auto config = base;
        config.model.toggles = v.toggles;
        ForgeryModel model(config.model);
        load_entries(foundation, model.foundation_parameters());
        model.invalidate_caches();

        VariantResult row;
        row.variant = v;
        row.checkpoint = dir / dir_name(v) / "model.ckpt";
        row.grad_abs_sum = train(model, config, train_data, row.checkpoint, log).grad_abs_sum;
        for (std::size_t i = 0; i < eval_sets.size(); ++i) {
            row.evaluations.push_back(evaluate(model, eval_sets[i], eval_domains[i], eval_splits[i]));
            row.mean_auc += row.evaluations.back().report.auc / static_cast<double>(eval_sets.size());
            row.mean_eer += row.evaluations.back().report.eer / static_cast<double>(eval_sets.size());
            row.mean_acc += row.evaluations.back().report.acc / static_cast<double>(eval_sets.size());
        }
        if (log) *log << "ablation: " << v.name << " mean AUC " << row.mean_auc << '\n';
        report.rows.push_back(std::move(row));
    }

    std::ofstream(dir / "ablation.json") << report.to_json().dump(2) << '\n';
    std::ofstream(dir / "ablation.txt") << report.table();
    return report;
}

} // namespace fka
