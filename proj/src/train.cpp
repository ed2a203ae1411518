#include "fka/train.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "fka/checkpoint.hpp"
#include "fka/errors.hpp"

namespace fka {

namespace fs = std::filesystem;

nlohmann::ordered_json StepLog::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["lr"] = lr;
    const auto parts = loss.to_json();
    for (auto it = parts.begin(); it != parts.end(); ++it) j[it.key()] = it.value();
    return j;
}

fs::path foundation_cache_path(const TrainConfig& config) {
    if (config.foundation_cache.empty()) return {};
    // Only settings that shape the foundation enter the key.
    std::string key = "recipe " + std::to_string(kFoundationRecipe) + "\n";
    std::istringstream in(to_text(config));
    for (std::string line; std::getline(in, line);) {
        for (const char* p : {"seed ", "foundation.", "image.", "text.", "lm.", "prompt.", "options."}) {
            if (line.starts_with(p) && !line.starts_with("foundation.cache") && !line.starts_with("prompt.soft")) {
                key += line + "\n";
            }
        }
    }
    char name[64];
    std::snprintf(name, sizeof name, "foundation-%016llx.ckpt", static_cast<unsigned long long>(hash_string(key)));
    return fs::path(config.foundation_cache) / name;
}

std::unique_ptr<ForgeryModel> build_model(const TrainConfig& config, std::ostream* log) {
    auto model = std::make_unique<ForgeryModel>(config.model);
    const auto cache = foundation_cache_path(config);
    if (!cache.empty() && fs::exists(cache)) {
        if (log) *log << "foundation: loading " << cache.string() << '\n';
        load_foundation(cache, *model);
        return model;
    }
    const auto r = warm_start(*model, config.foundation, log);
    if (log) {
        *log << "foundation: image " << r.image_first << " -> " << r.image_last << ", text " << r.text_first << " -> "
             << r.text_last << ", lm " << r.lm_first << " -> " << r.lm_last << '\n';
    }
    if (!cache.empty()) {
        fs::create_directories(cache.parent_path());
        const auto tmp = cache.string() + ".tmp";
        save_foundation(tmp, *model);
        fs::rename(tmp, cache);
    }
    return model;
}

namespace {

void check_finite(const SampleLoss& t, std::size_t step) {
    const std::pair<const char*, const Tensor*> parts[] = {
        {"l_ce", &t.ce}, {"l_focal", &t.focal}, {"l_dice", &t.dice}, {"l_l1", &t.l1}, {"l_giou", &t.giou}};
    for (const auto& [name, tensor] : parts) {
        if (tensor->defined() && !std::isfinite(tensor->item())) {
            throw NumericError("non-finite loss at step " + std::to_string(step) + " in component " + name);
        }
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("short write to " + path.string());
}

} // namespace

TrainResult train(ForgeryModel& model, const TrainConfig& config, const std::vector<Sample>& data, const fs::path& out,
                  std::ostream* log) {
    config.validate();
    if (data.empty()) throw InputError("training split is empty");
    const std::size_t n = config.train_limit ? std::min(config.train_limit, data.size()) : data.size();
    const std::size_t batch = config.batch_size;
    const std::size_t per_epoch = (n + batch - 1) / batch;
    const std::size_t total = per_epoch * config.epochs;
    const auto warmup = static_cast<std::size_t>(std::llround(config.warmup_fraction * static_cast<double>(total)));

    model.freeze_foundation();
    const auto trainable = model.trainable_parameters();
    std::vector<Tensor> params;
    for (const auto& p : trainable) params.push_back(p.value);
    AdamW opt(params, config.optimizer);

    const bool perturbing = config.perturb.jpeg_prob > 0 || config.perturb.blur_prob > 0;
    std::vector<SampleFeatures> cached;
    if (!perturbing) {
        cached.reserve(n);
        for (std::size_t i = 0; i < n; ++i) cached.push_back(model.features(data[i]));
    }

    TrainResult result;
    for (const auto& p : trainable) result.grad_abs_sum[p.name] = 0.0;
    result.final_checkpoint = out;
    result.best_checkpoint = out.string() + ".best";
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_text(out.string() + ".config", to_text(config));
    std::ofstream step_log(out.string() + ".log", std::ios::trunc);
    if (!step_log) throw IoError("cannot write " + out.string() + ".log");

    Rng order_rng(hash_combine(config.seed, hash_string("batch_order")));
    std::vector<std::size_t> order(n);
    double best = INFINITY;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
        double epoch_loss = 0;
        for (std::size_t start = 0; start < n; start += batch, ++step) {
            const std::size_t end = std::min(n, start + batch);
            std::size_t manipulated = 0;
            for (std::size_t i = start; i < end; ++i) manipulated += data[order[i]].annotation.bbox ? 1 : 0;
            LossAccumulator acc(end - start, manipulated);
            opt.zero_grad();
            for (std::size_t i = start; i < end; ++i) {
                const auto& sample = data[order[i]];
                SampleFeatures perturbed;
                if (perturbing) {
                    const auto seed = hash_combine(hash_combine(config.seed, epoch), order[i]);
                    const auto pixels = perturb(sample.pair.image, sample.pair.size, sample.pair.size, seed, config.perturb);
                    perturbed = model.features(sample, &pixels);
                }
                const auto& f = perturbing ? perturbed : cached[order[i]];
                SampleLoss terms;
                const char* stage = "forward";
                try {
                    const auto out = model.forward(f);
                    stage = "loss";
                    terms = model.loss(out, sample);
                } catch (const NumericError& e) {
                    throw NumericError("non-finite value at step " + std::to_string(step) + " in component " + stage +
                                       ": " + e.what());
                }
                if (!config.losses.pixel) terms.focal = terms.dice = Tensor();
                if (!config.losses.patch) terms.l1 = terms.giou = Tensor();
                check_finite(terms, step);
                acc.add(terms).backward();
            }
            for (const auto& p : trainable) {
                if (!p.value.has_grad()) continue;
                double s = 0;
                for (float g : p.value.grad()) s += std::abs(g);
                result.grad_abs_sum[p.name] += s;
            }
            const double lr = schedule_lr(step, total, warmup, config.optimizer.lr);
            opt.step(lr);

            StepLog entry{step, epoch, lr, acc.breakdown()};
            step_log << entry.to_json().dump() << '\n';
            epoch_loss += entry.loss.total * static_cast<double>(end - start);
            result.steps.push_back(entry);
        }
        epoch_loss /= static_cast<double>(n);
        if (log) *log << "epoch " << epoch + 1 << "/" << config.epochs << " mean loss " << epoch_loss << '\n';
        if (epoch_loss < best) {
            best = epoch_loss;
            result.best_epoch = epoch + 1;
            save_checkpoint(result.best_checkpoint, model.store());
        }
    }
    opt.zero_grad();
    save_checkpoint(out, model.store());
    return result;
}

TrainResult train(const TrainConfig& config, const fs::path& out, std::ostream* log) {
    if (config.train_data.empty()) throw ConfigError("data.train is not set");
    const auto data = load_split(resolve_split_dir(config.train_data, "train"));
    auto model = build_model(config, log);
    return train(*model, config, data, out, log);
}

Evaluation evaluate(const ForgeryModel& model, const std::vector<Sample>& data, const std::string& domain,
                    const std::string& split) {
    Evaluation ev;
    double pixel_hits = 0, pixels = 0, iou = 0;
    for (const auto& s : data) {
        NoGradGuard guard;
        const auto out = model.forward(model.features(s));
        const auto pred = predict_answer(out.logits, model.resolved_options());
        ev.scores.push_back(pred.score);
        ev.labels.push_back(s.pair.label);
        ev.predictions.push_back(pred.label);
        if (out.artifact && s.annotation.bbox) {
            const auto& a = *out.artifact;
            const auto mask = downsample_mask(s.annotation.mask, s.pair.size, static_cast<int>(a.side));
            for (std::size_t p = 0; p < mask.size(); ++p) {
                const int guess = a.m_s.at(p, 1) > a.m_s.at(p, 0) ? 1 : 0;
                pixel_hits += guess == mask[p] ? 1 : 0;
            }
            pixels += static_cast<double>(mask.size());
            iou += box_iou(to_bbox(a.box), *s.annotation.bbox);
            ++ev.localization.n;
        }
    }
    if (ev.localization.n > 0) {
        ev.localization.pixel_accuracy = pixel_hits / pixels;
        ev.localization.mean_iou = iou / static_cast<double>(ev.localization.n);
    }
    ev.report = make_report(ev.scores, ev.labels, ev.predictions, domain, split);
    return ev;
}

LoadedModel load_model(const fs::path& checkpoint) {
    LoadedModel out;
    out.config = load_config(checkpoint.string() + ".config");
    out.model = std::make_unique<ForgeryModel>(out.config.model);
    load_checkpoint(checkpoint, out.model->store());
    out.model->invalidate_caches();
    return out;
}

std::string domain_of(const std::vector<Sample>& data, const fs::path& dir) {
    if (!data.empty() && !data.front().pair.domain.empty()) return data.front().pair.domain;
    return dir.filename().string();
}

std::vector<Evaluation> cross_domain(const ForgeryModel& model, const std::vector<fs::path>& datasets) {
    std::vector<Evaluation> out;
    for (const auto& d : datasets) {
        const auto dir = resolve_split_dir(d, "test");
        const auto data = load_split(dir);
        out.push_back(evaluate(model, data, domain_of(data, d), dir.filename().string()));
    }
    return out;
}

} // namespace fka
