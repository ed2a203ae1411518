#include "fka/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "fka/errors.hpp"

namespace fka {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        auto t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0;
    auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size()) {
        throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

struct Field {
    std::string key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename Ref>
Field number(std::string key, Ref ref) {
    return {key, [ref](const TrainConfig& c) { return fmt_double(ref(const_cast<TrainConfig&>(c))); },
            [ref, key](TrainConfig& c, const std::string& v) { ref(c) = parse_double(key, v); }};
}

template <typename Ref>
Field count(std::string key, Ref ref) {
    return {key, [ref](const TrainConfig& c) { return std::to_string(ref(const_cast<TrainConfig&>(c))); },
            [ref, key](TrainConfig& c, const std::string& v) {
                using T = std::remove_reference_t<decltype(ref(c))>;
                ref(c) = static_cast<T>(parse_uint(key, v));
            }};
}

template <typename Ref>
Field flag(std::string key, Ref ref) {
    return {key, [ref](const TrainConfig& c) { return std::string(ref(const_cast<TrainConfig&>(c)) ? "true" : "false"); },
            [ref, key](TrainConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}

template <typename Ref>
Field text(std::string key, Ref ref) {
    return {key, [ref](const TrainConfig& c) { return ref(const_cast<TrainConfig&>(c)); },
            [ref](TrainConfig& c, const std::string& v) { ref(c) = v; }};
}

template <typename Ref>
Field list(std::string key, Ref ref) {
    return {key, [ref](const TrainConfig& c) { return join(ref(const_cast<TrainConfig&>(c))); },
            [ref](TrainConfig& c, const std::string& v) { ref(c) = split_list(v); }};
}

#define FKA_REF(expr) [](TrainConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> all = [] {
        std::vector<Field> f;
        f.push_back({"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
                     [](TrainConfig& c, const std::string& v) {
                         c.seed = parse_uint("seed", v);
                         c.model.seed = c.seed;
                     }});
        f.push_back(number("lr", FKA_REF(optimizer.lr)));
        f.push_back(number("beta1", FKA_REF(optimizer.beta1)));
        f.push_back(number("beta2", FKA_REF(optimizer.beta2)));
        f.push_back(number("adam_eps", FKA_REF(optimizer.eps)));
        f.push_back(number("weight_decay", FKA_REF(optimizer.weight_decay)));
        f.push_back(count("batch_size", FKA_REF(batch_size)));
        f.push_back(count("epochs", FKA_REF(epochs)));
        f.push_back(number("warmup_fraction", FKA_REF(warmup_fraction)));
        f.push_back(count("train_limit", FKA_REF(train_limit)));

        f.push_back(flag("loss.pixel", FKA_REF(losses.pixel)));
        f.push_back(flag("loss.patch", FKA_REF(losses.patch)));
        f.push_back(flag("module.cross_modal", FKA_REF(model.toggles.cross_modal)));
        f.push_back(flag("module.artifact", FKA_REF(model.toggles.artifact)));
        f.push_back(flag("module.soft_prompt", FKA_REF(model.toggles.soft_prompt)));
        f.push_back(flag("module.answer_heuristics", FKA_REF(model.toggles.answer_heuristics)));

        f.push_back(count("soft_prompts", FKA_REF(model.soft_prompts)));
        f.push_back(count("cross_modal.heads", FKA_REF(model.cross_modal.heads)));
        f.push_back(flag("cross_modal.residual", FKA_REF(model.cross_modal.residual)));
        f.push_back(flag("artifact.log_softmax_map", FKA_REF(model.artifact.log_softmax_map)));
        f.push_back(count("image.layers", FKA_REF(model.image.layers)));
        f.push_back({"image.taps",
                     [](const TrainConfig& c) {
                         std::vector<std::string> s;
                         for (auto t : c.model.image.taps) s.push_back(std::to_string(t));
                         return join(s);
                     },
                     [](TrainConfig& c, const std::string& v) {
                         c.model.image.taps.clear();
                         for (const auto& t : split_list(v)) c.model.image.taps.push_back(parse_uint("image.taps", t));
                     }});
        f.push_back(count("text.layers", FKA_REF(model.text.layers)));
        f.push_back(count("lm.layers", FKA_REF(model.lm.layers)));

        f.push_back(text("prompt.human_prefix", FKA_REF(model.prompt.human_prefix)));
        f.push_back(text("prompt.image_close", FKA_REF(model.prompt.image_close)));
        f.push_back(text("prompt.question", FKA_REF(model.prompt.question_mc)));
        f.push_back(text("prompt.question_plain", FKA_REF(model.prompt.question_plain)));
        f.push_back(text("prompt.assistant", FKA_REF(model.prompt.assistant)));
        f.push_back({"prompt.soft_placement",
                     [](const TrainConfig& c) {
                         return std::string(c.model.prompt.soft_placement == SoftPlacement::after_semantic
                                                ? "after_semantic"
                                                : "after_forgery");
                     },
                     [](TrainConfig& c, const std::string& v) {
                         if (v == "after_semantic") c.model.prompt.soft_placement = SoftPlacement::after_semantic;
                         else if (v == "after_forgery") c.model.prompt.soft_placement = SoftPlacement::after_forgery;
                         else throw ConfigError("prompt.soft_placement: expected after_semantic or after_forgery");
                     }});
        f.push_back(list("options.symbols", FKA_REF(model.mc_options.symbols)));
        f.push_back(list("options.descriptions", FKA_REF(model.mc_options.descriptions)));
        f.push_back({"options.labels",
                     [](const TrainConfig& c) {
                         std::vector<std::string> s;
                         for (int l : c.model.mc_options.labels) s.push_back(std::to_string(l));
                         return join(s);
                     },
                     [](TrainConfig& c, const std::string& v) {
                         c.model.mc_options.labels.clear();
                         for (const auto& t : split_list(v))
                             c.model.mc_options.labels.push_back(static_cast<int>(parse_uint("options.labels", t)));
                     }});
        f.push_back(list("options.plain_symbols", FKA_REF(model.plain_options.symbols)));

        f.push_back(number("perturb.jpeg_prob", FKA_REF(perturb.jpeg_prob)));
        f.push_back(number("perturb.blur_prob", FKA_REF(perturb.blur_prob)));
        f.push_back(count("perturb.quality_min", FKA_REF(perturb.quality_min)));
        f.push_back(count("perturb.quality_max", FKA_REF(perturb.quality_max)));
        f.push_back(number("perturb.sigma_min", FKA_REF(perturb.sigma_min)));
        f.push_back(number("perturb.sigma_max", FKA_REF(perturb.sigma_max)));

        f.push_back(count("foundation.images_per_style", FKA_REF(foundation.images_per_style)));
        f.push_back(count("foundation.image_epochs", FKA_REF(foundation.image_epochs)));
        f.push_back(count("foundation.text_epochs", FKA_REF(foundation.text_epochs)));
        f.push_back(count("foundation.lm_epochs", FKA_REF(foundation.lm_epochs)));
        f.push_back(count("foundation.batch_size", FKA_REF(foundation.batch)));
        f.push_back(number("foundation.lr", FKA_REF(foundation.lr)));
        f.push_back(number("foundation.paste_prob", FKA_REF(foundation.paste_prob)));
        f.push_back(count("foundation.seed", FKA_REF(foundation.seed)));
        f.push_back(text("foundation.cache", FKA_REF(foundation_cache)));

        f.push_back(text("data.train", FKA_REF(train_data)));
        f.push_back(list("data.eval", FKA_REF(eval_data)));
        return f;
    }();
    return all;
}

#undef FKA_REF

} // namespace

void TrainConfig::validate() const {
    if (optimizer.lr <= 0) throw ConfigError("lr must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (warmup_fraction < 0 || warmup_fraction >= 1) throw ConfigError("warmup_fraction must be in [0, 1)");
    if (optimizer.beta1 < 0 || optimizer.beta1 >= 1 || optimizer.beta2 < 0 || optimizer.beta2 >= 1) {
        throw ConfigError("beta1 and beta2 must be in [0, 1)");
    }
    if (perturb.quality_min < 1 || perturb.quality_max > 100 || perturb.quality_min > perturb.quality_max) {
        throw ConfigError("perturb quality range must lie in [1, 100]");
    }
    auto m = model;
    m.finalize();
    resolve_options(m.mc_options, Vocabulary::standard());
    resolve_options(m.plain_options, Vocabulary::standard());
}

TrainConfig parse_config(std::string_view text) {
    TrainConfig config;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    bool versioned = false;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        // '#' inside prompt text ("### human") is content, not a comment.
        const auto eq = line.find('=');
        if (hash != std::string::npos && (eq == std::string::npos || hash < eq)) line = line.substr(0, hash);
        if (trim(line).empty()) continue;
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'");
        if (key == "config_version") {
            const auto v = parse_uint(key, value);
            if (v != static_cast<std::uint64_t>(kConfigVersion)) {
                throw VersionError("config_version " + value + " not supported (expected " +
                                   std::to_string(kConfigVersion) + ")");
            }
            versioned = true;
            continue;
        }
        bool found = false;
        for (const auto& f : fields()) {
            if (f.key == key) {
                f.set(config, value);
                found = true;
                break;
            }
        }
        if (!found) throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(line_no));
    }
    if (!versioned) throw VersionError("config has no config_version");
    config.validate();
    return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config " + path.string());
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config(buf.str());
}

std::string to_text(const TrainConfig& config) {
    std::string out = "config_version = " + std::to_string(config.config_version) + "\n";
    for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
    return out;
}

} // namespace fka
