#include "fka/foundation.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "fka/checkpoint.hpp"
#include "fka/errors.hpp"
#include "fka/optim.hpp"

namespace fka {

std::vector<Sample> foundation_corpus(const FoundationConfig& config) {
    std::vector<Sample> out;
    const int n = static_cast<int>(config.images_per_style);
    for (const auto& style : builtin_styles()) {
        auto split = generate_split(style, "foundation", n / 2, n - n / 2, config.seed);
        out.insert(out.end(), std::make_move_iterator(split.begin()), std::make_move_iterator(split.end()));
    }
    return out;
}

Tensor patch_statistics(std::span<const float> pixels, std::size_t image_size, std::size_t patch_size) {
    if (pixels.size() != image_size * image_size * 3) throw DimensionError("patch_statistics: wrong image size");
    if (patch_size % 2 != 0) throw ConfigError("patch_statistics needs an even patch size");
    const std::size_t g = image_size / patch_size, cells = patch_size / 2, per_patch = cells * cells * 4 + 2;
    std::vector<float> out(g * g * per_patch);
    for (std::size_t py = 0; py < g; ++py) {
        for (std::size_t px = 0; px < g; ++px) {
            float* dst = &out[(py * g + px) * per_patch];
            for (std::size_t cy = 0; cy < cells; ++cy) {
                for (std::size_t cx = 0; cx < cells; ++cx) {
                    double mean[3] = {0, 0, 0}, all = 0, sq = 0;
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t y = py * patch_size + cy * 2 + dy, x = px * patch_size + cx * 2 + dx;
                            for (std::size_t c = 0; c < 3; ++c) {
                                const double v = pixels[(y * image_size + x) * 3 + c];
                                mean[c] += v / 4;
                                all += v / 12;
                                sq += v * v / 12;
                            }
                        }
                    }
                    const std::size_t cell = cy * cells + cx;
                    for (std::size_t c = 0; c < 3; ++c) dst[cell * 3 + c] = static_cast<float>(mean[c] - 0.5);
                    dst[cells * cells * 3 + cell] = static_cast<float>(std::sqrt(std::max(0.0, sq - all * all)));
                }
            }
            const double scale = g > 1 ? 1.0 / static_cast<double>(g - 1) : 0.0;
            dst[per_patch - 2] = static_cast<float>(static_cast<double>(py) * scale - 0.5);
            dst[per_patch - 1] = static_cast<float>(static_cast<double>(px) * scale - 0.5);
        }
    }
    return Tensor(Shape{g * g, per_patch}, std::move(out));
}

namespace {

/// Shuffled minibatch loop shared by the three warm-start stages. `loss`
/// returns one sample's loss; gradients of a batch are averaged.
template <typename LossFn>
std::pair<double, double> fit(std::vector<Tensor> params, std::size_t n, const FoundationConfig& cfg,
                              std::size_t epochs, Rng& rng, const char* stage, std::ostream* log, LossFn&& loss) {
    AdamW opt(params, AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    std::vector<std::size_t> order(n);
    double first = 0, last = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double total = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch) {
            const std::size_t end = std::min(n, start + cfg.batch);
            opt.zero_grad();
            for (std::size_t i = start; i < end; ++i) {
                auto l = loss(order[i]);
                total += l.item();
                mul_scalar(l, 1.0f / static_cast<float>(end - start)).backward();
            }
            opt.step(cfg.lr);
        }
        const double mean = total / static_cast<double>(std::max<std::size_t>(n, 1));
        if (epoch == 0) first = mean;
        last = mean;
        if (log) *log << "foundation " << stage << " epoch " << epoch + 1 << " loss " << mean << '\n';
    }
    opt.zero_grad();
    return {first, last};
}

std::vector<Tensor> values(const std::vector<NamedParameter>& params) {
    std::vector<Tensor> out;
    for (const auto& p : params) out.push_back(p.value);
    return out;
}

} // namespace

FoundationReport warm_start(ForgeryModel& model, const FoundationConfig& config, std::ostream* log) {
    const auto corpus = foundation_corpus(config);
    const auto& mc = model.config();
    const auto& vocab = Vocabulary::standard();
    auto& store = model.store();
    FoundationReport report;
    Rng rng(hash_combine(config.seed, hash_string("warm_start")));

    store.set_trainable("", false);

    // Image encoder: regress per-cell color and texture statistics, the grid
    // position and, for images with a crop of another image pasted in, the
    // pasted fraction of every cell. Statistics are standardized per column
    // over the corpus.
    {
        ParameterStore head_store;
        const std::size_t side = mc.image.image_size, ps = mc.image.patch_size, g = side / ps, cells = ps / 2;
        const std::size_t stat_cols = cells * cells * 4 + 2, targets = stat_cols + cells * cells;
        Linear head(head_store, "head", mc.image.dim, targets, rng);
        std::vector<double> mu(stat_cols, 0), sd(stat_cols, 0);
        for (const auto& s : corpus) {
            const auto st = patch_statistics(s.pair.image, side, ps);
            for (std::size_t p = 0; p < g * g; ++p)
                for (std::size_t k = 0; k < stat_cols; ++k) {
                    mu[k] += st.at(p, k);
                    sd[k] += static_cast<double>(st.at(p, k)) * st.at(p, k);
                }
        }
        const auto rows = static_cast<double>(corpus.size() * g * g);
        for (std::size_t k = 0; k < stat_cols; ++k) {
            mu[k] /= rows;
            sd[k] = std::sqrt(std::max(1e-12, sd[k] / rows - mu[k] * mu[k]));
        }
        store.set_trainable(std::string(kImageEncoder) + ".", true);
        auto params = values(store.with_prefix(std::string(kImageEncoder) + "."));
        params.push_back(head.weight);
        params.push_back(head.bias);
        auto [a, b] = fit(params, corpus.size(), config, config.image_epochs, rng, "image", log, [&](std::size_t i) {
            auto pixels = corpus[i].pair.image;
            std::vector<float> pasted(side * side, 0.0f);
            if (rng.bernoulli(config.paste_prob)) {
                const auto& src = corpus[rng.below(corpus.size())].pair.image;
                const auto w = static_cast<std::size_t>(rng.range(4, static_cast<int>(side / 2))),
                           h = static_cast<std::size_t>(rng.range(4, static_cast<int>(side / 2)));
                const std::size_t sx = rng.below(side - w + 1), sy = rng.below(side - h + 1);
                const std::size_t dx = rng.below(side - w + 1), dy = rng.below(side - h + 1);
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) {
                        for (std::size_t c = 0; c < 3; ++c)
                            pixels[((dy + y) * side + dx + x) * 3 + c] = src[((sy + y) * side + sx + x) * 3 + c];
                        pasted[(dy + y) * side + dx + x] = 1.0f;
                    }
                }
            }
            const auto stats = patch_statistics(pixels, side, ps);
            std::vector<float> target(g * g * targets);
            for (std::size_t p = 0; p < g * g; ++p) {
                float* dst = &target[p * targets];
                for (std::size_t k = 0; k < stat_cols; ++k)
                    dst[k] = static_cast<float>((stats.at(p, k) - mu[k]) / sd[k]);
                for (std::size_t cell = 0; cell < cells * cells; ++cell) {
                    const std::size_t y = (p / g) * ps + (cell / cells) * 2, x = (p % g) * ps + (cell % cells) * 2;
                    dst[stat_cols + cell] =
                        (pasted[y * side + x] + pasted[y * side + x + 1] + pasted[(y + 1) * side + x] +
                         pasted[(y + 1) * side + x + 1]) / 2 - 1.0f;
                }
            }
            auto pred = head(model.image_encoder().encode(pixels).fused_patches);
            auto d = sub(pred, Tensor(Shape{g * g, targets}, std::move(target)));
            return mean(mul(d, d));
        });
        report.image_first = a;
        report.image_last = b;
        store.set_trainable(std::string(kImageEncoder) + ".", false);
    }

    // Text encoder: masked-token prediction over captions and class prompts.
    {
        std::vector<std::vector<int>> texts;
        for (const auto& s : corpus) texts.push_back(s.pair.caption);
        for (const auto& set : default_class_prompts())
            for (const auto& t : set)
                for (int r = 0; r < 8; ++r) texts.push_back(vocab.encode(t));
        ParameterStore head_store;
        Linear head(head_store, "head", mc.text.dim, vocab.size(), rng);
        store.set_trainable(std::string(kTextEncoder) + ".", true);
        auto params = values(store.with_prefix(std::string(kTextEncoder) + "."));
        params.push_back(head.weight);
        params.push_back(head.bias);
        auto [a, b] = fit(params, texts.size(), config, config.text_epochs, rng, "text", log, [&](std::size_t i) {
            auto ids = texts[i];
            std::vector<int> rows, targets;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (rng.bernoulli(0.15)) rows.push_back(static_cast<int>(k));
            }
            if (rows.empty()) rows.push_back(static_cast<int>(rng.below(ids.size())));
            for (int r : rows) {
                targets.push_back(ids[r]);
                ids[r] = vocab.mask();
            }
            for (auto& r : rows) r += 1;  // row 0 is cls
            auto tokens = model.text_encoder().encode(ids).tokens;
            return cross_entropy(head(embedding(tokens, rows)), targets);
        });
        report.text_first = a;
        report.text_last = b;
        store.set_trainable(std::string(kTextEncoder) + ".", false);
    }

    // LM and image projector: next-token prediction over question prompts
    // whose answers are drawn at random, so the frozen LM starts without
    // any preference between the options.
    {
        std::vector<Tensor> cls;
        {
            NoGradGuard guard;
            for (const auto& s : corpus) cls.push_back(model.image_encoder().encode(s.pair.image).fused_cls);
        }
        store.set_trainable(std::string(kLm) + ".", true);
        store.set_trainable(std::string(kImageProjector) + ".", true);
        auto params = values(store.with_prefix(std::string(kLm) + "."));
        for (auto& t : values(store.with_prefix(std::string(kImageProjector) + "."))) params.push_back(t);
        const auto& mc_options = mc.mc_options;
        const auto& plain_options = mc.plain_options;
        auto [a, b] = fit(params, corpus.size(), config, config.lm_epochs, rng, "lm", log, [&](std::size_t i) {
            const bool multiple = rng.bernoulli(0.5);
            PromptLayout layout{false, false, 0, multiple};
            const auto& options = multiple ? mc_options : plain_options;
            PromptParts parts;
            parts.image = model.image_projector()(cls[i]);
            parts.caption = corpus[i].pair.caption;
            auto prompt = assemble_prompt(model.lm(), vocab, mc.prompt, options, layout, parts);
            const int answer = vocab.id(options.symbols[rng.below(options.symbols.size())]);
            auto seq = concat_rows(std::vector<Tensor>{prompt.embeddings, model.lm().embed(std::vector<int>{answer})});
            prompt.slots.push_back({SlotKind::text, answer, 0});
            std::vector<int> rows, targets;
            for (std::size_t k = 0; k + 1 < prompt.slots.size(); ++k) {
                if (prompt.slots[k + 1].kind == SlotKind::text) {
                    rows.push_back(static_cast<int>(k));
                    targets.push_back(prompt.slots[k + 1].token);
                }
            }
            auto logits = model.lm().forward(seq);
            return cross_entropy(embedding(logits, rows), targets);
        });
        report.lm_first = a;
        report.lm_last = b;
    }

    model.freeze_foundation();
    model.invalidate_caches();
    return report;
}

void save_foundation(const std::filesystem::path& path, const ForgeryModel& model) {
    save_checkpoint(path, model.foundation_parameters());
}

void load_foundation(const std::filesystem::path& path, ForgeryModel& model) {
    load_entries(read_checkpoint(path), model.foundation_parameters());
    model.invalidate_caches();
}

} // namespace fka
