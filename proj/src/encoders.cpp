#include "fka/encoders.hpp"

#include "fka/errors.hpp"

namespace fka {

void ImageEncoderConfig::validate() const {
    if (patch_size == 0 || image_size % patch_size != 0) {
        throw ConfigError("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                          std::to_string(patch_size));
    }
    if (layers == 0) throw ConfigError("image encoder needs at least one layer");
    if (taps.empty()) throw ConfigError("image encoder needs at least one tap layer");
    for (auto t : taps) {
        if (t < 1 || t > layers) {
            throw ConfigError("tap layer " + std::to_string(t) + " outside [1, " + std::to_string(layers) + "]");
        }
    }
    if (heads == 0 || dim % heads != 0) throw ConfigError("image encoder dim not divisible by heads");
}

void TextEncoderConfig::validate() const {
    if (vocab < 4) throw ConfigError("text vocabulary too small");
    if (max_len == 0 || layers == 0) throw ConfigError("text encoder needs max_len and layers");
    if (heads == 0 || dim % heads != 0) throw ConfigError("text encoder dim not divisible by heads");
}

Tensor EncodedImage::fused() const { return concat_rows(std::vector<Tensor>{fused_cls, fused_patches}); }

Tensor patchify(std::span<const float> pixels, std::size_t image_size, std::size_t patch_size) {
    if (pixels.size() != image_size * image_size * 3) {
        throw DimensionError("image of " + std::to_string(pixels.size()) + " values, expected " +
                             std::to_string(image_size) + "x" + std::to_string(image_size) + "x3");
    }
    const std::size_t g = image_size / patch_size, row = patch_size * patch_size * 3;
    std::vector<float> out(g * g * row);
    for (std::size_t py = 0; py < g; ++py) {
        for (std::size_t px = 0; px < g; ++px) {
            float* dst = &out[(py * g + px) * row];
            for (std::size_t y = 0; y < patch_size; ++y) {
                for (std::size_t x = 0; x < patch_size; ++x) {
                    const std::size_t src = ((py * patch_size + y) * image_size + px * patch_size + x) * 3;
                    for (std::size_t c = 0; c < 3; ++c) *dst++ = pixels[src + c] - 0.5f;
                }
            }
        }
    }
    return Tensor(Shape{g * g, row}, std::move(out));
}

ImageEncoder::ImageEncoder(ParameterStore& store, const std::string& name, const ImageEncoderConfig& config, Rng& rng)
    : config_(config) {
    config_.validate();
    const std::size_t in = config_.patch_size * config_.patch_size * 3, c = config_.dim;
    patch_embed_ = Linear(store, name + ".patch_embed", in, c, rng);
    cls_ = store.uniform(name + ".cls", Shape{1, c}, c, rng);
    pos_ = store.uniform(name + ".pos", Shape{config_.patches() + 1, c}, c, rng);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        blocks_.emplace_back(store, name + ".block" + std::to_string(l), c, config_.heads, config_.mlp_dim, rng);
    }
}

EncodedImage ImageEncoder::encode(std::span<const float> pixels) const {
    const std::size_t hw = config_.patches();
    auto x = patch_embed_(patchify(pixels, config_.image_size, config_.patch_size));
    x = add(concat_rows(std::vector<Tensor>{cls_, x}), pos_);

    EncodedImage out;
    for (const auto& block : blocks_) {
        x = block(x);
        out.cls_per_layer.push_back(slice_rows(x, 0, 1));
        out.patches_per_layer.push_back(slice_rows(x, 1, hw + 1));
    }
    for (auto t : config_.taps) {
        const auto& cls = out.cls_per_layer[t - 1];
        const auto& pat = out.patches_per_layer[t - 1];
        out.fused_cls = out.fused_cls.defined() ? add(out.fused_cls, cls) : cls;
        out.fused_patches = out.fused_patches.defined() ? add(out.fused_patches, pat) : pat;
    }
    return out;
}

TextEncoder::TextEncoder(ParameterStore& store, const std::string& name, const TextEncoderConfig& config, Rng& rng)
    : config_(config) {
    config_.validate();
    const std::size_t c = config_.dim;
    table_ = store.uniform(name + ".embed", Shape{config_.vocab, c}, c, rng);
    cls_ = store.uniform(name + ".cls", Shape{1, c}, c, rng);
    pos_ = store.uniform(name + ".pos", Shape{config_.max_len + 1, c}, c, rng);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        blocks_.emplace_back(store, name + ".block" + std::to_string(l), c, config_.heads, config_.mlp_dim, rng);
    }
    final_ln_ = LayerNorm(store, name + ".ln_final", c);
}

EncodedText TextEncoder::encode(std::span<const int> ids) const {
    if (ids.size() > config_.max_len) {
        throw InputError("text of " + std::to_string(ids.size()) + " tokens exceeds max length " +
                         std::to_string(config_.max_len));
    }
    std::vector<Tensor> rows = {cls_};
    if (!ids.empty()) rows.push_back(embedding(table_, ids));
    auto x = add(concat_rows(rows), slice_rows(pos_, 0, ids.size() + 1));
    for (const auto& block : blocks_) x = block(x);
    x = final_ln_(x);
    return {slice_rows(x, 0, 1), x};
}

Tensor encode_class_prompts(const TextEncoder& encoder, const std::vector<std::vector<std::vector<int>>>& sets) {
    if (sets.empty()) throw ConfigError("no class prompt sets");
    std::vector<Tensor> rows;
    for (std::size_t s = 0; s < sets.size(); ++s) {
        if (sets[s].empty()) throw ConfigError("class prompt set " + std::to_string(s) + " is empty");
        Tensor acc;
        for (const auto& prompt : sets[s]) {
            auto cls = encoder.encode(prompt).cls;
            acc = acc.defined() ? add(acc, cls) : cls;
        }
        rows.push_back(mul_scalar(acc, 1.0f / static_cast<float>(sets[s].size())));
    }
    return concat_rows(rows);
}

std::vector<std::vector<std::string>> default_class_prompts() {
    const std::vector<std::string> templates = {"a photo of a {} image", "the {} image", "a {} photo"};
    const std::vector<std::vector<std::string>> states = {{"natural", "pristine", "flawless"},
                                                          {"manipulated", "forged", "edited"}};
    std::vector<std::vector<std::string>> out(states.size());
    for (std::size_t c = 0; c < states.size(); ++c) {
        for (const auto& t : templates) {
            for (const auto& s : states[c]) {
                std::string p = t;
                p.replace(p.find("{}"), 2, s);
                out[c].push_back(p);
            }
        }
    }
    return out;
}

} // namespace fka
