#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "fka/model.hpp"

namespace fka {

/// Changes whenever warm_start trains differently; part of the cache key.
inline constexpr int kFoundationRecipe = 2;

/// Warm start of the frozen stand-ins: image encoder, text encoder, LM and
/// image projector.
struct FoundationConfig {
    std::size_t images_per_style = 1000;
    std::size_t image_epochs = 8;
    std::size_t text_epochs = 4;
    std::size_t lm_epochs = 4;
    std::size_t batch = 16;
    double lr = 1e-3;
    double paste_prob = 0.5;  // image stage: chance of pasting a crop of another image
    std::uint64_t seed = 11;
};

struct FoundationReport {
    double image_first = 0, image_last = 0;  // mean epoch loss, first and last epoch
    double text_first = 0, text_last = 0;
    double lm_first = 0, lm_last = 0;
};

/// Unlabeled pairs from every built-in style, real and manipulated mixed.
std::vector<Sample> foundation_corpus(const FoundationConfig& config);

/// Per patch: mean RGB and pixel standard deviation of each 2×2 cell, then
/// the patch's grid row and column scaled to [-0.5, 0.5];
/// [hw × ((patch/2)² · 4 + 2)]. Means are centered at 0.5.
Tensor patch_statistics(std::span<const float> pixels, std::size_t image_size, std::size_t patch_size);

/// Trains the foundation parameters of `model` and leaves them frozen.
FoundationReport warm_start(ForgeryModel& model, const FoundationConfig& config, std::ostream* log = nullptr);

void save_foundation(const std::filesystem::path& path, const ForgeryModel& model);
/// VersionError when the stored parameters do not match the model.
void load_foundation(const std::filesystem::path& path, ForgeryModel& model);

} // namespace fka
