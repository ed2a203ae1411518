#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fka/artifact.hpp"
#include "fka/cross_modal.hpp"
#include "fka/encoders.hpp"
#include "fka/forgery_lm.hpp"
#include "fka/losses.hpp"
#include "fka/synth.hpp"

namespace fka {

struct ModuleToggles {
    bool cross_modal = true;
    bool artifact = true;
    bool soft_prompt = true;
    bool answer_heuristics = true;
};

struct ModelConfig {
    ImageEncoderConfig image;
    TextEncoderConfig text;
    LmConfig lm;
    CrossModalConfig cross_modal;
    ArtifactConfig artifact;
    std::size_t soft_prompts = 4;
    ModuleToggles toggles;
    PromptTemplate prompt;
    AnswerOptions mc_options = AnswerOptions::multiple_choice();
    AnswerOptions plain_options = AnswerOptions::plain();
    std::uint64_t seed = 7;

    /// Fills vocabulary sizes from the standard vocabulary and validates.
    void finalize();
    /// Layout the assembler expects under the current toggles.
    PromptLayout layout() const;
    AnswerOptions options() const;
};

/// Frozen-encoder outputs for one sample. They do not depend on trainable
/// parameters and are computed once per sample.
struct SampleFeatures {
    Tensor f_v;          // [(1 + hw) × C_img], cls first
    Tensor f_t;          // [(1 + n) × C_text], cls first
    Tensor image_token;  // [1 × C_lm], frozen image projector output
    std::vector<int> caption;
};

struct ModelOutput {
    PromptAssembly prompt;
    Tensor logits;  // [1 × V] at the answer position
    Tensor semantic;
    std::optional<ArtifactOutput> artifact;
};

/// Parameter name prefixes. The foundation (encoders, LM, image projector)
/// is frozen after warm start.
inline constexpr const char* kImageEncoder = "image_encoder";
inline constexpr const char* kTextEncoder = "text_encoder";
inline constexpr const char* kLm = "lm";
inline constexpr const char* kImageProjector = "image_projector";
inline constexpr const char* kCrossModal = "cross_modal";
inline constexpr const char* kArtifact = "artifact";
inline constexpr const char* kSoftPrompt = "soft_prompt";

class ForgeryModel {
  public:
    explicit ForgeryModel(ModelConfig config);
    ForgeryModel(const ForgeryModel&) = delete;
    ForgeryModel& operator=(const ForgeryModel&) = delete;

    const ModelConfig& config() const { return config_; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }

    const ImageEncoder& image_encoder() const { return image_encoder_; }
    const TextEncoder& text_encoder() const { return text_encoder_; }
    const ToyLM& lm() const { return lm_; }
    const Linear& image_projector() const { return image_projector_; }
    const CrossModal& cross_modal() const { return cross_modal_; }
    const ArtifactModule& artifact() const { return artifact_; }
    const Tensor& soft_prompt() const { return soft_prompt_; }

    /// Foundation parameters: encoders, LM and image projector.
    std::vector<NamedParameter> foundation_parameters() const;
    /// Exactly the parameters updated during training under the current toggles.
    std::vector<NamedParameter> trainable_parameters() const;
    /// Sets requires_grad to match trainable_parameters().
    void freeze_foundation();

    /// Runs the frozen encoders. `pixels` overrides the sample image (used for
    /// perturbed copies).
    SampleFeatures features(const Sample& sample, const std::vector<float>* pixels = nullptr) const;
    ModelOutput forward(const SampleFeatures& features) const;
    /// Per-sample loss terms; pixel terms for every sample when the artifact
    /// module is on, patch terms only with a ground-truth box.
    SampleLoss loss(const ModelOutput& output, const Sample& sample) const;
    AnswerPrediction predict(const SampleFeatures& features) const;

    /// Class-prompt features F_p [2 × C_text]; cached until the foundation changes.
    const Tensor& class_features() const;
    void invalidate_caches() { class_features_ = Tensor(); }

    const ResolvedOptions& resolved_options() const { return resolved_; }

  private:
    ModelConfig config_;
    ParameterStore store_;
    ImageEncoder image_encoder_;
    TextEncoder text_encoder_;
    ToyLM lm_;
    Linear image_projector_;
    CrossModal cross_modal_;
    ArtifactModule artifact_;
    Tensor soft_prompt_;
    ResolvedOptions resolved_;
    mutable Tensor class_features_;
};

/// Log-probability form of the segmentation map for the pixel losses.
Tensor map_log_probs(const ArtifactOutput& out, const ArtifactConfig& config);

} // namespace fka
