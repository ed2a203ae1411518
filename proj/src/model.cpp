#include "fka/model.hpp"

#include "fka/errors.hpp"

namespace fka {

void ModelConfig::finalize() {
    const auto v = Vocabulary::standard().size();
    text.vocab = v;
    lm.vocab = v;
    image.validate();
    text.validate();
    lm.validate();
    if (cross_modal.heads == 0 || cross_modal.dim % cross_modal.heads != 0) {
        throw ConfigError("cross-modal dim not divisible by heads");
    }
}

PromptLayout ModelConfig::layout() const {
    PromptLayout l;
    l.semantic = toggles.cross_modal;
    l.artifact = toggles.artifact;
    l.soft_prompts = toggles.soft_prompt ? soft_prompts : 0;
    l.multiple_choice = toggles.answer_heuristics;
    return l;
}

AnswerOptions ModelConfig::options() const {
    return toggles.answer_heuristics ? mc_options : plain_options;
}

ForgeryModel::ForgeryModel(ModelConfig config) : config_(std::move(config)) {
    config_.finalize();
    const auto seed = config_.seed;
    {
        auto rng = module_rng(seed, kImageEncoder);
        image_encoder_ = ImageEncoder(store_, kImageEncoder, config_.image, rng);
    }
    {
        auto rng = module_rng(seed, kTextEncoder);
        text_encoder_ = TextEncoder(store_, kTextEncoder, config_.text, rng);
    }
    {
        auto rng = module_rng(seed, kLm);
        lm_ = ToyLM(store_, kLm, config_.lm, rng);
    }
    {
        auto rng = module_rng(seed, kImageProjector);
        image_projector_ = Linear(store_, kImageProjector, config_.image.dim, config_.lm.dim, rng);
    }
    {
        auto rng = module_rng(seed, kCrossModal);
        cross_modal_ = CrossModal(store_, kCrossModal, config_.image.dim, config_.text.dim, config_.lm.dim,
                                  config_.cross_modal, rng);
    }
    {
        auto rng = module_rng(seed, kArtifact);
        artifact_ = ArtifactModule(store_, kArtifact, config_.cross_modal.dim, config_.text.dim, config_.image.grid(),
                                   config_.lm.dim, config_.artifact, rng);
    }
    if (config_.soft_prompts > 0) {
        auto rng = module_rng(seed, kSoftPrompt);
        soft_prompt_ = store_.uniform(kSoftPrompt, Shape{config_.soft_prompts, config_.lm.dim}, config_.lm.dim, rng);
    }
    resolved_ = resolve_options(config_.options(), Vocabulary::standard());
    freeze_foundation();
}

std::vector<NamedParameter> ForgeryModel::foundation_parameters() const {
    std::vector<NamedParameter> out;
    for (const char* p : {kImageEncoder, kTextEncoder, kLm, kImageProjector}) {
        auto part = store_.with_prefix(std::string(p) + ".");
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

std::vector<NamedParameter> ForgeryModel::trainable_parameters() const {
    const auto& t = config_.toggles;
    std::vector<std::string> prefixes;
    if (t.cross_modal) {
        prefixes.push_back(std::string(kCrossModal) + ".");
    } else if (t.artifact) {
        prefixes.push_back(std::string(kCrossModal) + ".image_adapter.");
    }
    if (t.artifact) prefixes.push_back(std::string(kArtifact) + ".");
    std::vector<NamedParameter> out;
    for (const auto& e : store_.entries()) {
        bool take = t.soft_prompt && config_.soft_prompts > 0 && e.name == kSoftPrompt;
        for (const auto& p : prefixes) take = take || e.name.starts_with(p);
        if (take) out.push_back(e);
    }
    return out;
}

void ForgeryModel::freeze_foundation() {
    store_.set_trainable("", false);
    for (auto& p : trainable_parameters()) p.value.set_requires_grad(true);
}

SampleFeatures ForgeryModel::features(const Sample& sample, const std::vector<float>* pixels) const {
    NoGradGuard guard;
    SampleFeatures f;
    const auto img = image_encoder_.encode(pixels ? *pixels : sample.pair.image);
    f.f_v = img.fused();
    f.f_t = text_encoder_.encode(sample.pair.caption).tokens;
    f.image_token = image_projector_(img.fused_cls);
    f.caption = sample.pair.caption;
    return f;
}

const Tensor& ForgeryModel::class_features() const {
    if (!class_features_.defined()) {
        NoGradGuard guard;
        const auto& vocab = Vocabulary::standard();
        std::vector<std::vector<std::vector<int>>> sets;
        for (const auto& texts : default_class_prompts()) {
            auto& set = sets.emplace_back();
            for (const auto& t : texts) set.push_back(vocab.encode(t));
        }
        class_features_ = encode_class_prompts(text_encoder_, sets);
    }
    return class_features_;
}

ModelOutput ForgeryModel::forward(const SampleFeatures& f) const {
    const auto& t = config_.toggles;
    ModelOutput out;
    PromptParts parts;
    parts.image = f.image_token;
    parts.caption = f.caption;

    Tensor patches;
    if (t.cross_modal) {
        const auto cm = cross_modal_(f.f_v, f.f_t);
        out.semantic = cross_modal_.semantic(cm.u_v_cls(), cm.u_t_cls());
        parts.semantic = out.semantic;
        patches = cm.u_v_patches();
    } else if (t.artifact) {
        patches = cross_modal_.image_adapter()(slice_rows(f.f_v, 1, f.f_v.dim(0)));
    }
    if (t.artifact) {
        out.artifact = artifact_(patches, class_features());
        parts.map = out.artifact->map_embedding;
        parts.token = out.artifact->token_embedding;
    }
    const auto layout = config_.layout();
    if (layout.soft_prompts > 0) parts.soft = soft_prompt_;

    out.prompt = assemble_prompt(lm_, Vocabulary::standard(), config_.prompt, config_.options(), layout, parts);
    out.logits = lm_.logits_at(out.prompt.embeddings, out.prompt.answer_position);
    return out;
}

Tensor map_log_probs(const ArtifactOutput& out, const ArtifactConfig& config) {
    return config.log_softmax_map ? out.m_s : log_softmax(out.w);
}

SampleLoss ForgeryModel::loss(const ModelOutput& output, const Sample& sample) const {
    SampleLoss terms;
    const auto& vocab = Vocabulary::standard();
    const int target = vocab.id(config_.options().symbol_for(sample.pair.label));
    terms.ce = cross_entropy(output.logits, std::vector<int>{target});
    if (output.artifact) {
        const auto& a = *output.artifact;
        const auto mask = downsample_mask(sample.annotation.mask, sample.pair.size, static_cast<int>(a.side));
        const auto lp = map_log_probs(a, config_.artifact);
        terms.focal = focal_loss(lp, mask);
        terms.dice = dice_loss(lp, mask);
        if (sample.annotation.bbox) {
            terms.l1 = l1_box(a.box, *sample.annotation.bbox);
            terms.giou = giou_loss(a.box, *sample.annotation.bbox);
        }
    }
    return terms;
}

AnswerPrediction ForgeryModel::predict(const SampleFeatures& features) const {
    NoGradGuard guard;
    return predict_answer(forward(features).logits, resolved_);
}

} // namespace fka
