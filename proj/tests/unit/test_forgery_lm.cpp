#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "fka/errors.hpp"
#include "fka/forgery_lm.hpp"
#include "fka/model.hpp"

using namespace fka;

namespace {

const Vocabulary& vocab() { return Vocabulary::standard(); }

struct Lm {
    ParameterStore store;
    ToyLM lm;
    Lm() {
        Rng rng(5);
        LmConfig cfg;
        cfg.vocab = vocab().size();
        lm = ToyLM(store, "lm", cfg, rng);
    }
};

Tensor random_rows(std::size_t r, std::size_t c, Rng& rng) {
    std::vector<float> v(r * c);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return Tensor(Shape{r, c}, v);
}

PromptParts parts_for(const PromptLayout& layout, Rng& rng, std::size_t image_rows = 1) {
    PromptParts p;
    p.image = random_rows(image_rows, 64, rng);
    if (layout.semantic) p.semantic = random_rows(1, 64, rng);
    if (layout.artifact) {
        p.map = random_rows(1, 64, rng);
        p.token = random_rows(1, 64, rng);
    }
    if (layout.soft_prompts > 0) p.soft = random_rows(layout.soft_prompts, 64, rng);
    p.caption = vocab().encode("big red circle above small blue square");
    return p;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Sample tiny_sample() { return generate_split(builtin_styles()[0], "test", 0, 1, 3).front(); }

} // namespace

TEST(PromptLayoutTest, MatchesGoldenFile) {
    Lm m;
    Rng rng(1);
    const PromptLayout layout;
    const auto a = assemble_prompt(m.lm, vocab(), PromptTemplate{}, AnswerOptions::multiple_choice(), layout,
                                   parts_for(layout, rng));
    EXPECT_EQ(a.describe(vocab()), read_file(FKA_GOLDEN_DIR "/prompt_layout.txt"));
    EXPECT_EQ(a.embeddings.dim(0), a.size());
    EXPECT_EQ(a.answer_position, a.size() - 1);
}

TEST(PromptLayoutTest, LengthIsTemplatePlusFeatures) {
    Lm m;
    Rng rng(2);
    const auto caption = vocab().encode("big red circle above small blue square");
    const auto tmpl = PromptTemplate{};
    const auto opts = AnswerOptions::multiple_choice();
    std::size_t fixed = vocab().encode(tmpl.human_prefix).size() + vocab().encode(tmpl.image_close).size() +
                        vocab().encode(tmpl.assistant).size() + caption.size();
    std::string q = tmpl.question_mc;
    q.replace(q.find("{options}"), 9, opts.render());
    q.replace(q.find("{caption}"), 9, "");
    fixed += vocab().encode(q).size();

    PromptLayout layout;
    layout.soft_prompts = 0;
    for (std::size_t rows : {1u, 3u}) {
        const auto a = assemble_prompt(m.lm, vocab(), tmpl, opts, layout, parts_for(layout, rng, rows));
        EXPECT_EQ(a.size(), fixed + rows + 3);
    }
    layout.soft_prompts = 4;
    EXPECT_EQ(assemble_prompt(m.lm, vocab(), tmpl, opts, layout, parts_for(layout, rng)).size(), fixed + 1 + 3 + 4);
}

TEST(PromptLayoutTest, SwappingOptionsChangesOnlyOptionTokens) {
    Lm m;
    Rng rng(3);
    const PromptLayout layout;
    const auto parts = parts_for(layout, rng);
    const auto opts = AnswerOptions::multiple_choice();
    auto swapped = opts;
    std::swap(swapped.symbols[0], swapped.symbols[1]);
    std::swap(swapped.descriptions[0], swapped.descriptions[1]);
    std::swap(swapped.labels[0], swapped.labels[1]);
    const auto a = assemble_prompt(m.lm, vocab(), PromptTemplate{}, opts, layout, parts);
    const auto b = assemble_prompt(m.lm, vocab(), PromptTemplate{}, swapped, layout, parts);
    ASSERT_EQ(a.size(), b.size());
    const std::set<std::string> option_words = {"A", "B", "real", "fake"};
    std::size_t differing = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto da = a.slots[i].describe(vocab()), db = b.slots[i].describe(vocab());
        if (da == db) continue;
        ++differing;
        EXPECT_TRUE(option_words.count(da.substr(5)) && option_words.count(db.substr(5))) << da << " vs " << db;
    }
    EXPECT_GT(differing, 0u);
}

TEST(PromptLayoutTest, SoftPromptsFollowForgeryFeaturesWhenConfigured) {
    PromptTemplate tmpl;
    tmpl.soft_placement = SoftPlacement::after_forgery;
    const auto slots = prompt_slots(vocab(), tmpl, AnswerOptions::multiple_choice(), PromptLayout{}, {}, 1);
    std::vector<SlotKind> kinds;
    for (const auto& s : slots)
        if (s.kind != SlotKind::text && s.kind != SlotKind::image) kinds.push_back(s.kind);
    const std::vector<SlotKind> expected = {SlotKind::semantic, SlotKind::map,  SlotKind::token, SlotKind::soft,
                                            SlotKind::soft,     SlotKind::soft, SlotKind::soft};
    EXPECT_EQ(kinds, expected);
}

TEST(PromptLayoutTest, PlainQuestionHasNoOptionList) {
    PromptLayout layout;
    layout.multiple_choice = false;
    std::string text;
    for (const auto& s : prompt_slots(vocab(), PromptTemplate{}, AnswerOptions::plain(), layout, {}, 1))
        if (s.kind == SlotKind::text) text += vocab().word(s.token) + " ";
    EXPECT_NE(text.find("is this news real or fake ?"), std::string::npos);
    EXPECT_EQ(text.find("options"), std::string::npos);
}

TEST(PromptLayoutTest, MissingOrUnexpectedComponentIsAssemblyError) {
    Lm m;
    Rng rng(4);
    const PromptLayout layout;
    auto p = parts_for(layout, rng);
    p.map = Tensor();
    EXPECT_THROW(assemble_prompt(m.lm, vocab(), {}, AnswerOptions::multiple_choice(), layout, p), AssemblyError);

    auto q = parts_for(layout, rng);
    PromptLayout no_art = layout;
    no_art.artifact = false;
    EXPECT_THROW(assemble_prompt(m.lm, vocab(), {}, AnswerOptions::multiple_choice(), no_art, q), AssemblyError);

    auto r = parts_for(layout, rng);
    r.soft = random_rows(3, 64, rng);
    EXPECT_THROW(assemble_prompt(m.lm, vocab(), {}, AnswerOptions::multiple_choice(), layout, r), AssemblyError);
}

TEST(ToyLmTest, CausalMasking) {
    Lm m;
    Rng rng(6);
    auto x = random_rows(10, 64, rng);
    const auto base = m.lm.forward(x);
    auto y = x;
    std::vector<float> v(y.data().begin(), y.data().end());
    for (std::size_t j = 0; j < 64; ++j) v[7 * 64 + j] += 3.0f;
    const auto changed = m.lm.forward(Tensor(Shape{10, 64}, v));
    const std::size_t V = base.dim(1);
    for (std::size_t i = 0; i < 7 * V; ++i) EXPECT_EQ(base[i], changed[i]);
    double later = 0;
    for (std::size_t i = 7 * V; i < 10 * V; ++i) later += std::abs(base[i] - changed[i]);
    EXPECT_GT(later, 0.0);
}

TEST(ToyLmTest, DeterministicLogits) {
    Lm a, b;
    Rng r1(8), r2(8);
    const auto x1 = random_rows(12, 64, r1), x2 = random_rows(12, 64, r2);
    const auto la = a.lm.logits_at(x1, 11), lb = b.lm.logits_at(x2, 11);
    for (std::size_t i = 0; i < la.numel(); ++i) ASSERT_EQ(la[i], lb[i]);
}

TEST(ToyLmTest, TooLongSequenceIsInputError) {
    Lm m;
    Rng rng(9);
    EXPECT_THROW(m.lm.forward(random_rows(97, 64, rng)), InputError);
    EXPECT_NO_THROW(m.lm.forward(random_rows(96, 64, rng)));
}

TEST(PredictAnswerTest, TieGoesToFirstOption) {
    const auto r = resolve_options(AnswerOptions::multiple_choice(), vocab());
    const auto p = predict_answer(Tensor::zeros(Shape{1, vocab().size()}), r);
    EXPECT_DOUBLE_EQ(p.score, 0.5);
    EXPECT_EQ(p.option, 0u);
    EXPECT_EQ(p.label, 0);
}

TEST(PredictAnswerTest, DominantFakeLogit) {
    const auto r = resolve_options(AnswerOptions::multiple_choice(), vocab());
    auto z = Tensor::zeros(Shape{1, vocab().size()});
    z.mutable_data()[static_cast<std::size_t>(vocab().id("B"))] = 1e4f;
    const auto p = predict_answer(z, r);
    EXPECT_NEAR(p.score, 1.0, 1e-12);
    EXPECT_EQ(p.label, 1);
}

TEST(PredictAnswerTest, RestrictedSoftmaxOracle) {
    const auto r = resolve_options(AnswerOptions::multiple_choice(), vocab());
    Rng rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        auto z = random_rows(1, vocab().size(), rng);
        const double a = z[static_cast<std::size_t>(vocab().id("A"))];
        const double b = z[static_cast<std::size_t>(vocab().id("B"))];
        const double fake = std::exp(b) / (std::exp(a) + std::exp(b));
        const auto p = predict_answer(z, r);
        EXPECT_NEAR(p.score, fake, 1e-9);
        EXPECT_EQ(p.label, b > a ? 1 : 0);
        EXPECT_GT(p.score, 0.0);
        EXPECT_LT(p.score, 1.0);
    }
}

TEST(ResolveOptionsTest, RejectsBadOptions) {
    auto missing = AnswerOptions::multiple_choice();
    missing.symbols[1] = "zebra";
    EXPECT_THROW(resolve_options(missing, vocab()), ConfigError);
    auto dup = AnswerOptions::multiple_choice();
    dup.symbols[1] = dup.symbols[0];
    EXPECT_THROW(resolve_options(dup, vocab()), ConfigError);
    auto same_label = AnswerOptions::multiple_choice();
    same_label.labels = {1, 1};
    EXPECT_THROW(resolve_options(same_label, vocab()), ConfigError);
    EXPECT_EQ(resolve_options(AnswerOptions::plain(), vocab()).ids,
              (std::vector<int>{vocab().id("real"), vocab().id("fake")}));
}

TEST(TrainableParametersTest, HandCountAndMembership) {
    ModelConfig mc;
    mc.finalize();
    ForgeryModel model(mc);
    const auto params = model.trainable_parameters();
    // cross-modal: 2 adapters (2) + 2 branches of 2 norms and 2 projections (8) + projector (2)
    // artifact: 2 deconvs (4), pixel/class projections (4), query, norm (2), out (2),
    //           box MLP (4), 2 convs (4), map/token projections (4)
    // soft prompt: 1
    EXPECT_EQ(params.size(), 22u + 25u + 1u);
    bool soft = false;
    for (const auto& p : params) {
        EXPECT_FALSE(p.name.starts_with("lm.")) << p.name;
        EXPECT_FALSE(p.name.starts_with("image_encoder.")) << p.name;
        EXPECT_FALSE(p.name.starts_with("text_encoder.")) << p.name;
        soft = soft || p.name == kSoftPrompt;
    }
    EXPECT_TRUE(soft);

    ModelConfig art_only = mc;
    art_only.toggles = {false, true, false, true};
    ForgeryModel m2(art_only);
    for (const auto& p : m2.trainable_parameters()) {
        EXPECT_TRUE(p.name.starts_with("artifact.") || p.name.starts_with("cross_modal.image_adapter.")) << p.name;
    }
    EXPECT_EQ(m2.trainable_parameters().size(), 25u + 2u);
}

TEST(TrainableParametersTest, SoftPromptAndProjectorReceiveGradient) {
    ModelConfig mc;
    mc.finalize();
    ForgeryModel model(mc);
    model.freeze_foundation();
    const auto sample = tiny_sample();
    const auto out = model.forward(model.features(sample));
    LossAccumulator acc(1, sample.annotation.bbox ? 1 : 0);
    acc.add(model.loss(out, sample)).backward();
    auto grad_norm = [](const Tensor& t) {
        double s = 0;
        for (float g : t.grad()) s += std::abs(g);
        return s;
    };
    EXPECT_GT(grad_norm(model.soft_prompt()), 0.0);
    EXPECT_GT(grad_norm(model.cross_modal().projector().weight), 0.0);
    EXPECT_GT(grad_norm(model.artifact().conv1_w), 0.0);
    for (const auto& p : model.foundation_parameters()) EXPECT_FALSE(p.value.has_grad()) << p.name;
}
