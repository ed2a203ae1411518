#include "fka/forgery_lm.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fka/errors.hpp"

namespace fka {

void LmConfig::validate() const {
    if (vocab < 4) throw ConfigError("LM vocabulary too small");
    if (layers == 0 || max_len == 0) throw ConfigError("LM needs layers and max_len");
    if (heads == 0 || dim % heads != 0) throw ConfigError("LM dim not divisible by heads");
}

ToyLM::ToyLM(ParameterStore& store, const std::string& name, const LmConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t c = config_.dim;
    table_ = store.uniform(name + ".embed", Shape{config_.vocab, c}, c, rng);
    pos_ = store.uniform(name + ".pos", Shape{config_.max_len, c}, c, rng);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        blocks_.emplace_back(store, name + ".block" + std::to_string(l), c, config_.heads, config_.mlp_dim, rng);
    }
    final_ln_ = LayerNorm(store, name + ".ln_final", c);
}

Tensor ToyLM::embed(std::span<const int> ids) const { return embedding(table_, ids); }

Tensor ToyLM::hidden(const Tensor& embeddings) const {
    const std::size_t n = embeddings.dim(0);
    if (n == 0) throw InputError("LM input is empty");
    if (n > config_.max_len) {
        throw InputError("LM sequence of " + std::to_string(n) + " exceeds max length " +
                         std::to_string(config_.max_len));
    }
    if (embeddings.dim(1) != config_.dim) throw DimensionError("LM input width " + shape_str(embeddings.shape()));
    auto x = add(embeddings, slice_rows(pos_, 0, n));
    const auto mask = causal_mask<float>(n);
    for (const auto& block : blocks_) x = block(x, mask);
    return final_ln_(x);
}

Tensor ToyLM::forward(const Tensor& embeddings) const { return matmul(hidden(embeddings), transpose(table_)); }

Tensor ToyLM::logits_at(const Tensor& embeddings, std::size_t position) const {
    if (position >= embeddings.dim(0)) throw InputError("answer position outside the sequence");
    auto h = slice_rows(hidden(embeddings), position, position + 1);
    return matmul(h, transpose(table_));
}

AnswerOptions AnswerOptions::multiple_choice() { return {{"A", "B"}, {"real news", "fake news"}, {0, 1}}; }

AnswerOptions AnswerOptions::plain() { return {{"real", "fake"}, {"", ""}, {0, 1}}; }

std::string AnswerOptions::render() const {
    std::string out;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += "( " + symbols[i] + " )";
        if (i < descriptions.size() && !descriptions[i].empty()) out += ' ' + descriptions[i];
    }
    return out;
}

const std::string& AnswerOptions::symbol_for(int label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) return symbols[i];
    }
    throw ConfigError("no answer option for label " + std::to_string(label));
}

ResolvedOptions resolve_options(const AnswerOptions& options, const Vocabulary& vocab) {
    if (options.symbols.size() != options.labels.size() || options.symbols.size() < 2) {
        throw ConfigError("answer options need matching symbols and labels, at least two");
    }
    ResolvedOptions out;
    std::set<int> seen_ids, seen_labels;
    for (std::size_t i = 0; i < options.symbols.size(); ++i) {
        const auto& s = options.symbols[i];
        if (!vocab.contains(s)) throw ConfigError("answer symbol '" + s + "' is not in the vocabulary");
        const int id = vocab.id(s);
        if (!seen_ids.insert(id).second) throw ConfigError("duplicate answer symbol '" + s + "'");
        const int label = options.labels[i];
        if (label != 0 && label != 1) throw ConfigError("answer label must be 0 (real) or 1 (fake)");
        seen_labels.insert(label);
        out.ids.push_back(id);
        out.labels.push_back(label);
    }
    if (seen_labels.size() != 2) throw ConfigError("answer options must cover both real and fake");
    return out;
}

std::string Slot::describe(const Vocabulary& vocab) const {
    switch (kind) {
    case SlotKind::text: return "text " + vocab.word(token);
    case SlotKind::image: return "image " + std::to_string(index);
    case SlotKind::semantic: return "semantic";
    case SlotKind::soft: return "soft " + std::to_string(index);
    case SlotKind::map: return "map";
    case SlotKind::token: return "token";
    }
    return "?";
}

std::string PromptAssembly::describe(const Vocabulary& vocab) const {
    std::string out;
    for (const auto& s : slots) out += s.describe(vocab) + '\n';
    return out;
}

namespace {

std::string substitute(std::string text, const std::string& key, const std::string& value) {
    for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
        text.replace(pos, key.size(), value);
    }
    return text;
}

void push_text(std::vector<Slot>& slots, const Vocabulary& vocab, std::string_view text) {
    for (int id : vocab.encode(text)) slots.push_back({SlotKind::text, id, 0});
}

} // namespace

std::vector<Slot> prompt_slots(const Vocabulary& vocab, const PromptTemplate& tmpl, const AnswerOptions& options,
                               const PromptLayout& layout, std::span<const int> caption, std::size_t image_rows) {
    std::vector<Slot> slots;
    push_text(slots, vocab, tmpl.human_prefix);
    for (std::size_t i = 0; i < image_rows; ++i) slots.push_back({SlotKind::image, -1, i});
    push_text(slots, vocab, tmpl.image_close);

    auto push_soft = [&] {
        for (std::size_t i = 0; i < layout.soft_prompts; ++i) slots.push_back({SlotKind::soft, -1, i});
    };
    if (layout.semantic) slots.push_back({SlotKind::semantic, -1, 0});
    if (tmpl.soft_placement == SoftPlacement::after_semantic) push_soft();
    if (layout.artifact) {
        slots.push_back({SlotKind::map, -1, 0});
        slots.push_back({SlotKind::token, -1, 0});
    }
    if (tmpl.soft_placement == SoftPlacement::after_forgery) push_soft();

    // The caption is spliced in as ids so that it never goes through the
    // tokenizer a second time.
    const std::string question = layout.multiple_choice ? tmpl.question_mc : tmpl.question_plain;
    const std::string with_options = substitute(question, "{options}", options.render());
    const auto at = with_options.find("{caption}");
    if (at == std::string::npos) throw ConfigError("question template has no {caption} slot");
    push_text(slots, vocab, with_options.substr(0, at));
    for (int id : caption) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) throw InputError("caption id out of vocabulary");
        slots.push_back({SlotKind::text, id, 0});
    }
    push_text(slots, vocab, with_options.substr(at + std::string("{caption}").size()));
    push_text(slots, vocab, tmpl.assistant);
    return slots;
}

PromptAssembly assemble_prompt(const ToyLM& lm, const Vocabulary& vocab, const PromptTemplate& tmpl,
                               const AnswerOptions& options, const PromptLayout& layout, const PromptParts& parts) {
    const std::size_t c = lm.config().dim;
    auto check = [&](const Tensor& t, bool expected, const char* what, std::size_t rows) {
        if (expected && !t.defined()) throw AssemblyError(std::string("prompt is missing the ") + what + " embedding");
        if (!expected && t.defined()) throw AssemblyError(std::string("prompt layout has no slot for ") + what);
        if (expected && (t.rank() != 2 || t.dim(1) != c || (rows != 0 && t.dim(0) != rows))) {
            throw AssemblyError(std::string(what) + " embedding has shape " + shape_str(t.shape()));
        }
    };
    check(parts.image, true, "image", 0);
    check(parts.semantic, layout.semantic, "semantic", 1);
    check(parts.map, layout.artifact, "map", 1);
    check(parts.token, layout.artifact, "token", 1);
    check(parts.soft, layout.soft_prompts > 0, "soft prompt", layout.soft_prompts);

    PromptAssembly out;
    out.slots = prompt_slots(vocab, tmpl, options, layout, parts.caption, parts.image.dim(0));

    // Consecutive text slots are embedded in one lookup.
    std::vector<Tensor> pieces;
    std::vector<int> run;
    auto flush = [&] {
        if (!run.empty()) pieces.push_back(lm.embed(run));
        run.clear();
    };
    for (const auto& s : out.slots) {
        if (s.kind == SlotKind::text) {
            run.push_back(s.token);
            continue;
        }
        flush();
        switch (s.kind) {
        case SlotKind::image:
            if (s.index == 0) pieces.push_back(parts.image);
            break;
        case SlotKind::semantic: pieces.push_back(parts.semantic); break;
        case SlotKind::soft:
            if (s.index == 0) pieces.push_back(parts.soft);
            break;
        case SlotKind::map: pieces.push_back(parts.map); break;
        case SlotKind::token: pieces.push_back(parts.token); break;
        case SlotKind::text: break;
        }
    }
    flush();
    out.embeddings = concat_rows(pieces);
    out.answer_position = out.slots.size() - 1;
    return out;
}

AnswerPrediction predict_answer(const Tensor& logits, const ResolvedOptions& options) {
    std::vector<double> z;
    for (int id : options.ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= logits.numel()) throw ConfigError("answer symbol outside logits");
        z.push_back(logits[static_cast<std::size_t>(id)]);
    }
    AnswerPrediction out;
    for (std::size_t i = 1; i < z.size(); ++i) {
        if (z[i] > z[out.option]) out.option = i;
    }
    out.label = options.labels[out.option];
    const double top = z[out.option];
    double total = 0, fake = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double e = std::exp(z[i] - top);
        total += e;
        if (options.labels[i] == 1) fake += e;
    }
    out.score = fake / total;
    return out;
}

} // namespace fka
