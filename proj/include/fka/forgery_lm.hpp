#pragma once

#include <span>
#include <string>
#include <vector>

#include "fka/nn.hpp"
#include "fka/vocab.hpp"

namespace fka {

struct LmConfig {
    std::size_t vocab = 0;
    std::size_t dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t mlp_dim = 128;
    std::size_t max_len = 96;

    void validate() const;
};

/// Causal transformer decoder over embedding sequences. The output head is
/// tied to the token table.
class ToyLM {
  public:
    ToyLM() = default;
    ToyLM(ParameterStore& store, const std::string& name, const LmConfig& config, Rng& rng);

    /// Token embeddings without positions, [n × C].
    Tensor embed(std::span<const int> ids) const;
    /// Hidden states after the final norm, [n × C].
    Tensor hidden(const Tensor& embeddings) const;
    /// Next-token logits at every position, [n × V].
    Tensor forward(const Tensor& embeddings) const;
    /// Next-token logits at one position, [1 × V].
    Tensor logits_at(const Tensor& embeddings, std::size_t position) const;

    const LmConfig& config() const { return config_; }

  private:
    LmConfig config_;
    Tensor table_;
    Tensor pos_;
    std::vector<TransformerBlock> blocks_;
    LayerNorm final_ln_;
};

/// Option symbols and the labels they stand for (0 real, 1 fake).
struct AnswerOptions {
    std::vector<std::string> symbols;
    std::vector<std::string> descriptions;  // shown after each symbol in the question
    std::vector<int> labels;

    /// ( A ) real news ( B ) fake news
    static AnswerOptions multiple_choice();
    /// Plain answer words real / fake, no option list in the question.
    static AnswerOptions plain();

    /// "( A ) real news ( B ) fake news"
    std::string render() const;
    /// Symbol whose label is `label`.
    const std::string& symbol_for(int label) const;
};

/// Options resolved against a vocabulary.
struct ResolvedOptions {
    std::vector<int> ids;
    std::vector<int> labels;
};

/// Throws ConfigError when a symbol is missing from the vocabulary or the
/// options are not one real and one fake entry with distinct symbols.
ResolvedOptions resolve_options(const AnswerOptions& options, const Vocabulary& vocab);

enum class SoftPlacement { after_semantic, after_forgery };

/// Template text. "{caption}" and "{options}" are substituted.
struct PromptTemplate {
    std::string human_prefix = "### human : <img>";
    std::string image_close = "</img>";
    std::string question_mc = "news : {caption} . does the image match the text ? options : {options} .";
    std::string question_plain = "news : {caption} . is this news real or fake ?";
    std::string assistant = "### assistant :";
    SoftPlacement soft_placement = SoftPlacement::after_semantic;
};

/// Which components an assembly must contain.
struct PromptLayout {
    bool semantic = true;
    bool artifact = true;  // map and token embeddings
    std::size_t soft_prompts = 4;
    bool multiple_choice = true;
};

/// Embeddings handed to the assembler, all already in LM space.
struct PromptParts {
    Tensor image;     // [k × C]
    Tensor semantic;  // [1 × C]
    Tensor map;       // [1 × C]
    Tensor token;     // [1 × C]
    Tensor soft;      // [P × C]
    std::vector<int> caption;
};

enum class SlotKind { text, image, semantic, soft, map, token };

struct Slot {
    SlotKind kind = SlotKind::text;
    int token = -1;         // vocabulary id for text slots
    std::size_t index = 0;  // row within image / soft inputs

    /// "text ###", "image 0", "soft 3", "semantic", ...
    std::string describe(const Vocabulary& vocab) const;
};

struct PromptAssembly {
    Tensor embeddings;  // [n × C]
    std::vector<Slot> slots;
    std::size_t answer_position = 0;  // last slot; its logits predict the answer

    std::size_t size() const { return slots.size(); }
    std::string describe(const Vocabulary& vocab) const;  // one slot per line
};

/// Builds the ordered sequence
///   human prefix, image rows, image close, [semantic, soft, map, token],
///   question (with options when multiple choice), assistant prefix.
/// With SoftPlacement::after_forgery the soft rows follow the token row.
PromptAssembly assemble_prompt(const ToyLM& lm, const Vocabulary& vocab, const PromptTemplate& tmpl,
                               const AnswerOptions& options, const PromptLayout& layout, const PromptParts& parts);

/// Slot sequence alone, for layout inspection without embeddings.
std::vector<Slot> prompt_slots(const Vocabulary& vocab, const PromptTemplate& tmpl, const AnswerOptions& options,
                               const PromptLayout& layout, std::span<const int> caption, std::size_t image_rows);

struct AnswerPrediction {
    int label = 0;           // label of the argmax option
    std::size_t option = 0;  // index of the argmax option
    double score = 0.5;      // probability of the fake option
};

/// Two-way softmax over the option logits; ties go to the first option.
AnswerPrediction predict_answer(const Tensor& logits, const ResolvedOptions& options);

} // namespace fka
