#include "fka/vocab.hpp"

#include "fka/errors.hpp"

namespace fka {

namespace {

std::vector<std::string> standard_words() {
    return {
        // special
        "<pad>", "<cls>", "<mask>", "<eos>",
        // conversation template
        "###", "human", "assistant", ":", "<img>", "</img>",
        // question and options
        "does", "the", "image", "match", "text", "?", "options", "(", ")", "A", "B", "real", "fake", "news", ".",
        "is", "this", "or",
        // class prompts
        "a", "photo", "of", "natural", "pristine", "flawless", "manipulated", "forged", "edited",
        // caption content
        "red", "green", "blue", "orange", "yellow", "purple",
        "circle", "square", "triangle", "diamond",
        "big", "small",
        "above", "below", "left", "right",
        // per-domain phrasing
        "shows", "picture", "depicts", "scene", "with", "today", "report", "featuring", "here", "and", "near",
    };
}

} // namespace

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && text[i] == ' ') ++i;
        std::size_t j = i;
        while (j < text.size() && text[j] != ' ') ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

const Vocabulary& Vocabulary::standard() {
    static const Vocabulary vocab(standard_words());
    return vocab;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (!index_.emplace(words_[i], static_cast<int>(i)).second) {
            throw ConfigError("duplicate vocabulary word: " + words_[i]);
        }
    }
}

bool Vocabulary::contains(std::string_view word) const { return index_.count(std::string(word)) != 0; }

int Vocabulary::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) throw InputError("word not in vocabulary: '" + std::string(word) + "'");
    return it->second;
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
        throw InputError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(words_.size()));
    }
    return words_[id];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += word(ids[i]);
    }
    return out;
}

} // namespace fka
