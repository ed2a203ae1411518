#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fka {

/// Word-level vocabulary shared by the text encoder, the caption generator
/// and the language model. Fixed and ordered, so ids are stable across runs.
class Vocabulary {
  public:
    static const Vocabulary& standard();

    explicit Vocabulary(std::vector<std::string> words);

    std::size_t size() const { return words_.size(); }
    bool contains(std::string_view word) const;
    /// Throws InputError for unknown words.
    int id(std::string_view word) const;
    const std::string& word(int id) const;

    std::vector<int> encode(std::string_view text) const;
    std::string decode(const std::vector<int>& ids) const;

    int pad() const { return id("<pad>"); }
    int cls() const { return id("<cls>"); }
    int mask() const { return id("<mask>"); }

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

/// Whitespace tokenizer.
std::vector<std::string> split_words(std::string_view text);

} // namespace fka
