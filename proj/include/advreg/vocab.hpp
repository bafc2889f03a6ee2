#pragma once

#include <advreg/error.hpp>

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace advreg {

inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kSepId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumSpecialTokens = 4;

inline std::string to_lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

/// Whitespace tokenizer with lowercasing.
inline std::vector<std::string> tokenize(std::string_view text)
{
    std::vector<std::string> tokens;
    std::istringstream is{std::string(text)};
    std::string word;
    while (is >> word) {
        tokens.push_back(to_lower(word));
    }
    return tokens;
}

inline std::string join(const std::vector<std::string>& words, std::string_view sep = " ")
{
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) {
            out += sep;
        }
        out += words[i];
    }
    return out;
}

class Vocabulary {
public:
    Vocabulary() : words_{"[PAD]", "[CLS]", "[SEP]", "[UNK]"}
    {
        for (int i = 0; i < kNumSpecialTokens; ++i) {
            ids_.emplace(words_[static_cast<std::size_t>(i)], i);
        }
    }

    /// Specials first, then the given words in lexicographic order (deduplicated).
    static Vocabulary from_words(std::vector<std::string> words)
    {
        std::sort(words.begin(), words.end());
        words.erase(std::unique(words.begin(), words.end()), words.end());
        Vocabulary v;
        for (auto& w : words) {
            v.add(w);
        }
        return v;
    }

    /// Exact layout, as stored in a checkpoint.
    static Vocabulary from_list(const std::vector<std::string>& list)
    {
        require(list.size() >= kNumSpecialTokens, ErrorKind::DataError, "vocabulary lacks special tokens");
        Vocabulary v;
        for (std::size_t i = kNumSpecialTokens; i < list.size(); ++i) {
            v.add(list[i]);
        }
        return v;
    }

    int add(const std::string& word)
    {
        auto it = ids_.find(word);
        if (it != ids_.end()) {
            return it->second;
        }
        const int id = static_cast<int>(words_.size());
        words_.push_back(word);
        ids_.emplace(word, id);
        return id;
    }

    [[nodiscard]] int id(const std::string& word) const
    {
        auto it = ids_.find(word);
        return it == ids_.end() ? kUnkId : it->second;
    }

    [[nodiscard]] std::vector<int> encode(const std::vector<std::string>& words) const
    {
        std::vector<int> out;
        out.reserve(words.size());
        for (const auto& w : words) {
            out.push_back(id(w));
        }
        return out;
    }

    [[nodiscard]] const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
    [[nodiscard]] std::size_t size() const noexcept { return words_.size(); }
    [[nodiscard]] const std::vector<std::string>& words() const noexcept { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

} // namespace advreg
