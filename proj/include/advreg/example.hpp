#pragma once

#include <advreg/error.hpp>
#include <advreg/model.hpp>

#include <optional>
#include <string>
#include <vector>

namespace advreg {

/// Supervision for one example. Span positions are passage-relative token indices.
struct Target {
    enum class Kind { span, span_or_na, multi_choice };

    Kind kind = Kind::span;
    std::optional<std::size_t> start;
    std::optional<std::size_t> end;
    int y_na = 0;
    std::optional<std::size_t> option;

    static Target span(std::size_t s, std::size_t e) { return {Kind::span, s, e, 0, std::nullopt}; }
    static Target answerable(std::size_t s, std::size_t e) { return {Kind::span_or_na, s, e, 0, std::nullopt}; }
    static Target unanswerable() { return {Kind::span_or_na, std::nullopt, std::nullopt, 1, std::nullopt}; }
    static Target choice(std::size_t index) { return {Kind::multi_choice, std::nullopt, std::nullopt, 0, index}; }

    [[nodiscard]] bool has_span() const noexcept { return start.has_value() && end.has_value(); }

    void validate() const
    {
        switch (kind) {
        case Kind::span:
            require(has_span() && y_na == 0 && !option, ErrorKind::DataError, "span target needs start/end only");
            break;
        case Kind::span_or_na:
            require(y_na == 0 || y_na == 1, ErrorKind::DataError, "y_na must be 0 or 1");
            require(y_na == 1 ? !start && !end : has_span(), ErrorKind::DataError,
                    "answerable targets carry a span, unanswerable ones do not");
            require(!option, ErrorKind::DataError, "span target with an option index");
            break;
        case Kind::multi_choice:
            require(option.has_value() && !start && !end, ErrorKind::DataError, "choice target needs an option index");
            break;
        }
        if (has_span()) {
            require(*start <= *end, ErrorKind::DataError, "span start after end");
        }
    }
};

/// One reading-comprehension instance in model vocabulary ids. `target` is absent
/// for unlabeled examples. Word lists are kept for answer-string decoding.
struct Example {
    std::string id;
    TaskKind task = TaskKind::se;
    std::vector<int> question;
    std::vector<int> passage;
    std::vector<std::vector<int>> options;
    std::optional<Target> target;

    std::vector<std::string> passage_words;
    std::vector<std::string> question_words;
    std::vector<std::string> gold_answers; ///< empty list = unanswerable

    [[nodiscard]] bool is_unanswerable() const noexcept { return target && target->y_na == 1; }
};

/// Packs an example into the model's input sequence(s).
inline std::vector<EncodedInput> pack_example(const Example& ex, std::size_t max_len)
{
    std::vector<EncodedInput> out;
    if (ex.task == TaskKind::mc) {
        require(ex.options.size() >= 2, ErrorKind::TooFewOptions, "example " + ex.id + " has fewer than two options");
        for (const auto& opt : ex.options) {
            out.push_back(pack_choice(ex.passage, ex.question, opt, max_len));
        }
    } else {
        out.push_back(pack_question_passage(ex.question, ex.passage, max_len));
    }
    return out;
}

} // namespace advreg
