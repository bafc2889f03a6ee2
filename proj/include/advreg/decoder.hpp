#pragma once

#include <advreg/error.hpp>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace advreg {

struct SpanChoice {
    std::size_t start = 0;
    std::size_t end = 0;
    double prob = 0.0;
};

/// Most probable span (i, j) with i <= j, j - i < max_answer_len and both ends
/// inside `valid`. Ties go to the smaller start, then the smaller end.
inline SpanChoice best_span(std::span<const double> p_start, std::span<const double> p_end,
                            std::span<const std::uint8_t> valid, std::size_t max_answer_len = 30)
{
    require(p_start.size() == p_end.size() && p_start.size() == valid.size(), ErrorKind::ShapeMismatch,
            "best_span inputs must have equal length");
    const std::size_t l = p_start.size();
    std::optional<SpanChoice> best;
    for (std::size_t i = 0; i < l; ++i) {
        if (!valid[i]) {
            continue;
        }
        const std::size_t last = std::min(l, i + max_answer_len);
        for (std::size_t j = i; j < last; ++j) {
            if (!valid[j]) {
                continue;
            }
            const double prob = p_start[i] * p_end[j];
            if (!best || prob > best->prob) {
                best = SpanChoice{i, j, prob};
            }
        }
    }
    require(best.has_value(), ErrorKind::NoValidSpan, "no valid span");
    return *best;
}

/// p_na - span_prob * (1 - p_na)^2. Larger means "more likely unanswerable".
inline double na_score(double p_na, double span_prob)
{
    const double keep = 1.0 - p_na;
    return p_na - span_prob * keep * keep;
}

struct ThresholdCandidate {
    double score = 0.0;
    bool gold_na = false;
    double f1_if_answered = 0.0;
    double em_if_answered = 0.0;
};

struct ThresholdResult {
    double threshold = 0.0;
    double f1 = 0.0;
    double em = 0.0;
};

/// Mean F1 / EM when every example whose score exceeds `threshold` is declared
/// unanswerable.
inline ThresholdResult score_at_threshold(std::span<const ThresholdCandidate> dev, double threshold)
{
    double f1 = 0.0;
    double em = 0.0;
    for (const auto& c : dev) {
        if (c.score > threshold) {
            f1 += c.gold_na ? 1.0 : 0.0;
            em += c.gold_na ? 1.0 : 0.0;
        } else {
            f1 += c.f1_if_answered;
            em += c.em_if_answered;
        }
    }
    const auto n = static_cast<double>(dev.size());
    return {threshold, f1 / n, em / n};
}

/// Candidate thresholds: -inf, midpoints between consecutive distinct scores, +inf.
inline std::vector<double> threshold_candidates(std::span<const ThresholdCandidate> dev)
{
    std::vector<double> scores;
    scores.reserve(dev.size());
    for (const auto& c : dev) {
        scores.push_back(c.score);
    }
    std::sort(scores.begin(), scores.end());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
    std::vector<double> out{-std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i + 1 < scores.size(); ++i) {
        out.push_back(scores[i] + (scores[i + 1] - scores[i]) / 2.0);
    }
    out.push_back(std::numeric_limits<double>::infinity());
    return out;
}

/// Threshold maximizing mean F1 over the dev set; ties go to the smaller threshold.
/// With only one gold class present the sentinel matching that class is returned.
inline ThresholdResult threshold_search(std::span<const ThresholdCandidate> dev)
{
    require(!dev.empty(), ErrorKind::EmptyDevSet, "threshold search on an empty dev set");
    const bool any_na = std::any_of(dev.begin(), dev.end(), [](const auto& c) { return c.gold_na; });
    const bool any_ha = std::any_of(dev.begin(), dev.end(), [](const auto& c) { return !c.gold_na; });
    if (!any_na || !any_ha) {
        const double sentinel = any_na ? -std::numeric_limits<double>::infinity()
                                       : std::numeric_limits<double>::infinity();
        return score_at_threshold(dev, sentinel);
    }

    std::vector<const ThresholdCandidate*> order;
    order.reserve(dev.size());
    for (const auto& c : dev) {
        order.push_back(&c);
    }
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->score < b->score; });

    // At -inf every example is declared unanswerable; moving the threshold past a
    // group of equal scores flips that group to answered.
    double f1 = 0.0;
    double em = 0.0;
    for (const auto& c : dev) {
        f1 += c.gold_na ? 1.0 : 0.0;
        em += c.gold_na ? 1.0 : 0.0;
    }
    const auto n = static_cast<double>(dev.size());
    ThresholdResult best{-std::numeric_limits<double>::infinity(), f1 / n, em / n};
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = order[i]->score;
        std::size_t j = i;
        while (j < order.size() && order[j]->score == s) {
            const auto& c = *order[j];
            const double na_credit = c.gold_na ? 1.0 : 0.0;
            f1 += c.f1_if_answered - na_credit;
            em += c.em_if_answered - na_credit;
            ++j;
        }
        const double threshold = j < order.size() ? s + (order[j]->score - s) / 2.0
                                                  : std::numeric_limits<double>::infinity();
        if (f1 / n > best.f1) {
            best = {threshold, f1 / n, em / n};
        }
        i = j;
    }
    return best;
}

// ---------------------------------------------------------------- answer metrics

/// Lowercase, strip punctuation, drop the articles a/an/the, collapse whitespace.
inline std::string normalize_answer(std::string_view text)
{
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::ispunct(c)) {
            continue;
        }
        cleaned.push_back(static_cast<char>(std::tolower(c)));
    }
    std::string out;
    std::size_t i = 0;
    while (i < cleaned.size()) {
        while (i < cleaned.size() && std::isspace(static_cast<unsigned char>(cleaned[i]))) {
            ++i;
        }
        std::size_t j = i;
        while (j < cleaned.size() && !std::isspace(static_cast<unsigned char>(cleaned[j]))) {
            ++j;
        }
        if (j > i) {
            const std::string_view word(cleaned.data() + i, j - i);
            if (word != "a" && word != "an" && word != "the") {
                if (!out.empty()) {
                    out.push_back(' ');
                }
                out.append(word);
            }
        }
        i = j;
    }
    return out;
}

inline std::vector<std::string> normalized_tokens(std::string_view text)
{
    std::vector<std::string> out;
    const std::string norm = normalize_answer(text);
    std::size_t i = 0;
    while (i < norm.size()) {
        std::size_t j = norm.find(' ', i);
        if (j == std::string::npos) {
            j = norm.size();
        }
        out.emplace_back(norm.substr(i, j - i));
        i = j + 1;
    }
    return out;
}

struct AnswerScore {
    double em = 0.0;
    double f1 = 0.0;
};

inline double token_f1(std::string_view prediction, std::string_view gold)
{
    const auto p = normalized_tokens(prediction);
    const auto g = normalized_tokens(gold);
    if (p.empty() || g.empty()) {
        return p.empty() && g.empty() ? 1.0 : 0.0;
    }
    std::map<std::string, int> counts;
    for (const auto& t : g) {
        ++counts[t];
    }
    int common = 0;
    for (const auto& t : p) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) {
        return 0.0;
    }
    const double precision = static_cast<double>(common) / static_cast<double>(p.size());
    const double recall = static_cast<double>(common) / static_cast<double>(g.size());
    return 2.0 * precision * recall / (precision + recall);
}

/// EM and F1 against the best-matching reference. An empty reference list means
/// the gold answer is "no answer" (the empty string).
inline AnswerScore em_f1(std::string_view prediction, std::span<const std::string> golds)
{
    static const std::string empty;
    std::span<const std::string> refs = golds.empty() ? std::span<const std::string>(&empty, 1) : golds;
    AnswerScore best;
    const std::string pred_norm = normalize_answer(prediction);
    for (const auto& g : refs) {
        best.em = std::max(best.em, pred_norm == normalize_answer(g) ? 1.0 : 0.0);
        best.f1 = std::max(best.f1, token_f1(prediction, g));
    }
    return best;
}

inline double mc_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> golds)
{
    require(predictions.size() == golds.size(), ErrorKind::LengthMismatch, "predictions and golds differ in length");
    if (predictions.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        hits += predictions[i] == golds[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

} // namespace advreg
