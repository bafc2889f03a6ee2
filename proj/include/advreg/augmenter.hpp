#pragma once

#include <advreg/dataset.hpp>
#include <advreg/error.hpp>
#include <advreg/rng.hpp>
#include <advreg/vocab.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace advreg {

// ---------------------------------------------------------------- BM25

/// Okapi BM25 over a fixed document set.
class Bm25Index {
public:
    Bm25Index() = default;

    Bm25Index(std::vector<std::string> ids, const std::vector<std::vector<std::string>>& docs, double k1 = 1.2,
              double b = 0.75)
        : ids_(std::move(ids)), k1_(k1), b_(b)
    {
        require(ids_.size() == docs.size(), ErrorKind::LengthMismatch, "one id per document");
        double total = 0.0;
        for (std::size_t i = 0; i < docs.size(); ++i) {
            require(position_.emplace(ids_[i], i).second, ErrorKind::DataError, "duplicate document id '" + ids_[i] + "'");
            std::unordered_map<std::string, std::size_t> tf;
            for (const auto& t : docs[i]) {
                ++tf[t];
            }
            for (const auto& [term, count] : tf) {
                (void)count;
                ++df_[term];
            }
            lengths_.push_back(static_cast<double>(docs[i].size()));
            total += static_cast<double>(docs[i].size());
            tf_.push_back(std::move(tf));
        }
        avgdl_ = docs.empty() ? 0.0 : total / static_cast<double>(docs.size());
    }

    [[nodiscard]] std::size_t size() const noexcept { return ids_.size(); }
    [[nodiscard]] const std::vector<std::string>& ids() const noexcept { return ids_; }
    [[nodiscard]] double average_length() const noexcept { return avgdl_; }
    [[nodiscard]] double k1() const noexcept { return k1_; }
    [[nodiscard]] double b() const noexcept { return b_; }

    [[nodiscard]] std::size_t document_frequency(const std::string& term) const
    {
        auto it = df_.find(term);
        return it == df_.end() ? 0 : it->second;
    }

    [[nodiscard]] std::size_t term_frequency(std::size_t doc, const std::string& term) const
    {
        auto it = tf_[doc].find(term);
        return it == tf_[doc].end() ? 0 : it->second;
    }

    [[nodiscard]] double length(std::size_t doc) const { return lengths_[doc]; }

    [[nodiscard]] std::size_t index_of(const std::string& id) const
    {
        auto it = position_.find(id);
        require(it != position_.end(), ErrorKind::UnknownDocument, "unknown document '" + id + "'");
        return it->second;
    }

    /// ln(1 + (N - df + 0.5) / (df + 0.5)); never negative.
    [[nodiscard]] double idf(const std::string& term) const
    {
        const auto n = static_cast<double>(size());
        const auto df = static_cast<double>(document_frequency(term));
        return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    }

private:
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::size_t> position_;
    std::vector<std::unordered_map<std::string, std::size_t>> tf_;
    std::vector<double> lengths_;
    std::unordered_map<std::string, std::size_t> df_;
    double avgdl_ = 0.0;
    double k1_ = 1.2;
    double b_ = 0.75;
};

/// Sum over query tokens (repeats included) of idf * tf (k1 + 1) / (tf + k1 (1 - b + b |d| / avgdl)).
inline double bm25_score(std::span<const std::string> query, const std::string& doc_id, const Bm25Index& index)
{
    const std::size_t doc = index.index_of(doc_id);
    const double norm = 1.0 - index.b() + index.b() * index.length(doc) / index.average_length();
    double score = 0.0;
    for (const auto& term : query) {
        const auto tf = static_cast<double>(index.term_frequency(doc, term));
        if (tf == 0.0) {
            continue;
        }
        score += index.idf(term) * tf * (index.k1() + 1.0) / (tf + index.k1() * norm);
    }
    return score;
}

inline Bm25Index index_article(const Article& article)
{
    std::vector<std::string> ids;
    std::vector<std::vector<std::string>> docs;
    for (const auto& p : article.passages) {
        ids.push_back(p.id);
        docs.push_back(tokenize(p.context));
    }
    return {std::move(ids), docs};
}

// ---------------------------------------------------------------- generated examples

enum class AugmentStrategy { shuffle, replacement };

inline std::string to_string(AugmentStrategy s) { return s == AugmentStrategy::shuffle ? "shuffle" : "replacement"; }

/// One unanswerable (passage, question) pair produced by a strategy.
struct AugmentedExample {
    AugmentStrategy strategy = AugmentStrategy::shuffle;
    std::string article_id;
    std::string passage_id;        ///< passage the new question is attached to
    std::string source_passage_id; ///< passage the source question came from
    std::string source_question_id;
    std::string question;          ///< text of the emitted question
};

struct StrategyOutput {
    std::vector<AugmentedExample> examples;
    std::size_t skipped = 0;
};

/// For every answerable question, attach it to the best-scoring other passage of
/// the same article that does not contain its answer text.
inline StrategyOutput question_passage_shuffle(const Article& article, const Bm25Index& index)
{
    StrategyOutput out;
    if (article.passages.size() < 2) {
        for (const auto& p : article.passages) {
            for (const auto& q : p.questions) {
                out.skipped += q.is_impossible ? 0 : 1;
            }
        }
        return out;
    }
    std::vector<std::vector<std::string>> words;
    for (const auto& p : article.passages) {
        words.push_back(tokenize(p.context));
    }
    for (std::size_t pi = 0; pi < article.passages.size(); ++pi) {
        const Passage& passage = article.passages[pi];
        for (const auto& q : passage.questions) {
            if (q.is_impossible || q.answers.empty()) {
                continue;
            }
            const auto query = tokenize(q.text);
            const auto answer = tokenize(q.answers.front().text);
            std::vector<std::pair<double, std::size_t>> ranked;
            for (std::size_t other = 0; other < article.passages.size(); ++other) {
                if (other != pi) {
                    ranked.emplace_back(bm25_score(query, article.passages[other].id, index), other);
                }
            }
            std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
            bool emitted = false;
            for (const auto& [score, other] : ranked) {
                (void)score;
                if (!contains_sequence(words[other], answer)) {
                    out.examples.push_back({AugmentStrategy::shuffle, article.id, article.passages[other].id, passage.id,
                                            q.id, q.text});
                    emitted = true;
                    break;
                }
            }
            out.skipped += emitted ? 0 : 1;
        }
    }
    return out;
}

// ---------------------------------------------------------------- entities

struct EntityMention {
    std::string surface; ///< lowercased, space-joined tokens
    std::string type;
    std::size_t start = 0; ///< token index
    std::size_t length = 0;
};

/// Surface string -> entity type, read from "surface<TAB>type" lines.
class EntityGazetteer {
public:
    void add(const std::string& surface, const std::string& type)
    {
        const auto tokens = tokenize(surface);
        require(!tokens.empty(), ErrorKind::DataError, "empty gazetteer surface");
        require(!type.empty(), ErrorKind::DataError, "empty entity type for '" + surface + "'");
        const std::string key = join(tokens);
        auto [it, inserted] = types_.emplace(key, type);
        require(inserted || it->second == type, ErrorKind::DataError, "conflicting types for '" + key + "'");
        max_tokens_ = std::max(max_tokens_, tokens.size());
    }

    static EntityGazetteer parse(const std::string& text)
    {
        EntityGazetteer g;
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            if (line.empty()) {
                continue;
            }
            const auto tab = line.find('\t');
            require(tab != std::string::npos, ErrorKind::DataError,
                    "gazetteer line " + std::to_string(line_no) + " has no tab");
            g.add(line.substr(0, tab), line.substr(tab + 1));
        }
        return g;
    }

    [[nodiscard]] std::string serialize() const
    {
        std::string out;
        for (const auto& [surface, type] : types_) {
            out += surface + "\t" + type + "\n";
        }
        return out;
    }

    [[nodiscard]] std::size_t size() const noexcept { return types_.size(); }

    [[nodiscard]] const std::string* type_of(const std::string& surface) const
    {
        auto it = types_.find(surface);
        return it == types_.end() ? nullptr : &it->second;
    }

    /// Left-to-right scan taking the longest gazetteer match at each position.
    [[nodiscard]] std::vector<EntityMention> find(std::span<const std::string> tokens) const
    {
        std::vector<EntityMention> out;
        std::size_t i = 0;
        while (i < tokens.size()) {
            bool matched = false;
            for (std::size_t len = std::min(max_tokens_, tokens.size() - i); len >= 1; --len) {
                const std::string key = join(std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + len)));
                if (const std::string* type = type_of(key)) {
                    out.push_back({key, *type, i, len});
                    i += len;
                    matched = true;
                    break;
                }
            }
            if (!matched) {
                ++i;
            }
        }
        return out;
    }

private:
    std::map<std::string, std::string> types_;
    std::size_t max_tokens_ = 0;
};

/// Replaces an entity of each answerable question with another same-type entity
/// of the passage that no unanswerable question of the passage mentions.
inline StrategyOutput entity_replacement(const Passage& passage, const std::string& article_id,
                                         const EntityGazetteer& gazetteer, Rng& rng)
{
    StrategyOutput out;
    const auto passage_words = tokenize(passage.context);
    std::vector<EntityMention> entities;
    std::set<std::string> seen;
    for (auto& m : gazetteer.find(passage_words)) {
        if (seen.insert(m.surface).second) {
            entities.push_back(std::move(m));
        }
    }
    std::vector<std::string> na_questions;
    for (const auto& q : passage.questions) {
        if (q.is_impossible) {
            na_questions.push_back(join(tokenize(q.text)));
        }
    }
    auto mentioned_in_na = [&](const std::string& surface) {
        return std::any_of(na_questions.begin(), na_questions.end(),
                           [&](const std::string& q) { return q.find(surface) != std::string::npos; });
    };

    for (const auto& q : passage.questions) {
        if (q.is_impossible) {
            continue;
        }
        const auto words = tokenize(q.text);
        const auto mentions = gazetteer.find(words);
        auto mention = std::find_if(mentions.begin(), mentions.end(), [&](const auto& m) { return seen.count(m.surface) > 0; });
        if (mention == mentions.end()) {
            ++out.skipped;
            continue;
        }
        std::vector<const EntityMention*> choices;
        for (const auto& e : entities) {
            if (e.type == mention->type && e.surface != mention->surface && !mentioned_in_na(e.surface)) {
                choices.push_back(&e);
            }
        }
        if (choices.empty()) {
            ++out.skipped;
            continue;
        }
        const EntityMention& replacement = *choices[rng.index(choices.size())];
        const auto first = words.begin() + static_cast<std::ptrdiff_t>(mention->start);
        std::vector<std::string> rewritten(words.begin(), first);
        const auto rep_tokens = tokenize(replacement.surface);
        rewritten.insert(rewritten.end(), rep_tokens.begin(), rep_tokens.end());
        rewritten.insert(rewritten.end(), first + static_cast<std::ptrdiff_t>(mention->length), words.end());
        out.examples.push_back({AugmentStrategy::replacement, article_id, passage.id, passage.id, q.id, join(rewritten)});
    }
    return out;
}

// ---------------------------------------------------------------- augmentation set

struct AugmentationReport {
    std::size_t shuffle_available = 0;
    std::size_t replacement_available = 0;
    std::size_t shuffle_taken = 0;
    std::size_t replacement_taken = 0;
    std::size_t shuffle_skipped = 0;
    std::size_t replacement_skipped = 0;
    std::size_t shuffle_shortfall = 0;
    std::size_t replacement_shortfall = 0;
};

struct AugmentationSet {
    DatasetFile file; ///< only unanswerable questions
    std::vector<AugmentedExample> examples;
    AugmentationReport report;
};

namespace detail {

/// Seeded uniform subsample of `k` items, returned in their original order.
inline std::vector<AugmentedExample> subsample(const std::vector<AugmentedExample>& all, std::size_t k, Rng& rng)
{
    if (k >= all.size()) {
        return all;
    }
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    order.resize(k);
    std::sort(order.begin(), order.end());
    std::vector<AugmentedExample> out;
    out.reserve(k);
    for (std::size_t i : order) {
        out.push_back(all[i]);
    }
    return out;
}

} // namespace detail

/// Runs both strategies over `articles` and keeps up to `shuffle_target` and
/// `replacement_target` examples. Every emitted question is unanswerable.
inline AugmentationSet build_augmentation_set(const std::vector<Article>& articles, const EntityGazetteer& gazetteer,
                                              std::size_t shuffle_target, std::size_t replacement_target, Rng& rng)
{
    std::vector<AugmentedExample> shuffled;
    std::vector<AugmentedExample> replaced;
    AugmentationSet set;
    for (const auto& article : articles) {
        const Bm25Index index = index_article(article);
        auto s = question_passage_shuffle(article, index);
        set.report.shuffle_skipped += s.skipped;
        shuffled.insert(shuffled.end(), s.examples.begin(), s.examples.end());
        for (const auto& passage : article.passages) {
            auto r = entity_replacement(passage, article.id, gazetteer, rng);
            set.report.replacement_skipped += r.skipped;
            replaced.insert(replaced.end(), r.examples.begin(), r.examples.end());
        }
    }
    set.report.shuffle_available = shuffled.size();
    set.report.replacement_available = replaced.size();
    auto take_s = detail::subsample(shuffled, shuffle_target, rng);
    auto take_r = detail::subsample(replaced, replacement_target, rng);
    set.report.shuffle_taken = take_s.size();
    set.report.replacement_taken = take_r.size();
    set.report.shuffle_shortfall = shuffle_target - take_s.size();
    set.report.replacement_shortfall = replacement_target - take_r.size();

    set.examples = std::move(take_s);
    set.examples.insert(set.examples.end(), take_r.begin(), take_r.end());

    // Group the emitted questions under copies of their passages.
    std::map<std::string, const Article*> by_id;
    for (const auto& a : articles) {
        by_id[a.id] = &a;
    }
    std::map<std::pair<std::string, std::string>, std::size_t> slot;
    for (const auto& ex : set.examples) {
        const Article& src = *by_id.at(ex.article_id);
        auto key = std::make_pair(ex.article_id, ex.passage_id);
        if (!slot.count(key)) {
            auto art = std::find_if(set.file.articles.begin(), set.file.articles.end(),
                                    [&](const Article& a) { return a.id == ex.article_id; });
            if (art == set.file.articles.end()) {
                set.file.articles.push_back({ex.article_id, {}});
                art = std::prev(set.file.articles.end());
            }
            const auto& p = *std::find_if(src.passages.begin(), src.passages.end(),
                                          [&](const Passage& p) { return p.id == ex.passage_id; });
            art->passages.push_back({p.id, p.context, {}});
            slot[key] = 0;
        }
        auto art = std::find_if(set.file.articles.begin(), set.file.articles.end(),
                                [&](const Article& a) { return a.id == ex.article_id; });
        auto pas = std::find_if(art->passages.begin(), art->passages.end(),
                                [&](const Passage& p) { return p.id == ex.passage_id; });
        Question q;
        q.id = ex.source_question_id + (ex.strategy == AugmentStrategy::shuffle ? "-shuf" : "-repl");
        q.text = ex.question;
        q.is_impossible = true;
        pas->questions.push_back(std::move(q));
    }
    return set;
}

} // namespace advreg
