#pragma once

#include <advreg/dataset.hpp>
#include <advreg/error.hpp>
#include <advreg/rng.hpp>

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace advreg {

/// How an unanswerable question misses the passage.
enum class UnanswerableKind {
    other_entity,      ///< asks for an attribute the passage gives for a different entity
    missing_attribute, ///< the attribute appears nowhere in the passage
    missing_entity,    ///< the entity appears nowhere in the passage
};

/// Knobs for the templated fact corpus.
struct SyntheticSpec {
    TaskKind task = TaskKind::seu;
    std::size_t questions = 2000;
    std::size_t passages_per_article = 4;
    std::size_t questions_per_passage = 4;
    std::size_t facts_per_passage = 4;
    std::size_t filler_sentences = 1;
    std::size_t entities_per_article = 6;
    std::size_t common_entities = 60;
    std::size_t rare_entities = 20000;
    std::size_t attributes = 12; ///< drawn from a fixed list of 12
    std::size_t values = 8;      ///< per attribute
    double rare_fraction = 0.2;
    double unanswerable_fraction = 1.0 / 3.0;
    double label_noise = 0.0; ///< fraction of answers shifted to an adjacent token
    std::vector<UnanswerableKind> unanswerable_kinds{UnanswerableKind::other_entity, UnanswerableKind::missing_attribute,
                                                     UnanswerableKind::missing_entity};
    std::size_t options = 4;
    std::uint64_t seed = 1;
    std::string id_prefix = "q";

    void validate() const
    {
        require(questions >= 1 && passages_per_article >= 1 && questions_per_passage >= 1 && facts_per_passage >= 1,
                ErrorKind::InvalidSpec, "sizes must be >= 1");
        require(entities_per_article >= 1 && common_entities >= 1 && values >= 2, ErrorKind::InvalidSpec,
                "entity and value pools must be nonempty");
        for (double f : {rare_fraction, unanswerable_fraction, label_noise}) {
            require(f >= 0.0 && f <= 1.0, ErrorKind::InvalidSpec, "fractions must lie in [0, 1]");
        }
        require(rare_fraction == 0.0 || rare_entities >= 1, ErrorKind::InvalidSpec, "rare fraction needs a rare pool");
        require(task != TaskKind::mc || (options >= 2 && options <= values), ErrorKind::InvalidSpec,
                "multiple choice needs 2..values options");
        require(task != TaskKind::se || unanswerable_fraction == 0.0, ErrorKind::InvalidSpec,
                "the span-only task has no unanswerable questions");
        require(unanswerable_fraction == 0.0 || !unanswerable_kinds.empty(), ErrorKind::InvalidSpec,
                "unanswerable questions need at least one kind");
    }
};

struct SyntheticCorpus {
    DatasetFile file;
    std::vector<std::pair<std::string, std::string>> gazetteer; ///< (surface, type), sorted by surface
};

namespace synth {

inline const std::array<const char*, 12> kAttributes{"color", "size",   "age", "home", "leader", "owner",
                                                     "origin", "sport", "food", "tool", "pet",    "job"};
inline const std::array<const char*, 3> kEntityTypes{"person", "place", "group"};
inline const std::array<const char*, 24> kFiller{"it",   "was",  "said", "that", "many", "people", "often",
                                                 "came", "here", "long", "ago",  "and",  "some",   "still",
                                                 "do",   "so",   "we",   "know", "very", "little", "about",
                                                 "this", "old",  "place"};
inline const std::array<const char*, 4> kModifiers{"dark", "light", "deep", "pale"};

/// Pronounceable, collision-free word for index `i` drawn from a per-pool alphabet.
inline std::string word_for(std::size_t i, std::string_view consonants, std::string_view vowels, std::size_t syllables)
{
    const std::size_t base = consonants.size() * vowels.size();
    std::string out;
    for (std::size_t s = 0; s < syllables; ++s) {
        const std::size_t digit = i % base;
        i /= base;
        out.push_back(consonants[digit / vowels.size()]);
        out.push_back(vowels[digit % vowels.size()]);
    }
    return out;
}

inline std::string common_entity(std::size_t i) { return word_for(i, "bdgkmnprstvz", "aeiou", 2) + "n"; }
inline std::string rare_entity(std::size_t i) { return word_for(i, "bdgkmnprstvz", "aeiou", 3) + "x"; }
inline std::string value_word(std::size_t i) { return word_for(i, "fhjlwy", "aeiou", 2); }

/// Type of an entity is a pure function of its pool index so train and dev agree.
inline const char* entity_type(std::size_t pool_index) { return kEntityTypes[pool_index % kEntityTypes.size()]; }

struct Entity {
    std::string surface;
    std::string type;
};

struct Fact {
    std::size_t entity = 0; ///< index into the article's entities
    std::size_t attribute = 0;
    std::string value;
};

inline std::string fact_sentence(const std::string& attr, const std::string& entity, const std::string& value)
{
    return "the " + attr + " of " + entity + " is " + value + " .";
}

inline std::string question_text(const std::string& attr, const std::string& entity)
{
    return "what is the " + attr + " of " + entity + " ?";
}

} // namespace synth

/// Templated passages of "the <attr> of <entity> is <value> ." facts with one
/// question per fact query. Attributes are distinct within a passage, so a
/// question whose attribute appears with a different entity is unanswerable.
inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec)
{
    spec.validate();
    Rng rng(spec.seed);
    SyntheticCorpus corpus;
    corpus.file.task = spec.task;
    std::map<std::string, std::string> gazetteer;

    require(spec.attributes >= 1 && spec.attributes <= synth::kAttributes.size(), ErrorKind::InvalidSpec,
            "attributes must lie in 1..12");
    require(spec.facts_per_passage < spec.attributes, ErrorKind::InvalidSpec, "facts per passage must be below the attribute count");
    require(spec.entities_per_article >= 2, ErrorKind::InvalidSpec, "articles need >= 2 entities");

    auto draw_value = [&](std::size_t attr) {
        std::string v = synth::value_word(attr * spec.values + rng.index(spec.values));
        if (rng.bernoulli(0.2)) {
            v = std::string(synth::kModifiers[rng.index(synth::kModifiers.size())]) + " " + v;
        }
        return v;
    };

    std::size_t produced = 0;
    std::size_t article_no = 0;
    while (produced < spec.questions) {
        Article out_article;
        out_article.id = spec.id_prefix + "-a" + std::to_string(article_no);

        std::vector<synth::Entity> entities;
        std::set<std::string> used;
        while (entities.size() < spec.entities_per_article) {
            synth::Entity e;
            if (spec.rare_fraction > 0.0 && rng.bernoulli(spec.rare_fraction)) {
                const std::size_t k = rng.index(spec.rare_entities);
                e = {synth::rare_entity(k), synth::entity_type(k)};
            } else {
                const std::size_t k = rng.index(spec.common_entities);
                e = {synth::common_entity(k), synth::entity_type(k)};
            }
            if (used.insert(e.surface).second) {
                gazetteer[e.surface] = e.type;
                entities.push_back(std::move(e));
            }
        }

        for (std::size_t p = 0; p < spec.passages_per_article && produced < spec.questions; ++p) {
            // Facts: distinct attributes, entities drawn from the article.
            std::vector<std::size_t> attrs(spec.attributes);
            for (std::size_t i = 0; i < attrs.size(); ++i) {
                attrs[i] = i;
            }
            rng.shuffle(attrs);
            std::vector<synth::Fact> facts;
            for (std::size_t f = 0; f < spec.facts_per_passage; ++f) {
                facts.push_back({rng.index(entities.size()), attrs[f], draw_value(attrs[f])});
            }

            std::vector<std::string> sentences;
            for (const auto& f : facts) {
                sentences.push_back(synth::fact_sentence(synth::kAttributes[f.attribute], entities[f.entity].surface, f.value));
            }
            for (std::size_t s = 0; s < spec.filler_sentences; ++s) {
                std::string line;
                const std::size_t len = 4 + rng.index(3);
                for (std::size_t w = 0; w < len; ++w) {
                    line += std::string(synth::kFiller[rng.index(synth::kFiller.size())]) + " ";
                }
                sentences.push_back(line + ".");
            }
            rng.shuffle(sentences);

            // Token offset of each fact's value inside the passage.
            std::vector<std::string> words;
            std::map<std::size_t, std::size_t> value_start; // fact index -> token index
            for (const auto& s : sentences) {
                for (std::size_t f = 0; f < facts.size(); ++f) {
                    if (s == synth::fact_sentence(synth::kAttributes[facts[f].attribute], entities[facts[f].entity].surface,
                                                  facts[f].value) &&
                        !value_start.count(f)) {
                        value_start[f] = words.size() + 5;
                        break;
                    }
                }
                auto w = tokenize(s);
                words.insert(words.end(), w.begin(), w.end());
            }

            Passage passage;
            passage.id = out_article.id + "-p" + std::to_string(p);
            passage.context = join(words);

            std::set<std::size_t> passage_entities;
            std::set<std::size_t> passage_attrs;
            for (const auto& f : facts) {
                passage_entities.insert(f.entity);
                passage_attrs.insert(f.attribute);
            }

            for (std::size_t qi = 0; qi < spec.questions_per_passage && produced < spec.questions; ++qi) {
                Question q;
                q.id = spec.id_prefix + std::to_string(produced);
                const bool impossible = spec.task != TaskKind::mc && rng.bernoulli(spec.unanswerable_fraction);
                if (!impossible) {
                    const std::size_t f = rng.index(facts.size());
                    const auto& fact = facts[f];
                    q.text = synth::question_text(synth::kAttributes[fact.attribute], entities[fact.entity].surface);
                    if (spec.task == TaskKind::mc) {
                        std::vector<std::string> opts{fact.value};
                        std::set<std::string> seen{fact.value};
                        while (opts.size() < spec.options) {
                            std::string v = draw_value(fact.attribute);
                            if (seen.insert(v).second) {
                                opts.push_back(std::move(v));
                            }
                        }
                        rng.shuffle(opts);
                        q.label = static_cast<std::size_t>(std::find(opts.begin(), opts.end(), fact.value) - opts.begin());
                        q.options = std::move(opts);
                    } else {
                        std::size_t start = value_start.at(f);
                        const std::size_t len = tokenize(fact.value).size();
                        if (spec.label_noise > 0.0 && rng.bernoulli(spec.label_noise)) {
                            const bool left = rng.bernoulli(0.5);
                            if (left && start > 0) {
                                --start;
                            } else if (start + len < words.size()) {
                                ++start;
                            } else {
                                --start;
                            }
                        }
                        std::vector<std::string> span(words.begin() + static_cast<std::ptrdiff_t>(start),
                                                      words.begin() + static_cast<std::ptrdiff_t>(start + len));
                        q.answers.push_back({join(span), start});
                    }
                } else {
                    q.is_impossible = true;
                    // A kind that cannot be realized in this passage falls back to missing_attribute.
                    const auto kind = spec.unanswerable_kinds[rng.index(spec.unanswerable_kinds.size())];
                    std::size_t attr = 0;
                    std::size_t ent = 0;
                    if (kind == UnanswerableKind::other_entity && passage_entities.size() >= 2) {
                        const auto& fact = facts[rng.index(facts.size())];
                        attr = fact.attribute;
                        std::vector<std::size_t> others;
                        for (std::size_t e : passage_entities) {
                            if (e != fact.entity) {
                                others.push_back(e);
                            }
                        }
                        ent = others[rng.index(others.size())];
                    } else if (kind != UnanswerableKind::missing_entity || passage_entities.size() == entities.size()) {
                        std::vector<std::size_t> absent;
                        for (std::size_t a = 0; a < spec.attributes; ++a) {
                            if (!passage_attrs.count(a)) {
                                absent.push_back(a);
                            }
                        }
                        attr = absent[rng.index(absent.size())];
                        ent = facts[rng.index(facts.size())].entity;
                    } else {
                        std::vector<std::size_t> absent;
                        for (std::size_t e = 0; e < entities.size(); ++e) {
                            if (!passage_entities.count(e)) {
                                absent.push_back(e);
                            }
                        }
                        ent = absent[rng.index(absent.size())];
                        attr = facts[rng.index(facts.size())].attribute;
                    }
                    q.text = synth::question_text(synth::kAttributes[attr], entities[ent].surface);
                }
                passage.questions.push_back(std::move(q));
                ++produced;
            }
            out_article.passages.push_back(std::move(passage));
        }
        corpus.file.articles.push_back(std::move(out_article));
        ++article_no;
    }
    corpus.gazetteer.assign(gazetteer.begin(), gazetteer.end());
    return corpus;
}

} // namespace advreg
