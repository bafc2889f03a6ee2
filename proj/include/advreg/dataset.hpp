#pragma once

#include <advreg/error.hpp>
#include <advreg/example.hpp>
#include <advreg/model.hpp>
#include <advreg/vocab.hpp>

#include <nlohmann/json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace advreg {

inline constexpr const char* kDatasetVersion = "advreg-data-v1";

struct Answer {
    std::string text;
    std::size_t token_start = 0;

    friend bool operator==(const Answer&, const Answer&) = default;
};

struct Question {
    std::string id;
    std::string text;
    bool is_impossible = false;
    std::vector<Answer> answers;
    std::vector<std::string> options; ///< multiple-choice files only
    std::optional<std::size_t> label;

    friend bool operator==(const Question&, const Question&) = default;
};

struct Passage {
    std::string id;
    std::string context;
    std::vector<Question> questions;

    friend bool operator==(const Passage&, const Passage&) = default;
};

struct Article {
    std::string id;
    std::vector<Passage> passages;

    friend bool operator==(const Article&, const Article&) = default;
};

/// SQuAD-shaped container shared by the span tasks and multiple choice.
struct DatasetFile {
    std::string version = kDatasetVersion;
    TaskKind task = TaskKind::seu;
    std::vector<Article> articles;

    [[nodiscard]] std::size_t question_count() const
    {
        std::size_t n = 0;
        for (const auto& a : articles) {
            for (const auto& p : a.passages) {
                n += p.questions.size();
            }
        }
        return n;
    }

    friend bool operator==(const DatasetFile&, const DatasetFile&) = default;
};

/// True when `needle` occurs in `hay` as a contiguous run.
inline bool contains_sequence(const std::vector<std::string>& hay, const std::vector<std::string>& needle)
{
    if (needle.empty() || needle.size() > hay.size()) {
        return false;
    }
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

/// Schema checks: unique ids, answers that match their passage, consistent flags.
inline void validate(const DatasetFile& file)
{
    require(file.version == kDatasetVersion, ErrorKind::DataError, "unsupported dataset version '" + file.version + "'");
    std::set<std::string> ids;
    for (const auto& article : file.articles) {
        std::set<std::string> passage_ids;
        for (const auto& passage : article.passages) {
            require(passage_ids.insert(passage.id).second, ErrorKind::DataError,
                    "duplicate passage id '" + passage.id + "' in article '" + article.id + "'");
            const auto words = tokenize(passage.context);
            for (const auto& q : passage.questions) {
                require(ids.insert(q.id).second, ErrorKind::DataError, "duplicate question id '" + q.id + "'");
                if (file.task == TaskKind::mc) {
                    require(q.options.size() >= 2, ErrorKind::DataError, "question '" + q.id + "' needs >= 2 options");
                    require(q.label && *q.label < q.options.size(), ErrorKind::DataError,
                            "question '" + q.id + "' has no valid label");
                    continue;
                }
                if (q.is_impossible) {
                    require(q.answers.empty(), ErrorKind::DataError, "unanswerable question '" + q.id + "' has answers");
                    continue;
                }
                require(!q.answers.empty(), ErrorKind::DataError, "answerable question '" + q.id + "' has no answer");
                for (const auto& a : q.answers) {
                    const auto answer_words = tokenize(a.text);
                    require(!answer_words.empty() && a.token_start + answer_words.size() <= words.size(),
                            ErrorKind::DataError, "answer of '" + q.id + "' runs past its passage");
                    require(std::equal(answer_words.begin(), answer_words.end(),
                                       words.begin() + static_cast<std::ptrdiff_t>(a.token_start)),
                            ErrorKind::DataError, "answer of '" + q.id + "' does not match the passage");
                }
            }
        }
    }
}

// ---------------------------------------------------------------- JSON

inline nlohmann::ordered_json to_json(const DatasetFile& file)
{
    nlohmann::ordered_json data = nlohmann::ordered_json::array();
    for (const auto& article : file.articles) {
        nlohmann::ordered_json paragraphs = nlohmann::ordered_json::array();
        for (const auto& passage : article.passages) {
            nlohmann::ordered_json qas = nlohmann::ordered_json::array();
            for (const auto& q : passage.questions) {
                nlohmann::ordered_json jq;
                jq["id"] = q.id;
                jq["question"] = q.text;
                jq["is_impossible"] = q.is_impossible;
                nlohmann::ordered_json answers = nlohmann::ordered_json::array();
                for (const auto& a : q.answers) {
                    answers.push_back({{"text", a.text}, {"token_start", a.token_start}});
                }
                jq["answers"] = std::move(answers);
                if (!q.options.empty()) {
                    jq["options"] = q.options;
                }
                if (q.label) {
                    jq["label"] = *q.label;
                }
                qas.push_back(std::move(jq));
            }
            paragraphs.push_back({{"id", passage.id}, {"context", passage.context}, {"qas", std::move(qas)}});
        }
        data.push_back({{"title", article.id}, {"paragraphs", std::move(paragraphs)}});
    }
    nlohmann::ordered_json root;
    root["version"] = file.version;
    root["task"] = to_string(file.task);
    root["data"] = std::move(data);
    return root;
}

inline DatasetFile dataset_from_json(const nlohmann::json& root)
{
    DatasetFile file;
    try {
        file.version = root.at("version").get<std::string>();
        file.task = parse_task_kind(root.at("task").get<std::string>());
        for (const auto& ja : root.at("data")) {
            Article article;
            article.id = ja.at("title").get<std::string>();
            for (const auto& jp : ja.at("paragraphs")) {
                Passage passage;
                passage.id = jp.at("id").get<std::string>();
                passage.context = jp.at("context").get<std::string>();
                for (const auto& jq : jp.at("qas")) {
                    Question q;
                    q.id = jq.at("id").get<std::string>();
                    q.text = jq.at("question").get<std::string>();
                    q.is_impossible = jq.value("is_impossible", false);
                    for (const auto& jans : jq.value("answers", nlohmann::json::array())) {
                        q.answers.push_back({jans.at("text").get<std::string>(), jans.at("token_start").get<std::size_t>()});
                    }
                    if (jq.contains("options")) {
                        q.options = jq.at("options").get<std::vector<std::string>>();
                    }
                    if (jq.contains("label")) {
                        q.label = jq.at("label").get<std::size_t>();
                    }
                    passage.questions.push_back(std::move(q));
                }
                article.passages.push_back(std::move(passage));
            }
            file.articles.push_back(std::move(article));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::DataError, std::string("malformed dataset: ") + e.what());
    } catch (const Error& e) {
        fail(ErrorKind::DataError, e.what());
    }
    validate(file);
    return file;
}

inline std::string serialize(const DatasetFile& file) { return to_json(file).dump(1) + "\n"; }

inline DatasetFile parse_dataset(const std::string& text)
{
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::DataError, std::string("invalid JSON: ") + e.what());
    }
    return dataset_from_json(root);
}

inline std::string read_text_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::DataError, "cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_text_file(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::DataError, "cannot write '" + path + "'");
    out << text;
}

inline DatasetFile load_dataset(const std::string& path) { return parse_dataset(read_text_file(path)); }
inline void save_dataset(const std::string& path, const DatasetFile& file) { write_text_file(path, serialize(file)); }

// ---------------------------------------------------------------- to model examples

/// Every lowercased word in passages, questions and options.
inline std::vector<std::string> corpus_words(const DatasetFile& file)
{
    std::vector<std::string> words;
    for (const auto& a : file.articles) {
        for (const auto& p : a.passages) {
            auto w = tokenize(p.context);
            words.insert(words.end(), w.begin(), w.end());
            for (const auto& q : p.questions) {
                auto qw = tokenize(q.text);
                words.insert(words.end(), qw.begin(), qw.end());
                for (const auto& o : q.options) {
                    auto ow = tokenize(o);
                    words.insert(words.end(), ow.begin(), ow.end());
                }
            }
        }
    }
    return words;
}

/// Converts a file into model examples for `task`. With `labeled` false the
/// targets are dropped (unlabeled data for VAT). A span-only task rejects
/// unanswerable questions unless they are being read as unlabeled.
inline std::vector<Example> to_examples(const DatasetFile& file, const Vocabulary& vocab, TaskKind task,
                                        bool labeled = true)
{
    require((task == TaskKind::mc) == (file.task == TaskKind::mc), ErrorKind::RecipeDatasetMismatch,
            "dataset task '" + to_string(file.task) + "' cannot feed task '" + to_string(task) + "'");
    std::vector<Example> out;
    for (const auto& article : file.articles) {
        for (const auto& passage : article.passages) {
            const auto words = tokenize(passage.context);
            const auto passage_ids = vocab.encode(words);
            for (const auto& q : passage.questions) {
                Example ex;
                ex.id = q.id;
                ex.task = task;
                ex.question_words = tokenize(q.text);
                ex.question = vocab.encode(ex.question_words);
                ex.passage = passage_ids;
                ex.passage_words = words;
                for (const auto& a : q.answers) {
                    ex.gold_answers.push_back(join(tokenize(a.text)));
                }
                if (task == TaskKind::mc) {
                    for (const auto& o : q.options) {
                        ex.options.push_back(vocab.encode(tokenize(o)));
                    }
                    if (labeled) {
                        ex.target = Target::choice(*q.label);
                    }
                } else if (labeled) {
                    if (q.is_impossible) {
                        require(task == TaskKind::seu, ErrorKind::RecipeDatasetMismatch,
                                "unanswerable question '" + q.id + "' in a span-only labeled set");
                        ex.target = Target::unanswerable();
                    } else {
                        const auto& a = q.answers.front();
                        const std::size_t end = a.token_start + tokenize(a.text).size() - 1;
                        ex.target = task == TaskKind::se ? Target::span(a.token_start, end)
                                                         : Target::answerable(a.token_start, end);
                    }
                }
                out.push_back(std::move(ex));
            }
        }
    }
    return out;
}

} // namespace advreg
