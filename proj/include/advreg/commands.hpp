#pragma once

#include <advreg/adversary.hpp>
#include <advreg/augmenter.hpp>
#include <advreg/checkpoint.hpp>
#include <advreg/config.hpp>
#include <advreg/dataset.hpp>
#include <advreg/evaluation.hpp>
#include <advreg/gradcheck.hpp>
#include <advreg/insight.hpp>
#include <advreg/synthetic.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace advreg {

using Json = nlohmann::ordered_json;

inline Json optional_number(const std::optional<double>& v)
{
    if (!v) {
        return nullptr;
    }
    if (!std::isfinite(*v)) {
        return *v > 0 ? "inf" : "-inf";
    }
    return *v;
}

inline std::string join_path(const std::string& dir, const std::string& name)
{
    return (std::filesystem::path(dir) / name).string();
}

inline void ensure_dir(const std::string& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec, ErrorKind::DataError, "cannot create directory '" + dir + "': " + ec.message());
}

// ---------------------------------------------------------------- train

struct RunData {
    Vocabulary vocab;
    std::vector<Example> train;
    std::vector<Example> dev;
    std::vector<Example> unlabeled;
    std::vector<Example> augmentation;
};

/// Loads every dataset named in the config. The vocabulary covers all of them so
/// that words first seen at evaluation time still get their own (untrained) row.
inline RunData load_run_data(const RunConfig& config)
{
    require(!config.train_path.empty(), ErrorKind::UsageError, "no training set given (key 'train')");
    RunData data;
    struct Source {
        const std::string* path;
        std::vector<Example>* out;
        bool labeled;
    };
    const std::vector<Source> sources{{&config.train_path, &data.train, true},
                                      {&config.dev_path, &data.dev, true},
                                      {&config.unlabeled_path, &data.unlabeled, false},
                                      {&config.augmentation_path, &data.augmentation, true}};
    std::vector<std::pair<const Source*, DatasetFile>> files;
    std::vector<std::string> words;
    for (const auto& src : sources) {
        if (src.path->empty()) {
            continue;
        }
        DatasetFile file = load_dataset(*src.path);
        auto w = corpus_words(file);
        words.insert(words.end(), w.begin(), w.end());
        files.emplace_back(&src, std::move(file));
    }
    data.vocab = Vocabulary::from_words(words);
    for (const auto& [src, file] : files) {
        *src->out = to_examples(file, data.vocab, config.task, src->labeled);
    }
    require(!data.train.empty(), ErrorKind::DataError, "training set is empty");
    return data;
}

inline Json step_json(const StepReport& r)
{
    Json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["loss_clean"] = r.loss_clean;
    j["loss_at"] = optional_number(r.loss_at);
    j["loss_vat"] = optional_number(r.loss_vat);
    j["loss_vat_unlabeled"] = optional_number(r.loss_vat_unlabeled);
    j["loss_nel"] = optional_number(r.loss_nel);
    return j;
}

inline Json eval_json(const EvalResult& r, TaskKind task)
{
    Json j;
    j["em"] = r.em;
    j["f1"] = r.f1;
    j["accuracy"] = r.accuracy;
    j["n"] = r.n;
    if (task == TaskKind::seu) {
        j["threshold"] = optional_number(r.threshold);
    }
    return j;
}

/// Trains per the config; writes model.ckpt, metrics.jsonl and summary.json to
/// config.out_dir and returns the summary.
inline Json cmd_train(const RunConfig& config)
{
    const RunData data = load_run_data(config);
    ModelConfig model_cfg = config.model;
    model_cfg.vocab_size = data.vocab.size();
    model_cfg.seed = config.seed;
    TrainRecipe recipe = config.recipe;
    recipe.seed = config.seed;

    ensure_dir(config.out_dir);
    std::string log;
    FitData fit_data{&data.train, data.dev.empty() ? nullptr : &data.dev,
                     data.unlabeled.empty() ? nullptr : &data.unlabeled,
                     data.augmentation.empty() ? nullptr : &data.augmentation};
    FitResult result = fit(fit_data, recipe, RcModel::initialize(model_cfg),
                           [&log](const StepReport& r) { log += step_json(r).dump() + "\n"; });
    write_text_file(join_path(config.out_dir, "metrics.jsonl"), log);

    Checkpoint ckpt{config.task, result.model, data.vocab, result.threshold};
    save_checkpoint(join_path(config.out_dir, "model.ckpt"), ckpt);

    Json summary;
    summary["task"] = to_string(config.task);
    summary["train_examples"] = data.train.size();
    summary["dev_examples"] = data.dev.size();
    summary["best_epoch"] = result.best_epoch ? Json(*result.best_epoch) : Json(nullptr);
    summary["threshold"] = optional_number(result.threshold);
    summary["epochs"] = Json::array();
    for (const auto& e : result.epochs) {
        Json je;
        je["epoch"] = e.epoch;
        je["loss_clean"] = e.loss_clean;
        je["loss_at"] = optional_number(e.loss_at);
        je["loss_vat"] = optional_number(e.loss_vat);
        je["loss_vat_unlabeled"] = optional_number(e.loss_vat_unlabeled);
        je["loss_nel"] = optional_number(e.loss_nel);
        je["dev"] = e.dev ? eval_json(*e.dev, config.task) : Json(nullptr);
        summary["epochs"].push_back(std::move(je));
    }
    write_text_file(join_path(config.out_dir, "summary.json"), summary.dump(1) + "\n");
    write_text_file(join_path(config.out_dir, "config.txt"), render_config(config));
    return summary;
}

// ---------------------------------------------------------------- eval

/// Examples of `file` in the checkpoint's vocabulary.
inline std::vector<Example> examples_for(const Checkpoint& ckpt, const DatasetFile& file)
{
    return to_examples(file, ckpt.vocab, ckpt.task);
}

/// Scores a checkpoint on a dataset. The stored threshold is used when present.
inline EvalResult evaluate_checkpoint(const Checkpoint& ckpt, const DatasetFile& file, std::size_t max_answer_len = 30)
{
    const auto examples = examples_for(ckpt, file);
    return evaluate(ckpt.model, examples, max_answer_len, ckpt.threshold);
}

/// Writes metrics.json and predictions.json to out_dir (when non-empty) and
/// returns the metrics. Inputs are only read.
inline Json cmd_eval(const std::string& checkpoint_path, const std::string& data_path, const std::string& out_dir)
{
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const DatasetFile file = load_dataset(data_path);
    const EvalResult result = evaluate_checkpoint(ckpt, file);
    const Json metrics = eval_json(result, ckpt.task);
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        Json predictions = Json::object();
        for (const auto& p : result.predictions) {
            if (ckpt.task == TaskKind::mc) {
                predictions[p.id] = p.option ? Json(*p.option) : Json(nullptr);
            } else {
                predictions[p.id] = p.answer;
            }
        }
        write_text_file(join_path(out_dir, "predictions.json"), predictions.dump(1) + "\n");
        write_text_file(join_path(out_dir, "metrics.json"), metrics.dump(1) + "\n");
    }
    return metrics;
}

// ---------------------------------------------------------------- augment

inline Json augmentation_report_json(const AugmentationReport& r)
{
    Json j;
    j["shuffle"] = {{"available", r.shuffle_available},
                    {"taken", r.shuffle_taken},
                    {"skipped", r.shuffle_skipped},
                    {"shortfall", r.shuffle_shortfall}};
    j["replacement"] = {{"available", r.replacement_available},
                        {"taken", r.replacement_taken},
                        {"skipped", r.replacement_skipped},
                        {"shortfall", r.replacement_shortfall}};
    return j;
}

/// Builds the unanswerable augmentation set for a dataset and writes it to out_path.
inline Json cmd_augment(const std::string& data_path, const std::string& gazetteer_path, std::size_t shuffle_target,
                        std::size_t replacement_target, std::uint64_t seed, const std::string& out_path)
{
    const DatasetFile file = load_dataset(data_path);
    require(file.task != TaskKind::mc, ErrorKind::RecipeDatasetMismatch, "augmentation needs a span dataset");
    const EntityGazetteer gazetteer = EntityGazetteer::parse(read_text_file(gazetteer_path));
    Rng rng(seed);
    AugmentationSet set = build_augmentation_set(file.articles, gazetteer, shuffle_target, replacement_target, rng);
    set.file.task = TaskKind::seu;
    validate(set.file);
    save_dataset(out_path, set.file);
    Json j = augmentation_report_json(set.report);
    j["questions"] = set.file.question_count();
    return j;
}

// ---------------------------------------------------------------- analyze

/// Per-example F1 averaged over checkpoints, paired with difficulty.
inline std::vector<ScoredExample> score_by_difficulty(const std::vector<std::string>& checkpoints, const DatasetFile& file,
                                                      const RareWordSet& rare)
{
    require(!checkpoints.empty(), ErrorKind::UsageError, "analyze needs at least one checkpoint");
    std::vector<ScoredExample> scored;
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
        const Checkpoint ckpt = load_checkpoint(checkpoints[c]);
        const auto examples = examples_for(ckpt, file);
        const EvalResult result = evaluate(ckpt.model, examples, 30, ckpt.threshold);
        if (c == 0) {
            for (const auto& ex : examples) {
                scored.push_back({ex.id, difficulty(ex.passage_words, ex.question_words, rare), ex.gold_answers.empty(), 0.0});
            }
        }
        for (std::size_t i = 0; i < scored.size(); ++i) {
            scored[i].f1 += result.predictions[i].f1 / static_cast<double>(checkpoints.size());
        }
    }
    return scored;
}

/// Bucketed F1 for a group of checkpoints and, when a baseline group is given,
/// the per-bucket relative improvement over it.
inline Json cmd_analyze(const std::vector<std::string>& checkpoints, const std::vector<std::string>& baseline,
                        const std::string& data_path, const std::string& train_path, std::size_t rare_k,
                        const std::vector<double>& boundaries, const std::string& out_dir)
{
    const DatasetFile file = load_dataset(data_path);
    const DatasetFile train = load_dataset(train_path);
    const auto corpus = passage_question_tokens(train);
    const RareWordSet rare = rare_word_set(corpus, rare_k, train_path);

    const auto scored = score_by_difficulty(checkpoints, file, rare);
    const BucketReport report = bucketize(scored, boundaries);
    Json j;
    j["rare_words"] = rare.words.size();
    j["model"] = to_json(report);
    std::optional<std::vector<ImprovementRow>> rows;
    std::optional<BucketReport> base_report;
    if (!baseline.empty()) {
        base_report = bucketize(score_by_difficulty(baseline, file, rare), boundaries);
        rows = relative_improvement(*base_report, report);
        j["baseline"] = to_json(*base_report);
        j["relative_improvement"] = to_json(*rows);
    }
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        write_text_file(join_path(out_dir, "report.json"), j.dump(1) + "\n");
        write_text_file(join_path(out_dir, "buckets.csv"), to_csv(report));
        if (rows) {
            write_text_file(join_path(out_dir, "baseline_buckets.csv"), to_csv(*base_report));
            write_text_file(join_path(out_dir, "improvement.csv"), to_csv(*rows));
        }
    }
    return j;
}

// ---------------------------------------------------------------- generate, gradcheck

inline std::string gazetteer_text(const SyntheticCorpus& corpus)
{
    std::string out;
    for (const auto& [surface, type] : corpus.gazetteer) {
        out += surface + "\t" + type + "\n";
    }
    return out;
}

inline Json cmd_generate(const SyntheticSpec& spec, const std::string& out_path, const std::string& gazetteer_path)
{
    const SyntheticCorpus corpus = generate_synthetic(spec);
    save_dataset(out_path, corpus.file);
    if (!gazetteer_path.empty()) {
        write_text_file(gazetteer_path, gazetteer_text(corpus));
    }
    std::size_t impossible = 0;
    for (const auto& a : corpus.file.articles) {
        for (const auto& p : a.passages) {
            for (const auto& q : p.questions) {
                impossible += q.is_impossible ? 1 : 0;
            }
        }
    }
    Json j;
    j["task"] = to_string(spec.task);
    j["articles"] = corpus.file.articles.size();
    j["questions"] = corpus.file.question_count();
    j["unanswerable"] = impossible;
    j["entities"] = corpus.gazetteer.size();
    return j;
}

struct GradcheckSummary {
    Json json;
    bool passed = true;
};

inline GradcheckSummary cmd_gradcheck(std::uint64_t seed, std::size_t instances, double tolerance)
{
    GradcheckSummary out;
    out.json["tolerance"] = tolerance;
    out.json["instances"] = instances;
    out.json["checks"] = Json::array();
    for (const auto& r : run_gradcheck(seed, instances, tolerance)) {
        out.passed = out.passed && r.passed;
        out.json["checks"].push_back(
            {{"name", r.name}, {"max_relative_error", r.max_relative_error}, {"passed", r.passed}});
    }
    out.json["passed"] = out.passed;
    return out;
}

} // namespace advreg
