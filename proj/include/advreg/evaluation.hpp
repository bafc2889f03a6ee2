#pragma once

#include <advreg/decoder.hpp>
#include <advreg/example.hpp>
#include <advreg/model.hpp>
#include <advreg/tensor.hpp>

#include <limits>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace advreg {

/// Inference result for one example.
struct Prediction {
    std::string id;
    std::optional<SpanChoice> span; ///< packed-sequence positions
    std::optional<double> p_na;
    std::optional<double> na_score;
    std::optional<std::size_t> option;
    std::string span_text; ///< text of the best span, before the answerability decision
    std::string answer;    ///< final answer string, "" when declared unanswerable
    double em = 0.0;
    double f1 = 0.0;
};

struct EvalResult {
    double em = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;
    std::size_t n = 0;
    double threshold = std::numeric_limits<double>::infinity();
    std::vector<Prediction> predictions;
};

/// Forward pass without recording: parameters are constants and nothing is watched.
inline TaskOutputs infer(const RcModel& model, const Example& ex, std::vector<EncodedInput>& inputs)
{
    Tape tape(GradMode::inputs_only);
    inputs = pack_example(ex, model.config().max_seq_len);
    model.embed_all(tape, inputs);
    std::vector<Tensor> xs;
    for (auto& in : inputs) {
        xs.push_back(in.x);
    }
    return model.forward_from_embeddings(tape, ex.task, xs, inputs);
}

inline std::string span_words(const Example& ex, const EncodedInput& input, const SpanChoice& span)
{
    std::vector<std::string> words;
    for (std::size_t i = span.start; i <= span.end; ++i) {
        const std::size_t p = i - input.passage_begin;
        words.push_back(p < ex.passage_words.size() ? ex.passage_words[p] : std::string("[UNK]"));
    }
    return join(words);
}

/// Produces the model outputs for one example and fills in its packed inputs.
using InferFn = std::function<TaskOutputs(const Example&, std::vector<EncodedInput>&)>;

/// Scores labeled examples with outputs from `run`. For the answerability task the
/// threshold is `threshold` when given, otherwise the one maximizing F1 on these
/// examples.
inline EvalResult evaluate_with(const InferFn& run, const std::vector<Example>& examples, std::size_t max_answer_len,
                                std::optional<double> threshold = std::nullopt)
{
    EvalResult result;
    result.n = examples.size();
    if (examples.empty()) {
        return result;
    }
    std::vector<ThresholdCandidate> candidates;
    std::vector<std::size_t> picked;
    std::vector<std::size_t> golds;
    for (const Example& ex : examples) {
        std::vector<EncodedInput> inputs;
        TaskOutputs out = run(ex, inputs);
        Prediction pred;
        pred.id = ex.id;
        if (ex.task == TaskKind::mc) {
            const auto probs = out.p_option.data();
            const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
            pred.option = best;
            picked.push_back(best);
            golds.push_back(ex.target && ex.target->option ? *ex.target->option : std::numeric_limits<std::size_t>::max());
            pred.em = pred.f1 = (ex.target && ex.target->option == best) ? 1.0 : 0.0;
        } else {
            const SpanChoice span = best_span(out.p_start.data(), out.p_end.data(), inputs[0].span_mask, max_answer_len);
            pred.span = span;
            pred.span_text = span_words(ex, inputs[0], span);
            const AnswerScore answered = em_f1(pred.span_text, ex.gold_answers);
            pred.answer = pred.span_text;
            pred.em = answered.em;
            pred.f1 = answered.f1;
            if (ex.task == TaskKind::seu) {
                pred.p_na = out.p_na.item();
                pred.na_score = na_score(*pred.p_na, span.prob);
                candidates.push_back({*pred.na_score, ex.gold_answers.empty(), answered.f1, answered.em});
            }
        }
        result.predictions.push_back(std::move(pred));
    }

    const double n = static_cast<double>(examples.size());
    if (examples.front().task == TaskKind::mc) {
        result.accuracy = mc_accuracy(picked, golds);
        result.em = result.f1 = result.accuracy;
        return result;
    }
    if (examples.front().task == TaskKind::seu) {
        result.threshold = threshold ? *threshold : threshold_search(candidates).threshold;
        for (std::size_t k = 0; k < result.predictions.size(); ++k) {
            auto& pred = result.predictions[k];
            if (*pred.na_score > result.threshold) {
                pred.answer.clear();
                const AnswerScore s = em_f1("", examples[k].gold_answers);
                pred.em = s.em;
                pred.f1 = s.f1;
            }
        }
    }
    for (const auto& pred : result.predictions) {
        result.em += pred.em;
        result.f1 += pred.f1;
    }
    result.em /= n;
    result.f1 /= n;
    return result;
}

inline EvalResult evaluate(const RcModel& model, const std::vector<Example>& examples, std::size_t max_answer_len,
                           std::optional<double> threshold = std::nullopt)
{
    return evaluate_with([&model](const Example& ex, std::vector<EncodedInput>& inputs) { return infer(model, ex, inputs); },
                         examples, max_answer_len, threshold);
}

} // namespace advreg
