#pragma once

#include <advreg/error.hpp>
#include <advreg/example.hpp>
#include <advreg/model.hpp>
#include <advreg/tensor.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace advreg {

/// Which examples contribute their span loss to the combined answerability loss.
enum class SpanLossMask {
    answerable, ///< weight (1 - y_na): the span head learns from answerable questions only
    literal,    ///< span term weighted by y_na instead of 1 - y_na; regression guard only
};

inline Tensor batch_mean(Tape& tape, std::span<const Tensor> losses)
{
    require(!losses.empty(), ErrorKind::EmptyBatch, "mean over an empty batch");
    Tensor total = losses.front();
    for (std::size_t i = 1; i < losses.size(); ++i) {
        total = tape.add(total, losses[i]);
    }
    return tape.scale(total, 1.0 / static_cast<double>(losses.size()));
}

/// -log p_s[gold_s] - log p_e[gold_e] for one example; positions are indices into
/// the packed sequence. `valid` (optional) is the span-head support.
inline Tensor span_loss(Tape& tape, const Tensor& p_start, const Tensor& p_end, std::size_t gold_start,
                        std::size_t gold_end, std::span<const std::uint8_t> valid = {})
{
    require(p_start.rank() == 1 && p_start.shape() == p_end.shape(), ErrorKind::ShapeMismatch,
            "span distributions must be vectors of equal length");
    require(gold_start < p_start.numel() && gold_end < p_end.numel(), ErrorKind::IndexOutOfRange,
            "gold position outside the sequence");
    if (!valid.empty()) {
        require(valid.size() == p_start.numel(), ErrorKind::ShapeMismatch, "span mask length");
        require(valid[gold_start] && valid[gold_end], ErrorKind::GoldPositionMasked, "gold position is masked");
    }
    require(p_start.at(gold_start) > 0.0 && p_end.at(gold_end) > 0.0, ErrorKind::GoldPositionMasked,
            "gold position has zero probability");
    Tensor ls = tape.log(tape.element(p_start, gold_start));
    Tensor le = tape.log(tape.element(p_end, gold_end));
    return tape.scale(tape.add(ls, le), -1.0);
}

/// Binary cross-entropy of the no-answer probability.
inline Tensor na_loss(Tape& tape, const Tensor& p_na, int y_na)
{
    require(p_na.numel() == 1, ErrorKind::ShapeMismatch, "p_na must be a scalar");
    const double p = p_na.item();
    if (!(p > 0.0 && p < 1.0)) {
        fail(ErrorKind::ProbabilityOutOfRange, "p_na = " + std::to_string(p) + " not in (0,1)");
    }
    require(y_na == 0 || y_na == 1, ErrorKind::DataError, "y_na must be 0 or 1");
    Tensor scalar_p = p_na.rank() == 0 ? p_na : tape.reshape(p_na, {});
    if (y_na == 1) {
        return tape.scale(tape.log(scalar_p), -1.0);
    }
    return tape.scale(tape.log(tape.affine(scalar_p, -1.0, 1.0)), -1.0);
}

/// Multiple-choice cross-entropy, -log p_o[option].
inline Tensor mc_loss(Tape& tape, const Tensor& p_option, std::size_t option)
{
    require(p_option.rank() == 1, ErrorKind::ShapeMismatch, "option distribution must be a vector");
    require(option < p_option.numel(), ErrorKind::IndexOutOfRange, "option index out of range");
    return tape.scale(tape.log(tape.element(p_option, option)), -1.0);
}

/// y_na * sum over valid positions of (p_s log p_s + p_e log p_e), 0 log 0 = 0.
/// Ranges over [-2 ln v, 0] for v valid positions.
inline Tensor negative_entropy_loss(Tape& tape, const Tensor& p_start, const Tensor& p_end, int y_na,
                                    std::span<const std::uint8_t> valid)
{
    require(p_start.rank() == 1 && p_start.shape() == p_end.shape(), ErrorKind::ShapeMismatch,
            "span distributions must be vectors of equal length");
    require(valid.size() == p_start.numel(), ErrorKind::ShapeMismatch, "span mask length");
    if (y_na == 0) {
        return Tensor::scalar(0.0);
    }
    std::vector<double> weights(valid.begin(), valid.end());
    const Tensor mask = Tensor::vector(std::move(weights));
    Tensor terms = tape.add(tape.xlogx(p_start), tape.xlogx(p_end));
    return tape.matmul(terms, mask);
}

/// Per-example answerability loss: L_na + weight * L_span, where the weight follows
/// `mask` (see SpanLossMask). Examples without a gold span contribute no span term.
inline Tensor seu_example_loss(Tape& tape, const TaskOutputs& out, const Target& target, const EncodedInput& input,
                               SpanLossMask mask = SpanLossMask::answerable)
{
    Tensor loss = na_loss(tape, out.p_na, target.y_na);
    const int weight = mask == SpanLossMask::answerable ? 1 - target.y_na : target.y_na;
    if (weight != 0 && target.has_span()) {
        loss = tape.add(loss, span_loss(tape, out.p_start, out.p_end, input.passage_begin + *target.start,
                                        input.passage_begin + *target.end, input.span_mask));
    }
    return loss;
}

inline Tensor seu_total_loss(Tape& tape, std::span<const TaskOutputs> outputs, std::span<const Target> targets,
                             std::span<const EncodedInput> inputs, SpanLossMask mask = SpanLossMask::answerable)
{
    require(outputs.size() == targets.size() && outputs.size() == inputs.size(), ErrorKind::LengthMismatch,
            "outputs, targets and inputs must align");
    std::vector<Tensor> per;
    per.reserve(outputs.size());
    for (std::size_t k = 0; k < outputs.size(); ++k) {
        per.push_back(seu_example_loss(tape, outputs[k], targets[k], inputs[k], mask));
    }
    return batch_mean(tape, per);
}

/// The supervised loss for one example of any task kind.
inline Tensor task_loss(Tape& tape, TaskKind task, const TaskOutputs& out, const Target& target,
                        std::span<const EncodedInput> inputs)
{
    target.validate();
    switch (task) {
    case TaskKind::se:
        require(target.has_span(), ErrorKind::RecipeDatasetMismatch, "span task example without a gold span");
        return span_loss(tape, out.p_start, out.p_end, inputs[0].passage_begin + *target.start,
                         inputs[0].passage_begin + *target.end, inputs[0].span_mask);
    case TaskKind::seu:
        return seu_example_loss(tape, out, target, inputs[0]);
    case TaskKind::mc:
        require(target.option.has_value(), ErrorKind::RecipeDatasetMismatch, "choice example without an option");
        return mc_loss(tape, out.p_option, *target.option);
    }
    fail(ErrorKind::DataError, "unknown task");
}

} // namespace advreg
