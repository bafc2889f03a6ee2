#pragma once

#include <advreg/error.hpp>
#include <advreg/evaluation.hpp>
#include <advreg/example.hpp>
#include <advreg/model.hpp>
#include <advreg/objectives.hpp>
#include <advreg/rng.hpp>
#include <advreg/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace advreg {

/// Perturbation strength. `epsilon` is relative: a perturbation has Frobenius norm
/// epsilon * ||x||. `xi` is the absolute radius of the random probe used by VAT.
struct PerturbationConfig {
    double epsilon = 1e-2;
    double xi = 1e-5;

    static PerturbationConfig span_default() { return {1e-2, 1e-5}; }
    static PerturbationConfig choice_default() { return {1e-3, 1e-5}; }

    void validate() const
    {
        require(epsilon >= 0.0 && std::isfinite(epsilon), ErrorKind::InvalidConfig, "epsilon must be >= 0");
        require(xi > 0.0 && std::isfinite(xi), ErrorKind::InvalidConfig, "xi must be > 0");
    }
};

using RowMasks = std::span<const std::vector<std::uint8_t>>;

namespace detail {

inline double group_norm(std::span<const Tensor> xs)
{
    double sum = 0.0;
    for (const Tensor& x : xs) {
        for (double v : x.data()) {
            sum += v * v;
        }
    }
    return std::sqrt(sum);
}

/// Copies `g` with rows whose mask entry is 0 set to zero.
inline std::vector<double> masked_rows(const Tensor& g, const std::vector<std::uint8_t>* mask)
{
    std::vector<double> out(g.data().begin(), g.data().end());
    if (mask == nullptr || mask->empty() || g.rank() != 2) {
        return out;
    }
    const std::size_t cols = g.dim(1);
    for (std::size_t r = 0; r < g.dim(0) && r < mask->size(); ++r) {
        if (!(*mask)[r]) {
            std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, 0.0);
        }
    }
    return out;
}

inline std::vector<Tensor> copies(std::span<const Tensor> xs)
{
    std::vector<Tensor> out;
    out.reserve(xs.size());
    for (const Tensor& x : xs) {
        out.push_back(x.detach());
    }
    return out;
}

} // namespace detail

/// x + epsilon * ||x|| * g / ||g|| over a group of tensors that together form one
/// input (one per packed sequence), with one Frobenius norm over the whole group.
/// Rows masked out in `row_masks` (padding) never receive perturbation. Returns x
/// unchanged when epsilon is 0 or the (masked) gradient is zero.
inline std::vector<Tensor> at_perturb(std::span<const Tensor> xs, std::span<const Tensor> gs, double epsilon,
                                      RowMasks row_masks = {})
{
    require(xs.size() == gs.size() && !xs.empty(), ErrorKind::ShapeMismatch, "one gradient per input tensor");
    require(row_masks.empty() || row_masks.size() == xs.size(), ErrorKind::ShapeMismatch, "one row mask per input");
    require(epsilon >= 0.0, ErrorKind::InvalidConfig, "epsilon must be >= 0");
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i].shape() == gs[i].shape())) {
            fail(ErrorKind::ShapeMismatch, "gradient shape " + shape_str(gs[i].shape()) + " differs from input " + shape_str(xs[i].shape()));
        }
    }
    const double x_norm = detail::group_norm(xs);
    require(x_norm > 0.0, ErrorKind::ZeroInputNorm, "input embedding has zero norm");
    if (epsilon == 0.0) {
        return detail::copies(xs);
    }

    std::vector<std::vector<double>> g(xs.size());
    double g_max = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        g[i] = detail::masked_rows(gs[i], row_masks.empty() ? nullptr : &row_masks[i]);
        for (double v : g[i]) {
            g_max = std::max(g_max, std::abs(v));
        }
    }
    if (g_max == 0.0) {
        return detail::copies(xs);
    }
    // Max-abs scaling followed by snapping to a 2^-30 grid: a rescaled gradient
    // c*g only carries rounding noise in the last bits, which the grid removes.
    double u_sq = 0.0;
    for (auto& gi : g) {
        for (double& v : gi) {
            v = std::nearbyint(v / g_max * 0x1.0p30) * 0x1.0p-30;
            u_sq += v * v;
        }
    }
    const double coeff = epsilon * x_norm / std::sqrt(u_sq);
    std::vector<Tensor> out;
    out.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        std::vector<double> values(xs[i].data().begin(), xs[i].data().end());
        for (std::size_t k = 0; k < values.size(); ++k) {
            values[k] += coeff * g[i][k];
        }
        out.emplace_back(xs[i].shape(), std::move(values));
    }
    return out;
}

inline Tensor at_perturb(const Tensor& x, const Tensor& g, double epsilon)
{
    return at_perturb(std::span<const Tensor>(&x, 1), std::span<const Tensor>(&g, 1), epsilon).front();
}

// ---------------------------------------------------------------- KL between outputs

/// The predicted distributions of an output bundle, in a fixed order: start, end,
/// {answerable, unanswerable}, options. Undefined members are skipped.
inline std::vector<Tensor> output_distributions(Tape& tape, const TaskOutputs& out)
{
    std::vector<Tensor> dists;
    if (out.p_start.defined()) {
        dists.push_back(out.p_start);
    }
    if (out.p_end.defined()) {
        dists.push_back(out.p_end);
    }
    if (out.p_na.defined()) {
        Tensor p = tape.reshape(out.p_na, {1});
        dists.push_back(tape.concat({tape.affine(p, -1.0, 1.0), p}));
    }
    if (out.p_option.defined()) {
        dists.push_back(out.p_option);
    }
    return dists;
}

using DistributionValues = std::vector<std::vector<double>>;

inline DistributionValues output_distribution_values(const TaskOutputs& out)
{
    Tape scratch(GradMode::inputs_only);
    DistributionValues values;
    for (const Tensor& d : output_distributions(scratch, out)) {
        values.emplace_back(d.data().begin(), d.data().end());
    }
    return values;
}

/// KL(p_clean || p_pert) with p_clean held constant.
inline Tensor kl_span(Tape& tape, std::span<const double> p_clean, const Tensor& p_pert)
{
    return tape.kl_divergence(p_clean, p_pert);
}

/// Sum of the KL terms over every distribution in the output bundle.
inline Tensor kl_outputs(Tape& tape, const DistributionValues& clean, const TaskOutputs& pert)
{
    const auto dists = output_distributions(tape, pert);
    require(dists.size() == clean.size(), ErrorKind::SupportMismatch, "output bundles differ in structure");
    Tensor total = kl_span(tape, clean[0], dists[0]);
    for (std::size_t i = 1; i < dists.size(); ++i) {
        total = tape.add(total, kl_span(tape, clean[i], dists[i]));
    }
    return total;
}

/// Maps embeddings (one per packed sequence) to the model's output distributions.
using ForwardFn = std::function<TaskOutputs(Tape&, std::span<const Tensor>)>;

/// Virtual adversarial input: one power-iteration step from a random unit direction
/// d, g = grad at xi*d of KL(p(x) || p(x + xi*d)), then the relative-epsilon step of
/// at_perturb along g. Needs no target. `clean` may carry p(x) if already computed.
inline std::vector<Tensor> vat_perturb(std::span<const Tensor> xs, const ForwardFn& forward,
                                       const PerturbationConfig& config, Rng& rng, RowMasks row_masks = {},
                                       const DistributionValues* clean = nullptr)
{
    config.validate();
    require(!xs.empty(), ErrorKind::ShapeMismatch, "vat_perturb needs an input");
    require(detail::group_norm(xs) > 0.0, ErrorKind::ZeroInputNorm, "input embedding has zero norm");
    if (config.epsilon == 0.0) {
        return detail::copies(xs);
    }

    DistributionValues clean_values;
    if (clean == nullptr) {
        Tape tape(GradMode::inputs_only);
        const auto frozen = detail::copies(xs);
        clean_values = output_distribution_values(forward(tape, frozen));
        clean = &clean_values;
    }

    std::vector<std::vector<double>> d(xs.size());
    double d_sq = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        d[i].resize(xs[i].numel());
        for (double& v : d[i]) {
            v = rng.normal();
        }
        const Tensor as_tensor(xs[i].shape(), d[i]);
        d[i] = detail::masked_rows(as_tensor, row_masks.empty() ? nullptr : &row_masks[i]);
        for (double v : d[i]) {
            d_sq += v * v;
        }
    }
    const double d_norm = std::sqrt(d_sq);
    require(d_norm > 0.0, ErrorKind::NonFiniteValue, "random direction has zero norm");

    Tape probe(GradMode::inputs_only);
    std::vector<Tensor> shifted;
    shifted.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        std::vector<double> values(xs[i].data().begin(), xs[i].data().end());
        for (std::size_t k = 0; k < values.size(); ++k) {
            values[k] += config.xi * d[i][k] / d_norm;
        }
        shifted.push_back(probe.watch(Tensor(xs[i].shape(), std::move(values))));
    }
    const Tensor kl = kl_outputs(probe, *clean, forward(probe, shifted));
    const auto gs = probe.gradients(kl, shifted);
    return at_perturb(xs, gs, config.epsilon, row_masks);
}

// ---------------------------------------------------------------- training

struct LossWeights {
    double at = 1.0;
    double vat = 1.0;
    double vat_unlabeled = 1.0;
    double nel = 1.0;
};

enum class NelPlacement {
    adversarial, ///< on the adversarial forward pass (falls back to the clean pass without AT)
    clean,
};

/// Which regularizers are active and how the loop is driven.
struct TrainRecipe {
    bool at = false;
    bool vat = false;
    bool vat_unlabeled = false;
    bool nel = false;
    bool da = false;
    NelPlacement nel_placement = NelPlacement::adversarial;
    std::size_t labeled_batch_size = 24;
    std::size_t unlabeled_batch_size = 12;
    std::size_t epochs = 3;
    double learning_rate = 0.1;
    std::uint64_t seed = 0;
    std::size_t max_answer_len = 30;
    PerturbationConfig perturbation;
    LossWeights weights;

    void validate() const
    {
        perturbation.validate();
        require(labeled_batch_size >= 1 && unlabeled_batch_size >= 1, ErrorKind::InvalidConfig,
                "batch sizes must be >= 1");
        require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::InvalidConfig,
                "learning rate must be > 0");
        require(max_answer_len >= 1, ErrorKind::InvalidConfig, "max_answer_len must be >= 1");
    }
};

/// Loss components of one step (batch means). Absent components were not active.
struct StepReport {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double loss_clean = 0.0;
    std::optional<double> loss_at;
    std::optional<double> loss_vat;
    std::optional<double> loss_vat_unlabeled;
    std::optional<double> loss_nel;

    std::size_t forward_passes = 0;
    std::size_t labeled_examples = 0;
    std::size_t unlabeled_examples = 0;
    /// ||x_AT - x|| and ||x|| per labeled example, recorded when AT is active.
    std::vector<double> at_offset_norms;
    std::vector<double> at_input_norms;
};

/// Plain SGD: theta -= lr * grad, then gradients are cleared.
class Sgd {
public:
    explicit Sgd(double learning_rate) : lr_(learning_rate) {}

    void step(ModelParams& params) const
    {
        for (Tensor* t : params.mutable_refs()) {
            if (!t->has_grad()) {
                continue;
            }
            auto values = t->mutable_data();
            const auto grad = t->grad();
            for (std::size_t i = 0; i < values.size(); ++i) {
                values[i] -= lr_ * grad[i];
            }
            t->zero_grad();
        }
    }

    [[nodiscard]] double learning_rate() const noexcept { return lr_; }

private:
    double lr_;
};

namespace detail {

inline std::vector<std::vector<std::uint8_t>> row_masks_of(const std::vector<EncodedInput>& inputs)
{
    std::vector<std::vector<std::uint8_t>> masks;
    masks.reserve(inputs.size());
    for (const auto& in : inputs) {
        masks.push_back(in.attention_mask);
    }
    return masks;
}

inline ForwardFn frozen_forward(const RcModel& model, TaskKind task, const std::vector<EncodedInput>& inputs)
{
    return [&model, task, &inputs](Tape& tape, std::span<const Tensor> xs) {
        return model.forward_from_embeddings(tape, task, xs, inputs);
    };
}

inline std::vector<Tensor> add_offsets(Tape& tape, std::span<const Tensor> live, std::span<const Tensor> perturbed)
{
    std::vector<Tensor> out;
    out.reserve(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
        std::vector<double> r(live[i].numel());
        for (std::size_t k = 0; k < r.size(); ++k) {
            r[k] = perturbed[i].data()[k] - live[i].data()[k];
        }
        out.push_back(tape.add(live[i], Tensor(live[i].shape(), std::move(r))));
    }
    return out;
}

} // namespace detail

/// One optimizer update. Clean loss, plus the adversarial loss on x_AT (AT), the KL
/// loss on x_VAT for the labeled batch (VAT) and for an unlabeled batch (VAT on
/// unlabeled data), plus the negative entropy loss. Perturbations are built with
/// parameters held constant; their gradients reach the parameters only through the
/// final backward pass.
inline StepReport train_step(std::span<const Example> batch, std::span<const Example> unlabeled,
                             const TrainRecipe& recipe, RcModel& model, const Sgd& optimizer, Rng& rng)
{
    require(!batch.empty(), ErrorKind::EmptyBatch, "training step on an empty batch");
    require(!recipe.vat_unlabeled || !unlabeled.empty(), ErrorKind::RecipeDatasetMismatch,
            "VAT on unlabeled data requested without unlabeled examples");
    const TaskKind task = batch.front().task;
    require(!recipe.nel || task == TaskKind::seu, ErrorKind::RecipeDatasetMismatch,
            "negative entropy loss needs the answerability task");

    StepReport report;
    report.labeled_examples = batch.size();
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    double sum_clean = 0.0, sum_at = 0.0, sum_vat = 0.0, sum_nel = 0.0;
    const std::size_t max_len = model.config().max_seq_len;

    for (const Example& ex : batch) {
        require(ex.task == task, ErrorKind::RecipeDatasetMismatch, "mixed task kinds in one batch");
        if (!(ex.target.has_value())) {
            fail(ErrorKind::RecipeDatasetMismatch, "labeled batch example " + ex.id + " has no target");
        }
        Tape tape;
        auto inputs = pack_example(ex, max_len);
        model.embed_all(tape, inputs);
        std::vector<Tensor> xs;
        for (const auto& in : inputs) {
            xs.push_back(in.x);
        }
        const auto masks = detail::row_masks_of(inputs);

        const TaskOutputs clean = model.forward_from_embeddings(tape, task, xs, inputs);
        ++report.forward_passes;
        const Tensor l_clean = task_loss(tape, task, clean, *ex.target, inputs);
        sum_clean += l_clean.item();
        Tensor total = l_clean;

        bool nel_done = false;
        if (recipe.at) {
            const auto gs = tape.gradients(l_clean, xs);
            const auto x_at = at_perturb(xs, gs, recipe.perturbation.epsilon, masks);
            double offset_sq = 0.0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                for (std::size_t k = 0; k < xs[i].numel(); ++k) {
                    const double dlt = x_at[i].data()[k] - xs[i].data()[k];
                    offset_sq += dlt * dlt;
                }
            }
            report.at_offset_norms.push_back(std::sqrt(offset_sq));
            report.at_input_norms.push_back(detail::group_norm(xs));

            const auto xs_adv = detail::add_offsets(tape, xs, x_at);
            const TaskOutputs adv = model.forward_from_embeddings(tape, task, xs_adv, inputs);
            ++report.forward_passes;
            const Tensor l_at = task_loss(tape, task, adv, *ex.target, inputs);
            sum_at += l_at.item();
            total = tape.add(total, tape.scale(l_at, recipe.weights.at));
            if (recipe.nel && recipe.nel_placement == NelPlacement::adversarial) {
                const Tensor l_nel = negative_entropy_loss(tape, adv.p_start, adv.p_end, ex.target->y_na,
                                                           inputs[0].span_mask);
                sum_nel += l_nel.item();
                total = tape.add(total, tape.scale(l_nel, recipe.weights.nel));
                nel_done = true;
            }
        }
        if (recipe.nel && !nel_done) {
            const Tensor l_nel = negative_entropy_loss(tape, clean.p_start, clean.p_end, ex.target->y_na,
                                                       inputs[0].span_mask);
            sum_nel += l_nel.item();
            total = tape.add(total, tape.scale(l_nel, recipe.weights.nel));
        }
        if (recipe.vat) {
            const DistributionValues p_clean = output_distribution_values(clean);
            const auto x_vat = vat_perturb(xs, detail::frozen_forward(model, task, inputs), recipe.perturbation, rng,
                                           masks, &p_clean);
            const auto xs_v = detail::add_offsets(tape, xs, x_vat);
            const TaskOutputs pert = model.forward_from_embeddings(tape, task, xs_v, inputs);
            ++report.forward_passes;
            const Tensor l_vat = kl_outputs(tape, p_clean, pert);
            sum_vat += l_vat.item();
            total = tape.add(total, tape.scale(l_vat, recipe.weights.vat));
        }
        tape.backward(total, inv_n);
    }
    report.loss_clean = sum_clean * inv_n;
    if (recipe.at) {
        report.loss_at = sum_at * inv_n;
    }
    if (recipe.vat) {
        report.loss_vat = sum_vat * inv_n;
    }
    if (recipe.nel) {
        report.loss_nel = sum_nel * inv_n;
    }

    if (recipe.vat_unlabeled) {
        report.unlabeled_examples = unlabeled.size();
        const double inv_u = 1.0 / static_cast<double>(unlabeled.size());
        double sum_u = 0.0;
        for (const Example& ex : unlabeled) {
            // Unlabeled data feeds the same heads as the labeled task.
            Tape tape;
            Example as_task = ex;
            as_task.task = task;
            auto inputs = pack_example(as_task, max_len);
            model.embed_all(tape, inputs);
            std::vector<Tensor> xs;
            for (const auto& in : inputs) {
                xs.push_back(in.x);
            }
            const auto masks = detail::row_masks_of(inputs);
            const auto fwd = detail::frozen_forward(model, task, inputs);
            DistributionValues p_clean;
            {
                Tape frozen(GradMode::inputs_only);
                p_clean = output_distribution_values(fwd(frozen, detail::copies(xs)));
            }
            ++report.forward_passes;
            const auto x_vat = vat_perturb(xs, fwd, recipe.perturbation, rng, masks, &p_clean);
            const auto xs_v = detail::add_offsets(tape, xs, x_vat);
            const TaskOutputs pert = model.forward_from_embeddings(tape, task, xs_v, inputs);
            ++report.forward_passes;
            const Tensor l_u = kl_outputs(tape, p_clean, pert);
            sum_u += l_u.item();
            tape.backward(tape.scale(l_u, recipe.weights.vat_unlabeled), inv_u);
        }
        report.loss_vat_unlabeled = sum_u * inv_u;
    }

    optimizer.step(model.params());
    return report;
}

/// Scores labeled examples on adversarially perturbed inputs: each example's
/// embeddings are moved by at_perturb along the gradient of its own task loss.
inline EvalResult evaluate_perturbed(const RcModel& model, const std::vector<Example>& examples, double epsilon,
                                     std::size_t max_answer_len, std::optional<double> threshold = std::nullopt)
{
    const InferFn run = [&model, epsilon](const Example& ex, std::vector<EncodedInput>& inputs) {
        if (!(ex.target.has_value())) {
            fail(ErrorKind::RecipeDatasetMismatch, "perturbed evaluation needs labeled example " + ex.id);
        }
        Tape tape(GradMode::inputs_only);
        inputs = pack_example(ex, model.config().max_seq_len);
        model.embed_all(tape, inputs);
        std::vector<Tensor> xs;
        for (auto& in : inputs) {
            in.x = tape.watch(in.x);
            xs.push_back(in.x);
        }
        const TaskOutputs clean = model.forward_from_embeddings(tape, ex.task, xs, inputs);
        const auto gs = tape.gradients(task_loss(tape, ex.task, clean, *ex.target, inputs), xs);
        const auto masks = detail::row_masks_of(inputs);
        const auto x_adv = at_perturb(xs, gs, epsilon, masks);
        Tape fresh(GradMode::inputs_only);
        return model.forward_from_embeddings(fresh, ex.task, x_adv, inputs);
    };
    return evaluate_with(run, examples, max_answer_len, threshold);
}

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss_clean = 0.0;
    std::optional<double> loss_at;
    std::optional<double> loss_vat;
    std::optional<double> loss_vat_unlabeled;
    std::optional<double> loss_nel;
    std::optional<EvalResult> dev; ///< predictions dropped, aggregates kept
};

/// Datasets for fit(). Only `train` is required.
struct FitData {
    const std::vector<Example>* train = nullptr;
    const std::vector<Example>* dev = nullptr;
    const std::vector<Example>* unlabeled = nullptr;
    const std::vector<Example>* augmentation = nullptr;
};

struct FitResult {
    RcModel model; ///< best-dev parameters (last epoch when no dev set)
    std::vector<EpochMetrics> epochs;
    std::optional<std::size_t> best_epoch;
    std::optional<double> threshold; ///< answerability threshold found on dev
};

using StepObserver = std::function<void(const StepReport&)>;

/// Epoch loop: seeded shuffling, batched train_step, dev evaluation after each
/// epoch, best-dev model selection. Deterministic for a given recipe seed.
inline FitResult fit(const FitData& data, const TrainRecipe& recipe, RcModel model, const StepObserver& observer = {})
{
    recipe.validate();
    require(data.train != nullptr && !data.train->empty(), ErrorKind::EmptyBatch, "fit needs labeled training data");
    require(!recipe.vat_unlabeled || (data.unlabeled != nullptr && !data.unlabeled->empty()),
            ErrorKind::RecipeDatasetMismatch, "VAT on unlabeled data requested without an unlabeled dataset");
    require(!recipe.da || (data.augmentation != nullptr && !data.augmentation->empty()),
            ErrorKind::RecipeDatasetMismatch, "data augmentation requested without an augmentation dataset");

    FitResult result;
    result.model = model;
    if (recipe.epochs == 0) {
        return result;
    }

    std::vector<const Example*> labeled;
    for (const auto& ex : *data.train) {
        labeled.push_back(&ex);
    }
    if (recipe.da) {
        for (const auto& ex : *data.augmentation) {
            labeled.push_back(&ex);
        }
    }

    Rng rng(recipe.seed);
    const Sgd optimizer(recipe.learning_rate);
    std::size_t unlabeled_cursor = 0;
    std::size_t step = 0;
    double best_metric = -1.0;

    for (std::size_t epoch = 1; epoch <= recipe.epochs; ++epoch) {
        rng.shuffle(labeled);
        EpochMetrics metrics;
        metrics.epoch = epoch;
        double sum_clean = 0.0, sum_at = 0.0, sum_vat = 0.0, sum_vu = 0.0, sum_nel = 0.0;
        std::size_t steps = 0;
        for (std::size_t begin = 0; begin < labeled.size(); begin += recipe.labeled_batch_size) {
            const std::size_t end = std::min(labeled.size(), begin + recipe.labeled_batch_size);
            std::vector<Example> batch;
            batch.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                batch.push_back(*labeled[i]);
            }
            std::vector<Example> unlabeled;
            if (recipe.vat_unlabeled) {
                for (std::size_t i = 0; i < recipe.unlabeled_batch_size; ++i) {
                    unlabeled.push_back((*data.unlabeled)[unlabeled_cursor]);
                    unlabeled_cursor = (unlabeled_cursor + 1) % data.unlabeled->size();
                }
            }
            StepReport report = train_step(batch, unlabeled, recipe, model, optimizer, rng);
            report.step = ++step;
            report.epoch = epoch;
            if (observer) {
                observer(report);
            }
            ++steps;
            sum_clean += report.loss_clean;
            sum_at += report.loss_at.value_or(0.0);
            sum_vat += report.loss_vat.value_or(0.0);
            sum_vu += report.loss_vat_unlabeled.value_or(0.0);
            sum_nel += report.loss_nel.value_or(0.0);
        }
        const double inv = 1.0 / static_cast<double>(steps);
        metrics.loss_clean = sum_clean * inv;
        if (recipe.at) {
            metrics.loss_at = sum_at * inv;
        }
        if (recipe.vat) {
            metrics.loss_vat = sum_vat * inv;
        }
        if (recipe.vat_unlabeled) {
            metrics.loss_vat_unlabeled = sum_vu * inv;
        }
        if (recipe.nel) {
            metrics.loss_nel = sum_nel * inv;
        }

        if (data.dev != nullptr && !data.dev->empty()) {
            EvalResult dev = evaluate(model, *data.dev, recipe.max_answer_len);
            dev.predictions.clear();
            const double metric = data.dev->front().task == TaskKind::mc ? dev.accuracy : dev.f1;
            if (metric > best_metric) {
                best_metric = metric;
                result.model = model.clone();
                result.best_epoch = epoch;
                if (data.dev->front().task == TaskKind::seu) {
                    result.threshold = dev.threshold;
                }
            }
            metrics.dev = std::move(dev);
        } else {
            result.model = model.clone();
            result.best_epoch = epoch;
        }
        result.epochs.push_back(std::move(metrics));
    }
    return result;
}

} // namespace advreg
