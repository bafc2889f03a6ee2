// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <advreg/commands.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <unistd.h>

using namespace advreg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0)
{
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    return Tensor(std::move(shape), std::move(v));
}

double distance(const Tensor& a, const Tensor& b)
{
    double s = 0.0;
    for (std::size_t k = 0; k < a.numel(); ++k) {
        const double d = a.data()[k] - b.data()[k];
        s += d * d;
    }
    return std::sqrt(s);
}

bool bitwise_equal(const Tensor& a, const Tensor& b)
{
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// ---------------------------------------------------------------- 1

Outcome gradient_fidelity()
{
    const auto t0 = Clock::now();
    const auto results = run_gradcheck(2024, 100, 1e-4, 1e-5);
    double worst = 0.0;
    std::string worst_name;
    bool all = true;
    for (const auto& r : results) {
        all = all && r.passed;
        if (r.max_relative_error >= worst) {
            worst = r.max_relative_error;
            worst_name = r.name;
        }
    }
    const double secs = seconds_since(t0);
    return {all && secs < 60.0,
            fmt("%zu checks, worst %s at %.2e, %.1fs", results.size(), worst_name.c_str(), worst, secs)};
}

// ---------------------------------------------------------------- 2

Outcome perturbation_norm_law()
{
    Rng rng(2);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const Shape shape{1 + rng.index(12), 1 + rng.index(12)};
        const Tensor x = random_tensor(rng, shape);
        const Tensor g = random_tensor(rng, shape);
        const double eps = std::pow(10.0, rng.uniform(-4.0, 0.0));
        const Tensor out = at_perturb(x, g, eps);
        worst = std::max(worst, std::abs(distance(out, x) - eps * frobenius_norm(x.values())));
    }
    Rng guard_rng(3);
    const Tensor x = random_tensor(guard_rng, {5, 4});
    const bool zero_g = bitwise_equal(at_perturb(x, Tensor::zeros({5, 4}), 0.1), x);
    const bool zero_eps = bitwise_equal(at_perturb(x, random_tensor(guard_rng, {5, 4}), 0.0), x);
    return {worst <= 1e-12 && zero_g && zero_eps,
            fmt("max deviation %.2e, zero-gradient guard %s, zero-epsilon guard %s", worst, zero_g ? "ok" : "broken",
                zero_eps ? "ok" : "broken")};
}

// ---------------------------------------------------------------- 3

Outcome scale_invariance()
{
    Rng rng(4);
    int mismatches = 0;
    const int trials = 1000;
    for (int trial = 0; trial < trials; ++trial) {
        const Shape shape{1 + rng.index(10), 1 + rng.index(10)};
        const Tensor x = random_tensor(rng, shape);
        const Tensor g = random_tensor(rng, shape);
        const double eps = std::pow(10.0, rng.uniform(-4.0, 0.0));
        const Tensor ref = at_perturb(x, g, eps);
        for (double c : {0.5, 2.0, 100.0}) {
            std::vector<double> scaled(g.data().begin(), g.data().end());
            for (double& v : scaled) {
                v *= c;
            }
            mismatches += bitwise_equal(at_perturb(x, Tensor(shape, std::move(scaled)), eps), ref) ? 0 : 1;
        }
    }
    return {mismatches == 0, fmt("%d of %d scaled gradients differ", mismatches, 3 * trials)};
}

// ---------------------------------------------------------------- 4

/// Two input variables, two classes: p = softmax(W x + b).
struct ToyClassifier {
    Tensor w; // {2, 2}, row k holds the weights of class k
    Tensor b; // {2}

    [[nodiscard]] std::array<double, 2> probs(double x0, double x1) const
    {
        const auto& W = w.data();
        const double z0 = W[0] * x0 + W[1] * x1 + b.data()[0];
        const double z1 = W[2] * x0 + W[3] * x1 + b.data()[1];
        const double m = std::max(z0, z1);
        const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
        return {e0 / (e0 + e1), e1 / (e0 + e1)};
    }

    [[nodiscard]] ForwardFn forward() const
    {
        return [this](Tape& tape, std::span<const Tensor> xs) {
            const Tensor logits = tape.add(tape.reshape(tape.matmul(w, xs[0]), {2}), b);
            TaskOutputs out;
            out.p_option = tape.softmax(logits);
            return out;
        };
    }
};

Outcome vat_direction_oracle()
{
    const auto t0 = Clock::now();
    Rng rng(5);
    const double eps = 1e-2;
    const int directions = 10000;
    int hits = 0;
    double worst = 1.0;
    for (int trial = 0; trial < 100; ++trial) {
        const ToyClassifier toy{random_tensor(rng, {2, 2}, -2.0, 2.0), random_tensor(rng, {2}, -1.0, 1.0)};
        const Tensor x = random_tensor(rng, {2, 1}, -2.0, 2.0);
        const std::vector<Tensor> xs{x};
        const auto x_vat = vat_perturb(xs, toy.forward(), {eps, 1e-5}, rng);
        const double r0 = x_vat[0].data()[0] - x.data()[0];
        const double r1 = x_vat[0].data()[1] - x.data()[1];

        const double radius = eps * frobenius_norm(x.values());
        const auto p = toy.probs(x.data()[0], x.data()[1]);
        double best_kl = -1.0, best_u0 = 0.0, best_u1 = 0.0;
        for (int k = 0; k < directions; ++k) {
            const double theta = 2.0 * std::numbers::pi * k / directions;
            const double u0 = std::cos(theta), u1 = std::sin(theta);
            const auto q = toy.probs(x.data()[0] + radius * u0, x.data()[1] + radius * u1);
            const double kl = p[0] * std::log(p[0] / q[0]) + p[1] * std::log(p[1] / q[1]);
            if (kl > best_kl) {
                best_kl = kl;
                best_u0 = u0;
                best_u1 = u1;
            }
        }
        const double cos = std::abs(r0 * best_u0 + r1 * best_u1) / std::hypot(r0, r1);
        worst = std::min(worst, cos);
        hits += cos >= 0.99 ? 1 : 0;
    }
    const double secs = seconds_since(t0);
    return {hits >= 95 && secs < 120.0, fmt("%d of 100 trials with |cos| >= 0.99, worst %.4f, %.1fs", hits, worst, secs)};
}

// ---------------------------------------------------------------- 5

Outcome ascent_property()
{
    SyntheticSpec spec;
    spec.questions = 200;
    spec.seed = 6;
    const auto corpus = generate_synthetic(spec);
    const Vocabulary vocab = Vocabulary::from_words(corpus_words(corpus.file));
    const auto examples = to_examples(corpus.file, vocab, TaskKind::seu);

    Rng rng(7);
    int ascents = 0;
    const int trials = 200;
    for (int trial = 0; trial < trials; ++trial) {
        ModelConfig cfg;
        cfg.vocab_size = vocab.size();
        cfg.hidden_dim = 16;
        cfg.max_seq_len = 128;
        cfg.seed = 1000 + static_cast<std::uint64_t>(trial);
        RcModel model = RcModel::initialize(cfg);
        TrainRecipe recipe;
        recipe.at = true;
        recipe.perturbation.epsilon = 1e-2;
        const std::vector<Example> batch{examples[static_cast<std::size_t>(trial) % examples.size()]};
        const auto r = train_step(batch, {}, recipe, model, Sgd(recipe.learning_rate), rng);
        ascents += *r.loss_at > r.loss_clean ? 1 : 0;
    }
    return {ascents * 100 >= 95 * trials, fmt("%d of %d trials ascend", ascents, trials)};
}

// ---------------------------------------------------------------- 6

Outcome nel_extremality()
{
    Rng rng(8);
    double worst_uniform = 0.0, worst_one_hot = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.index(40);
        std::vector<std::uint8_t> valid(n, 0);
        std::size_t v = 0;
        for (auto& m : valid) {
            m = rng.bernoulli(0.7) ? 1 : 0;
            v += m;
        }
        if (v == 0) {
            valid[0] = 1;
            v = 1;
        }
        std::vector<double> uniform(n, 0.0), one_hot(n, 0.0);
        std::size_t pick = 0, seen = 0;
        const std::size_t target = rng.index(v);
        for (std::size_t i = 0; i < n; ++i) {
            if (valid[i]) {
                uniform[i] = 1.0 / static_cast<double>(v);
                if (seen++ == target) {
                    pick = i;
                }
            }
        }
        one_hot[pick] = 1.0;
        Tape tape;
        const Tensor u = Tensor::vector(uniform);
        const Tensor h = Tensor::vector(one_hot);
        worst_uniform = std::max(worst_uniform,
                                 std::abs(negative_entropy_loss(tape, u, u, 1, valid).item() + 2.0 * std::log(static_cast<double>(v))));
        worst_one_hot = std::max(worst_one_hot, std::abs(negative_entropy_loss(tape, h, h, 1, valid).item()));
    }
    return {worst_uniform <= 1e-9 && worst_one_hot <= 1e-9,
            fmt("max error %.2e at uniform, %.2e at one-hot", worst_uniform, worst_one_hot)};
}

// ---------------------------------------------------------------- 7

SpanChoice exhaustive_span(const std::vector<double>& ps, const std::vector<double>& pe, const std::vector<std::uint8_t>& valid,
                           std::size_t max_len)
{
    SpanChoice best{0, 0, -1.0};
    for (std::size_t j = 0; j < ps.size(); ++j) {
        for (std::size_t i = 0; i <= j; ++i) {
            if (!valid[i] || !valid[j] || j - i >= max_len) {
                continue;
            }
            const double p = ps[i] * pe[j];
            if (best.prob < 0.0 || p > best.prob || (p == best.prob && (i < best.start || (i == best.start && j < best.end)))) {
                best = {i, j, p};
            }
        }
    }
    return best;
}

double exhaustive_threshold(const std::vector<ThresholdCandidate>& dev, double* chosen)
{
    std::vector<double> scores;
    for (const auto& c : dev) {
        scores.push_back(c.score);
    }
    std::sort(scores.begin(), scores.end());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
    std::vector<double> cands{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i + 1 < scores.size(); ++i) {
        cands.push_back((scores[i] + scores[i + 1]) / 2.0);
    }
    std::sort(cands.begin(), cands.end());
    double best = -1.0;
    for (double t : cands) {
        double f1 = 0.0;
        for (const auto& c : dev) {
            f1 += c.score > t ? (c.gold_na ? 1.0 : 0.0) : c.f1_if_answered;
        }
        f1 /= static_cast<double>(dev.size());
        if (f1 > best + 1e-12) {
            best = f1;
            *chosen = t;
        }
    }
    return best;
}

std::vector<double> random_distribution(Rng& rng, std::size_t n)
{
    std::vector<double> v(n);
    double s = 0.0;
    for (double& x : v) {
        x = rng.uniform();
        s += x;
    }
    for (double& x : v) {
        x /= s;
    }
    return v;
}

Outcome decoder_oracles()
{
    Rng rng(9);
    int span_mismatch = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t l = 1 + rng.index(32);
        auto ps = random_distribution(rng, l);
        auto pe = random_distribution(rng, l);
        if (trial % 5 == 0) {
            for (double& v : ps) {
                v = std::round(v * 4.0) / 4.0;
            }
            for (double& v : pe) {
                v = std::round(v * 4.0) / 4.0;
            }
        }
        std::vector<std::uint8_t> valid(l);
        for (auto& v : valid) {
            v = rng.uniform() < 0.8 ? 1 : 0;
        }
        valid[rng.index(l)] = 1;
        const std::size_t max_len = 1 + rng.index(l);
        const auto got = best_span(ps, pe, valid, max_len);
        const auto want = exhaustive_span(ps, pe, valid, max_len);
        span_mismatch += got.start == want.start && got.end == want.end && got.prob == want.prob ? 0 : 1;
    }
    int threshold_mismatch = 0;
    int sets = 0;
    while (sets < 200) {
        const std::size_t n = 1 + rng.index(50);
        std::vector<ThresholdCandidate> dev(n);
        bool has_na = false, has_ha = false;
        for (auto& c : dev) {
            c.score = std::round(rng.uniform(-1.0, 1.0) * 20.0) / 20.0;
            c.gold_na = rng.uniform() < 0.4;
            c.f1_if_answered = c.gold_na ? 0.0 : std::round(rng.uniform() * 4.0) / 4.0;
            has_na = has_na || c.gold_na;
            has_ha = has_ha || !c.gold_na;
        }
        if (!has_na || !has_ha) {
            continue;
        }
        ++sets;
        double want_t = 0.0;
        const double want_f1 = exhaustive_threshold(dev, &want_t);
        const auto got = threshold_search(dev);
        const bool same_t = std::isinf(want_t) ? got.threshold == want_t : std::abs(got.threshold - want_t) <= 1e-12;
        threshold_mismatch += std::abs(got.f1 - want_f1) <= 1e-12 && same_t ? 0 : 1;
    }
    return {span_mismatch == 0 && threshold_mismatch == 0,
            fmt("best_span %d of 1000 differ, threshold_search %d of 200 differ", span_mismatch, threshold_mismatch)};
}

// ---------------------------------------------------------------- 8, 9

/// The synthetic task used by the toy training runs. Answerability is decided by
/// whether the asked attribute is stated for the entity.
SyntheticSpec toy_spec(TaskKind task, std::size_t questions, std::uint64_t seed, const std::string& prefix)
{
    SyntheticSpec s;
    s.task = task;
    s.questions = questions;
    s.seed = seed;
    s.id_prefix = prefix;
    s.facts_per_passage = 2;
    s.filler_sentences = 0;
    s.attributes = 4;
    s.unanswerable_kinds = {UnanswerableKind::missing_attribute};
    s.unanswerable_fraction = task == TaskKind::seu ? 1.0 / 3.0 : 0.0;
    return s;
}

ModelConfig toy_model(std::size_t vocab_size, std::uint64_t seed)
{
    ModelConfig cfg;
    cfg.vocab_size = vocab_size;
    cfg.hidden_dim = 16;
    cfg.max_seq_len = 64;
    cfg.num_encoder_blocks = 1;
    cfg.init_range = 0.5;
    cfg.seed = seed;
    return cfg;
}

TrainRecipe toy_recipe(std::uint64_t seed)
{
    TrainRecipe r;
    r.epochs = 15;
    r.learning_rate = 0.1;
    r.seed = seed;
    return r;
}

double best_dev(const FitResult& r, bool use_em)
{
    double best = 0.0;
    for (const auto& e : r.epochs) {
        best = std::max(best, use_em ? e.dev->em : e.dev->f1);
    }
    return best;
}

Outcome toy_at_gain()
{
    const auto t0 = Clock::now();
    auto train_spec = toy_spec(TaskKind::seu, 2000, 11, "t");
    train_spec.label_noise = 0.1;
    const auto train = generate_synthetic(train_spec);
    const auto dev = generate_synthetic(toy_spec(TaskKind::seu, 500, 12, "d"));

    EntityGazetteer gazetteer;
    for (const auto& [surface, type] : train.gazetteer) {
        gazetteer.add(surface, type);
    }
    Rng aug_rng(13);
    const auto aug = build_augmentation_set(train.file.articles, gazetteer, 400, 400, aug_rng);

    std::vector<std::string> words = corpus_words(train.file);
    for (const auto* f : {&dev.file, &aug.file}) {
        const auto w = corpus_words(*f);
        words.insert(words.end(), w.begin(), w.end());
    }
    const Vocabulary vocab = Vocabulary::from_words(words);
    const auto tr = to_examples(train.file, vocab, TaskKind::seu);
    const auto dv = to_examples(dev.file, vocab, TaskKind::seu);
    const auto au = to_examples(aug.file, vocab, TaskKind::seu);

    struct Variant {
        const char* name;
        bool at, da, nel;
    };
    const std::vector<Variant> variants{{"{}", false, false, false},
                                        {"{AT}", true, false, false},
                                        {"{DA}", false, true, false},
                                        {"{DA+NEL+AT}", true, true, true}};
    std::vector<std::vector<double>> f1(variants.size());
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        for (std::size_t v = 0; v < variants.size(); ++v) {
            TrainRecipe r = toy_recipe(seed);
            r.at = variants[v].at;
            r.da = variants[v].da;
            r.nel = variants[v].nel;
            const FitResult res = fit({&tr, &dv, nullptr, variants[v].da ? &au : nullptr}, r,
                                      RcModel::initialize(toy_model(vocab.size(), seed)));
            f1[v].push_back(100.0 * best_dev(res, false));
        }
    }
    std::vector<double> med;
    std::string detail = "median dev F1";
    for (std::size_t v = 0; v < variants.size(); ++v) {
        med.push_back(median(f1[v]));
        detail += fmt(" %s %.2f", variants[v].name, med.back());
    }
    const double secs = seconds_since(t0);
    detail += fmt(", %.0fs", secs);
    return {med[1] >= med[0] + 1.0 && med[3] >= med[2] + 1.0 && secs < 600.0, detail};
}

Outcome toy_vat_gain()
{
    auto train_spec = toy_spec(TaskKind::se, 2000, 21, "t");
    train_spec.label_noise = 0.1;
    const auto train = generate_synthetic(train_spec);
    const auto dev = generate_synthetic(toy_spec(TaskKind::se, 500, 22, "d"));
    auto unlabeled_spec = toy_spec(TaskKind::seu, 1000, 23, "u");
    unlabeled_spec.unanswerable_fraction = 1.0;
    const auto unlabeled = generate_synthetic(unlabeled_spec);

    std::vector<std::string> words = corpus_words(train.file);
    for (const auto* f : {&dev.file, &unlabeled.file}) {
        const auto w = corpus_words(*f);
        words.insert(words.end(), w.begin(), w.end());
    }
    const Vocabulary vocab = Vocabulary::from_words(words);
    const auto tr = to_examples(train.file, vocab, TaskKind::se);
    const auto dv = to_examples(dev.file, vocab, TaskKind::se);
    const auto un = to_examples(unlabeled.file, vocab, TaskKind::se, false);

    std::vector<double> base, vat;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const RcModel init = RcModel::initialize(toy_model(vocab.size(), seed));
        TrainRecipe plain = toy_recipe(seed);
        base.push_back(100.0 * best_dev(fit({&tr, &dv, nullptr, nullptr}, plain, init), true));
        TrainRecipe semi = toy_recipe(seed);
        semi.vat_unlabeled = true;
        vat.push_back(100.0 * best_dev(fit({&tr, &dv, &un, nullptr}, semi, init), true));
    }
    const double mb = median(base), mv = median(vat);
    return {mv >= mb + 0.5, fmt("median dev EM {} %.2f, {VAT unlabeled} %.2f", mb, mv)};
}

// ---------------------------------------------------------------- 10

/// `rewritten` equals `source` with exactly one gazetteer mention swapped for a
/// different surface of the same type.
bool one_entity_swapped(const std::string& source, const std::string& rewritten, const EntityGazetteer& g)
{
    const auto src = tokenize(source);
    const auto out = tokenize(rewritten);
    for (std::size_t start = 0; start < src.size(); ++start) {
        for (std::size_t len = 1; start + len <= src.size(); ++len) {
            const std::vector<std::string> old(src.begin() + static_cast<std::ptrdiff_t>(start),
                                               src.begin() + static_cast<std::ptrdiff_t>(start + len));
            const std::string* old_type = g.type_of(join(old));
            const std::size_t tail = src.size() - start - len;
            if (old_type == nullptr || out.size() < start + tail + 1) {
                continue;
            }
            if (!std::equal(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(start), out.begin()) ||
                !std::equal(src.end() - static_cast<std::ptrdiff_t>(tail), src.end(), out.end() - static_cast<std::ptrdiff_t>(tail))) {
                continue;
            }
            const std::vector<std::string> mid(out.begin() + static_cast<std::ptrdiff_t>(start),
                                               out.end() - static_cast<std::ptrdiff_t>(tail));
            const std::string* new_type = g.type_of(join(mid));
            if (new_type != nullptr && *new_type == *old_type && mid != old) {
                return true;
            }
        }
    }
    return false;
}

Outcome augmentation_validity()
{
    SyntheticSpec spec;
    spec.questions = 16000;
    spec.seed = 31;
    const auto corpus = generate_synthetic(spec);
    EntityGazetteer g;
    for (const auto& [surface, type] : corpus.gazetteer) {
        g.add(surface, type);
    }
    std::map<std::string, const Question*> questions;
    std::map<std::string, const Passage*> passages;
    for (const auto& a : corpus.file.articles) {
        for (const auto& p : a.passages) {
            passages[p.id] = &p;
            for (const auto& q : p.questions) {
                questions[q.id] = &q;
            }
        }
    }
    Rng rng(32);
    const auto set = build_augmentation_set(corpus.file.articles, g, 4000, 4000, rng);
    std::size_t shuffle_bad = 0, replace_bad = 0, shuffles = 0, replacements = 0;
    for (const auto& ex : set.examples) {
        const Question& src = *questions.at(ex.source_question_id);
        if (ex.strategy == AugmentStrategy::shuffle) {
            ++shuffles;
            const bool ok = ex.passage_id != ex.source_passage_id &&
                            !contains_sequence(tokenize(passages.at(ex.passage_id)->context), tokenize(src.answers.front().text));
            shuffle_bad += ok ? 0 : 1;
        } else {
            ++replacements;
            replace_bad += one_entity_swapped(src.text, ex.question, g) ? 0 : 1;
        }
    }
    const auto& r = set.report;
    const bool targets = r.shuffle_taken == std::min<std::size_t>(4000, r.shuffle_available) &&
                         r.replacement_taken == std::min<std::size_t>(4000, r.replacement_available);
    return {shuffle_bad == 0 && replace_bad == 0 && targets && shuffles > 0 && replacements > 0,
            fmt("shuffle %zu/%zu valid, replacement %zu/%zu valid, taken %zu+%zu of available %zu+%zu", shuffles - shuffle_bad,
                shuffles, replacements - replace_bad, replacements, r.shuffle_taken, r.replacement_taken, r.shuffle_available,
                r.replacement_available)};
}

// ---------------------------------------------------------------- 11

Outcome bucketing_integrity()
{
    SyntheticSpec spec;
    spec.questions = 600;
    spec.seed = 41;
    const auto corpus = generate_synthetic(spec);
    const auto tokens = passage_question_tokens(corpus.file);
    const RareWordSet rare = rare_word_set(tokens, 200);
    std::vector<ScoredExample> scored;
    Rng rng(42);
    for (const auto& a : corpus.file.articles) {
        for (const auto& p : a.passages) {
            for (const auto& q : p.questions) {
                scored.push_back({q.id, difficulty(tokenize(p.context), tokenize(q.text), rare), q.is_impossible, rng.uniform()});
            }
        }
    }
    const auto report = bucketize(scored, kDefaultBucketEdges);
    std::size_t sum_all = 0;
    bool subsets_add_up = true;
    for (const auto& b : report.buckets) {
        const std::size_t all = b.stats.at(Subset::all).count;
        sum_all += all;
        subsets_add_up = subsets_add_up && all == b.stats.at(Subset::answerable).count + b.stats.at(Subset::unanswerable).count;
    }
    const bool partition = sum_all == scored.size() && subsets_add_up;

    RareWordSet hand;
    hand.words = {"zorn", "qux"};
    std::vector<std::string> passage(33, "w");
    passage[7] = "zorn";
    std::vector<std::string> question(7, "q");
    question[2] = "qux";
    const double d = difficulty(passage, question, hand);
    const std::size_t boundary = bucket_index(0.01, kDefaultBucketEdges);
    return {partition && std::abs(d - 0.05) <= 1e-15 && boundary == 1,
            fmt("%zu examples in %zu buckets (%s), 40-word difficulty %.4f, 0.01 in bucket %zu", sum_all, report.buckets.size(),
                partition ? "partition" : "not a partition", d, boundary + 1)};
}

// ---------------------------------------------------------------- 12

/// Runs every command into `dir` and returns the bytes of each output file.
std::map<std::string, std::string> run_all_commands(const fs::path& dir)
{
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto spec = toy_spec(TaskKind::seu, 120, 51, "t");
    spec.unanswerable_kinds = {UnanswerableKind::other_entity, UnanswerableKind::missing_attribute};
    cmd_generate(spec, (dir / "train.json").string(), (dir / "gaz.tsv").string());
    cmd_generate(toy_spec(TaskKind::seu, 60, 52, "d"), (dir / "dev.json").string(), "");
    auto un = toy_spec(TaskKind::seu, 40, 53, "u");
    un.unanswerable_fraction = 1.0;
    cmd_generate(un, (dir / "unlabeled.json").string(), "");
    cmd_augment((dir / "train.json").string(), (dir / "gaz.tsv").string(), 20, 20, 54, (dir / "aug.json").string());
    const RunConfig config = resolve_config(
        {{"task", "seu"}, {"train", (dir / "train.json").string()}, {"dev", (dir / "dev.json").string()},
         {"unlabeled", (dir / "unlabeled.json").string()}, {"augmentation", (dir / "aug.json").string()},
         {"hidden_dim", "8"}, {"max_seq_len", "64"}, {"epochs", "2"}, {"at", "true"}, {"vat", "true"},
         {"vat_unlabeled", "true"}, {"nel", "true"}, {"da", "true"}},
        {{"seed", "55"}, {"out", (dir / "run").string()}});
    cmd_train(config);
    cmd_eval((dir / "run/model.ckpt").string(), (dir / "dev.json").string(), (dir / "eval").string());
    cmd_analyze({(dir / "run/model.ckpt").string()}, {(dir / "run/model.ckpt").string()}, (dir / "dev.json").string(),
                (dir / "train.json").string(), 100, kDefaultBucketEdges, (dir / "analysis").string());
    write_text_file((dir / "gradcheck.json").string(), cmd_gradcheck(56, 2, 1e-4).json.dump(1));

    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            files[fs::relative(entry.path(), dir).string()] = read_text_file(entry.path().string());
        }
    }
    fs::remove_all(dir);
    return files;
}

Outcome determinism()
{
    const fs::path dir = fs::temp_directory_path() / ("advreg_acceptance_" + std::to_string(::getpid()));
    const auto first = run_all_commands(dir);
    const auto second = run_all_commands(dir);
    std::string detail = fmt("%zu output files compared", first.size());
    bool same = first.size() == second.size();
    for (const auto& [name, bytes] : first) {
        const auto it = second.find(name);
        if (it == second.end() || it->second != bytes) {
            same = false;
            detail += ", differs: " + name;
        }
    }
    return {same && first.size() >= 10, detail};
}

} // namespace

int main()
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient fidelity", gradient_fidelity},
        {"perturbation norm law", perturbation_norm_law},
        {"scale invariance", scale_invariance},
        {"VAT direction oracle", vat_direction_oracle},
        {"ascent property", ascent_property},
        {"NEL extremality", nel_extremality},
        {"decoder oracle equivalence", decoder_oracles},
        {"toy AT gain", toy_at_gain},
        {"toy VAT gain on unlabeled data", toy_vat_gain},
        {"augmentation validity", augmentation_validity},
        {"bucketing integrity", bucketing_integrity},
        {"determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("criterion %2zu %s: %s (%s)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
