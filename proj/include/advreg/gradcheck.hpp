#pragma once

#include <advreg/adversary.hpp>
#include <advreg/model.hpp>
#include <advreg/objectives.hpp>
#include <advreg/rng.hpp>
#include <advreg/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace advreg {

/// Builds a scalar loss from the given leaves on `tape`.
using LossBuilder = std::function<Tensor(Tape&, std::span<const Tensor>)>;
/// Draws one random instance: the leaves to differentiate and the loss built on them.
using InstanceMaker = std::function<std::pair<std::vector<Tensor>, LossBuilder>(Rng&)>;

struct GradcheckCase {
    std::string name;
    InstanceMaker make;
};

struct GradcheckResult {
    std::string name;
    std::size_t instances = 0;
    double max_relative_error = 0.0;
    bool passed = false;
};

/// |a - n| / max(|a|, |n|, floor); the floor keeps exact zeros from dividing by zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-6)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Largest relative error between tape gradients and central differences over all leaves.
inline double gradient_error(std::span<const Tensor> leaves, const LossBuilder& build, double h = 1e-5)
{
    std::vector<Tensor> tracked;
    for (const auto& l : leaves) {
        tracked.push_back(l.detach());
        tracked.back().set_requires_grad(true);
    }
    Tape tape;
    const Tensor loss = build(tape, tracked);
    const auto analytic = tape.gradients(loss, tracked);

    double worst = 0.0;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        auto f = [&](const Tensor& probe) {
            std::vector<Tensor> inputs;
            for (std::size_t k = 0; k < leaves.size(); ++k) {
                inputs.push_back(k == i ? probe : leaves[k].detach());
            }
            Tape t(GradMode::inputs_only);
            return build(t, inputs).item();
        };
        const Tensor numeric = finite_difference_grad(f, leaves[i], h);
        for (std::size_t k = 0; k < numeric.numel(); ++k) {
            worst = std::max(worst, relative_error(analytic[i].data()[k], numeric.data()[k]));
        }
    }
    return worst;
}

namespace gradcheck_detail {

inline std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

inline Tensor rand(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0)
{
    return Tensor::uniform(std::move(shape), lo, hi, rng);
}

/// Uniform in +-[lo, hi] so that kinks at zero are avoided.
inline Tensor away_from_zero(Rng& rng, Shape shape, double lo = 0.05, double hi = 1.0)
{
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) {
        v = rng.uniform(lo, hi) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    }
    return t;
}

/// sum(out * w) with a fixed random w, so every output coordinate matters.
inline Tensor project(Tape& tape, const Tensor& out, const Tensor& w) { return tape.sum(tape.mul(out, w)); }

inline std::vector<std::uint8_t> random_mask(Rng& rng, std::size_t n)
{
    std::vector<std::uint8_t> mask(n);
    for (auto& m : mask) {
        m = rng.bernoulli(0.75) ? 1 : 0;
    }
    mask[rng.index(n)] = 1;
    return mask;
}

inline GradcheckCase unary(std::string name, std::function<Tensor(Tape&, const Tensor&)> op, bool positive = false)
{
    return {std::move(name), [op, positive](Rng& rng) {
                const Shape s{dim(rng, 1, 4), dim(rng, 1, 4)};
                Tensor x = positive ? rand(rng, s, 0.1, 2.0) : away_from_zero(rng, s);
                Tape probe(GradMode::inputs_only);
                Tensor w = rand(rng, op(probe, x).shape());
                return std::make_pair(std::vector<Tensor>{x},
                                      LossBuilder([op, w](Tape& t, std::span<const Tensor> in) {
                                          return project(t, op(t, in[0]), w);
                                      }));
            }};
}

inline GradcheckCase binary(std::string name, std::function<Tensor(Tape&, const Tensor&, const Tensor&)> op)
{
    return {std::move(name), [op](Rng& rng) {
                const Shape s{dim(rng, 1, 4), dim(rng, 1, 4)};
                Tensor w = rand(rng, s);
                return std::make_pair(std::vector<Tensor>{rand(rng, s), rand(rng, s)},
                                      LossBuilder([op, w](Tape& t, std::span<const Tensor> in) {
                                          return project(t, op(t, in[0], in[1]), w);
                                      }));
            }};
}

/// Random logits turned into span distributions over a masked support.
struct SpanInstance {
    std::size_t l = 0;
    std::vector<std::uint8_t> valid;
    std::size_t gold_s = 0;
    std::size_t gold_e = 0;
};

inline SpanInstance span_instance(Rng& rng)
{
    SpanInstance s;
    s.l = dim(rng, 2, 8);
    s.valid = random_mask(rng, s.l);
    std::vector<std::size_t> on;
    for (std::size_t i = 0; i < s.l; ++i) {
        if (s.valid[i]) {
            on.push_back(i);
        }
    }
    s.gold_s = on[rng.index(on.size())];
    s.gold_e = on[rng.index(on.size())];
    return s;
}

} // namespace gradcheck_detail

/// Every primitive of the tape and every training objective.
inline std::vector<GradcheckCase> gradcheck_suite()
{
    using namespace gradcheck_detail;
    std::vector<GradcheckCase> cases;

    cases.push_back(binary("add", [](Tape& t, const Tensor& a, const Tensor& b) { return t.add(a, b); }));
    cases.push_back(binary("sub", [](Tape& t, const Tensor& a, const Tensor& b) { return t.sub(a, b); }));
    cases.push_back(binary("mul", [](Tape& t, const Tensor& a, const Tensor& b) { return t.mul(a, b); }));
    cases.push_back(unary("affine", [](Tape& t, const Tensor& a) { return t.affine(a, -1.7, 0.3); }));
    cases.push_back(unary("log", [](Tape& t, const Tensor& a) { return t.log(a); }, true));
    cases.push_back(unary("xlogx", [](Tape& t, const Tensor& a) { return t.xlogx(a); }, true));
    cases.push_back(unary("sigmoid", [](Tape& t, const Tensor& a) { return t.sigmoid(a); }));
    cases.push_back(unary("tanh", [](Tape& t, const Tensor& a) { return t.tanh(a); }));
    cases.push_back(unary("relu", [](Tape& t, const Tensor& a) { return t.relu(a); }));
    cases.push_back(unary("transpose", [](Tape& t, const Tensor& a) { return t.transpose(a); }));
    cases.push_back(unary("sum", [](Tape& t, const Tensor& a) { return t.mul(t.sum(a), t.sum(a)); }));
    cases.push_back(unary("mean", [](Tape& t, const Tensor& a) { return t.tanh(t.mean(a)); }));

    cases.push_back({"matmul", [](Rng& rng) {
                         // Exercise all four rank combinations.
                         const std::size_t m = dim(rng, 1, 4), k = dim(rng, 1, 4), n = dim(rng, 1, 4);
                         const std::size_t variant = rng.index(4);
                         const Shape sa = variant < 2 ? Shape{m, k} : Shape{k};
                         const Shape sb = variant % 2 == 0 ? Shape{k, n} : Shape{k};
                         Shape so;
                         if (variant < 2) {
                             so.push_back(m);
                         }
                         if (variant % 2 == 0) {
                             so.push_back(n);
                         }
                         Tensor w = so.empty() ? Tensor::scalar(rng.uniform(-1, 1)) : rand(rng, so);
                         return std::make_pair(std::vector<Tensor>{rand(rng, sa), rand(rng, sb)},
                                               LossBuilder([w](Tape& t, std::span<const Tensor> in) {
                                                   return project(t, t.matmul(in[0], in[1]), w);
                                               }));
                     }});

    cases.push_back({"linear", [](Rng& rng) {
                         const std::size_t m = dim(rng, 1, 4), k = dim(rng, 1, 4), n = dim(rng, 1, 4);
                         Tensor w = rand(rng, {m, n});
                         return std::make_pair(std::vector<Tensor>{rand(rng, {m, k}), rand(rng, {k, n}), rand(rng, {n})},
                                               LossBuilder([w](Tape& t, std::span<const Tensor> in) {
                                                   return project(t, t.linear(in[0], in[1], in[2]), w);
                                               }));
                     }});

    cases.push_back({"add_rowwise", [](Rng& rng) {
                         const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 4);
                         Tensor w = rand(rng, {m, n});
                         return std::make_pair(std::vector<Tensor>{rand(rng, {m, n}), rand(rng, {n})},
                                               LossBuilder([w](Tape& t, std::span<const Tensor> in) {
                                                   return project(t, t.add_rowwise(in[0], in[1]), w);
                                               }));
                     }});

    cases.push_back({"softmax", [](Rng& rng) {
                         const std::size_t m = dim(rng, 1, 3), n = dim(rng, 2, 6);
                         const auto mask = random_mask(rng, n);
                         Tensor w = rand(rng, {m, n});
                         return std::make_pair(std::vector<Tensor>{rand(rng, {m, n}, -2.0, 2.0)},
                                               LossBuilder([w, mask](Tape& t, std::span<const Tensor> in) {
                                                   return project(t, t.softmax(in[0], mask), w);
                                               }));
                     }});

    cases.push_back({"layer_norm", [](Rng& rng) {
                         // Width 2 normalizes every row to +-1, so its input gradient is zero.
                         const std::size_t m = dim(rng, 1, 3), n = dim(rng, 3, 6);
                         Tensor w = rand(rng, {m, n});
                         return std::make_pair(std::vector<Tensor>{rand(rng, {m, n}, -2.0, 2.0), rand(rng, {n}, 0.5, 1.5),
                                                                   rand(rng, {n})},
                                               LossBuilder([w](Tape& t, std::span<const Tensor> in) {
                                                   return project(t, t.layer_norm(in[0], in[1], in[2]), w);
                                               }));
                     }});

    cases.push_back({"concat", [](Rng& rng) {
                         const std::size_t a = dim(rng, 1, 3), b = dim(rng, 1, 3), n = dim(rng, 1, 3);
                         Tensor w = rand(rng, {a + b, n});
                         return std::make_pair(std::vector<Tensor>{rand(rng, {a, n}), rand(rng, {b, n})},
                                               LossBuilder([w](Tape& t, std::span<const Tensor> in) {
                                                   return project(t, t.concat({in[0], in[1]}), w);
                                               }));
                     }});

    cases.push_back({"slice", [](Rng& rng) {
                         const std::size_t m = dim(rng, 2, 5), n = dim(rng, 1, 3);
                         const std::size_t begin = rng.index(m - 1);
                         const std::size_t end = begin + 1 + rng.index(m - begin - 1);
                         Tensor w = rand(rng, {end - begin, n});
                         return std::make_pair(std::vector<Tensor>{rand(rng, {m, n})},
                                               LossBuilder([w, begin, end](Tape& t, std::span<const Tensor> in) {
                                                   return project(t, t.slice(in[0], begin, end), w);
                                               }));
                     }});

    cases.push_back({"element", [](Rng& rng) {
                         const std::size_t n = dim(rng, 1, 6);
                         const std::size_t i = rng.index(n);
                         return std::make_pair(std::vector<Tensor>{rand(rng, {n})},
                                               LossBuilder([i](Tape& t, std::span<const Tensor> in) {
                                                   return t.tanh(t.element(in[0], i));
                                               }));
                     }});

    cases.push_back({"reshape", [](Rng& rng) {
                         const std::size_t m = dim(rng, 1, 3), n = dim(rng, 1, 3);
                         Tensor w = rand(rng, {n, m});
                         return std::make_pair(std::vector<Tensor>{rand(rng, {m, n})},
                                               LossBuilder([w, m, n](Tape& t, std::span<const Tensor> in) {
                                                   return project(t, t.tanh(t.reshape(in[0], {n, m})), w);
                                               }));
                     }});

    cases.push_back({"embedding_lookup", [](Rng& rng) {
                         const std::size_t v = dim(rng, 2, 5), h = dim(rng, 1, 4), l = dim(rng, 1, 6);
                         std::vector<int> ids(l);
                         for (auto& id : ids) {
                             id = static_cast<int>(rng.index(v));
                         }
                         Tensor w = rand(rng, {l, h});
                         return std::make_pair(std::vector<Tensor>{rand(rng, {v, h})},
                                               LossBuilder([w, ids](Tape& t, std::span<const Tensor> in) {
                                                   return project(t, t.embedding_lookup(in[0], ids), w);
                                               }));
                     }});

    cases.push_back({"kl_divergence", [](Rng& rng) {
                         const std::size_t n = dim(rng, 2, 6);
                         std::vector<double> p(n);
                         double z = 0.0;
                         for (auto& v : p) {
                             v = rng.bernoulli(0.2) ? 0.0 : rng.uniform(0.1, 1.0);
                             z += v;
                         }
                         if (z == 0.0) {
                             p[0] = z = 1.0;
                         }
                         for (auto& v : p) {
                             v /= z;
                         }
                         return std::make_pair(std::vector<Tensor>{rand(rng, {n}, -2.0, 2.0)},
                                               LossBuilder([p](Tape& t, std::span<const Tensor> in) {
                                                   return t.kl_divergence(p, t.softmax(in[0]));
                                               }));
                     }});

    // Objectives, differentiated with respect to the logits feeding them.
    cases.push_back({"span_loss", [](Rng& rng) {
                         const auto s = span_instance(rng);
                         return std::make_pair(std::vector<Tensor>{rand(rng, {s.l}, -2, 2), rand(rng, {s.l}, -2, 2)},
                                               LossBuilder([s](Tape& t, std::span<const Tensor> in) {
                                                   return span_loss(t, t.softmax(in[0], s.valid), t.softmax(in[1], s.valid),
                                                                    s.gold_s, s.gold_e, s.valid);
                                               }));
                     }});

    cases.push_back({"na_loss", [](Rng& rng) {
                         const int y = rng.bernoulli(0.5) ? 1 : 0;
                         return std::make_pair(std::vector<Tensor>{rand(rng, {}, -3, 3)},
                                               LossBuilder([y](Tape& t, std::span<const Tensor> in) {
                                                   return na_loss(t, t.sigmoid(in[0]), y);
                                               }));
                     }});

    cases.push_back({"mc_loss", [](Rng& rng) {
                         const std::size_t m = dim(rng, 2, 5);
                         const std::size_t gold = rng.index(m);
                         return std::make_pair(std::vector<Tensor>{rand(rng, {m}, -2, 2)},
                                               LossBuilder([gold](Tape& t, std::span<const Tensor> in) {
                                                   return mc_loss(t, t.softmax(in[0]), gold);
                                               }));
                     }});

    cases.push_back({"negative_entropy_loss", [](Rng& rng) {
                         const auto s = span_instance(rng);
                         return std::make_pair(std::vector<Tensor>{rand(rng, {s.l}, -2, 2), rand(rng, {s.l}, -2, 2)},
                                               LossBuilder([s](Tape& t, std::span<const Tensor> in) {
                                                   return negative_entropy_loss(t, t.softmax(in[0], s.valid),
                                                                                t.softmax(in[1], s.valid), 1, s.valid);
                                               }));
                     }});

    cases.push_back({"seu_example_loss", [](Rng& rng) {
                         const auto s = span_instance(rng);
                         const bool na = rng.bernoulli(0.5);
                         EncodedInput input;
                         input.span_mask = s.valid;
                         input.passage_begin = 0;
                         const Target target = na ? Target::unanswerable() : Target::answerable(std::min(s.gold_s, s.gold_e),
                                                                                                 std::max(s.gold_s, s.gold_e));
                         return std::make_pair(
                             std::vector<Tensor>{rand(rng, {s.l}, -2, 2), rand(rng, {s.l}, -2, 2), rand(rng, {}, -2, 2)},
                             LossBuilder([s, input, target](Tape& t, std::span<const Tensor> in) {
                                 TaskOutputs out;
                                 out.p_start = t.softmax(in[0], s.valid);
                                 out.p_end = t.softmax(in[1], s.valid);
                                 out.p_na = t.sigmoid(in[2]);
                                 return seu_example_loss(t, out, target, input);
                             }));
                     }});

    cases.push_back({"batch_mean", [](Rng& rng) {
                         const std::size_t n = dim(rng, 1, 5);
                         return std::make_pair(std::vector<Tensor>{rand(rng, {n}, -2, 2)},
                                               LossBuilder([n](Tape& t, std::span<const Tensor> in) {
                                                   std::vector<Tensor> parts;
                                                   for (std::size_t i = 0; i < n; ++i) {
                                                       parts.push_back(t.tanh(t.element(in[0], i)));
                                                   }
                                                   return batch_mean(t, parts);
                                               }));
                     }});

    cases.push_back({"kl_outputs", [](Rng& rng) {
                         // KL between fixed clean outputs and outputs computed from logits.
                         const auto s = span_instance(rng);
                         Tape clean_tape(GradMode::inputs_only);
                         TaskOutputs clean;
                         clean.p_start = clean_tape.softmax(rand(rng, {s.l}, -2, 2), s.valid);
                         clean.p_end = clean_tape.softmax(rand(rng, {s.l}, -2, 2), s.valid);
                         clean.p_na = clean_tape.sigmoid(rand(rng, {}, -2, 2));
                         const auto values = output_distribution_values(clean);
                         return std::make_pair(
                             std::vector<Tensor>{rand(rng, {s.l}, -2, 2), rand(rng, {s.l}, -2, 2), rand(rng, {}, -2, 2)},
                             LossBuilder([s, values](Tape& t, std::span<const Tensor> in) {
                                 TaskOutputs out;
                                 out.p_start = t.softmax(in[0], s.valid);
                                 out.p_end = t.softmax(in[1], s.valid);
                                 out.p_na = t.sigmoid(in[2]);
                                 return kl_outputs(t, values, out);
                             }));
                     }});

    cases.push_back({"model_seu_loss", [](Rng& rng) {
                         // End to end through a tiny encoder, with respect to the embeddings.
                         ModelConfig cfg;
                         cfg.vocab_size = 12;
                         cfg.hidden_dim = 4;
                         cfg.max_seq_len = 12;
                         cfg.init_range = 0.5;
                         cfg.seed = rng.next();
                         const RcModel model = RcModel::initialize(cfg);
                         std::vector<int> q{5, 6}, p{7, 8, 9, 10};
                         auto input = pack_question_passage(q, p, cfg.max_seq_len);
                         const Target target = rng.bernoulli(0.5) ? Target::unanswerable() : Target::answerable(1, 2);
                         Tensor x = rand(rng, {input.tokens.size(), cfg.hidden_dim}, -1.5, 1.5);
                         return std::make_pair(std::vector<Tensor>{x},
                                               LossBuilder([model, input, target](Tape& t, std::span<const Tensor> in) {
                                                   const std::vector<EncodedInput> inputs{input};
                                                   TaskOutputs out =
                                                       model.forward_from_embeddings(t, TaskKind::seu, in, inputs);
                                                   return seu_example_loss(t, out, target, input);
                                               }));
                     }});
    return cases;
}

/// Runs each case on `instances` seeded draws and reports the worst error.
inline std::vector<GradcheckResult> run_gradcheck(std::uint64_t seed, std::size_t instances, double tolerance = 1e-4,
                                                  double h = 1e-5)
{
    std::vector<GradcheckResult> results;
    Rng master(seed);
    for (const auto& c : gradcheck_suite()) {
        Rng rng(master.next());
        GradcheckResult r;
        r.name = c.name;
        for (std::size_t i = 0; i < instances; ++i) {
            auto [leaves, build] = c.make(rng);
            r.max_relative_error = std::max(r.max_relative_error, gradient_error(leaves, build, h));
            ++r.instances;
        }
        r.passed = r.max_relative_error < tolerance;
        results.push_back(std::move(r));
    }
    return results;
}

} // namespace advreg
