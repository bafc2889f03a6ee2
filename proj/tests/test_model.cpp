#include <advreg/model.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace advreg;

namespace {

RcModel tiny(std::uint64_t seed = 1, std::size_t h = 8)
{
    ModelConfig cfg;
    cfg.vocab_size = 20;
    cfg.hidden_dim = h;
    cfg.max_seq_len = 16;
    cfg.seed = seed;
    cfg.init_range = 0.5;
    return RcModel::initialize(cfg);
}

std::vector<std::uint8_t> ones(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

ErrorKind kind_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::UsageError;
}

} // namespace

TEST(ModelConfig, Validation)
{
    ModelConfig cfg;
    cfg.vocab_size = 10;
    EXPECT_NO_THROW(cfg.validate());
    cfg.hidden_dim = 7;
    EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::InvalidConfig);
    cfg.hidden_dim = 8;
    cfg.max_seq_len = 3;
    EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::InvalidConfig);
}

TEST(Model, InitializationWithinRangeAndReproducible)
{
    const RcModel a = tiny(5);
    const RcModel b = tiny(5);
    const RcModel c = tiny(6);
    const auto pa = a.params().named();
    const auto pb = b.params().named();
    const auto pc = c.params().named();
    bool differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].second.values(), pb[i].second.values()) << pa[i].first;
        differs = differs || pa[i].second.values() != pc[i].second.values();
    }
    EXPECT_TRUE(differs);

    ModelConfig cfg;
    cfg.vocab_size = 12;
    const RcModel d = RcModel::initialize(cfg);
    for (double v : d.params().token_embedding.data()) {
        EXPECT_LE(std::abs(v), 0.05);
    }
    EXPECT_EQ(d.params().token_embedding.shape(), (Shape{12, 64}));
    EXPECT_EQ(d.params().position_embedding.shape(), (Shape{64, 64}));
    EXPECT_EQ(d.params().segment_embedding.shape(), (Shape{2, 64}));
}

TEST(Model, EmbedRejectsBadInput)
{
    const RcModel m = tiny();
    Tape tape;
    EXPECT_EQ(kind_of([&] { m.embed(tape, std::vector<int>{}, std::vector<int>{}); }), ErrorKind::SequenceTooLong);
    const std::vector<int> long_seq(17, 5);
    EXPECT_EQ(kind_of([&] { m.embed(tape, long_seq, std::vector<int>(17, 0)); }), ErrorKind::SequenceTooLong);
    EXPECT_EQ(kind_of([&] { m.embed(tape, std::vector<int>{20}, std::vector<int>{0}); }), ErrorKind::TokenOutOfVocab);
}

TEST(Model, EmbedRowsAreNormalizedAndPositionAware)
{
    const RcModel m = tiny();
    Tape tape;
    const std::vector<int> tokens{7, 7, 7};
    const Tensor x = m.embed(tape, tokens, std::vector<int>{0, 0, 1});
    const std::size_t h = m.config().hidden_dim;
    // Fresh layer-norm gain 1 and bias 0, so rows carry the raw statistics.
    for (std::size_t r = 0; r < 3; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < h; ++c) {
            mean += x.at(r, c);
        }
        mean /= static_cast<double>(h);
        double var = 0.0;
        for (std::size_t c = 0; c < h; ++c) {
            var += (x.at(r, c) - mean) * (x.at(r, c) - mean);
        }
        var /= static_cast<double>(h);
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var, 1.0, 1e-9);
    }
    bool rows_differ = false;
    for (std::size_t c = 0; c < h; ++c) {
        rows_differ = rows_differ || x.at(0, c) != x.at(1, c);
    }
    EXPECT_TRUE(rows_differ);
}

TEST(Model, EncodeSingleTokenAttendsToItself)
{
    const RcModel m = tiny();
    Tape tape;
    const Tensor x = m.embed(tape, std::vector<int>{5}, std::vector<int>{0});
    const Tensor h1 = m.encode(tape, x, ones(1));
    EXPECT_EQ(h1.shape(), (Shape{1, 8}));
    EXPECT_EQ(kind_of([&] { m.encode(tape, x, ones(2)); }), ErrorKind::ShapeMismatch);
}

TEST(Model, MaskedKeysDoNotInfluenceOutput)
{
    const RcModel m = tiny();
    Tape tape;
    const std::vector<std::uint8_t> mask{1, 0, 0};
    const Tensor a = m.encode(tape, m.embed(tape, std::vector<int>{5, 6, 7}, std::vector<int>{0, 0, 0}), mask);
    const Tensor b = m.encode(tape, m.embed(tape, std::vector<int>{5, 9, 11}, std::vector<int>{0, 0, 0}), mask);
    for (std::size_t c = 0; c < 8; ++c) {
        EXPECT_DOUBLE_EQ(a.at(0, c), b.at(0, c));
    }
}

TEST(Model, EncoderIsPermutationEquivariant)
{
    const RcModel m = tiny(3);
    Tape tape;
    const std::vector<int> tokens{1, 5, 9, 12, 2};
    const std::vector<int> segments{0, 0, 0, 0, 0};
    const std::vector<int> positions{0, 1, 2, 3, 4};
    std::vector<int> tokens_sw = tokens;
    std::vector<int> positions_sw = positions;
    std::swap(tokens_sw[1], tokens_sw[3]);
    std::swap(positions_sw[1], positions_sw[3]);
    const Tensor a = m.encode(tape, m.embed(tape, tokens, segments, positions), ones(5));
    const Tensor b = m.encode(tape, m.embed(tape, tokens_sw, segments, positions_sw), ones(5));
    for (std::size_t c = 0; c < 8; ++c) {
        EXPECT_NEAR(a.at(1, c), b.at(3, c), 1e-12);
        EXPECT_NEAR(a.at(3, c), b.at(1, c), 1e-12);
        EXPECT_NEAR(a.at(0, c), b.at(0, c), 1e-12);
    }
}

TEST(Model, PoolerReadsOnlyTheFirstRow)
{
    RcModel m = tiny();
    Tape tape;
    Rng rng(1);
    const Tensor h = Tensor::uniform({4, 8}, -1, 1, rng);
    Tensor h2 = h.clone();
    for (std::size_t i = 8; i < h2.numel(); ++i) {
        h2.mutable_data()[i] += 3.0;
    }
    const Tensor a = m.pool(tape, h);
    const Tensor b = m.pool(tape, h2);
    EXPECT_EQ(a.values(), b.values());
    for (double v : a.data()) {
        EXPECT_GT(v, -1.0);
        EXPECT_LT(v, 1.0);
    }
    for (double& v : m.params().pooler_b.mutable_data()) {
        v = 0.0;
    }
    for (double v : m.pool(tape, Tensor::zeros({4, 8})).data()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Model, SpanHeadDistributions)
{
    RcModel m = tiny();
    Tape tape;
    Rng rng(2);
    const Tensor h = Tensor::uniform({6, 8}, -1, 1, rng);
    const std::vector<std::uint8_t> valid{0, 0, 1, 1, 1, 0};
    const auto d = m.span_head(tape, h, valid);
    double sum = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        sum += d.start.at(i);
        if (!valid[i]) {
            EXPECT_EQ(d.start.at(i), 0.0);
            EXPECT_EQ(d.end.at(i), 0.0);
        }
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);

    const std::vector<std::uint8_t> single{0, 0, 0, 1, 0, 0};
    EXPECT_DOUBLE_EQ(m.span_head(tape, h, single).start.at(3), 1.0);

    for (double& v : m.params().span_start_w.mutable_data()) {
        v = 0.0;
    }
    const auto u = m.span_head(tape, h, valid);
    for (std::size_t i = 2; i < 5; ++i) {
        EXPECT_NEAR(u.start.at(i), 1.0 / 3.0, 1e-15);
    }
    EXPECT_EQ(kind_of([&] { m.span_head(tape, h, std::vector<std::uint8_t>(6, 0)); }), ErrorKind::AllPositionsMasked);
}

TEST(Model, NoAnswerHead)
{
    RcModel m = tiny();
    m.params().na_b.mutable_data()[0] = 0.0;
    {
        Tape tape;
        EXPECT_DOUBLE_EQ(m.na_head(tape, Tensor::zeros({8})).item(), 0.5);
    }
    Rng rng(4);
    const Tensor b = Tensor::uniform({8}, -1, 1, rng);
    double last = 0.0;
    for (double bias : {-4.0, -1.0, 0.0, 2.0, 8.0, 30.0}) {
        m.params().na_b.mutable_data()[0] = bias;
        Tape tape;
        const double p = m.na_head(tape, b).item();
        EXPECT_GT(p, last);
        last = p;
    }
    EXPECT_GT(last, 0.999);

    m.params().na_b.mutable_data()[0] = 0.0;
    Tensor bias = m.params().na_b;
    Tape tape(GradMode::full);
    const Tensor p = m.na_head(tape, Tensor::zeros({8}));
    EXPECT_NEAR(tape.gradient(p, bias).item(), 0.25, 1e-12);
}

TEST(Model, ChoiceHead)
{
    const RcModel m = tiny();
    Tape tape;
    Rng rng(5);
    const Tensor b = Tensor::uniform({8}, -1, 1, rng);
    const std::vector<Tensor> same{b, b, b, b};
    const Tensor u = m.mc_head(tape, same);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(u.at(i), 0.25, 1e-15);
    }
    std::vector<Tensor> opts;
    for (int i = 0; i < 4; ++i) {
        opts.push_back(Tensor::uniform({8}, -1, 1, rng));
    }
    const Tensor p = m.mc_head(tape, opts);
    std::swap(opts[0], opts[2]);
    const Tensor q = m.mc_head(tape, opts);
    EXPECT_DOUBLE_EQ(p.at(0), q.at(2));
    EXPECT_DOUBLE_EQ(p.at(2), q.at(0));
    EXPECT_DOUBLE_EQ(p.at(1), q.at(1));
    EXPECT_EQ(kind_of([&] { m.mc_head(tape, std::vector<Tensor>{b}); }), ErrorKind::TooFewOptions);
}

TEST(Model, PackingLayout)
{
    const std::vector<int> q{10, 11};
    const std::vector<int> p{12, 13, 14};
    const EncodedInput in = pack_question_passage(q, p, 16);
    EXPECT_EQ(in.tokens, (std::vector<int>{kClsId, 10, 11, kSepId, 12, 13, 14, kSepId}));
    EXPECT_EQ(in.segments, (std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1}));
    EXPECT_EQ(in.span_mask, (std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 1, 0}));
    EXPECT_EQ(in.passage_begin, 4u);
    EXPECT_EQ(kind_of([&] { pack_question_passage(q, p, 7); }), ErrorKind::SequenceTooLong);

    const std::vector<int> o{15};
    const EncodedInput c = pack_choice(p, q, o, 16);
    EXPECT_EQ(c.tokens, (std::vector<int>{kClsId, 12, 13, 14, kSepId, 10, 11, kSepId, 15, kSepId}));
    EXPECT_EQ(c.segments, (std::vector<int>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1}));
}

TEST(Model, ForwardIsFiniteAndGivesEmbeddingGradient)
{
    const RcModel m = tiny(9);
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int> q(2 + rng.index(3));
        std::vector<int> p(3 + rng.index(5));
        for (int& t : q) {
            t = 4 + static_cast<int>(rng.index(16));
        }
        for (int& t : p) {
            t = 4 + static_cast<int>(rng.index(16));
        }
        std::vector<EncodedInput> inputs{pack_question_passage(q, p, 16)};
        Tape tape;
        m.embed_all(tape, inputs);
        const Tensor x = tape.watch(inputs[0].x);
        const std::vector<Tensor> xs{x};
        const TaskOutputs out = m.forward_from_embeddings(tape, TaskKind::seu, xs, inputs);
        const double p_na = out.p_na.item();
        EXPECT_GT(p_na, 0.0);
        EXPECT_LT(p_na, 1.0);
        const Tensor loss = tape.add(tape.log(tape.element(out.p_start, inputs[0].passage_begin)), tape.log(out.p_na));
        const Tensor g = tape.gradient(loss, x);
        double norm = 0.0;
        for (double v : g.data()) {
            ASSERT_TRUE(std::isfinite(v));
            norm += v * v;
        }
        EXPECT_GT(norm, 0.0);
    }
}

TEST(Model, CloneIsIndependent)
{
    const RcModel a = tiny();
    RcModel b = a.clone();
    b.params().na_w.mutable_data()[0] += 1.0;
    EXPECT_NE(a.params().na_w.at(0), b.params().na_w.at(0));
}
