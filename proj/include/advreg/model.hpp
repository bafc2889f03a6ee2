#pragma once

#include <advreg/error.hpp>
#include <advreg/rng.hpp>
#include <advreg/tensor.hpp>
#include <advreg/vocab.hpp>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace advreg {

enum class TaskKind {
    se,  ///< span extraction, every question answerable
    seu, ///< span extraction with unanswerable questions
    mc,  ///< multiple choice
};

inline std::string to_string(TaskKind kind)
{
    switch (kind) {
    case TaskKind::se: return "se";
    case TaskKind::seu: return "seu";
    case TaskKind::mc: return "mc";
    }
    return "?";
}

inline TaskKind parse_task_kind(const std::string& s)
{
    if (s == "se") {
        return TaskKind::se;
    }
    if (s == "seu") {
        return TaskKind::seu;
    }
    if (s == "mc") {
        return TaskKind::mc;
    }
    fail(ErrorKind::InvalidConfig, "unknown task kind '" + s + "' (expected se, seu or mc)");
}

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t hidden_dim = 64;
    std::size_t max_seq_len = 64;
    std::size_t num_encoder_blocks = 1;
    double init_range = 0.05; ///< weights start uniform in [-init_range, init_range]
    std::uint64_t seed = 0;

    void validate() const
    {
        require(vocab_size > kNumSpecialTokens, ErrorKind::InvalidConfig, "vocab_size must exceed the special tokens");
        require(hidden_dim > 0 && hidden_dim % 2 == 0, ErrorKind::InvalidConfig, "hidden_dim must be positive and even");
        require(max_seq_len >= 4, ErrorKind::InvalidConfig, "max_seq_len must be at least 4");
        require(num_encoder_blocks > 0, ErrorKind::InvalidConfig, "num_encoder_blocks must be positive");
        require(init_range > 0.0 && std::isfinite(init_range), ErrorKind::InvalidConfig, "init_range must be positive");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct EncoderBlockParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gain, ln1_bias;
    Tensor w1, b1, w2, b2;
    Tensor ln2_gain, ln2_bias;
};

struct ModelParams {
    Tensor token_embedding;    // [vocab, h]
    Tensor position_embedding; // [l_max, h]
    Tensor segment_embedding;  // [2, h]
    Tensor embed_ln_gain, embed_ln_bias;
    std::vector<EncoderBlockParams> blocks;
    Tensor pooler_w, pooler_b;
    Tensor span_start_w, span_end_w; // [h]
    Tensor na_w, na_b;               // [h], []
    Tensor option_w, option_b;       // [h,1], [1]

    /// Every parameter with a stable name, in a fixed order (checkpoint layout and
    /// optimizer iteration order).
    [[nodiscard]] std::vector<std::pair<std::string, Tensor>> named() const
    {
        std::vector<std::pair<std::string, Tensor>> out{
            {"embed.token", token_embedding},
            {"embed.position", position_embedding},
            {"embed.segment", segment_embedding},
            {"embed.ln.gain", embed_ln_gain},
            {"embed.ln.bias", embed_ln_bias},
        };
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto& b = blocks[i];
            const std::string p = "encoder." + std::to_string(i) + ".";
            out.insert(out.end(), {
                                      {p + "attn.wq", b.wq},
                                      {p + "attn.bq", b.bq},
                                      {p + "attn.wk", b.wk},
                                      {p + "attn.bk", b.bk},
                                      {p + "attn.wv", b.wv},
                                      {p + "attn.bv", b.bv},
                                      {p + "attn.wo", b.wo},
                                      {p + "attn.bo", b.bo},
                                      {p + "ln1.gain", b.ln1_gain},
                                      {p + "ln1.bias", b.ln1_bias},
                                      {p + "mlp.w1", b.w1},
                                      {p + "mlp.b1", b.b1},
                                      {p + "mlp.w2", b.w2},
                                      {p + "mlp.b2", b.b2},
                                      {p + "ln2.gain", b.ln2_gain},
                                      {p + "ln2.bias", b.ln2_bias},
                                  });
        }
        out.insert(out.end(), {
                                  {"pooler.w", pooler_w},
                                  {"pooler.b", pooler_b},
                                  {"span.start_w", span_start_w},
                                  {"span.end_w", span_end_w},
                                  {"na.w", na_w},
                                  {"na.b", na_b},
                                  {"option.w", option_w},
                                  {"option.b", option_b},
                              });
        return out;
    }

    [[nodiscard]] std::vector<Tensor> all() const
    {
        std::vector<Tensor> out;
        for (auto& [name, t] : named()) {
            out.push_back(t);
        }
        return out;
    }

    /// Deep copy: the returned params share no storage with this one.
    [[nodiscard]] ModelParams clone() const
    {
        ModelParams c = *this;
        auto copy = [](Tensor& t) { t = t.clone(); };
        for (Tensor* t : c.mutable_refs()) {
            copy(*t);
        }
        return c;
    }

    std::vector<Tensor*> mutable_refs()
    {
        std::vector<Tensor*> out{&token_embedding, &position_embedding, &segment_embedding, &embed_ln_gain,
                                 &embed_ln_bias};
        for (auto& b : blocks) {
            out.insert(out.end(), {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln1_gain, &b.ln1_bias,
                                   &b.w1, &b.b1, &b.w2, &b.b2, &b.ln2_gain, &b.ln2_bias});
        }
        out.insert(out.end(), {&pooler_w, &pooler_b, &span_start_w, &span_end_w, &na_w, &na_b, &option_w, &option_b});
        return out;
    }

    void zero_grad()
    {
        for (Tensor* t : mutable_refs()) {
            t->zero_grad();
        }
    }
};

/// One packed model input. `x` holds the token embedding rows, the tensor that
/// adversarial perturbations are added to.
struct EncodedInput {
    std::vector<int> tokens;
    std::vector<int> segments;
    std::vector<std::uint8_t> attention_mask;
    std::vector<std::uint8_t> span_mask; ///< 1 exactly on passage positions
    std::size_t passage_begin = 0;
    std::size_t passage_length = 0;
    Tensor x;

    [[nodiscard]] std::size_t length() const noexcept { return tokens.size(); }
};

/// [CLS] question [SEP] passage [SEP], segment 0 through the first [SEP].
inline EncodedInput pack_question_passage(std::span<const int> question, std::span<const int> passage,
                                          std::size_t max_len)
{
    const std::size_t len = question.size() + passage.size() + 3;
    require(!passage.empty(), ErrorKind::SequenceTooLong, "empty passage");
    if (!(len <= max_len)) {
        fail(ErrorKind::SequenceTooLong, "packed length " + std::to_string(len) + " exceeds " + std::to_string(max_len));
    }
    EncodedInput in;
    in.tokens.reserve(len);
    in.tokens.push_back(kClsId);
    in.tokens.insert(in.tokens.end(), question.begin(), question.end());
    in.tokens.push_back(kSepId);
    in.passage_begin = in.tokens.size();
    in.passage_length = passage.size();
    in.tokens.insert(in.tokens.end(), passage.begin(), passage.end());
    in.tokens.push_back(kSepId);
    in.segments.assign(len, 1);
    std::fill_n(in.segments.begin(), static_cast<std::ptrdiff_t>(in.passage_begin), 0);
    in.attention_mask.assign(len, 1);
    in.span_mask.assign(len, 0);
    std::fill_n(in.span_mask.begin() + static_cast<std::ptrdiff_t>(in.passage_begin),
                static_cast<std::ptrdiff_t>(passage.size()), 1);
    return in;
}

/// [CLS] passage [SEP] question [SEP] option [SEP], segment 1 from the question on.
inline EncodedInput pack_choice(std::span<const int> passage, std::span<const int> question,
                                std::span<const int> option, std::size_t max_len)
{
    const std::size_t len = passage.size() + question.size() + option.size() + 4;
    if (!(len <= max_len)) {
        fail(ErrorKind::SequenceTooLong, "packed length " + std::to_string(len) + " exceeds " + std::to_string(max_len));
    }
    EncodedInput in;
    in.tokens.push_back(kClsId);
    in.tokens.insert(in.tokens.end(), passage.begin(), passage.end());
    in.tokens.push_back(kSepId);
    const std::size_t second = in.tokens.size();
    in.tokens.insert(in.tokens.end(), question.begin(), question.end());
    in.tokens.push_back(kSepId);
    in.tokens.insert(in.tokens.end(), option.begin(), option.end());
    in.tokens.push_back(kSepId);
    in.segments.assign(len, 1);
    std::fill_n(in.segments.begin(), static_cast<std::ptrdiff_t>(second), 0);
    in.attention_mask.assign(len, 1);
    in.span_mask.assign(len, 0);
    in.passage_begin = 1;
    in.passage_length = passage.size();
    return in;
}

struct SpanDistributions {
    Tensor start;
    Tensor end;
};

/// Distributions produced for one example. Unused members stay undefined.
struct TaskOutputs {
    Tensor p_start;
    Tensor p_end;
    Tensor p_na;   ///< scalar
    Tensor p_option;
};

class RcModel {
public:
    RcModel() = default;
    RcModel(ModelConfig config, ModelParams params) : config_(std::move(config)), params_(std::move(params)) {}

    /// Seeded uniform(-init_range, init_range) initialization; layer-norm gains start at 1 and
    /// layer-norm biases at 0.
    static RcModel initialize(const ModelConfig& config)
    {
        config.validate();
        Rng rng(config.seed);
        const std::size_t h = config.hidden_dim;
        const std::size_t ffn = 2 * h;
        auto u = [&](Shape shape) { return Tensor::uniform(std::move(shape), -config.init_range, config.init_range, rng, true); };
        auto ones = [](std::size_t n) { return Tensor::filled({n}, 1.0, true); };
        auto zeros = [](std::size_t n) { return Tensor::zeros({n}, true); };

        ModelParams p;
        p.token_embedding = u({config.vocab_size, h});
        p.position_embedding = u({config.max_seq_len, h});
        p.segment_embedding = u({2, h});
        p.embed_ln_gain = ones(h);
        p.embed_ln_bias = zeros(h);
        for (std::size_t i = 0; i < config.num_encoder_blocks; ++i) {
            EncoderBlockParams b;
            b.wq = u({h, h});
            b.bq = u({h});
            b.wk = u({h, h});
            b.bk = u({h});
            b.wv = u({h, h});
            b.bv = u({h});
            b.wo = u({h, h});
            b.bo = u({h});
            b.ln1_gain = ones(h);
            b.ln1_bias = zeros(h);
            b.w1 = u({h, ffn});
            b.b1 = u({ffn});
            b.w2 = u({ffn, h});
            b.b2 = u({h});
            b.ln2_gain = ones(h);
            b.ln2_bias = zeros(h);
            p.blocks.push_back(std::move(b));
        }
        p.pooler_w = u({h, h});
        p.pooler_b = u({h});
        p.span_start_w = u({h});
        p.span_end_w = u({h});
        p.na_w = u({h});
        p.na_b = Tensor(Shape{}, {rng.uniform(-config.init_range, config.init_range)}, true);
        p.option_w = u({h, 1});
        p.option_b = u({1});
        return {config, std::move(p)};
    }

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    [[nodiscard]] const ModelParams& params() const noexcept { return params_; }
    [[nodiscard]] ModelParams& params() noexcept { return params_; }

    /// Deep copy with independent parameter storage.
    [[nodiscard]] RcModel clone() const { return {config_, params_.clone()}; }

    /// Token embedding rows, the tensor adversarial perturbations are added to.
    Tensor token_embeddings(Tape& tape, std::span<const int> tokens) const
    {
        require(!tokens.empty(), ErrorKind::SequenceTooLong, "empty token sequence");
        if (!(tokens.size() <= config_.max_seq_len)) {
            fail(ErrorKind::SequenceTooLong, "sequence of " + std::to_string(tokens.size()) + " tokens exceeds " + std::to_string(config_.max_seq_len));
        }
        for (int t : tokens) {
            if (!(t >= 0 && static_cast<std::size_t>(t) < config_.vocab_size)) {
                fail(ErrorKind::TokenOutOfVocab, "token id " + std::to_string(t));
            }
        }
        return tape.embedding_lookup(params_.token_embedding, tokens);
    }

    /// Adds position and segment embeddings to (possibly perturbed) token rows and
    /// layer-normalizes. `positions` defaults to 0..l-1.
    Tensor finish_embedding(Tape& tape, const Tensor& token_rows, std::span<const int> segments,
                            std::span<const int> positions = {}) const
    {
        if (!(token_rows.rank() == 2 && token_rows.dim(1) == config_.hidden_dim)) {
            fail(ErrorKind::ShapeMismatch, "token embeddings must be l x " + std::to_string(config_.hidden_dim));
        }
        const std::size_t l = token_rows.dim(0);
        require(l >= 1 && l <= config_.max_seq_len, ErrorKind::SequenceTooLong, "sequence length out of range");
        require(segments.size() == l, ErrorKind::ShapeMismatch, "segment ids length differs from tokens");
        for (int s : segments) {
            require(s == 0 || s == 1, ErrorKind::IndexOutOfRange, "segment id must be 0 or 1");
        }
        std::vector<int> pos;
        if (positions.empty()) {
            pos.resize(l);
            for (std::size_t i = 0; i < pos.size(); ++i) {
                pos[i] = static_cast<int>(i);
            }
        } else {
            require(positions.size() == l, ErrorKind::ShapeMismatch, "position ids length differs");
            pos.assign(positions.begin(), positions.end());
        }
        Tensor sum = tape.add(token_rows, tape.embedding_lookup(params_.position_embedding, pos));
        sum = tape.add(sum, tape.embedding_lookup(params_.segment_embedding, segments));
        return tape.layer_norm(sum, params_.embed_ln_gain, params_.embed_ln_bias);
    }

    /// Sum of token, position and segment embeddings followed by layer normalization.
    Tensor embed(Tape& tape, std::span<const int> tokens, std::span<const int> segments,
                 std::span<const int> positions = {}) const
    {
        const Tensor rows = token_embeddings(tape, tokens);
        require(segments.size() == tokens.size(), ErrorKind::ShapeMismatch, "segment ids length differs from tokens");
        return finish_embedding(tape, rows, segments, positions);
    }

    /// Encoder stack over an l x h embedding; masked keys receive zero attention.
    Tensor encode(Tape& tape, const Tensor& x, std::span<const std::uint8_t> mask) const
    {
        if (!(x.rank() == 2 && x.dim(1) == config_.hidden_dim)) {
            fail(ErrorKind::ShapeMismatch, "encoder input must be l x " + std::to_string(config_.hidden_dim));
        }
        require(mask.size() == x.dim(0), ErrorKind::ShapeMismatch, "attention mask length differs from sequence");
        const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(config_.hidden_dim));
        Tensor hidden = x;
        for (const auto& b : params_.blocks) {
            Tensor q = tape.linear(hidden, b.wq, b.bq);
            Tensor k = tape.linear(hidden, b.wk, b.bk);
            Tensor v = tape.linear(hidden, b.wv, b.bv);
            Tensor scores = tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_h);
            Tensor attn = tape.softmax(scores, mask);
            Tensor mixed = tape.linear(tape.matmul(attn, v), b.wo, b.bo);
            hidden = tape.layer_norm(tape.add(hidden, mixed), b.ln1_gain, b.ln1_bias);
            Tensor ff = tape.linear(tape.relu(tape.linear(hidden, b.w1, b.b1)), b.w2, b.b2);
            hidden = tape.layer_norm(tape.add(hidden, ff), b.ln2_gain, b.ln2_bias);
        }
        return hidden;
    }

    /// tanh(affine(first row of H)).
    Tensor pool(Tape& tape, const Tensor& hidden) const
    {
        require(hidden.rank() == 2 && hidden.dim(1) == config_.hidden_dim, ErrorKind::ShapeMismatch,
                "pool expects l x h");
        Tensor first = tape.reshape(tape.slice(hidden, 0, 1), {config_.hidden_dim});
        return tape.tanh(tape.linear(first, params_.pooler_w, params_.pooler_b));
    }

    SpanDistributions span_head(Tape& tape, const Tensor& hidden, std::span<const std::uint8_t> valid) const
    {
        require(hidden.rank() == 2 && hidden.dim(1) == config_.hidden_dim, ErrorKind::ShapeMismatch,
                "span head expects l x h");
        require(valid.size() == hidden.dim(0), ErrorKind::ShapeMismatch, "span mask length differs from sequence");
        return {tape.softmax(tape.matmul(hidden, params_.span_start_w), valid),
                tape.softmax(tape.matmul(hidden, params_.span_end_w), valid)};
    }

    Tensor na_head(Tape& tape, const Tensor& pooled) const
    {
        require(pooled.rank() == 1 && pooled.dim(0) == config_.hidden_dim, ErrorKind::ShapeMismatch,
                "no-answer head expects a length-h vector");
        return tape.sigmoid(tape.add(tape.matmul(pooled, params_.na_w), params_.na_b));
    }

    Tensor mc_head(Tape& tape, std::span<const Tensor> pooled) const
    {
        require(pooled.size() >= 2, ErrorKind::TooFewOptions, "multiple choice needs at least two options");
        std::vector<Tensor> logits;
        logits.reserve(pooled.size());
        for (const Tensor& b : pooled) {
            require(b.rank() == 1 && b.dim(0) == config_.hidden_dim, ErrorKind::ShapeMismatch,
                    "option head expects length-h vectors");
            logits.push_back(tape.add(tape.matmul(b, params_.option_w), params_.option_b));
        }
        return tape.softmax(tape.concat(logits));
    }

    /// Everything after the token embedding lookup. `xs` holds the token rows of each
    /// packed sequence (one for span tasks, one per option for multiple choice).
    TaskOutputs forward_from_embeddings(Tape& tape, TaskKind task, std::span<const Tensor> xs,
                                        std::span<const EncodedInput> inputs) const
    {
        require(xs.size() == inputs.size() && !xs.empty(), ErrorKind::ShapeMismatch, "one embedding per input");
        TaskOutputs out;
        if (task == TaskKind::mc) {
            std::vector<Tensor> pooled;
            pooled.reserve(xs.size());
            for (std::size_t i = 0; i < xs.size(); ++i) {
                const Tensor x = finish_embedding(tape, xs[i], inputs[i].segments);
                pooled.push_back(pool(tape, encode(tape, x, inputs[i].attention_mask)));
            }
            out.p_option = mc_head(tape, pooled);
            return out;
        }
        require(xs.size() == 1, ErrorKind::ShapeMismatch, "span tasks take a single sequence");
        Tensor hidden = encode(tape, finish_embedding(tape, xs[0], inputs[0].segments), inputs[0].attention_mask);
        auto spans = span_head(tape, hidden, inputs[0].span_mask);
        out.p_start = spans.start;
        out.p_end = spans.end;
        if (task == TaskKind::seu) {
            out.p_na = na_head(tape, pool(tape, hidden));
        }
        return out;
    }

    /// Looks up the token rows of every input and stores them in its `x`.
    void embed_all(Tape& tape, std::span<EncodedInput> inputs) const
    {
        for (auto& in : inputs) {
            in.x = token_embeddings(tape, in.tokens);
        }
    }

private:
    ModelConfig config_;
    ModelParams params_;
};

} // namespace advreg
