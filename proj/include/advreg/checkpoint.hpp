#pragma once

#include <advreg/dataset.hpp>
#include <advreg/error.hpp>
#include <advreg/model.hpp>
#include <advreg/vocab.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <optional>
#include <string>

namespace advreg {

inline constexpr const char* kCheckpointHeader = "advreg-ckpt-v1";

/// A trained model with its vocabulary and, for the answerability task, the
/// threshold chosen on dev.
struct Checkpoint {
    TaskKind task = TaskKind::seu;
    RcModel model;
    Vocabulary vocab;
    std::optional<double> threshold;
};

/// Header line followed by JSON. Doubles are written in shortest round-trip form
/// so save/load is exact and the bytes depend only on the values.
inline std::string serialize(const Checkpoint& ckpt)
{
    const auto& cfg = ckpt.model.config();
    nlohmann::ordered_json j;
    j["task"] = to_string(ckpt.task);
    j["config"] = {{"vocab_size", cfg.vocab_size},
                   {"hidden_dim", cfg.hidden_dim},
                   {"max_seq_len", cfg.max_seq_len},
                   {"encoder_blocks", cfg.num_encoder_blocks},
                   {"init_range", cfg.init_range},
                   {"seed", cfg.seed}};
    // Infinite thresholds are not representable in JSON.
    if (ckpt.threshold) {
        if (std::isfinite(*ckpt.threshold)) {
            j["threshold"] = *ckpt.threshold;
        } else {
            j["threshold"] = *ckpt.threshold > 0 ? "inf" : "-inf";
        }
    } else {
        j["threshold"] = nullptr;
    }
    j["vocab"] = ckpt.vocab.words();
    nlohmann::ordered_json params = nlohmann::ordered_json::object();
    for (const auto& [name, t] : ckpt.model.params().named()) {
        params[name] = {{"shape", t.shape()}, {"data", t.values()}};
    }
    j["params"] = std::move(params);
    return std::string(kCheckpointHeader) + "\n" + j.dump() + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text)
{
    const auto nl = text.find('\n');
    require(nl != std::string::npos && text.substr(0, nl) == kCheckpointHeader, ErrorKind::DataError,
            "not a checkpoint (bad header)");
    Checkpoint ckpt;
    try {
        const auto j = nlohmann::json::parse(text.substr(nl + 1));
        ckpt.task = parse_task_kind(j.at("task").get<std::string>());
        const auto& jc = j.at("config");
        ModelConfig cfg;
        cfg.vocab_size = jc.at("vocab_size").get<std::size_t>();
        cfg.hidden_dim = jc.at("hidden_dim").get<std::size_t>();
        cfg.max_seq_len = jc.at("max_seq_len").get<std::size_t>();
        cfg.num_encoder_blocks = jc.at("encoder_blocks").get<std::size_t>();
        cfg.init_range = jc.at("init_range").get<double>();
        cfg.seed = jc.at("seed").get<std::uint64_t>();
        cfg.validate();
        const auto& jt = j.at("threshold");
        if (jt.is_number()) {
            ckpt.threshold = jt.get<double>();
        } else if (jt.is_string()) {
            const auto s = jt.get<std::string>();
            require(s == "inf" || s == "-inf", ErrorKind::DataError, "bad threshold '" + s + "'");
            ckpt.threshold = s == "inf" ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        }
        ckpt.vocab = Vocabulary::from_list(j.at("vocab").get<std::vector<std::string>>());
        require(ckpt.vocab.size() == cfg.vocab_size, ErrorKind::DataError, "vocabulary size does not match the config");

        // Shapes come from a fresh initialization; the file must match them exactly.
        RcModel model = RcModel::initialize(cfg);
        const auto& jp = j.at("params");
        for (auto& [name, t] : model.params().named()) {
            require(jp.contains(name), ErrorKind::DataError, "checkpoint lacks parameter '" + name + "'");
            const auto shape = jp.at(name).at("shape").get<Shape>();
            require(shape == t.shape(), ErrorKind::DataError, "parameter '" + name + "' has the wrong shape");
            const auto data = jp.at(name).at("data").get<std::vector<double>>();
            require(data.size() == t.numel(), ErrorKind::DataError, "parameter '" + name + "' has the wrong size");
            auto dst = t.mutable_data();
            for (std::size_t i = 0; i < data.size(); ++i) {
                require(std::isfinite(data[i]), ErrorKind::NonFiniteValue, "parameter '" + name + "' is not finite");
                dst[i] = data[i];
            }
        }
        require(jp.size() == model.params().named().size(), ErrorKind::DataError, "checkpoint has unknown parameters");
        ckpt.model = std::move(model);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::DataError, std::string("malformed checkpoint: ") + e.what());
    }
    return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_text_file(path, serialize(ckpt)); }
inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_text_file(path)); }

} // namespace advreg
