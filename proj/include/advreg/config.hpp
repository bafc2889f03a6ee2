#pragma once

#include <advreg/adversary.hpp>
#include <advreg/error.hpp>
#include <advreg/model.hpp>

#include <charconv>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace advreg {

/// Everything a training or evaluation run needs.
struct RunConfig {
    TaskKind task = TaskKind::seu;
    ModelConfig model;
    TrainRecipe recipe;
    std::string train_path;
    std::string dev_path;
    std::string unlabeled_path;
    std::string augmentation_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
};

using KeyValues = std::map<std::string, std::string>;

/// Parses "key = value" lines; '#' starts a comment, blank lines are skipped.
inline KeyValues parse_key_values(const std::string& text)
{
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) {
            return std::string();
        }
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.resize(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::InvalidConfig, "config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        require(!key.empty(), ErrorKind::InvalidConfig, "config line " + std::to_string(line_no) + ": empty key");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    fail(ErrorKind::InvalidConfig, key + ": expected a boolean, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v)
{
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    require(ec == std::errc() && ptr == v.data() + v.size(), ErrorKind::InvalidConfig,
            key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

inline double parse_double(const std::string& key, const std::string& v)
{
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        require(used == v.size() && std::isfinite(out), ErrorKind::InvalidConfig, key + ": expected a number, got '" + v + "'");
        return out;
    } catch (const std::logic_error&) {
        fail(ErrorKind::InvalidConfig, key + ": expected a number, got '" + v + "'");
    }
}

} // namespace detail

/// Every recognised key and how it writes into a RunConfig.
inline const std::map<std::string, std::function<void(RunConfig&, const std::string&, const std::string&)>>& config_keys()
{
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_uint;
    using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
    static const std::map<std::string, Setter> keys{
        {"task", [](RunConfig& c, const auto&, const auto& v) { c.task = parse_task_kind(v); }},
        {"seed", [](RunConfig& c, const auto& k, const auto& v) { c.seed = parse_uint(k, v); }},
        {"train", [](RunConfig& c, const auto&, const auto& v) { c.train_path = v; }},
        {"dev", [](RunConfig& c, const auto&, const auto& v) { c.dev_path = v; }},
        {"unlabeled", [](RunConfig& c, const auto&, const auto& v) { c.unlabeled_path = v; }},
        {"augmentation", [](RunConfig& c, const auto&, const auto& v) { c.augmentation_path = v; }},
        {"out", [](RunConfig& c, const auto&, const auto& v) { c.out_dir = v; }},
        {"hidden_dim", [](RunConfig& c, const auto& k, const auto& v) { c.model.hidden_dim = parse_uint(k, v); }},
        {"max_seq_len", [](RunConfig& c, const auto& k, const auto& v) { c.model.max_seq_len = parse_uint(k, v); }},
        {"encoder_blocks", [](RunConfig& c, const auto& k, const auto& v) { c.model.num_encoder_blocks = parse_uint(k, v); }},
        {"init_range", [](RunConfig& c, const auto& k, const auto& v) { c.model.init_range = parse_double(k, v); }},
        {"at", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.at = parse_bool(k, v); }},
        {"vat", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.vat = parse_bool(k, v); }},
        {"vat_unlabeled", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.vat_unlabeled = parse_bool(k, v); }},
        {"nel", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.nel = parse_bool(k, v); }},
        {"da", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.da = parse_bool(k, v); }},
        {"nel_placement",
         [](RunConfig& c, const auto& k, const auto& v) {
             require(v == "adversarial" || v == "clean", ErrorKind::InvalidConfig, k + ": expected adversarial or clean");
             c.recipe.nel_placement = v == "clean" ? NelPlacement::clean : NelPlacement::adversarial;
         }},
        {"batch_size", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.labeled_batch_size = parse_uint(k, v); }},
        {"unlabeled_batch_size",
         [](RunConfig& c, const auto& k, const auto& v) { c.recipe.unlabeled_batch_size = parse_uint(k, v); }},
        {"epochs", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.epochs = parse_uint(k, v); }},
        {"learning_rate", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.learning_rate = parse_double(k, v); }},
        {"max_answer_len", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.max_answer_len = parse_uint(k, v); }},
        {"epsilon", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.perturbation.epsilon = parse_double(k, v); }},
        {"xi", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.perturbation.xi = parse_double(k, v); }},
        {"weight_at", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.weights.at = parse_double(k, v); }},
        {"weight_vat", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.weights.vat = parse_double(k, v); }},
        {"weight_vat_unlabeled",
         [](RunConfig& c, const auto& k, const auto& v) { c.recipe.weights.vat_unlabeled = parse_double(k, v); }},
        {"weight_nel", [](RunConfig& c, const auto& k, const auto& v) { c.recipe.weights.nel = parse_double(k, v); }},
    };
    return keys;
}

/// Applies key/value pairs in order. Unknown keys are an error.
inline void apply(RunConfig& config, const KeyValues& values)
{
    const auto& keys = config_keys();
    for (const auto& [key, value] : values) {
        auto it = keys.find(key);
        require(it != keys.end(), ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
        it->second(config, key, value);
    }
}

/// Defaults, then the file, then the flag overrides. The seed feeds both the
/// model initialization and the training loop.
inline RunConfig resolve_config(const KeyValues& file, const KeyValues& flags)
{
    RunConfig config;
    apply(config, file);
    apply(config, flags);
    config.model.seed = config.seed;
    config.recipe.seed = config.seed;
    config.recipe.validate();
    return config;
}

/// Canonical key = value rendering, sorted by key.
inline std::string render_config(const RunConfig& c)
{
    std::ostringstream os;
    os.precision(17);
    auto b = [](bool v) { return v ? "true" : "false"; };
    KeyValues kv{
        {"task", to_string(c.task)},
        {"seed", std::to_string(c.seed)},
        {"train", c.train_path},
        {"dev", c.dev_path},
        {"unlabeled", c.unlabeled_path},
        {"augmentation", c.augmentation_path},
        {"out", c.out_dir},
        {"hidden_dim", std::to_string(c.model.hidden_dim)},
        {"max_seq_len", std::to_string(c.model.max_seq_len)},
        {"encoder_blocks", std::to_string(c.model.num_encoder_blocks)},
        {"at", b(c.recipe.at)},
        {"vat", b(c.recipe.vat)},
        {"vat_unlabeled", b(c.recipe.vat_unlabeled)},
        {"nel", b(c.recipe.nel)},
        {"da", b(c.recipe.da)},
        {"nel_placement", c.recipe.nel_placement == NelPlacement::clean ? "clean" : "adversarial"},
        {"batch_size", std::to_string(c.recipe.labeled_batch_size)},
        {"unlabeled_batch_size", std::to_string(c.recipe.unlabeled_batch_size)},
        {"epochs", std::to_string(c.recipe.epochs)},
        {"max_answer_len", std::to_string(c.recipe.max_answer_len)},
    };
    auto num = [](double v) {
        std::ostringstream s;
        s.precision(17);
        s << v;
        return s.str();
    };
    kv["init_range"] = num(c.model.init_range);
    kv["learning_rate"] = num(c.recipe.learning_rate);
    kv["epsilon"] = num(c.recipe.perturbation.epsilon);
    kv["xi"] = num(c.recipe.perturbation.xi);
    kv["weight_at"] = num(c.recipe.weights.at);
    kv["weight_vat"] = num(c.recipe.weights.vat);
    kv["weight_vat_unlabeled"] = num(c.recipe.weights.vat_unlabeled);
    kv["weight_nel"] = num(c.recipe.weights.nel);
    for (const auto& [k, v] : kv) {
        os << k << " = " << v << "\n";
    }
    return os.str();
}

} // namespace advreg
