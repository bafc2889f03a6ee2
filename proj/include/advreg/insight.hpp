#pragma once

#include <advreg/dataset.hpp>
#include <advreg/error.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace advreg {

struct RareWordSet {
    std::set<std::string> words;
    std::string source;
    std::size_t k = 0;

    [[nodiscard]] bool contains(const std::string& w) const { return words.count(w) > 0; }
};

/// The k least frequent words of `tokens`, ties broken lexicographically.
inline RareWordSet rare_word_set(std::span<const std::string> tokens, std::size_t k, std::string source = {})
{
    require(!tokens.empty(), ErrorKind::EmptyCorpus, "rare words of an empty corpus");
    require(k >= 1, ErrorKind::InvalidConfig, "k must be >= 1");
    std::map<std::string, std::size_t> freq;
    for (const auto& t : tokens) {
        ++freq[t];
    }
    std::vector<std::pair<std::size_t, std::string>> order;
    order.reserve(freq.size());
    for (const auto& [w, n] : freq) {
        order.emplace_back(n, w);
    }
    std::sort(order.begin(), order.end());
    RareWordSet out;
    out.source = std::move(source);
    out.k = k;
    for (std::size_t i = 0; i < order.size() && i < k; ++i) {
        out.words.insert(order[i].second);
    }
    return out;
}

/// Training-corpus tokens for rare-word counting: every passage once plus every question.
inline std::vector<std::string> passage_question_tokens(const DatasetFile& file)
{
    std::vector<std::string> out;
    for (const auto& a : file.articles) {
        for (const auto& p : a.passages) {
            auto w = tokenize(p.context);
            out.insert(out.end(), w.begin(), w.end());
            for (const auto& q : p.questions) {
                auto qw = tokenize(q.text);
                out.insert(out.end(), qw.begin(), qw.end());
            }
        }
    }
    return out;
}

/// Fraction of passage + question word occurrences that are rare.
inline double difficulty(std::span<const std::string> passage, std::span<const std::string> question,
                         const RareWordSet& rare)
{
    const std::size_t total = passage.size() + question.size();
    require(total > 0, ErrorKind::EmptyExample, "difficulty of an example without words");
    std::size_t hits = 0;
    for (const auto& w : passage) {
        hits += rare.contains(w) ? 1 : 0;
    }
    for (const auto& w : question) {
        hits += rare.contains(w) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------- buckets

inline const std::vector<double> kDefaultBucketEdges{0.01, 0.02, 0.03, 0.05};

enum class Subset { all, answerable, unanswerable };

inline std::string to_string(Subset s)
{
    switch (s) {
    case Subset::all:
        return "all";
    case Subset::answerable:
        return "HA";
    case Subset::unanswerable:
        return "NA";
    }
    return "all";
}

inline constexpr std::array<Subset, 3> kSubsets{Subset::all, Subset::answerable, Subset::unanswerable};

/// One scored example: its difficulty and outcome.
struct ScoredExample {
    std::string id;
    double difficulty = 0.0;
    bool gold_na = false;
    double f1 = 0.0; ///< in [0, 1]
};

struct BucketStats {
    std::size_t count = 0;
    std::optional<double> f1; ///< mean F1 in percent; empty when the subset is empty
};

struct Bucket {
    double low = 0.0;
    double high = 1.0;
    std::map<Subset, BucketStats> stats;
};

struct BucketReport {
    std::vector<double> boundaries;
    std::vector<Bucket> buckets;

    [[nodiscard]] std::size_t total() const
    {
        std::size_t n = 0;
        for (const auto& b : buckets) {
            n += b.stats.at(Subset::all).count;
        }
        return n;
    }
};

inline void check_boundaries(std::span<const double> boundaries)
{
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
        require(std::isfinite(boundaries[i]), ErrorKind::UnsortedBoundaries, "bucket boundaries must be finite");
        require(i == 0 || boundaries[i - 1] < boundaries[i], ErrorKind::UnsortedBoundaries,
                "bucket boundaries must be strictly increasing");
    }
}

/// Half-open [low, high) buckets; the last one runs to 1 inclusive.
inline std::size_t bucket_index(double d, std::span<const double> boundaries)
{
    return static_cast<std::size_t>(std::upper_bound(boundaries.begin(), boundaries.end(), d) - boundaries.begin());
}

inline BucketReport bucketize(std::span<const ScoredExample> examples, std::span<const double> boundaries)
{
    check_boundaries(boundaries);
    BucketReport report;
    report.boundaries.assign(boundaries.begin(), boundaries.end());
    const std::size_t n = boundaries.size() + 1;
    std::vector<std::map<Subset, double>> sums(n);
    for (std::size_t i = 0; i < n; ++i) {
        Bucket b;
        b.low = i == 0 ? 0.0 : boundaries[i - 1];
        b.high = i == boundaries.size() ? 1.0 : boundaries[i];
        for (Subset s : kSubsets) {
            b.stats[s] = {};
            sums[i][s] = 0.0;
        }
        report.buckets.push_back(std::move(b));
    }
    for (const auto& ex : examples) {
        const std::size_t i = bucket_index(ex.difficulty, boundaries);
        for (Subset s : {Subset::all, ex.gold_na ? Subset::unanswerable : Subset::answerable}) {
            ++report.buckets[i].stats[s].count;
            sums[i][s] += ex.f1;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (Subset s : kSubsets) {
            auto& st = report.buckets[i].stats[s];
            if (st.count > 0) {
                st.f1 = 100.0 * sums[i][s] / static_cast<double>(st.count);
            }
        }
    }
    return report;
}

struct ImprovementRow {
    std::size_t bucket = 0;
    double low = 0.0;
    double high = 1.0;
    Subset subset = Subset::all;
    double base = 0.0;
    double other = 0.0;
    double relative = 0.0; ///< (other - base) / base
};

/// Per-bucket relative change from `base` to `other`. Subsets empty in either
/// report are left out.
inline std::vector<ImprovementRow> relative_improvement(const BucketReport& base, const BucketReport& other)
{
    require(base.boundaries == other.boundaries, ErrorKind::BoundaryMismatch, "reports use different buckets");
    std::vector<ImprovementRow> rows;
    for (std::size_t i = 0; i < base.buckets.size(); ++i) {
        for (Subset s : kSubsets) {
            const auto& a = base.buckets[i].stats.at(s).f1;
            const auto& b = other.buckets[i].stats.at(s).f1;
            if (!a || !b) {
                continue;
            }
            require(*a != 0.0, ErrorKind::DivisionByZeroMetric,
                    "baseline metric is zero in bucket " + std::to_string(i) + " (" + to_string(s) + ")");
            rows.push_back({i, base.buckets[i].low, base.buckets[i].high, s, *a, *b, (*b - *a) / *a});
        }
    }
    return rows;
}

// ---------------------------------------------------------------- output

inline nlohmann::ordered_json to_json(const BucketReport& report)
{
    nlohmann::ordered_json j;
    j["boundaries"] = report.boundaries;
    j["buckets"] = nlohmann::ordered_json::array();
    for (const auto& b : report.buckets) {
        nlohmann::ordered_json jb;
        jb["low"] = b.low;
        jb["high"] = b.high;
        for (Subset s : kSubsets) {
            const auto& st = b.stats.at(s);
            nlohmann::ordered_json js;
            js["count"] = st.count;
            js["f1"] = st.f1 ? nlohmann::ordered_json(*st.f1) : nlohmann::ordered_json(nullptr);
            jb[to_string(s)] = std::move(js);
        }
        j["buckets"].push_back(std::move(jb));
    }
    return j;
}

inline nlohmann::ordered_json to_json(const std::vector<ImprovementRow>& rows)
{
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        j.push_back({{"bucket", r.bucket},
                     {"low", r.low},
                     {"high", r.high},
                     {"subset", to_string(r.subset)},
                     {"base", r.base},
                     {"other", r.other},
                     {"relative", r.relative}});
    }
    return j;
}

inline std::string bucket_label(double low, double high)
{
    std::ostringstream os;
    os << low << "-" << high;
    return os.str();
}

/// bucket,subset,count,metric with an empty metric for empty subsets.
inline std::string to_csv(const BucketReport& report)
{
    std::ostringstream os;
    os << "bucket,subset,count,metric\n";
    for (const auto& b : report.buckets) {
        for (Subset s : kSubsets) {
            const auto& st = b.stats.at(s);
            os << bucket_label(b.low, b.high) << "," << to_string(s) << "," << st.count << ",";
            if (st.f1) {
                os << *st.f1;
            }
            os << "\n";
        }
    }
    return os.str();
}

inline std::string to_csv(const std::vector<ImprovementRow>& rows)
{
    std::ostringstream os;
    os << "bucket,subset,base,other,relative\n";
    for (const auto& r : rows) {
        os << bucket_label(r.low, r.high) << "," << to_string(r.subset) << "," << r.base << "," << r.other << ","
           << r.relative << "\n";
    }
    return os.str();
}

} // namespace advreg
