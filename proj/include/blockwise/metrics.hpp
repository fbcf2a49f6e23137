#pragma once

#include <climits>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "blockwise/common.hpp"
#include "blockwise/conversation.hpp"

namespace blockwise {

// Inter-rater reliability and score-agreement metrics. All pure functions;
// identical inputs give bit-identical outputs.

/// 100 x (exact matches) / length.
inline double percentage_agreement(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || a.size() != b.size())
        throw DomainError("percentage_agreement: need equal-length non-empty rating vectors");
    size_t matches = 0;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] == b[i]) ++matches;
    return 100.0 * static_cast<double>(matches) / static_cast<double>(a.size());
}

/// Quadratic weighted Cohen's kappa over an integer category range
/// [0, categories). kappa = 1 - sum(w*O) / sum(w*E) with w_ij = (i-j)^2,
/// O the observed joint proportions and E the outer product of the two
/// raters' marginals. Computed from integer counts with a single final
/// division, so perfect agreement yields exactly 1.0. When the denominator
/// is zero (both raters constant on one category, hence full agreement)
/// kappa is 1 by convention.
inline double quadratic_weighted_kappa(const std::vector<int>& a, const std::vector<int>& b,
                                       int categories = 6) {
    if (a.empty() || a.size() != b.size())
        throw DomainError("quadratic_weighted_kappa: need equal-length non-empty rating vectors");
    const size_t n = a.size();
    const size_t c = static_cast<size_t>(categories);
    std::vector<std::vector<std::uint64_t>> observed(c, std::vector<std::uint64_t>(c, 0));
    std::vector<std::uint64_t> row(c, 0), col(c, 0);
    for (size_t k = 0; k < n; ++k) {
        if (a[k] < 0 || a[k] >= categories || b[k] < 0 || b[k] >= categories)
            throw DomainError("quadratic_weighted_kappa: rating outside categories 0.." +
                              std::to_string(categories - 1));
        observed[static_cast<size_t>(a[k])][static_cast<size_t>(b[k])]++;
        row[static_cast<size_t>(a[k])]++;
        col[static_cast<size_t>(b[k])]++;
    }
    // With O_ij = c_ij/n and E_ij = row_i*col_j/n^2:
    //   sum(wO)/sum(wE) = n * sum(w*c_ij) / sum(w*row_i*col_j)
    std::uint64_t num = 0;
    std::uint64_t den = 0;
    for (size_t i = 0; i < c; ++i) {
        for (size_t j = 0; j < c; ++j) {
            std::uint64_t w = static_cast<std::uint64_t>((i > j ? i - j : j - i) *
                                                         (i > j ? i - j : j - i));
            num += w * observed[i][j];
            den += w * row[i] * col[j];
        }
    }
    if (den == 0) return 1.0;
    return 1.0 - static_cast<double>(n) * static_cast<double>(num) / static_cast<double>(den);
}

struct DovReport {
    double grammar = 0.0;
    double vocabulary = 0.0;
    double ic = 0.0;
    double average = 0.0;
};

/// Mean absolute deviation between predictions and consensus, per dimension;
/// the average is the unweighted mean of the three per-dimension values.
inline DovReport degree_of_variation(const std::vector<DimensionScores>& predictions,
                                     const std::vector<DimensionScores>& consensus) {
    if (predictions.empty() || predictions.size() != consensus.size())
        throw DomainError("degree_of_variation: need aligned non-empty score vectors");
    DovReport r;
    for (size_t i = 0; i < predictions.size(); ++i) {
        r.grammar += std::abs(predictions[i].grammar - consensus[i].grammar);
        r.vocabulary += std::abs(predictions[i].vocabulary - consensus[i].vocabulary);
        r.ic += std::abs(predictions[i].ic - consensus[i].ic);
    }
    double n = static_cast<double>(predictions.size());
    r.grammar /= n;
    r.vocabulary /= n;
    r.ic /= n;
    r.average = (r.grammar + r.vocabulary + r.ic) / 3.0;
    return r;
}

/// Per conversation, each method's distance is the L1 distance over the
/// three dimensions to consensus; every method attaining the minimum gets
/// credit, so rates can sum above 100 under ties.
inline std::map<std::string, double> closest_match_rate(
    const std::map<std::string, std::vector<DimensionScores>>& runs,
    const std::vector<DimensionScores>& consensus) {
    if (runs.size() < 2) throw DomainError("closest_match_rate: need at least 2 methods");
    if (consensus.empty()) throw DomainError("closest_match_rate: empty consensus");
    for (const auto& [name, preds] : runs)
        if (preds.size() != consensus.size())
            throw DomainError("closest_match_rate: method '" + name +
                              "' not aligned with consensus");

    std::map<std::string, size_t> credits;
    for (const auto& [name, preds] : runs) credits[name] = 0;
    for (size_t i = 0; i < consensus.size(); ++i) {
        int best = INT_MAX;
        for (const auto& [name, preds] : runs)
            best = std::min(best, preds[i].l1_distance(consensus[i]));
        for (const auto& [name, preds] : runs)
            if (preds[i].l1_distance(consensus[i]) == best) credits[name]++;
    }
    std::map<std::string, double> rates;
    for (const auto& [name, credit] : credits)
        rates[name] = 100.0 * static_cast<double>(credit) / static_cast<double>(consensus.size());
    return rates;
}

struct RecommendationPrediction {
    std::vector<GrammarSkillId> grammar;  // <= 2
    std::vector<VocabTopicId> vocab;      // <= 2
};

struct ExpertTargets {
    std::set<GrammarSkillId> grammar_top2;
    std::set<VocabTopicId> vocab_top2;
};

enum class AcceptabilityMode {
    per_item,   // unit = individual predicted id (default)
    exact_set,  // unit = conversation; credit only on exact set match
};

inline std::string acceptability_mode_name(AcceptabilityMode m) {
    return m == AcceptabilityMode::per_item ? "per_item" : "exact_set";
}

/// Fraction of predicted review targets appearing in the expert top-2 sets.
/// Conversations with zero predictions contribute nothing; with no
/// predictions at all the rate is undefined (nullopt).
inline std::optional<double> recommendation_acceptability(
    const std::vector<RecommendationPrediction>& predictions,
    const std::vector<ExpertTargets>& experts,
    AcceptabilityMode mode = AcceptabilityMode::per_item) {
    if (experts.empty()) throw DomainError("recommendation_acceptability: empty corpus");
    if (predictions.size() != experts.size())
        throw DomainError("recommendation_acceptability: predictions not aligned with corpus");

    if (mode == AcceptabilityMode::per_item) {
        size_t total = 0, acceptable = 0;
        for (size_t i = 0; i < experts.size(); ++i) {
            for (const auto& id : predictions[i].grammar) {
                ++total;
                if (experts[i].grammar_top2.count(id)) ++acceptable;
            }
            for (const auto& id : predictions[i].vocab) {
                ++total;
                if (experts[i].vocab_top2.count(id)) ++acceptable;
            }
        }
        if (total == 0) return std::nullopt;
        return 100.0 * static_cast<double>(acceptable) / static_cast<double>(total);
    }

    size_t total = 0, credited = 0;
    for (size_t i = 0; i < experts.size(); ++i) {
        if (predictions[i].grammar.empty() && predictions[i].vocab.empty()) continue;
        ++total;
        std::set<std::string> g(predictions[i].grammar.begin(), predictions[i].grammar.end());
        std::set<std::string> v(predictions[i].vocab.begin(), predictions[i].vocab.end());
        if (g == experts[i].grammar_top2 && v == experts[i].vocab_top2) ++credited;
    }
    if (total == 0) return std::nullopt;
    return 100.0 * static_cast<double>(credited) / static_cast<double>(total);
}

}  // namespace blockwise
