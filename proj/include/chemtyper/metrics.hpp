#pragma once

#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chemtyper/common.hpp"
#include "chemtyper/ontology.hpp"

namespace chemtyper {

// Multi-label evaluation: Micro-F1 over pooled (sample, label) decisions and
// exact-set-match sample accuracy, plus per-type breakdowns.

using LabelSet = std::set<int>;

struct EvalCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

/// F1 from TP/FP/FN pooled over all (sample, label) pairs; 0 when the
/// denominator vanishes.
inline double micro_f1(const std::vector<LabelSet>& predictions,
                       const std::vector<LabelSet>& gold, EvalCounts* counts_out = nullptr) {
    if (predictions.size() != gold.size()) {
        throw ContractError("micro_f1: " + std::to_string(predictions.size()) +
                            " predictions vs " + std::to_string(gold.size()) + " gold sets");
    }
    EvalCounts c;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        for (int l : predictions[i]) {
            if (gold[i].count(l))
                ++c.tp;
            else
                ++c.fp;
        }
        for (int l : gold[i]) {
            if (!predictions[i].count(l)) ++c.fn;
        }
    }
    if (counts_out) *counts_out = c;
    const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
    return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / denom;
}

/// Fraction of samples whose predicted set equals gold exactly. The Jaccard
/// reading of "sample-average accuracy" sits behind a flag; exact match is
/// the default. Empty input is vacuously 1.0.
inline double sample_accuracy(const std::vector<LabelSet>& predictions,
                              const std::vector<LabelSet>& gold, bool jaccard = false) {
    if (predictions.size() != gold.size()) {
        throw ContractError("sample_accuracy: " + std::to_string(predictions.size()) +
                            " predictions vs " + std::to_string(gold.size()) + " gold sets");
    }
    if (predictions.empty()) {
        std::cerr << "[metrics] warning: sample_accuracy over zero samples is vacuous 1.0\n";
        return 1.0;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (jaccard) {
            std::size_t inter = 0;
            for (int l : predictions[i]) inter += gold[i].count(l);
            const std::size_t uni = predictions[i].size() + gold[i].size() - inter;
            total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        } else {
            total += predictions[i] == gold[i] ? 1.0 : 0.0;
        }
    }
    return total / static_cast<double>(predictions.size());
}

struct TypeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct EvalReport {
    double micro_f1 = 0.0;
    double sample_accuracy = 0.0;
    EvalCounts counts;
    std::map<std::string, TypeScore> per_type;

    nlohmann::json to_json() const {
        nlohmann::json types = nlohmann::json::object();
        for (const auto& [name, s] : per_type) {
            types[name] = {{"precision", s.precision},
                           {"recall", s.recall},
                           {"f1", s.f1},
                           {"support", s.support}};
        }
        return {{"micro_f1", micro_f1},
                {"accuracy", sample_accuracy},
                {"counts", {{"tp", counts.tp}, {"fp", counts.fp}, {"fn", counts.fn}}},
                {"per_type", types}};
    }

    /// Aligned plain-text table in the shape of a results table:
    /// Micro-F1 / Accuracy columns, then per-type rows.
    std::string to_table(const std::string& split_name = "eval") const {
        std::ostringstream os;
        os << std::left << std::setw(44) << "Split" << std::right << std::setw(10) << "Micro-F1"
           << std::setw(10) << "Accuracy" << '\n';
        os << std::string(64, '-') << '\n';
        os << std::left << std::setw(44) << split_name << std::right << std::fixed
           << std::setprecision(2) << std::setw(10) << 100.0 * micro_f1 << std::setw(10)
           << 100.0 * sample_accuracy << '\n';
        os << '\n'
           << std::left << std::setw(44) << "Type" << std::right << std::setw(7) << "P"
           << std::setw(7) << "R" << std::setw(7) << "F1" << std::setw(9) << "Support" << '\n';
        os << std::string(74, '-') << '\n';
        for (const auto& [name, s] : per_type) {
            os << std::left << std::setw(44) << name << std::right << std::setw(7)
               << 100.0 * s.precision << std::setw(7) << 100.0 * s.recall << std::setw(7)
               << 100.0 * s.f1 << std::setw(9) << s.support << '\n';
        }
        return os.str();
    }
};

inline EvalReport evaluate(const std::vector<LabelSet>& predictions,
                           const std::vector<LabelSet>& gold, const LabelSpace& space) {
    EvalReport report;
    report.micro_f1 = micro_f1(predictions, gold, &report.counts);
    report.sample_accuracy = sample_accuracy(predictions, gold);
    for (int t = 0; t < space.size(); ++t) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            const bool p = predictions[i].count(t) != 0;
            const bool g = gold[i].count(t) != 0;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
        }
        TypeScore s;
        s.support = tp + fn;
        s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
        s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
        s.f1 = s.precision + s.recall == 0.0
                   ? 0.0
                   : 2.0 * s.precision * s.recall / (s.precision + s.recall);
        report.per_type[space.types[static_cast<std::size_t>(t)].str()] = s;
    }
    return report;
}

}  // namespace chemtyper
