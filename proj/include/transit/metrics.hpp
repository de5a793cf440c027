#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "transit/common.hpp"
#include "transit/rng.hpp"

namespace transit {

// Mean squared error and mean absolute deviation of a regression.
inline std::pair<double, double> metric_mse_mad(const std::vector<double>& pred,
                                                const std::vector<double>& truth) {
    if (pred.size() != truth.size())
        throw ShapeError(detail::msg("metrics: ", pred.size(), " predictions vs ", truth.size(),
                                     " labels"));
    if (pred.empty()) throw ValueError("metrics: empty input");
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = truth[i] - pred[i];
        se += d * d;
        ae += std::fabs(d);
    }
    const double n = static_cast<double>(pred.size());
    return {se / n, ae / n};
}

// Area under the ROC curve via a threshold sweep over tie groups; equals
// P(score+ > score-) + 0.5 P(tie) exactly.
inline double metric_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ShapeError(detail::msg("auroc: ", scores.size(), " scores vs ", labels.size(),
                                     " labels"));
    std::size_t pos = 0, neg = 0;
    for (int l : labels) {
        if (l == 1)
            ++pos;
        else if (l == 0)
            ++neg;
        else
            throw ValueError(detail::msg("auroc: label ", l, " outside {0,1}"));
    }
    if (pos == 0 || neg == 0)
        throw ValueError("auroc: needs at least one positive and one negative label");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });
    double area2 = 0.0;  // accumulated in units of 2 * dFP * mean TP
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::size_t dtp = 0, dfp = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]] == 1)
                ++dtp;
            else
                ++dfp;
            ++j;
        }
        area2 += static_cast<double>(dfp) * static_cast<double>(2 * tp + dtp);
        tp += dtp;
        fp += dfp;
        i = j;
    }
    (void)fp;
    return area2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

// Patient-grouped cross-validation folds.
struct FoldPlan {
    std::size_t k = 0;
    std::vector<std::vector<std::string>> folds;  // patient ids per fold
    std::uint64_t seed = 0;

    void validate(std::size_t n_patients) const {
        std::set<std::string> seen;
        std::size_t total = 0, min_sz = SIZE_MAX, max_sz = 0;
        for (const auto& f : folds) {
            total += f.size();
            min_sz = std::min(min_sz, f.size());
            max_sz = std::max(max_sz, f.size());
            for (const auto& id : f)
                if (!seen.insert(id).second)
                    throw DataError("fold plan: patient '" + id + "' appears twice");
        }
        if (total != n_patients) throw DataError("fold plan: folds do not cover all patients");
        if (max_sz - min_sz > 1) throw DataError("fold plan: fold sizes differ by more than one");
    }
};

// Seeded shuffle then round-robin assignment; sizes differ by at most one.
inline FoldPlan kfold_split(std::vector<std::string> patient_ids, std::size_t k,
                            std::uint64_t seed) {
    if (k == 0) throw ValueError("kfold: k must be positive");
    if (patient_ids.size() < k)
        throw ValueError(detail::msg("kfold: ", patient_ids.size(), " patients for ", k,
                                     " folds"));
    std::set<std::string> uniq(patient_ids.begin(), patient_ids.end());
    if (uniq.size() != patient_ids.size()) throw DataError("kfold: duplicate patient ids");
    Rng rng(seed);
    rng.shuffle(patient_ids);
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.folds.resize(k);
    for (std::size_t i = 0; i < patient_ids.size(); ++i)
        plan.folds[i % k].push_back(std::move(patient_ids[i]));
    plan.validate(uniq.size());
    return plan;
}

}  // namespace transit
