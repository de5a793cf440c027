#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "transit/data.hpp"
#include "transit/encoder.hpp"
#include "transit/rng.hpp"

namespace transit {

// Classic dynamic-time-warping distance with absolute-difference cost:
//   D(i,j) = |a_i - b_j| + min(D(i-1,j), D(i,j-1), D(i-1,j-1))
// Full window, no band; sequences here are short.
inline double dtw_distance(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw ValueError("dtw: empty sequence");
    const std::size_t n = a.size(), m = b.size();
    std::vector<double> prev(m), cur(m);
    for (std::size_t j = 0; j < m; ++j) {
        double cost = std::fabs(a[0] - b[j]);
        prev[j] = cost + (j ? prev[j - 1] : 0.0);
    }
    for (std::size_t i = 1; i < n; ++i) {
        cur[0] = std::fabs(a[i] - b[0]) + prev[0];
        for (std::size_t j = 1; j < m; ++j) {
            double best = prev[j];
            if (prev[j - 1] < best) best = prev[j - 1];
            if (cur[j - 1] < best) best = cur[j - 1];
            cur[j] = std::fabs(a[i] - b[j]) + best;
        }
        std::swap(prev, cur);
    }
    return prev[m - 1];
}

inline double dtw_distance(const std::vector<double>& a, const std::vector<double>& b) {
    return dtw_distance(std::span<const double>(a), std::span<const double>(b));
}

// Cohort-level curve DTW operates on: per-time-step mean of the z-scored
// per-patient sequences of one feature. Steps nobody observed are omitted.
struct RepresentativeSeries {
    std::string feature;
    std::vector<double> values;
    std::size_t support = 0;  // patients contributing
};

// `max_patients` caps the cohort by seeded subsampling; `max_len` caps the
// number of time steps. Values are normalized with `stats` before averaging.
inline RepresentativeSeries representative_series(const Dataset& ds, const NormStats& stats,
                                                  const std::string& feature,
                                                  std::size_t max_patients, std::size_t max_len,
                                                  std::uint64_t seed) {
    auto fidx = ds.schema.index_of(feature);
    if (!fidx) throw DataError("representative_series: feature '" + feature + "' not in schema");
    std::vector<std::size_t> holders;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        auto it = ds.records[i].obs.find(feature);
        if (it != ds.records[i].obs.end() && !it->second.empty()) holders.push_back(i);
    }
    if (holders.empty())
        throw DataError("representative_series: feature '" + feature + "' has no observations");
    if (holders.size() > max_patients) {
        Rng rng(seed);
        rng.shuffle(holders);
        holders.resize(max_patients);
        std::sort(holders.begin(), holders.end());  // keep dataset order for the means
    }
    const double mean = stats.mean[*fidx];
    const double inv = 1.0 / stats.stdev[*fidx];
    std::vector<double> sums;
    std::vector<std::size_t> counts;
    for (std::size_t ri : holders) {
        for (const auto& [t, v] : ds.records[ri].obs.at(feature)) {
            const std::size_t tt = static_cast<std::size_t>(t);
            if (tt >= max_len) continue;
            if (tt >= sums.size()) {
                sums.resize(tt + 1, 0.0);
                counts.resize(tt + 1, 0);
            }
            sums[tt] += (v - mean) * inv;
            ++counts[tt];
        }
    }
    RepresentativeSeries rs;
    rs.feature = feature;
    rs.support = holders.size();
    for (std::size_t t = 0; t < sums.size(); ++t)
        if (counts[t] > 0) rs.values.push_back(sums[t] / static_cast<double>(counts[t]));
    if (rs.values.empty())
        throw DataError("representative_series: feature '" + feature +
                        "' has no observations inside the length cap");
    return rs;
}

struct TransferEntry {
    std::string target_feature;
    std::string source_feature;
    double distance = 0.0;
    std::string tag;  // "shared" or "private"
};

// Target feature -> source feature, in target schema order. Shared features
// map to their namesake; target-private features map to the DTW-nearest
// source feature.
struct TransferMap {
    std::vector<TransferEntry> entries;

    const TransferEntry& at(const std::string& target_feature) const {
        for (const auto& e : entries)
            if (e.target_feature == target_feature) return e;
        throw DataError("transfer map has no entry for feature '" + target_feature + "'");
    }

    void validate(const std::vector<std::string>& target_features) const {
        if (entries.size() != target_features.size())
            throw DataError(detail::msg("transfer map covers ", entries.size(), " of ",
                                        target_features.size(), " target features"));
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].target_feature != target_features[i])
                throw DataError("transfer map order does not match target schema");
    }
};

// Argmin of dtw_distance over all source candidates; ties resolved by
// candidate order (first wins).
inline std::vector<TransferEntry> match_private_features(
    const std::vector<RepresentativeSeries>& target_privates,
    const std::vector<RepresentativeSeries>& source_features) {
    if (source_features.empty())
        throw ValueError("match_private_features: no source candidates");
    std::vector<TransferEntry> out;
    out.reserve(target_privates.size());
    for (const auto& tp : target_privates) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < source_features.size(); ++s) {
            double d = dtw_distance(tp.values, source_features[s].values);
            if (d < best_d) {
                best_d = d;
                best = s;
            }
        }
        out.push_back({tp.feature, source_features[best].feature, best_d, "private"});
    }
    return out;
}

struct TransferMapParams {
    std::size_t max_patients = 200;
    std::size_t max_len = 100;
    std::uint64_t seed = 0;
};

// Builds the full map for a source/target pair: representative series on
// both sides, namesake entries for shared features, DTW argmin for
// target-private ones. Source candidates are all source features.
inline TransferMap build_transfer_map(const Dataset& source, const NormStats& source_stats,
                                      const Dataset& target, const NormStats& target_stats,
                                      const SchemaAlignment& align,
                                      const TransferMapParams& params = {}) {
    std::vector<RepresentativeSeries> source_reps;
    source_reps.reserve(source.schema.size());
    for (std::size_t i = 0; i < source.schema.size(); ++i)
        source_reps.push_back(representative_series(source, source_stats,
                                                    source.schema.features[i],
                                                    params.max_patients, params.max_len,
                                                    params.seed + i));
    std::map<std::string, const RepresentativeSeries*> source_by_name;
    for (const auto& r : source_reps) source_by_name[r.feature] = &r;

    std::set<std::string> shared_set(align.shared.begin(), align.shared.end());
    std::vector<RepresentativeSeries> target_private_reps;
    std::map<std::string, RepresentativeSeries> target_reps;
    for (std::size_t i = 0; i < target.schema.size(); ++i) {
        const std::string& f = target.schema.features[i];
        RepresentativeSeries r = representative_series(target, target_stats, f,
                                                       params.max_patients, params.max_len,
                                                       params.seed + 7919 + i);
        if (!shared_set.count(f)) target_private_reps.push_back(r);
        target_reps[f] = std::move(r);
    }

    std::vector<TransferEntry> private_entries =
        match_private_features(target_private_reps, source_reps);
    std::map<std::string, TransferEntry> private_by_name;
    for (auto& e : private_entries) private_by_name[e.target_feature] = e;

    TransferMap map;
    for (const auto& f : target.schema.features) {
        if (shared_set.count(f)) {
            const RepresentativeSeries* src = source_by_name.at(f);
            map.entries.push_back(
                {f, f, dtw_distance(target_reps.at(f).values, src->values), "shared"});
        } else {
            map.entries.push_back(private_by_name.at(f));
        }
    }
    return map;
}

// Initializes a target encoder from a trained one: every channel is a deep
// copy of the mapped source channel, so no channel starts from random
// weights. The projection and any heads are freshly initialized (widths
// differ between the two sides in general).
inline McGruEncoder transfer_parameters(const McGruEncoder& trained, const TransferMap& map,
                                        const std::vector<std::string>& target_features,
                                        std::size_t rep, Rng& init_rng) {
    map.validate(target_features);
    McGruEncoder out;
    out.hidden = trained.hidden;
    out.rep = rep;
    out.features = target_features;
    out.channels.reserve(target_features.size());
    for (const auto& f : target_features) {
        const TransferEntry& e = map.at(f);
        bool found = false;
        for (std::size_t i = 0; i < trained.features.size(); ++i) {
            if (trained.features[i] == e.source_feature) {
                out.channels.push_back(trained.channels[i]);  // deep copy (value semantics)
                found = true;
                break;
            }
        }
        if (!found)
            throw DataError("transfer: trained encoder has no channel for source feature '" +
                            e.source_feature + "'");
    }
    const std::size_t in = target_features.size() * trained.hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    out.w_proj = Tensor::uniform({in, rep}, -bound, bound, init_rng);
    out.b_proj = Tensor::zeros(1, rep);
    return out;
}

}  // namespace transit
