#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "transit/common.hpp"

namespace transit {

enum class Role { Shared, Private };

// Ordered feature names of one dataset. Role tags are filled in by
// align_schemas when two datasets are paired.
struct FeatureSchema {
    std::vector<std::string> features;          // canonical names, unique
    std::vector<Role> roles;                    // empty, or one per feature

    std::size_t size() const { return features.size(); }

    std::size_t shared_count() const {
        std::size_t n = 0;
        for (Role r : roles)
            if (r == Role::Shared) ++n;
        return n;
    }

    std::optional<std::size_t> index_of(const std::string& name) const {
        for (std::size_t i = 0; i < features.size(); ++i)
            if (features[i] == name) return i;
        return std::nullopt;
    }

    void validate() const {
        std::set<std::string> seen;
        for (const auto& f : features) {
            if (f.empty()) throw DataError("schema: empty feature name");
            if (!seen.insert(f).second) throw DataError("schema: duplicate feature '" + f + "'");
        }
        if (!roles.empty() && roles.size() != features.size())
            throw DataError("schema: role tags do not cover all features");
    }
};

// One admission: per-feature observation sequences plus the two labels.
struct PatientRecord {
    std::string id;
    // feature -> (time index, value), time strictly increasing
    std::map<std::string, std::vector<std::pair<int, double>>> obs;
    int y_outcome = 0;   // 1 = death
    double y_los = 0.0;  // days

    bool has_observations() const {
        for (const auto& [_, seq] : obs)
            if (!seq.empty()) return true;
        return false;
    }
};

struct NormStats {
    std::vector<double> mean;   // aligned with schema order
    std::vector<double> stdev;  // floored at 1e-6
};

struct Dataset {
    FeatureSchema schema;
    std::vector<PatientRecord> records;

    const PatientRecord* find(const std::string& id) const {
        for (const auto& r : records)
            if (r.id == id) return &r;
        return nullptr;
    }
};

// Imputed, z-scored view used by the models: every record holds a dense
// feature-by-time matrix on the grid 0..T-1.
struct DenseRecord {
    std::string id;
    std::size_t t_len = 0;
    std::vector<std::vector<double>> x;  // schema order, each of length t_len
    int y_outcome = 0;
    double y_los = 0.0;
};

struct ImputeReport {
    // feature -> number of patients where it was entirely unobserved
    std::map<std::string, std::size_t> all_missing;
};

struct DenseDataset {
    FeatureSchema schema;
    std::vector<DenseRecord> records;
    NormStats stats;
    ImputeReport report;
};

// --- CSV / JSON ingestion ----------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, const std::string& file, std::size_t line_no) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw DataError(msg(file, ":", line_no, ": malformed numeric value '", s, "'"));
    return v;
}

inline long parse_long(const std::string& s, const std::string& file, std::size_t line_no) {
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw DataError(msg(file, ":", line_no, ": malformed integer value '", s, "'"));
    return v;
}

}  // namespace detail

inline FeatureSchema load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open schema file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError(detail::msg("schema file ", path, ": invalid JSON: ", e.what()));
    }
    if (!j.contains("features") || !j["features"].is_array())
        throw DataError("schema file " + path + ": missing 'features' array");
    FeatureSchema s;
    for (const auto& f : j["features"]) {
        if (!f.is_string()) throw DataError("schema file " + path + ": non-string feature name");
        s.features.push_back(canonical_feature_name(f.get<std::string>()));
    }
    s.validate();
    return s;
}

inline void save_schema(const FeatureSchema& schema, const std::string& path) {
    nlohmann::json j;
    j["features"] = schema.features;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write schema file: " + path);
    out << j.dump(2) << "\n";
}

// Long-format ingestion. Observations CSV: patient_id,time_index,feature,value.
// Outcomes CSV: patient_id,outcome,los. Every observed patient must have an
// outcomes row.
inline Dataset load_dataset(const std::string& obs_path, const std::string& outcomes_path,
                            const std::string& schema_path) {
    Dataset ds;
    ds.schema = load_schema(schema_path);

    std::ifstream obs(obs_path);
    if (!obs) throw DataError("cannot open observations file: " + obs_path);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(obs, line)) throw DataError("observations file is empty: " + obs_path);
    ++line_no;
    if (detail::split_csv_line(line) !=
        std::vector<std::string>{"patient_id", "time_index", "feature", "value"})
        throw DataError(detail::msg(obs_path, ":1: expected header "
                                              "'patient_id,time_index,feature,value'"));

    std::map<std::string, std::size_t> index_of;  // patient id -> record index
    std::set<std::tuple<std::string, int, std::string>> seen;
    std::size_t data_rows = 0;
    while (std::getline(obs, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != 4)
            throw DataError(detail::msg(obs_path, ":", line_no, ": expected 4 fields, got ",
                                        cells.size()));
        const std::string& pid = cells[0];
        long t = detail::parse_long(cells[1], obs_path, line_no);
        if (t < 0)
            throw DataError(detail::msg(obs_path, ":", line_no, ": negative time index ", t));
        std::string feature = canonical_feature_name(cells[2]);
        double value = detail::parse_double(cells[3], obs_path, line_no);
        if (!std::isfinite(value))
            throw DataError(detail::msg(obs_path, ":", line_no, ": non-finite value"));
        if (!ds.schema.index_of(feature))
            throw DataError(detail::msg(obs_path, ":", line_no, ": feature '", feature,
                                        "' not in schema"));
        if (!seen.insert({pid, static_cast<int>(t), feature}).second)
            throw DataError(detail::msg(obs_path, ":", line_no, ": duplicate observation (",
                                        pid, ", ", t, ", ", feature, ")"));
        auto [it, inserted] = index_of.try_emplace(pid, ds.records.size());
        if (inserted) {
            ds.records.emplace_back();
            ds.records.back().id = pid;
        }
        ds.records[it->second].obs[feature].push_back({static_cast<int>(t), value});
        ++data_rows;
    }
    if (data_rows == 0) throw DataError("empty dataset: no observation rows in " + obs_path);
    for (auto& rec : ds.records)
        for (auto& [_, seq] : rec.obs)
            std::sort(seq.begin(), seq.end());

    std::ifstream outc(outcomes_path);
    if (!outc) throw DataError("cannot open outcomes file: " + outcomes_path);
    line_no = 0;
    if (!std::getline(outc, line)) throw DataError("outcomes file is empty: " + outcomes_path);
    ++line_no;
    if (detail::split_csv_line(line) != std::vector<std::string>{"patient_id", "outcome", "los"})
        throw DataError(detail::msg(outcomes_path, ":1: expected header 'patient_id,outcome,los'"));
    std::map<std::string, std::pair<int, double>> labels;
    while (std::getline(outc, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != 3)
            throw DataError(detail::msg(outcomes_path, ":", line_no, ": expected 3 fields, got ",
                                        cells.size()));
        long outcome = detail::parse_long(cells[1], outcomes_path, line_no);
        if (outcome != 0 && outcome != 1)
            throw DataError(detail::msg(outcomes_path, ":", line_no, ": outcome must be 0 or 1"));
        double los = detail::parse_double(cells[2], outcomes_path, line_no);
        if (!(los >= 0.0))
            throw DataError(detail::msg(outcomes_path, ":", line_no, ": los must be >= 0"));
        labels[cells[0]] = {static_cast<int>(outcome), los};
    }
    for (auto& rec : ds.records) {
        auto it = labels.find(rec.id);
        if (it == labels.end())
            throw DataError("label missing for patient '" + rec.id + "' in " + outcomes_path);
        rec.y_outcome = it->second.first;
        rec.y_los = it->second.second;
    }
    return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& obs_path,
                         const std::string& outcomes_path, const std::string& schema_path) {
    save_schema(ds.schema, schema_path);
    std::ofstream obs(obs_path);
    if (!obs) throw DataError("cannot write observations file: " + obs_path);
    obs << "patient_id,time_index,feature,value\n";
    char buf[64];
    for (const auto& rec : ds.records) {
        for (const auto& [feature, seq] : rec.obs) {
            for (const auto& [t, v] : seq) {
                std::snprintf(buf, sizeof(buf), "%.17g", v);
                obs << rec.id << "," << t << "," << feature << "," << buf << "\n";
            }
        }
    }
    std::ofstream outc(outcomes_path);
    if (!outc) throw DataError("cannot write outcomes file: " + outcomes_path);
    outc << "patient_id,outcome,los\n";
    for (const auto& rec : ds.records) {
        std::snprintf(buf, sizeof(buf), "%.17g", rec.y_los);
        outc << rec.id << "," << rec.y_outcome << "," << buf << "\n";
    }
}

// --- normalization / imputation ----------------------------------------------

// Per-feature mean and population stdev over observed values of the given
// records (all records when `subset` is empty). Features never observed get
// mean 0, stdev 1.
inline NormStats compute_norm_stats(const Dataset& ds, const std::vector<std::size_t>& subset = {}) {
    const std::size_t n_feat = ds.schema.size();
    NormStats st;
    st.mean.assign(n_feat, 0.0);
    st.stdev.assign(n_feat, 1.0);
    std::vector<std::size_t> idx = subset;
    if (idx.empty())
        for (std::size_t i = 0; i < ds.records.size(); ++i) idx.push_back(i);
    for (std::size_t f = 0; f < n_feat; ++f) {
        const std::string& name = ds.schema.features[f];
        double sum = 0.0, sum2 = 0.0;
        std::size_t n = 0;
        for (std::size_t ri : idx) {
            auto it = ds.records[ri].obs.find(name);
            if (it == ds.records[ri].obs.end()) continue;
            for (const auto& [_, v] : it->second) {
                sum += v;
                sum2 += v * v;
                ++n;
            }
        }
        if (n == 0) continue;
        const double mean = sum / static_cast<double>(n);
        double var = sum2 / static_cast<double>(n) - mean * mean;
        if (var < 0.0) var = 0.0;
        st.mean[f] = mean;
        st.stdev[f] = std::max(std::sqrt(var), 1e-6);
    }
    return st;
}

// Forward-fill within each patient, fill remaining gaps with the stats mean,
// then z-score with the stats mean/stdev. Features with no observations at
// all for a patient come out as zeros and are counted in the report.
inline DenseDataset impute_and_normalize(const Dataset& ds, const NormStats& stats) {
    if (stats.mean.size() != ds.schema.size() || stats.stdev.size() != ds.schema.size())
        throw ShapeError("impute_and_normalize: stats do not match schema width");
    DenseDataset out;
    out.schema = ds.schema;
    out.stats = stats;
    out.records.reserve(ds.records.size());
    for (const auto& rec : ds.records) {
        int max_t = -1;
        for (const auto& [_, seq] : rec.obs)
            for (const auto& [t, __] : seq) max_t = std::max(max_t, t);
        if (max_t < 0)
            throw DataError("patient '" + rec.id + "' has no observations");
        DenseRecord d;
        d.id = rec.id;
        d.t_len = static_cast<std::size_t>(max_t) + 1;
        d.y_outcome = rec.y_outcome;
        d.y_los = rec.y_los;
        d.x.resize(ds.schema.size());
        for (std::size_t f = 0; f < ds.schema.size(); ++f) {
            const std::string& name = ds.schema.features[f];
            std::vector<double>& row = d.x[f];
            row.assign(d.t_len, stats.mean[f]);
            auto it = rec.obs.find(name);
            if (it == rec.obs.end() || it->second.empty()) {
                ++out.report.all_missing[name];
            } else {
                const auto& seq = it->second;
                std::size_t k = 0;
                double last = stats.mean[f];
                bool have_last = false;
                for (std::size_t t = 0; t < d.t_len; ++t) {
                    if (k < seq.size() && seq[k].first == static_cast<int>(t)) {
                        last = seq[k].second;
                        have_last = true;
                        ++k;
                    }
                    row[t] = have_last ? last : stats.mean[f];
                }
            }
            const double inv = 1.0 / stats.stdev[f];
            for (double& v : row) v = (v - stats.mean[f]) * inv;
        }
        out.records.push_back(std::move(d));
    }
    return out;
}

inline DenseDataset impute_and_normalize(const Dataset& ds, const Dataset& stats_source,
                                         const std::vector<std::size_t>& stats_subset = {}) {
    if (stats_source.records.empty())
        throw DataError("impute_and_normalize: stats source dataset is empty");
    return impute_and_normalize(ds, compute_norm_stats(stats_source, stats_subset));
}

// --- schema alignment ----------------------------------------------------------

struct SchemaAlignment {
    std::vector<std::string> shared;       // source order
    std::vector<std::string> src_private;  // source order
    std::vector<std::string> tar_private;  // target order
    bool empty_shared = false;
};

inline SchemaAlignment align_schemas(const FeatureSchema& src, const FeatureSchema& tar) {
    SchemaAlignment a;
    std::set<std::string> tar_set(tar.features.begin(), tar.features.end());
    std::set<std::string> src_set(src.features.begin(), src.features.end());
    for (const auto& f : src.features) {
        if (tar_set.count(f))
            a.shared.push_back(f);
        else
            a.src_private.push_back(f);
    }
    for (const auto& f : tar.features)
        if (!src_set.count(f)) a.tar_private.push_back(f);
    a.empty_shared = a.shared.empty();
    return a;
}

inline void apply_roles(FeatureSchema& schema, const std::vector<std::string>& shared) {
    std::set<std::string> shared_set(shared.begin(), shared.end());
    schema.roles.clear();
    schema.roles.reserve(schema.features.size());
    for (const auto& f : schema.features)
        schema.roles.push_back(shared_set.count(f) ? Role::Shared : Role::Private);
}

}  // namespace transit
