#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "transit/checkpoint.hpp"
#include "transit/data.hpp"
#include "transit/encoder.hpp"
#include "transit/losses.hpp"

namespace transit {

enum class SourceTask { Regression, Classification };

// Groups records by sequence length so each group batches into one set of
// matrix ops. Order inside a group follows the input order.
inline std::vector<std::vector<const DenseRecord*>> group_by_length(
    std::span<const DenseRecord* const> records) {
    std::vector<std::vector<const DenseRecord*>> groups;
    std::map<std::size_t, std::size_t> index;
    for (const DenseRecord* r : records) {
        auto [it, inserted] = index.try_emplace(r->t_len, groups.size());
        if (inserted) groups.emplace_back();
        groups[it->second].push_back(r);
    }
    return groups;
}

inline std::vector<const DenseRecord*> record_ptrs(const DenseDataset& ds,
                                                   const std::vector<std::size_t>& idx) {
    std::vector<const DenseRecord*> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(&ds.records[i]);
    return out;
}

// Source-side model: encoder plus a single prediction head. The head output
// is linear; a sigmoid is applied at the loss for classification tasks.
struct TeacherModel {
    McGruEncoder encoder;
    Mlp head;
    SourceTask task = SourceTask::Regression;

    static TeacherModel init(const std::vector<std::string>& features, std::size_t hidden,
                             std::size_t rep, SourceTask task, Rng& rng) {
        TeacherModel m;
        m.encoder = McGruEncoder::init(features, hidden, rep, rng);
        m.head = Mlp::init(rep, std::max<std::size_t>(1, rep / 2), rng);
        m.task = task;
        return m;
    }

    ParamList params() {
        ParamList out;
        encoder.collect("", out);
        head.collect("head", out);
        return out;
    }

    double source_label(const DenseRecord& r) const {
        return task == SourceTask::Regression ? r.y_los : static_cast<double>(r.y_outcome);
    }
};

struct BoundTeacher {
    BoundEncoder encoder;
    BoundMlp head;
};

inline BoundTeacher bind_teacher(ad::Graph& g, const TeacherModel& m, bool requires_grad) {
    return BoundTeacher{bind_encoder(g, m.encoder, requires_grad),
                        bind_mlp(g, m.head, requires_grad)};
}

// Health representations s for a group of equal-length records; {B,S}.
inline ad::Var encode_group(ad::Graph& g, const BoundEncoder& be,
                            std::span<const DenseRecord* const> group,
                            const std::vector<std::size_t>& cols) {
    auto embeds = encode_all_channels(g, be, group, cols);
    return project_health_batch(g, be, std::span<const ad::Var>(embeds));
}

// Plain representations of many records, batched internally; row i matches
// records[i].
inline std::vector<std::vector<double>> representations(const McGruEncoder& enc,
                                                        std::span<const DenseRecord* const>
                                                            records,
                                                        const FeatureSchema& schema) {
    std::vector<std::vector<double>> out(records.size());
    std::map<const DenseRecord*, std::size_t> pos;
    for (std::size_t i = 0; i < records.size(); ++i) pos[records[i]] = i;
    const std::vector<std::size_t> cols = feature_columns(enc, schema);
    for (const auto& group : group_by_length(records)) {
        ad::Graph g;
        BoundEncoder be = bind_encoder(g, enc, false);
        ad::Var s = encode_group(g, be, group, cols);
        const Tensor& t = g.val(s);
        for (std::size_t i = 0; i < group.size(); ++i) {
            std::vector<double> row(t.cols());
            for (std::size_t j = 0; j < t.cols(); ++j) row[j] = t.at(i, j);
            out[pos.at(group[i])] = std::move(row);
        }
    }
    return out;
}

// Final model: shared encoder body with separate outcome and stay heads.
struct TargetModel {
    McGruEncoder encoder;
    PredictionHeads heads;

    static TargetModel init(const std::vector<std::string>& features, std::size_t hidden,
                            std::size_t rep, Rng& rng) {
        TargetModel m;
        m.encoder = McGruEncoder::init(features, hidden, rep, rng);
        m.heads = PredictionHeads::init(rep, rng);
        return m;
    }

    ParamList params() {
        ParamList out;
        encoder.collect("", out);
        heads.collect("", out);
        return out;
    }
};

// Dual-head predictions for a set of records, in record order.
struct TargetOutputs {
    std::vector<double> p_outcome;
    std::vector<double> los;
};

inline TargetOutputs predict_all(const TargetModel& model, const DenseDataset& ds,
                                 const std::vector<std::size_t>& idx) {
    std::vector<const DenseRecord*> recs = record_ptrs(ds, idx);
    TargetOutputs out;
    out.p_outcome.resize(recs.size());
    out.los.resize(recs.size());
    std::map<const DenseRecord*, std::size_t> pos;
    for (std::size_t i = 0; i < recs.size(); ++i) pos[recs[i]] = i;
    const std::vector<std::size_t> cols = feature_columns(model.encoder, ds.schema);
    for (const auto& group : group_by_length(recs)) {
        ad::Graph g;
        BoundEncoder be = bind_encoder(g, model.encoder, false);
        BoundHeads bh = bind_heads(g, model.heads, false);
        ad::Var s = encode_group(g, be, group, cols);
        Predictions p = predict(g, bh, s);
        for (std::size_t i = 0; i < group.size(); ++i) {
            out.p_outcome[pos.at(group[i])] = g.val(p.p_outcome).at(i, 0);
            out.los[pos.at(group[i])] = g.val(p.los).at(i, 0);
        }
    }
    return out;
}

// --- checkpoint glue -----------------------------------------------------------

inline std::map<std::string, Tensor> norm_tensors(const NormStats& stats) {
    std::map<std::string, Tensor> extra;
    const std::size_t nf = stats.mean.size();
    extra.emplace("norm/mean", Tensor({1, nf}, stats.mean));
    extra.emplace("norm/std", Tensor({1, nf}, stats.stdev));
    return extra;
}

inline NormStats norm_from_tensors(const std::map<std::string, Tensor>& loaded,
                                   const std::string& context) {
    auto mi = loaded.find("norm/mean");
    auto si = loaded.find("norm/std");
    if (mi == loaded.end() || si == loaded.end())
        throw CheckpointError(context + ": missing normalization tensors");
    return NormStats{mi->second.data, si->second.data};
}

// Infers the hidden/representation sizes a checkpoint was saved with.
inline std::pair<std::size_t, std::size_t> checkpoint_sizes(
    const std::map<std::string, Tensor>& loaded, const std::string& first_feature,
    const std::string& context) {
    auto u = loaded.find("gru/" + first_feature + "/update/u");
    auto w = loaded.find("proj/w");
    if (u == loaded.end() || w == loaded.end())
        throw CheckpointError(context + ": cannot infer model sizes");
    return {u->second.shape[0], w->second.shape[1]};
}

inline void save_teacher(const std::string& path, TeacherModel& model, const NormStats& stats) {
    save_params(path, model.params(), norm_tensors(stats));
}

inline TeacherModel load_teacher(const std::string& path,
                                 const std::vector<std::string>& features, SourceTask task,
                                 NormStats* stats_out = nullptr) {
    auto loaded = load_tensors(path);
    auto [hidden, rep] = checkpoint_sizes(loaded, features.at(0), "teacher checkpoint");
    Rng dummy(0);
    TeacherModel m = TeacherModel::init(features, hidden, rep, task, dummy);
    apply_tensors(loaded, m.params(), "teacher checkpoint");
    if (stats_out) *stats_out = norm_from_tensors(loaded, "teacher checkpoint");
    return m;
}

inline void save_target(const std::string& path, TargetModel& model, const NormStats& stats) {
    save_params(path, model.params(), norm_tensors(stats));
}

inline TargetModel load_target(const std::string& path, const std::vector<std::string>& features,
                               NormStats* stats_out = nullptr) {
    auto loaded = load_tensors(path);
    auto [hidden, rep] = checkpoint_sizes(loaded, features.at(0), "target checkpoint");
    Rng dummy(0);
    TargetModel m = TargetModel::init(features, hidden, rep, dummy);
    apply_tensors(loaded, m.params(), "target checkpoint");
    if (stats_out) *stats_out = norm_from_tensors(loaded, "target checkpoint");
    return m;
}

}  // namespace transit
