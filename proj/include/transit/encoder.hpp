#pragma once

#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "transit/autodiff.hpp"
#include "transit/data.hpp"
#include "transit/gru.hpp"
#include "transit/rng.hpp"

namespace transit {

struct NamedParam {
    std::string name;
    Tensor* tensor;
};
using ParamList = std::vector<NamedParam>;

// Two-layer perceptron: in -> hid (tanh) -> 1.
struct Mlp {
    Tensor w1, b1, w2, b2;

    static Mlp init(std::size_t in, std::size_t hid, Rng& rng) {
        Mlp m;
        const double bound1 = 1.0 / std::sqrt(static_cast<double>(in));
        const double bound2 = 1.0 / std::sqrt(static_cast<double>(hid));
        m.w1 = Tensor::uniform({in, hid}, -bound1, bound1, rng);
        m.b1 = Tensor::zeros(1, hid);
        m.w2 = Tensor::uniform({hid, 1}, -bound2, bound2, rng);
        m.b2 = Tensor::zeros(1, 1);
        return m;
    }

    void collect(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + "/fc1/w", &w1});
        out.push_back({prefix + "/fc1/b", &b1});
        out.push_back({prefix + "/fc2/w", &w2});
        out.push_back({prefix + "/fc2/b", &b2});
    }
};

struct BoundMlp {
    ad::Var w1, b1, w2, b2;
};

inline BoundMlp bind_mlp(ad::Graph& g, const Mlp& m, bool requires_grad) {
    return BoundMlp{g.leaf(m.w1, requires_grad), g.leaf(m.b1, requires_grad),
                    g.leaf(m.w2, requires_grad), g.leaf(m.b2, requires_grad)};
}

// x {B,in} -> {B,1}, linear output
inline ad::Var mlp_forward(ad::Graph& g, const BoundMlp& m, ad::Var x) {
    ad::Var h = g.tanh(g.add_row(g.matmul(x, m.w1), m.b1));
    return g.add_row(g.matmul(h, m.w2), m.b2);
}

// One GRU per feature plus the projection that maps the stacked embedding
// matrix to the health representation.
struct McGruEncoder {
    std::size_t hidden = 0;  // per-channel hidden size H
    std::size_t rep = 0;     // representation size S
    std::vector<std::string> features;       // ordered, unique
    std::vector<GruChannelParams> channels;  // aligned with features
    Tensor w_proj;                           // {N*H, S}
    Tensor b_proj;                           // {1, S}

    static McGruEncoder init(std::vector<std::string> features, std::size_t hidden,
                             std::size_t rep, Rng& rng) {
        std::set<std::string> uniq(features.begin(), features.end());
        if (uniq.size() != features.size())
            throw DataError("encoder: duplicate feature names");
        if (features.empty()) throw ValueError("encoder: no features");
        McGruEncoder e;
        e.hidden = hidden;
        e.rep = rep;
        e.features = std::move(features);
        e.channels.reserve(e.features.size());
        for (std::size_t i = 0; i < e.features.size(); ++i)
            e.channels.push_back(GruChannelParams::init(hidden, rng));
        const std::size_t in = e.features.size() * hidden;
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        e.w_proj = Tensor::uniform({in, rep}, -bound, bound, rng);
        e.b_proj = Tensor::zeros(1, rep);
        return e;
    }

    std::size_t channel_index(const std::string& feature) const {
        for (std::size_t i = 0; i < features.size(); ++i)
            if (features[i] == feature) return i;
        throw DataError("encoder has no channel for feature '" + feature + "'");
    }

    void collect(const std::string& prefix, ParamList& out) {
        const std::string p = prefix.empty() ? "" : prefix + "/";
        for (std::size_t i = 0; i < features.size(); ++i) {
            const std::string base = p + "gru/" + features[i];
            GruChannelParams& c = channels[i];
            out.push_back({base + "/update/w", &c.w_update});
            out.push_back({base + "/update/u", &c.u_update});
            out.push_back({base + "/update/b", &c.b_update});
            out.push_back({base + "/reset/w", &c.w_reset});
            out.push_back({base + "/reset/u", &c.u_reset});
            out.push_back({base + "/reset/b", &c.b_reset});
            out.push_back({base + "/cand/w", &c.w_cand});
            out.push_back({base + "/cand/u", &c.u_cand});
            out.push_back({base + "/cand/b", &c.b_cand});
        }
        out.push_back({p + "proj/w", &w_proj});
        out.push_back({p + "proj/b", &b_proj});
    }
};

struct BoundEncoder {
    const McGruEncoder* encoder = nullptr;
    std::vector<BoundGruChannel> channels;
    ad::Var w_proj, b_proj;
};

inline BoundEncoder bind_encoder(ad::Graph& g, const McGruEncoder& e, bool requires_grad) {
    BoundEncoder b;
    b.encoder = &e;
    b.channels.reserve(e.channels.size());
    for (const auto& c : e.channels) b.channels.push_back(bind_channel(g, c, requires_grad));
    b.w_proj = g.leaf(e.w_proj, requires_grad);
    b.b_proj = g.leaf(e.b_proj, requires_grad);
    return b;
}

// Maps encoder channel order to dataset schema columns; built once per
// (encoder, dataset) pair. Throws naming the first feature the dataset lacks.
inline std::vector<std::size_t> feature_columns(const McGruEncoder& e,
                                                const FeatureSchema& schema) {
    std::vector<std::size_t> cols;
    cols.reserve(e.features.size());
    for (const auto& f : e.features) {
        auto idx = schema.index_of(f);
        if (!idx) throw DataError("record schema is missing feature '" + f + "'");
        cols.push_back(*idx);
    }
    return cols;
}

// Per-channel final hidden states for a group of equal-length records.
// Element i is {B,H} for channel i.
inline std::vector<ad::Var> encode_all_channels(ad::Graph& g, const BoundEncoder& b,
                                                std::span<const DenseRecord* const> group,
                                                const std::vector<std::size_t>& cols) {
    if (group.empty()) throw ValueError("encode_all_channels: empty group");
    const std::size_t H = b.encoder->hidden;
    std::vector<ad::Var> out;
    out.reserve(b.channels.size());
    std::vector<std::span<const double>> seqs(group.size());
    for (std::size_t c = 0; c < b.channels.size(); ++c) {
        for (std::size_t i = 0; i < group.size(); ++i)
            seqs[i] = std::span<const double>(group[i]->x[cols[c]]);
        out.push_back(encode_channel(g, b.channels[c], H,
                                     std::span<const std::span<const double>>(seqs)));
    }
    return out;
}

// Stacked feature embedding matrix F {N,H} for a single record; row i is
// channel i's final hidden state, looked up by feature name.
inline ad::Var build_embedding_matrix(ad::Graph& g, const BoundEncoder& b,
                                      const DenseRecord& rec, const FeatureSchema& schema) {
    const DenseRecord* one[] = {&rec};
    auto embeds = encode_all_channels(g, b, std::span<const DenseRecord* const>(one, 1),
                                      feature_columns(*b.encoder, schema));
    return g.concat_rows(std::span<const ad::Var>(embeds));
}

// s = flatten(F) * W1 + b1, flatten row-major. F is {N,H}, result {1,S}.
inline ad::Var project_health(ad::Graph& g, const BoundEncoder& b, ad::Var F) {
    const Tensor& f = g.val(F);
    const std::size_t want = b.encoder->features.size() * b.encoder->hidden;
    if (f.numel() != want)
        throw ShapeError(detail::msg("project_health: embedding ", shape_str(f.shape),
                                     " does not match encoder width ", want));
    return g.add_row(g.matmul(g.flatten(F), b.w_proj), b.b_proj);
}

// Batched projection from per-channel embeddings ({B,H} each, channel order).
// Column-concatenation equals row-major flattening of each sample's F.
inline ad::Var project_health_batch(ad::Graph& g, const BoundEncoder& b,
                                    std::span<const ad::Var> channel_embeds) {
    ad::Var flat = g.concat_cols(channel_embeds);
    return g.add_row(g.matmul(flat, b.w_proj), b.b_proj);
}

// Outcome head ends in a sigmoid; LOS head is linear.
struct PredictionHeads {
    Mlp outcome;
    Mlp los;

    static PredictionHeads init(std::size_t rep, Rng& rng) {
        const std::size_t hid = std::max<std::size_t>(1, rep / 2);
        PredictionHeads h;
        h.outcome = Mlp::init(rep, hid, rng);
        h.los = Mlp::init(rep, hid, rng);
        return h;
    }

    void collect(const std::string& prefix, ParamList& out) {
        const std::string p = prefix.empty() ? "" : prefix + "/";
        outcome.collect(p + "head_outcome", out);
        los.collect(p + "head_los", out);
    }
};

struct BoundHeads {
    BoundMlp outcome, los;
};

inline BoundHeads bind_heads(ad::Graph& g, const PredictionHeads& h, bool requires_grad) {
    return BoundHeads{bind_mlp(g, h.outcome, requires_grad), bind_mlp(g, h.los, requires_grad)};
}

struct Predictions {
    ad::Var p_outcome;  // {B,1} in (0,1)
    ad::Var los;        // {B,1}
};

inline Predictions predict(ad::Graph& g, const BoundHeads& h, ad::Var s) {
    return Predictions{g.sigmoid(mlp_forward(g, h.outcome, s)), mlp_forward(g, h.los, s)};
}

}  // namespace transit
