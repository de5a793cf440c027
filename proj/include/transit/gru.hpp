#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "transit/autodiff.hpp"
#include "transit/rng.hpp"
#include "transit/tensor.hpp"

namespace transit {

// Parameters of one univariate GRU channel. Gate convention:
//   z = sigmoid(W_z x + U_z h + b_z)
//   r = sigmoid(W_r x + U_r h + b_r)
//   hc = tanh(W_h x + U_h (r*h) + b_h)
//   h' = (1 - z) * h + z * hc
struct GruChannelParams {
    std::size_t hidden = 0;
    Tensor w_update, u_update, b_update;  // {1,H}, {H,H}, {1,H}
    Tensor w_reset, u_reset, b_reset;
    Tensor w_cand, u_cand, b_cand;

    static GruChannelParams init(std::size_t hidden, Rng& rng) {
        if (hidden == 0) throw ValueError("gru: hidden size must be positive");
        const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
        GruChannelParams p;
        p.hidden = hidden;
        p.w_update = Tensor::uniform({1, hidden}, -bound, bound, rng);
        p.u_update = Tensor::uniform({hidden, hidden}, -bound, bound, rng);
        p.b_update = Tensor::zeros(1, hidden);
        p.w_reset = Tensor::uniform({1, hidden}, -bound, bound, rng);
        p.u_reset = Tensor::uniform({hidden, hidden}, -bound, bound, rng);
        p.b_reset = Tensor::zeros(1, hidden);
        p.w_cand = Tensor::uniform({1, hidden}, -bound, bound, rng);
        p.u_cand = Tensor::uniform({hidden, hidden}, -bound, bound, rng);
        p.b_cand = Tensor::zeros(1, hidden);
        return p;
    }

    static GruChannelParams zeros(std::size_t hidden) {
        GruChannelParams p;
        p.hidden = hidden;
        p.w_update = Tensor::zeros(1, hidden);
        p.u_update = Tensor::zeros(hidden, hidden);
        p.b_update = Tensor::zeros(1, hidden);
        p.w_reset = Tensor::zeros(1, hidden);
        p.u_reset = Tensor::zeros(hidden, hidden);
        p.b_reset = Tensor::zeros(1, hidden);
        p.w_cand = Tensor::zeros(1, hidden);
        p.u_cand = Tensor::zeros(hidden, hidden);
        p.b_cand = Tensor::zeros(1, hidden);
        return p;
    }

    void check() const {
        auto expect = [&](const Tensor& t, std::size_t r, std::size_t c, const char* what) {
            if (t.rank() != 2 || t.shape[0] != r || t.shape[1] != c)
                throw ShapeError(detail::msg("gru channel ", what, ": expected {", r, ",", c,
                                             "}, got ", shape_str(t.shape)));
        };
        expect(w_update, 1, hidden, "w_update");
        expect(u_update, hidden, hidden, "u_update");
        expect(b_update, 1, hidden, "b_update");
        expect(w_reset, 1, hidden, "w_reset");
        expect(u_reset, hidden, hidden, "u_reset");
        expect(b_reset, 1, hidden, "b_reset");
        expect(w_cand, 1, hidden, "w_cand");
        expect(u_cand, hidden, hidden, "u_cand");
        expect(b_cand, 1, hidden, "b_cand");
    }
};

// Channel parameters bound as leaves of a graph.
struct BoundGruChannel {
    ad::Var w_update, u_update, b_update;
    ad::Var w_reset, u_reset, b_reset;
    ad::Var w_cand, u_cand, b_cand;
};

inline BoundGruChannel bind_channel(ad::Graph& g, const GruChannelParams& p, bool requires_grad) {
    p.check();
    BoundGruChannel b;
    b.w_update = g.leaf(p.w_update, requires_grad);
    b.u_update = g.leaf(p.u_update, requires_grad);
    b.b_update = g.leaf(p.b_update, requires_grad);
    b.w_reset = g.leaf(p.w_reset, requires_grad);
    b.u_reset = g.leaf(p.u_reset, requires_grad);
    b.b_reset = g.leaf(p.b_reset, requires_grad);
    b.w_cand = g.leaf(p.w_cand, requires_grad);
    b.u_cand = g.leaf(p.u_cand, requires_grad);
    b.b_cand = g.leaf(p.b_cand, requires_grad);
    return b;
}

// One recurrence step for a batch of B sequences. h_prev is {B,H}, x_col is
// the {B,1} column of per-sequence inputs at this time step.
inline ad::Var gru_step(ad::Graph& g, const BoundGruChannel& ch, ad::Var h_prev, ad::Var x_col) {
    const std::size_t B = g.val(h_prev).rows();
    if (g.val(x_col).rows() != B || g.val(x_col).cols() != 1)
        throw ShapeError(detail::msg("gru_step: input column must be {", B, ",1}, got ",
                                     shape_str(g.val(x_col).shape)));
    ad::Var z = g.sigmoid(
        g.add_row(g.add(g.matmul(x_col, ch.w_update), g.matmul(h_prev, ch.u_update)), ch.b_update));
    ad::Var r = g.sigmoid(
        g.add_row(g.add(g.matmul(x_col, ch.w_reset), g.matmul(h_prev, ch.u_reset)), ch.b_reset));
    ad::Var hc = g.tanh(g.add_row(
        g.add(g.matmul(x_col, ch.w_cand), g.matmul(g.mul(r, h_prev), ch.u_cand)), ch.b_cand));
    ad::Var keep = g.add_const(g.scale(z, -1.0), 1.0);  // 1 - z
    return g.add(g.mul(keep, h_prev), g.mul(z, hc));
}

// Single-sample step with a scalar input.
inline ad::Var gru_step(ad::Graph& g, const BoundGruChannel& ch, ad::Var h_prev, double x) {
    return gru_step(g, ch, h_prev, g.constant(Tensor::scalar(x)));
}

// Runs the channel over B equal-length sequences; returns the final hidden
// state {B,H}. h_0 is zero.
inline ad::Var encode_channel(ad::Graph& g, const BoundGruChannel& ch, std::size_t hidden,
                              std::span<const std::span<const double>> seqs) {
    if (seqs.empty()) throw ValueError("encode_channel: empty batch");
    const std::size_t B = seqs.size();
    const std::size_t T = seqs[0].size();
    if (T == 0) throw ValueError("encode_channel: empty sequence");
    for (const auto& s : seqs)
        if (s.size() != T)
            throw ShapeError(detail::msg("encode_channel: mixed sequence lengths ", T, " vs ",
                                         s.size()));
    ad::Var h = g.constant(Tensor({B, hidden}));
    for (std::size_t t = 0; t < T; ++t) {
        Tensor col({B, 1});
        for (std::size_t i = 0; i < B; ++i) col.data[i] = seqs[i][t];
        h = gru_step(g, ch, h, g.constant(std::move(col)));
    }
    return h;
}

// Single-sequence convenience; returns {1,H}.
inline ad::Var encode_channel(ad::Graph& g, const BoundGruChannel& ch, std::size_t hidden,
                              std::span<const double> seq) {
    std::span<const double> one[] = {seq};
    return encode_channel(g, ch, hidden, std::span<const std::span<const double>>(one, 1));
}

}  // namespace transit
