#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "transit/autodiff.hpp"

namespace transit {

struct LossWeights {
    double alpha = 1.0;  // representation imitation
    double beta = 1.0;   // source prediction
    double gamma = 1.0;  // domain confusion

    void validate() const {
        if (alpha < 0 || beta < 0 || gamma < 0)
            throw ValueError("loss weights must be non-negative");
    }
};

inline constexpr double kProbClamp = 1e-12;

// Stable softmax of a plain vector. Mirrors Graph::softmax_rows exactly so
// that comparisons between tape and non-tape paths are bitwise.
inline std::vector<double> plain_softmax(const std::vector<double>& x) {
    if (x.empty()) throw ShapeError("softmax: empty row");
    std::vector<double> y = x;
    double mx = y[0];
    for (std::size_t j = 1; j < y.size(); ++j) mx = y[j] > mx ? y[j] : mx;
    double denom = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
        y[j] = std::exp(y[j] - mx);
        denom += y[j];
    }
    for (double& v : y) v /= denom;
    return y;
}

// (1/n) sum (pred - target)^2
inline ad::Var mse_loss(ad::Graph& g, ad::Var pred, ad::Var target) {
    ad::Var diff = g.sub(pred, target);
    return g.mean(g.mul(diff, diff));
}

inline ad::Var mse_loss(ad::Graph& g, ad::Var pred, const std::vector<double>& target) {
    return mse_loss(g, pred, g.constant(Tensor(g.val(pred).shape, target)));
}

// -(1/n) sum [y ln p + (1-y) ln(1-p)], p clamped to [1e-12, 1-1e-12]
inline ad::Var bce_loss(ad::Graph& g, ad::Var p, const std::vector<double>& y) {
    const Tensor& tp = g.val(p);
    if (tp.numel() != y.size())
        throw ShapeError(detail::msg("bce: ", y.size(), " labels for ", tp.numel(),
                                     " predictions"));
    for (double v : y)
        if (v != 0.0 && v != 1.0) throw ValueError("bce: labels must be 0 or 1");
    ad::Var pc = g.clamp(p, kProbClamp, 1.0 - kProbClamp);
    ad::Var one_minus = g.add_const(g.scale(pc, -1.0), 1.0);
    ad::Var y_leaf = g.constant(Tensor(tp.shape, y));
    ad::Var one_minus_y = g.add_const(g.scale(y_leaf, -1.0), 1.0);
    ad::Var ll = g.add(g.mul(y_leaf, g.log(pc)), g.mul(one_minus_y, g.log(one_minus)));
    return g.scale(g.mean(ll), -1.0);
}

// Mean of -ln softmax(logits)[label] over the batch; logits {B,C}.
inline ad::Var cross_entropy_loss(ad::Graph& g, ad::Var logits, const std::vector<int>& labels) {
    ad::Var probs = g.softmax_rows(logits);
    ad::Var safe = g.clamp(probs, kProbClamp, std::numeric_limits<double>::infinity());
    ad::Var picked = g.pick_per_row(g.log(safe), labels);
    return g.scale(g.mean(picked), -1.0);
}

// Domain classification loss over {B,2} logits; labels are 0 = source,
// 1 = target.
inline ad::Var domain_ce_loss(ad::Graph& g, ad::Var logits, const std::vector<int>& labels) {
    const Tensor& t = g.val(logits);
    if (t.rank() != 2 || t.shape[1] != 2)
        throw ShapeError("domain_ce: logits must be {B,2}, got " + shape_str(t.shape));
    return cross_entropy_loss(g, logits, labels);
}

// KL(P || Q) with P = softmax(teacher), a constant, and Q = softmax of the
// trainable representation clamped at 1e-12. Gradient flows only into
// `s_transition`. Representations are rows of equal width; the result is the
// SUM over rows (callers divide by the batch size).
inline ad::Var kl_rep_loss_rows(ad::Graph& g, const std::vector<std::vector<double>>& s_teacher,
                                ad::Var s_transition) {
    const Tensor& ts = g.val(s_transition);
    if (ts.rank() != 2 || ts.shape[0] != s_teacher.size())
        throw ShapeError(detail::msg("kl: ", s_teacher.size(), " teacher rows vs ",
                                     shape_str(ts.shape)));
    const std::size_t R = ts.shape[0], C = ts.shape[1];
    Tensor p_mat({R, C});
    double entropy_sum = 0.0;  // sum_i P_i ln P_i, zero contribution where P_i == 0
    for (std::size_t i = 0; i < R; ++i) {
        if (s_teacher[i].size() != C)
            throw ShapeError(detail::msg("kl: teacher row width ", s_teacher[i].size(),
                                         " vs representation width ", C));
        std::vector<double> p = plain_softmax(s_teacher[i]);
        for (std::size_t j = 0; j < C; ++j) {
            p_mat.data[i * C + j] = p[j];
            if (p[j] > 0.0) entropy_sum += p[j] * std::log(p[j]);
        }
    }
    ad::Var q = g.softmax_rows(s_transition);
    ad::Var lnq = g.log(g.clamp(q, kProbClamp, std::numeric_limits<double>::infinity()));
    ad::Var cross = g.sum(g.mul(g.constant(std::move(p_mat)), lnq));
    return g.add_const(g.scale(cross, -1.0), entropy_sum);
}

inline ad::Var kl_rep_loss(ad::Graph& g, const std::vector<double>& s_teacher,
                           ad::Var s_transition) {
    return kl_rep_loss_rows(g, {s_teacher}, s_transition);
}

// Reported composite for the second training stage. The -gamma term exists
// in optimization through the reversal layer; this is the monitoring value.
inline double transition_total(double l_rep, double l_pred, double l_d, const LossWeights& w) {
    return w.alpha * l_rep + w.beta * l_pred - w.gamma * l_d;
}

// L_tar = BCE(outcome) + MSE(los), unit weights.
inline ad::Var target_total(ad::Graph& g, ad::Var p_outcome, const std::vector<double>& y_outcome,
                            ad::Var los_pred, const std::vector<double>& y_los) {
    return g.add(bce_loss(g, p_outcome, y_outcome), mse_loss(g, los_pred, y_los));
}

}  // namespace transit
