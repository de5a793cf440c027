#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <vector>

#include "transit/adam.hpp"
#include "transit/domain.hpp"
#include "transit/dtw.hpp"
#include "transit/metrics.hpp"
#include "transit/models.hpp"

namespace transit {

struct StageConfig {
    double lr = 1e-3;
    std::size_t batch = 32;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;

    void validate(const char* stage) const {
        if (lr <= 0 || batch == 0)
            throw ConfigError(detail::msg(stage, ": learning rate and batch size must be positive"));
        if (patience > max_epochs && max_epochs > 0)
            throw ConfigError(detail::msg(stage, ": patience ", patience, " exceeds max epochs ",
                                          max_epochs));
    }
};

struct RunConfig {
    std::uint64_t seed = 42;
    std::size_t hidden = 16;  // H
    std::size_t rep = 32;     // S
    StageConfig teacher, transition, target;
    LossWeights weights;
    SourceTask source_task = SourceTask::Regression;
    double val_fraction = 0.2;
    TransferMapParams dtw;

    void validate() const {
        if (hidden == 0 || rep == 0) throw ConfigError("model sizes must be positive");
        if (val_fraction < 0.0 || val_fraction >= 1.0)
            throw ConfigError("validation fraction must be in [0,1)");
        teacher.validate("teacher");
        transition.validate("transition");
        target.validate("target");
        weights.validate();
    }
};

struct Split {
    std::vector<std::size_t> train, val;
};

// Shuffles 0..n-1 and takes the last `val_fraction` as validation.
inline Split split_patients(std::size_t n, double val_fraction, Rng rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_fraction));
    if (n_val == 0 && n >= 5 && val_fraction > 0.0) n_val = 1;
    if (n_val >= n) n_val = n - 1;
    Split s;
    s.train.assign(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(n_val));
    s.val.assign(idx.end() - static_cast<std::ptrdiff_t>(n_val), idx.end());
    return s;
}

struct CurveRow {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_mse = 0.0;  // stay-prediction MSE on the validation split
};

// Convergence curve contract: header epoch,train_loss,val_mse, one row per
// epoch actually run.
inline void write_curve_csv(const std::string& path, const std::vector<CurveRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write curve file: " + path);
    out << "epoch,train_loss,val_mse\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_mse);
        out << buf;
    }
}

namespace detail {

inline void check_finite_loss(double loss, std::size_t epoch, const char* stage) {
    if (!std::isfinite(loss))
        throw DivergenceError(msg(stage, ": non-finite loss at epoch ", epoch), epoch);
}

template <typename Model>
struct BestSnapshot {
    Model model;
    double val = std::numeric_limits<double>::infinity();
    std::size_t epoch = 0;
    std::size_t since_improvement = 0;

    // Returns true when patience is exhausted.
    bool update(const Model& current, double val_loss, std::size_t epoch_now,
                std::size_t patience) {
        if (val_loss < val) {
            val = val_loss;
            model = current;
            epoch = epoch_now;
            since_improvement = 0;
        } else {
            ++since_improvement;
        }
        return since_improvement >= patience;
    }
};

inline std::vector<std::vector<const DenseRecord*>> make_batches(
    const DenseDataset& ds, std::vector<std::size_t> order, std::size_t batch, Rng& rng) {
    rng.shuffle(order);
    std::vector<std::vector<const DenseRecord*>> batches;
    for (std::size_t i = 0; i < order.size(); i += batch) {
        std::vector<const DenseRecord*> b;
        for (std::size_t k = i; k < std::min(order.size(), i + batch); ++k)
            b.push_back(&ds.records[order[k]]);
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace detail

struct TeacherResult {
    TeacherModel model;
    std::vector<CurveRow> log;
    std::size_t best_epoch = 0;  // 1-based; 0 = initialization
    double best_val = std::numeric_limits<double>::infinity();
};

// Source-task loss of a teacher-shaped model over the given records, without
// touching gradients.
inline double source_loss(const TeacherModel& model, const DenseDataset& ds,
                          const std::vector<std::size_t>& idx) {
    if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<const DenseRecord*> recs = record_ptrs(ds, idx);
    const std::vector<std::size_t> cols = feature_columns(model.encoder, ds.schema);
    double total = 0.0;
    for (const auto& group : group_by_length(recs)) {
        ad::Graph g;
        BoundTeacher bt = bind_teacher(g, model, false);
        ad::Var s = encode_group(g, bt.encoder, group, cols);
        ad::Var pred = mlp_forward(g, bt.head, s);
        std::vector<double> y;
        for (const DenseRecord* r : group) y.push_back(model.source_label(*r));
        ad::Var loss = model.task == SourceTask::Regression
                           ? mse_loss(g, pred, y)
                           : bce_loss(g, g.sigmoid(pred), y);
        total += g.scalar(loss) * static_cast<double>(group.size());
    }
    return total / static_cast<double>(recs.size());
}

// First stage: fit the source model. Returns the weights of the epoch with
// the lowest validation loss; with an empty validation split the training
// loss is used for stopping.
inline TeacherResult train_teacher(const DenseDataset& source, const Split& split,
                                   const RunConfig& cfg) {
    cfg.validate();
    if (split.train.empty()) throw DataError("train_teacher: empty training split");
    Rng init_rng = Rng(cfg.seed).fork("init/teacher");
    TeacherResult res;
    res.model = TeacherModel::init(source.schema.features, cfg.hidden, cfg.rep, cfg.source_task,
                                   init_rng);
    if (cfg.teacher.max_epochs == 0) return res;

    Rng shuffle_rng = Rng(cfg.seed).fork("teacher/shuffle");
    Adam opt(cfg.teacher.lr);
    const std::vector<std::size_t> cols = feature_columns(res.model.encoder, source.schema);
    detail::BestSnapshot<TeacherModel> best;
    for (std::size_t epoch = 1; epoch <= cfg.teacher.max_epochs; ++epoch) {
        double train_sum = 0.0;
        std::size_t train_count = 0;
        for (const auto& batch : detail::make_batches(source, split.train, cfg.teacher.batch,
                                                      shuffle_rng)) {
            ad::Graph g;
            BoundTeacher bt = bind_teacher(g, res.model, true);
            std::vector<ad::Var> pred_parts;
            std::vector<double> y;
            for (const auto& group : group_by_length(batch)) {
                ad::Var s = encode_group(g, bt.encoder, group, cols);
                pred_parts.push_back(mlp_forward(g, bt.head, s));
                for (const DenseRecord* r : group) y.push_back(res.model.source_label(*r));
            }
            ad::Var preds = g.concat_rows(std::span<const ad::Var>(pred_parts));
            ad::Var loss = res.model.task == SourceTask::Regression
                               ? mse_loss(g, preds, y)
                               : bce_loss(g, g.sigmoid(preds), y);
            g.backward(loss);
            detail::check_finite_loss(g.scalar(loss), epoch, "teacher");
            ParamList params = res.model.params();
            std::vector<ad::Var> leaves;
            for (const BoundGruChannel& c : bt.encoder.channels)
                for (ad::Var v : {c.w_update, c.u_update, c.b_update, c.w_reset, c.u_reset,
                                  c.b_reset, c.w_cand, c.u_cand, c.b_cand})
                    leaves.push_back(v);
            leaves.push_back(bt.encoder.w_proj);
            leaves.push_back(bt.encoder.b_proj);
            for (ad::Var v : {bt.head.w1, bt.head.b1, bt.head.w2, bt.head.b2})
                leaves.push_back(v);
            std::vector<Tensor*> tensors;
            std::vector<std::vector<double>> grads;
            for (std::size_t i = 0; i < params.size(); ++i) {
                tensors.push_back(params[i].tensor);
                grads.push_back(g.grad(leaves[i]));
            }
            opt.step(tensors, grads);
            train_sum += g.scalar(loss) * static_cast<double>(batch.size());
            train_count += batch.size();
        }
        const double train_loss = train_sum / static_cast<double>(train_count);
        detail::check_finite_loss(train_loss, epoch, "teacher");
        const double val_loss =
            split.val.empty() ? train_loss : source_loss(res.model, source, split.val);
        detail::check_finite_loss(val_loss, epoch, "teacher");
        res.log.push_back({epoch, train_loss, val_loss, val_loss});
        if (best.update(res.model, val_loss, epoch, cfg.teacher.patience)) break;
    }
    res.model = best.model;
    res.best_epoch = best.epoch;
    res.best_val = best.val;
    return res;
}

struct TransitionResult {
    TransitionModel model;
    std::vector<CurveRow> log;
    std::size_t best_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
};

// Validation objective for the second stage: beta * L_pred + alpha * L_rep
// on held-out source patients (the domain term is not a fit measure).
inline double transition_val_loss(TransitionBundle& bundle, const DenseDataset& source,
                                  const std::vector<std::size_t>& idx) {
    if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
    bundle.warm_teacher_cache(source, idx);
    std::vector<const DenseRecord*> recs = record_ptrs(source, idx);
    double total = 0.0;
    for (const auto& group : group_by_length(recs)) {
        ad::Graph g;
        BoundEncoder be = bind_encoder(g, bundle.model.encoder, false);
        BoundMlp head = bind_mlp(g, bundle.model.head, false);
        ad::Var s = encode_group(g, be, group, bundle.src_cols);
        ad::Var pred = mlp_forward(g, head, s);
        std::vector<double> y;
        std::vector<std::vector<double>> teacher_rows;
        for (const DenseRecord* r : group) {
            y.push_back(bundle.model.task == SourceTask::Regression
                            ? r->y_los
                            : static_cast<double>(r->y_outcome));
            teacher_rows.push_back(bundle.teacher_rep(r, source.schema));
        }
        ad::Var l_pred = bundle.model.task == SourceTask::Regression
                             ? mse_loss(g, pred, y)
                             : bce_loss(g, g.sigmoid(pred), y);
        ad::Var l_rep = g.scale(kl_rep_loss_rows(g, teacher_rows, s),
                                1.0 / static_cast<double>(group.size()));
        total += (bundle.weights.beta * g.scalar(l_pred) + bundle.weights.alpha * g.scalar(l_rep)) *
                 static_cast<double>(group.size());
    }
    return total / static_cast<double>(recs.size());
}

// Second stage: domain-invariant encoder training. Epochs pass over the
// source training split; the target stream cycles with reshuffling so every
// step sees balanced domain batches. Target labels are never read.
inline TransitionResult train_transition(const TeacherModel& teacher,
                                         const DenseDataset& source, const Split& src_split,
                                         const DenseDataset& target,
                                         const std::vector<std::size_t>& tar_idx,
                                         const RunConfig& cfg) {
    cfg.validate();
    if (src_split.train.empty() || tar_idx.empty())
        throw DataError("train_transition: empty source or target training data");
    Rng init_rng = Rng(cfg.seed).fork("init/transition");
    TransitionResult res;
    TransitionBundle bundle = TransitionBundle::make(teacher, source.schema, target.schema,
                                                     cfg.weights, cfg.hidden, cfg.rep, init_rng);
    if (cfg.transition.max_epochs == 0) {
        res.model = bundle.model;
        return res;
    }
    bundle.warm_teacher_cache(source, src_split.train);
    bundle.warm_teacher_cache(source, src_split.val);

    Rng shuffle_rng = Rng(cfg.seed).fork("transition/shuffle");
    Rng target_rng = Rng(cfg.seed).fork("transition/target-stream");
    Adam opt(cfg.transition.lr);
    std::vector<std::size_t> target_queue;
    std::size_t queue_pos = 0;
    auto next_target_batch = [&](std::size_t count) {
        std::vector<const DenseRecord*> out;
        out.reserve(count);
        while (out.size() < count) {
            if (queue_pos >= target_queue.size()) {
                target_queue = tar_idx;
                target_rng.shuffle(target_queue);
                queue_pos = 0;
            }
            out.push_back(&target.records[target_queue[queue_pos++]]);
        }
        return out;
    };

    detail::BestSnapshot<TransitionModel> best;
    for (std::size_t epoch = 1; epoch <= cfg.transition.max_epochs; ++epoch) {
        double pred_sum = 0.0, rep_sum = 0.0, d_sum = 0.0;
        std::size_t count = 0;
        for (const auto& batch : detail::make_batches(source, src_split.train,
                                                      cfg.transition.batch, shuffle_rng)) {
            std::vector<const DenseRecord*> tar_batch = next_target_batch(batch.size());
            StepLosses losses = adversarial_step(bundle, source.schema,
                                                 std::span<const DenseRecord* const>(batch),
                                                 std::span<const DenseRecord* const>(tar_batch),
                                                 opt);
            detail::check_finite_loss(losses.pred + losses.rep + losses.domain, epoch,
                                      "transition");
            pred_sum += losses.pred * static_cast<double>(batch.size());
            rep_sum += losses.rep * static_cast<double>(batch.size());
            d_sum += losses.domain * static_cast<double>(batch.size());
            count += batch.size();
        }
        const double n = static_cast<double>(count);
        const double train_loss =
            transition_total(rep_sum / n, pred_sum / n, d_sum / n, bundle.weights);
        const double val_loss = src_split.val.empty()
                                    ? bundle.weights.beta * (pred_sum / n) +
                                          bundle.weights.alpha * (rep_sum / n)
                                    : transition_val_loss(bundle, source, src_split.val);
        detail::check_finite_loss(val_loss, epoch, "transition");
        res.log.push_back({epoch, train_loss, val_loss, val_loss});
        if (best.update(bundle.model, val_loss, epoch, cfg.transition.patience)) break;
    }
    res.model = best.model;
    res.best_epoch = best.epoch;
    res.best_val = best.val;
    return res;
}

// Builds the third-stage model. With `scratch` the whole model is freshly
// initialized (the no-transfer comparator); otherwise GRU channels come from
// the transition encoder through the transfer map and only the projection
// and heads are new.
inline TargetModel init_target_from_transition(const TransitionModel& transition,
                                               const TransferMap& map,
                                               const std::vector<std::string>& target_features,
                                               const RunConfig& cfg, bool scratch = false) {
    Rng rng = Rng(cfg.seed).fork("init/target");
    if (scratch) return TargetModel::init(target_features, cfg.hidden, cfg.rep, rng);
    TargetModel m;
    m.encoder = transfer_parameters(transition.encoder, map, target_features, cfg.rep, rng);
    m.heads = PredictionHeads::init(cfg.rep, rng);
    return m;
}

struct TargetResult {
    TargetModel model;
    std::vector<CurveRow> log;
    std::size_t best_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
};

struct TargetEval {
    double loss = 0.0;  // BCE + MSE
    double mse = 0.0;
    double mad = 0.0;
};

inline TargetEval evaluate_target_loss(const TargetModel& model, const DenseDataset& ds,
                                       const std::vector<std::size_t>& idx) {
    TargetOutputs out = predict_all(model, ds, idx);
    std::vector<double> y_out, y_los;
    for (std::size_t i : idx) {
        y_out.push_back(static_cast<double>(ds.records[i].y_outcome));
        y_los.push_back(ds.records[i].y_los);
    }
    ad::Graph g;
    ad::Var p = g.constant(Tensor::row(out.p_outcome));
    ad::Var l = g.constant(Tensor::row(out.los));
    TargetEval ev;
    ev.loss = g.scalar(target_total(g, p, y_out, l, y_los));
    auto [mse, mad] = metric_mse_mad(out.los, y_los);
    ev.mse = mse;
    ev.mad = mad;
    return ev;
}

// Third stage: fine-tune everything on the target objective
// BCE(outcome) + MSE(stay). The curve rows carry the validation stay MSE.
inline TargetResult train_target(const TargetModel& init, const DenseDataset& target,
                                 const Split& split, const RunConfig& cfg) {
    cfg.validate();
    if (split.train.empty()) throw DataError("train_target: empty training split");
    TargetResult res;
    res.model = init;
    if (cfg.target.max_epochs == 0) return res;
    Rng shuffle_rng = Rng(cfg.seed).fork("target/shuffle");
    Adam opt(cfg.target.lr);
    const std::vector<std::size_t> cols = feature_columns(res.model.encoder, target.schema);
    detail::BestSnapshot<TargetModel> best;
    for (std::size_t epoch = 1; epoch <= cfg.target.max_epochs; ++epoch) {
        double train_sum = 0.0;
        std::size_t train_count = 0;
        for (const auto& batch : detail::make_batches(target, split.train, cfg.target.batch,
                                                      shuffle_rng)) {
            ad::Graph g;
            BoundEncoder be = bind_encoder(g, res.model.encoder, true);
            BoundHeads bh = bind_heads(g, res.model.heads, true);
            std::vector<ad::Var> p_parts, los_parts;
            std::vector<double> y_out, y_los;
            for (const auto& group : group_by_length(batch)) {
                ad::Var s = encode_group(g, be, group, cols);
                Predictions p = predict(g, bh, s);
                p_parts.push_back(p.p_outcome);
                los_parts.push_back(p.los);
                for (const DenseRecord* r : group) {
                    y_out.push_back(static_cast<double>(r->y_outcome));
                    y_los.push_back(r->y_los);
                }
            }
            ad::Var p_all = g.concat_rows(std::span<const ad::Var>(p_parts));
            ad::Var los_all = g.concat_rows(std::span<const ad::Var>(los_parts));
            ad::Var loss = target_total(g, p_all, y_out, los_all, y_los);
            g.backward(loss);
            detail::check_finite_loss(g.scalar(loss), epoch, "target");
            ParamList params = res.model.params();
            std::vector<ad::Var> leaves;
            for (const BoundGruChannel& c : be.channels)
                for (ad::Var v : {c.w_update, c.u_update, c.b_update, c.w_reset, c.u_reset,
                                  c.b_reset, c.w_cand, c.u_cand, c.b_cand})
                    leaves.push_back(v);
            leaves.push_back(be.w_proj);
            leaves.push_back(be.b_proj);
            for (const BoundMlp* m : {&bh.outcome, &bh.los})
                for (ad::Var v : {m->w1, m->b1, m->w2, m->b2}) leaves.push_back(v);
            std::vector<Tensor*> tensors;
            std::vector<std::vector<double>> grads;
            for (std::size_t i = 0; i < params.size(); ++i) {
                tensors.push_back(params[i].tensor);
                grads.push_back(g.grad(leaves[i]));
            }
            opt.step(tensors, grads);
            train_sum += g.scalar(loss) * static_cast<double>(batch.size());
            train_count += batch.size();
        }
        const double train_loss = train_sum / static_cast<double>(train_count);
        detail::check_finite_loss(train_loss, epoch, "target");
        double val_loss = train_loss, val_mse = train_loss;
        if (!split.val.empty()) {
            TargetEval ev = evaluate_target_loss(res.model, target, split.val);
            val_loss = ev.loss;
            val_mse = ev.mse;
        }
        detail::check_finite_loss(val_loss, epoch, "target");
        res.log.push_back({epoch, train_loss, val_loss, val_mse});
        if (best.update(res.model, val_loss, epoch, cfg.target.patience)) break;
    }
    res.model = best.model;
    res.best_epoch = best.epoch;
    res.best_val = best.val;
    return res;
}

}  // namespace transit
