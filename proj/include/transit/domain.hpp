#pragma once

#include <cmath>
#include <span>
#include <unordered_map>
#include <vector>

#include "transit/adam.hpp"
#include "transit/losses.hpp"
#include "transit/models.hpp"

namespace transit {

// Two-layer domain discriminator over flattened shared-feature embeddings.
// Logit 0 scores the source domain, logit 1 the target domain.
struct DomainClassifier {
    std::size_t input_width = 0;
    Tensor w1, b1, w2, b2;

    static DomainClassifier init(std::size_t input_width, Rng& rng) {
        if (input_width == 0) throw ValueError("domain classifier: zero input width");
        const std::size_t hid = 32;
        DomainClassifier c;
        c.input_width = input_width;
        const double bound1 = 1.0 / std::sqrt(static_cast<double>(input_width));
        const double bound2 = 1.0 / std::sqrt(static_cast<double>(hid));
        c.w1 = Tensor::uniform({input_width, hid}, -bound1, bound1, rng);
        c.b1 = Tensor::zeros(1, hid);
        c.w2 = Tensor::uniform({hid, 2}, -bound2, bound2, rng);
        c.b2 = Tensor::zeros(1, 2);
        return c;
    }

    void collect(const std::string& prefix, ParamList& out) {
        const std::string p = prefix.empty() ? "domain" : prefix + "/domain";
        out.push_back({p + "/fc1/w", &w1});
        out.push_back({p + "/fc1/b", &b1});
        out.push_back({p + "/fc2/w", &w2});
        out.push_back({p + "/fc2/b", &b2});
    }
};

struct BoundClassifier {
    ad::Var w1, b1, w2, b2;
};

inline BoundClassifier bind_classifier(ad::Graph& g, const DomainClassifier& c,
                                       bool requires_grad) {
    return BoundClassifier{g.leaf(c.w1, requires_grad), g.leaf(c.b1, requires_grad),
                           g.leaf(c.w2, requires_grad), g.leaf(c.b2, requires_grad)};
}

// embeddings {B, input_width} -> logits {B,2}
inline ad::Var classify_domain(ad::Graph& g, const BoundClassifier& c, ad::Var embeddings) {
    const Tensor& t = g.val(embeddings);
    if (t.rank() != 2 || t.shape[1] != g.val(c.w1).shape[0])
        throw ShapeError(detail::msg("classify_domain: input ", shape_str(t.shape),
                                     " does not match classifier width ",
                                     g.val(c.w1).shape[0]));
    ad::Var h = g.tanh(g.add_row(g.matmul(embeddings, c.w1), c.b1));
    return g.add_row(g.matmul(h, c.w2), c.b2);
}

// Convenience single-sample overload on a flattened embedding matrix F_sf.
inline std::vector<double> classify_domain(const DomainClassifier& clf, const Tensor& f_sf) {
    ad::Graph g;
    BoundClassifier bc = bind_classifier(g, clf, false);
    ad::Var flat = g.flatten(g.constant(f_sf));
    return g.val(classify_domain(g, bc, flat)).data;
}

// Trained in the second stage: an encoder over every source feature, a
// source prediction head, and the domain classifier.
struct TransitionModel {
    McGruEncoder encoder;
    Mlp head;
    DomainClassifier classifier;
    SourceTask task = SourceTask::Regression;

    ParamList params() {
        ParamList out;
        encoder.collect("", out);
        head.collect("head", out);
        classifier.collect("", out);
        return out;
    }
};

// Everything one adversarial step touches. The teacher is frozen; its
// representations are cached per record on first use.
struct TransitionBundle {
    const TeacherModel* teacher = nullptr;
    TransitionModel model;
    LossWeights weights;
    std::vector<std::string> shared;              // source order
    std::vector<std::size_t> shared_channels;     // indices into model.encoder
    std::vector<std::size_t> src_cols;            // encoder feature -> source schema column
    std::vector<std::size_t> shared_src_cols;     // shared feature -> source schema column
    std::vector<std::size_t> shared_tar_cols;     // shared feature -> target schema column
    std::vector<std::size_t> teacher_cols;        // teacher feature -> source schema column
    std::unordered_map<const DenseRecord*, std::vector<double>> teacher_reps;

    static TransitionBundle make(const TeacherModel& teacher, const FeatureSchema& src_schema,
                                 const FeatureSchema& tar_schema, const LossWeights& weights,
                                 std::size_t hidden, std::size_t rep, Rng& rng) {
        weights.validate();
        TransitionBundle b;
        b.teacher = &teacher;
        b.weights = weights;
        b.model.encoder = McGruEncoder::init(src_schema.features, hidden, rep, rng);
        b.model.head = Mlp::init(rep, std::max<std::size_t>(1, rep / 2), rng);
        b.model.task = teacher.task;
        SchemaAlignment align = align_schemas(src_schema, tar_schema);
        b.shared = align.shared;
        for (const auto& f : b.shared)
            b.shared_channels.push_back(b.model.encoder.channel_index(f));
        b.model.classifier = DomainClassifier::init(b.shared.size() * hidden, rng);
        b.src_cols = feature_columns(b.model.encoder, src_schema);
        for (const auto& f : b.shared) {
            auto si = src_schema.index_of(f);
            auto ti = tar_schema.index_of(f);
            if (!si || !ti)
                throw DataError("transition: shared feature '" + f + "' missing from a schema");
            b.shared_src_cols.push_back(*si);
            b.shared_tar_cols.push_back(*ti);
        }
        b.teacher_cols = feature_columns(teacher.encoder, src_schema);
        if (teacher.encoder.rep != rep)
            throw ShapeError(detail::msg("transition: representation width ", rep,
                                         " differs from teacher width ", teacher.encoder.rep));
        return b;
    }

    const std::vector<double>& teacher_rep(const DenseRecord* rec,
                                           const FeatureSchema& src_schema) {
        auto it = teacher_reps.find(rec);
        if (it != teacher_reps.end()) return it->second;
        const DenseRecord* one[] = {rec};
        auto rows = representations(teacher->encoder,
                                    std::span<const DenseRecord* const>(one, 1), src_schema);
        return teacher_reps.emplace(rec, std::move(rows[0])).first->second;
    }

    void warm_teacher_cache(const DenseDataset& source, const std::vector<std::size_t>& idx) {
        std::vector<const DenseRecord*> missing;
        for (std::size_t i : idx)
            if (!teacher_reps.count(&source.records[i])) missing.push_back(&source.records[i]);
        if (missing.empty()) return;
        auto rows = representations(teacher->encoder,
                                    std::span<const DenseRecord* const>(missing), source.schema);
        for (std::size_t i = 0; i < missing.size(); ++i)
            teacher_reps.emplace(missing[i], std::move(rows[i]));
    }
};

struct StepLosses {
    double pred = 0.0;
    double rep = 0.0;
    double domain = 0.0;
};

// Encodes the given channels over a group; returns {B, k*H} of the
// column-concatenated embeddings in channel order.
inline ad::Var encode_selected(ad::Graph& g, const BoundEncoder& be,
                               const std::vector<std::size_t>& channel_idx,
                               std::span<const DenseRecord* const> group,
                               const std::vector<std::size_t>& cols) {
    std::vector<ad::Var> embeds;
    embeds.reserve(channel_idx.size());
    std::vector<std::span<const double>> seqs(group.size());
    for (std::size_t k = 0; k < channel_idx.size(); ++k) {
        for (std::size_t i = 0; i < group.size(); ++i)
            seqs[i] = std::span<const double>(group[i]->x[cols[k]]);
        embeds.push_back(encode_channel(g, be.channels[channel_idx[k]], be.encoder->hidden,
                                        std::span<const std::span<const double>>(seqs)));
    }
    return g.concat_cols(std::span<const ad::Var>(embeds));
}

// One simultaneous update of the transition encoder, source head and domain
// classifier. The classifier minimizes cross-entropy on true domain labels;
// the reversal layer (lambda = gamma) makes the encoder ascend on the same
// loss, while alpha * L_rep and beta * L_pred descend. With gamma == 0 the
// classifier trains on detached embeddings and the encoder never sees it.
// Target labels are never read.
inline StepLosses adversarial_step(TransitionBundle& bundle, const FeatureSchema& src_schema,
                                   std::span<const DenseRecord* const> batch_src,
                                   std::span<const DenseRecord* const> batch_tar, Adam& opt) {
    if (batch_src.empty() || batch_tar.empty())
        throw ValueError("adversarial_step: empty batch");
    if (batch_src.size() != batch_tar.size())
        throw ValueError(detail::msg("adversarial_step: unbalanced domain batches (",
                                     batch_src.size(), " source vs ", batch_tar.size(),
                                     " target)"));
    const double gamma = bundle.weights.gamma;
    const std::size_t B = batch_src.size();

    ad::Graph g;
    BoundEncoder be = bind_encoder(g, bundle.model.encoder, true);
    BoundMlp head = bind_mlp(g, bundle.model.head, true);
    BoundClassifier clf = bind_classifier(g, bundle.model.classifier, true);

    std::vector<ad::Var> pred_parts, domain_parts;
    std::vector<double> y_src;
    ad::Var rep_sum = g.constant(0.0);
    for (const auto& group : group_by_length(batch_src)) {
        auto embeds = encode_all_channels(g, be, group, bundle.src_cols);
        ad::Var s = project_health_batch(g, be, std::span<const ad::Var>(embeds));
        pred_parts.push_back(mlp_forward(g, head, s));
        std::vector<ad::Var> shared_embeds;
        for (std::size_t ci : bundle.shared_channels) shared_embeds.push_back(embeds[ci]);
        domain_parts.push_back(g.concat_cols(std::span<const ad::Var>(shared_embeds)));
        std::vector<std::vector<double>> teacher_rows;
        for (const DenseRecord* r : group) {
            teacher_rows.push_back(bundle.teacher_rep(r, src_schema));
            y_src.push_back(bundle.model.task == SourceTask::Regression
                                ? r->y_los
                                : static_cast<double>(r->y_outcome));
        }
        rep_sum = g.add(rep_sum, kl_rep_loss_rows(g, teacher_rows, s));
    }
    for (const auto& group : group_by_length(batch_tar))
        domain_parts.push_back(
            encode_selected(g, be, bundle.shared_channels, group, bundle.shared_tar_cols));

    ad::Var preds = g.concat_rows(std::span<const ad::Var>(pred_parts));
    ad::Var l_pred = bundle.model.task == SourceTask::Regression
                         ? mse_loss(g, preds, y_src)
                         : bce_loss(g, g.sigmoid(preds), y_src);
    ad::Var l_rep = g.scale(rep_sum, 1.0 / static_cast<double>(B));

    ad::Var stacked = g.concat_rows(std::span<const ad::Var>(domain_parts));
    ad::Var clf_input = gamma > 0.0 ? g.grad_reverse(stacked, gamma) : g.detach(stacked);
    std::vector<int> labels(2 * B, 0);
    for (std::size_t i = B; i < 2 * B; ++i) labels[i] = 1;
    ad::Var l_d = domain_ce_loss(g, classify_domain(g, clf, clf_input), labels);

    ad::Var objective = g.add(
        g.add(g.scale(l_rep, bundle.weights.alpha), g.scale(l_pred, bundle.weights.beta)), l_d);
    g.backward(objective);

    ParamList params = bundle.model.params();
    std::vector<Tensor*> tensors;
    std::vector<std::vector<double>> grads;
    tensors.reserve(params.size());
    grads.reserve(params.size());
    std::vector<ad::Var> leaves;
    for (const BoundGruChannel& c : be.channels)
        for (ad::Var v : {c.w_update, c.u_update, c.b_update, c.w_reset, c.u_reset, c.b_reset,
                          c.w_cand, c.u_cand, c.b_cand})
            leaves.push_back(v);
    leaves.push_back(be.w_proj);
    leaves.push_back(be.b_proj);
    for (ad::Var v : {head.w1, head.b1, head.w2, head.b2}) leaves.push_back(v);
    for (ad::Var v : {clf.w1, clf.b1, clf.w2, clf.b2}) leaves.push_back(v);
    if (leaves.size() != params.size())
        throw Error("adversarial_step: parameter bookkeeping out of sync");
    for (std::size_t i = 0; i < params.size(); ++i) {
        tensors.push_back(params[i].tensor);
        grads.push_back(g.grad(leaves[i]));
    }
    opt.step(tensors, grads);
    return StepLosses{g.scalar(l_pred), g.scalar(l_rep), g.scalar(l_d)};
}

}  // namespace transit
