#include "mgssl/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace mgssl {

namespace {
constexpr double kProbFloor = 1e-12;

Tensor mean_all_rows(const Tensor& per_row_sums, int rows) {
    return scale(per_row_sums, 1.0 / rows);
}

}  // namespace

Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    if (static_cast<int>(labels.size()) != probs.rows())
        throw std::invalid_argument("cross_entropy: label count differs from row count");
    Tape& tape = *probs.tape();
    Tensor onehot = tape.constant(one_hot(labels, probs.cols()));
    Tensor picked = mul(onehot, log_val(clamp_min(probs, kProbFloor)));
    return scale(reduce(picked, Reduce::Sum, Axis::All), -1.0 / probs.rows());
}

Tensor entropy_min(const Tensor& probs) {
    Tensor plogp = mul(probs, log_val(clamp_min(probs, kProbFloor)));
    return scale(reduce(plogp, Reduce::Sum, Axis::All), -1.0 / probs.rows());
}

Tensor consistency(Tape& tape, const Mat& probs_clean, const Tensor& probs_perturbed) {
    if (!probs_perturbed.value().same_shape(probs_clean))
        throw std::invalid_argument("consistency: prediction shapes differ");
    Mat logp(probs_clean.rows, probs_clean.cols);
    for (int i = 0; i < probs_clean.size(); ++i)
        logp.v[i] = std::log(std::max(probs_clean.v[i], kProbFloor));
    Tensor p = tape.constant(probs_clean);
    Tensor lp = tape.constant(std::move(logp));
    Tensor kl = mul(p, sub(lp, log_val(clamp_min(probs_perturbed, kProbFloor))));
    return mean_all_rows(reduce(kl, Reduce::Sum, Axis::All), probs_clean.rows);
}

std::vector<int> pseudo_label(const Mat& features, const Mat& centers) {
    if (features.cols != centers.cols)
        throw std::invalid_argument("pseudo_label: dim mismatch");
    std::vector<int> out(features.rows);
    for (int i = 0; i < features.rows; ++i) {
        double fn = row_norm(features, i);
        if (fn == 0.0)
            throw std::domain_error("pseudo_label: degenerate zero-norm feature row " +
                                    std::to_string(i));
        int best = 0;
        double best_s = -2.0;
        for (int c = 0; c < centers.rows; ++c) {
            double cn = row_norm(centers, c);
            if (cn == 0.0)
                throw std::domain_error("pseudo_label: degenerate zero-norm center " +
                                        std::to_string(c));
            double dot = 0;
            for (int k = 0; k < features.cols; ++k) dot += features.at(i, k) * centers.at(c, k);
            double s = dot / (fn * cn);
            if (s > best_s) {  // strict: ties keep the lowest class index
                best_s = s;
                best = c;
            }
        }
        out[i] = best;
    }
    return out;
}

Tensor anchor_magnitude(const Tensor& centers, double l_avg, double margin_l) {
    if (l_avg <= 0) throw std::invalid_argument("anchor_magnitude: l_avg must be positive");
    Tensor ratio = scale(rows_l2_norm(centers), 1.0 / l_avg);
    Tensor excess = hinge(add_scalar(abs_val(add_scalar(ratio, -1.0)), -margin_l));
    return reduce(square(excess), Reduce::Mean, Axis::All);
}

TripletSelection enumerate_triplets(const std::vector<int>& center_classes,
                                    const std::vector<int>& entity_labels, size_t cap, Rng* rng) {
    TripletSelection sel;
    int present = 0;
    {
        std::vector<uint8_t> seen;
        for (int l : entity_labels) {
            if (l >= static_cast<int>(seen.size())) seen.resize(l + 1, 0);
            if (l >= 0 && !seen[l]) {
                seen[l] = 1;
                ++present;
            }
        }
    }
    if (present < 2) {
        sel.degenerate = true;
        return sel;
    }
    const int E = static_cast<int>(entity_labels.size());
    for (size_t ci = 0; ci < center_classes.size(); ++ci) {
        int cls = center_classes[ci];
        for (int j = 0; j < E; ++j) {
            if (entity_labels[j] != cls) continue;
            for (int k = 0; k < E; ++k) {
                if (entity_labels[k] == cls) continue;
                sel.center.push_back(static_cast<int>(ci));
                sel.pos.push_back(j);
                sel.neg.push_back(k);
            }
        }
    }
    if (sel.center.size() > cap) {
        if (!rng) throw std::invalid_argument("enumerate_triplets: cap exceeded without an rng");
        std::vector<int> pick(sel.center.size());
        for (size_t i = 0; i < pick.size(); ++i) pick[i] = static_cast<int>(i);
        rng->shuffle(pick);
        pick.resize(cap);
        TripletSelection sub;
        for (int i : pick) {
            sub.center.push_back(sel.center[i]);
            sub.pos.push_back(sel.pos[i]);
            sub.neg.push_back(sel.neg[i]);
        }
        return sub;
    }
    return sel;
}

Tensor anchor_triplet(const Tensor& centers, const Tensor& entities, const TripletSelection& sel,
                      double margin_a) {
    Tape& tape = *centers.tape();
    if (sel.degenerate || sel.center.empty()) return tape.scalar(0.0);
    const int E = entities.rows();
    Tensor cos = pairwise_cosine(centers, entities);  // C x E
    Tensor flat = reshape(cos, cos.rows() * cos.cols(), 1);
    std::vector<int> pos_idx(sel.center.size()), neg_idx(sel.center.size());
    for (size_t t = 0; t < sel.center.size(); ++t) {
        pos_idx[t] = sel.center[t] * E + sel.pos[t];
        neg_idx[t] = sel.center[t] * E + sel.neg[t];
    }
    Tensor s_pos = gather_rows(flat, pos_idx);
    Tensor s_neg = gather_rows(flat, neg_idx);
    Tensor terms = square(hinge(add_scalar(sub(s_neg, s_pos), margin_a)));
    return reduce(terms, Reduce::MeanNonzero, Axis::All);
}

Tensor anchor_boundary(const Tensor& centers, const Tensor& entities,
                       const std::vector<int>& entity_labels) {
    Tape& tape = *centers.tape();
    const int C = centers.rows();
    if (C < 2) return tape.scalar(0.0);  // margin over an empty set: loss is identically 0
    if (static_cast<int>(entity_labels.size()) != entities.rows())
        throw std::invalid_argument("anchor_boundary: label count differs from entity count");

    Tensor cc = pairwise_cosine(centers, centers);  // C x C
    Mask diag(C, C);
    for (int i = 0; i < C; ++i) diag.exclude(i, i);
    Tensor margins = reduce_max(cc, Axis::Rows, &diag);          // 1 x C, per column j
    Tensor margins_col = reshape(margins, C, 1);                 // C x 1
    Tensor margin_per_entity = gather_rows(margins_col, entity_labels);

    Tensor ec = pairwise_cosine(entities, centers);  // E x C
    Tensor ec_flat = reshape(ec, entities.rows() * C, 1);
    std::vector<int> own_idx(entity_labels.size());
    for (size_t e = 0; e < entity_labels.size(); ++e)
        own_idx[e] = static_cast<int>(e) * C + entity_labels[e];
    Tensor own = gather_rows(ec_flat, own_idx);

    Tensor terms = hinge(sub(margin_per_entity, own));
    return reduce(terms, Reduce::MeanNonzero, Axis::All);
}

Tensor divergence(const Tensor& protos, const std::vector<int>& proto_labels, double l_avg,
                  double margin_d) {
    if (margin_d >= 1.0 || margin_d < 0.0)
        throw std::invalid_argument("divergence: margin_d must be in [0, 1)");
    if (l_avg <= 0) throw std::invalid_argument("divergence: l_avg must be positive");
    Tape& tape = *protos.tape();

    std::vector<int> idx_i, idx_j;
    const int P = protos.rows();
    for (int i = 0; i < P; ++i)
        for (int j = i + 1; j < P; ++j)
            if (proto_labels[i] == proto_labels[j]) {
                idx_i.push_back(i);
                idx_j.push_back(j);
            }
    if (idx_i.empty()) return tape.scalar(0.0);  // K < 2: nothing to diverge

    const double inv = 1.0 / (1.0 - margin_d);
    Tensor norms = rows_l2_norm(protos);
    Tensor li = gather_rows(norms, idx_i);
    Tensor lj = gather_rows(norms, idx_j);
    Tensor gap = scale(abs_val(sub(li, lj)), 1.0 / (2.0 * l_avg));
    Tensor mag = scale(hinge(add_scalar(scale(gap, -1.0), 1.0 - margin_d)), inv);

    Tensor unit = l2_normalize_rows(protos);
    Tensor cos = reduce(mul(gather_rows(unit, idx_i), gather_rows(unit, idx_j)), Reduce::Sum,
                        Axis::Cols);
    Tensor ang = scale(hinge(add_scalar(cos, -margin_d)), inv);

    return reduce(min_elem(mag, ang), Reduce::Sum, Axis::All);
}

Mat vat_direction(const std::function<Tensor(Tape&, const Tensor&)>& pipeline, const Mat& x,
                  const Mat& probs_clean, const VatConfig& cfg, Rng& rng) {
    if (cfg.eps <= 0 || cfg.xi <= 0)
        throw std::invalid_argument("vat_direction: eps and xi must be positive");
    const int B = x.rows, D = x.cols;

    // random unit rows
    Mat dir(B, D);
    for (int r = 0; r < B; ++r) {
        double n = 0;
        do {
            for (int c = 0; c < D; ++c) dir.at(r, c) = rng.normal();
            n = row_norm(dir, r);
        } while (n == 0.0);
        for (int c = 0; c < D; ++c) dir.at(r, c) /= n;
    }

    for (int it = 0; it < cfg.power_iters; ++it) {
        Mat probe(B, D);
        for (int i = 0; i < probe.size(); ++i) probe.v[i] = cfg.xi * dir.v[i];
        Tape tape;
        Tensor r = tape.leaf(probe, true);
        Tensor perturbed = add(tape.constant(x), r);
        Tensor probs = pipeline(tape, perturbed);
        Tensor kl = consistency(tape, probs_clean, probs);
        tape.backward(kl);
        Mat g = tape.grad(r);
        for (int row = 0; row < B; ++row) {
            double n = row_norm(g, row);
            if (n == 0.0) continue;  // fall back to the current random direction
            for (int c = 0; c < D; ++c) dir.at(row, c) = g.at(row, c) / n;
        }
    }
    for (auto& v : dir.v) v *= cfg.eps;
    return dir;
}

// --- total loss ------------------------------------------------------------------

namespace {

double checked_term(const Tensor& t, const char* name) {
    double v = t.scalar_value();
    if (!std::isfinite(v))
        throw std::runtime_error(std::string("total_loss: term '") + name + "' is non-finite");
    return v;
}

// Average the per-instance refined prototype rows across the batch so the
// refined-prototype classification path has one feature row per prototype.
Tensor mean_refined_protos(const GraphForward& fw, int B, int P) {
    const int n = P + 1;
    Mat avg(P, B * n, 0.0);
    for (int p = 0; p < P; ++p)
        for (int b = 0; b < B; ++b) avg.at(p, b * n + 1 + p) = 1.0 / B;
    Tape& tape = *fw.refined_stacked.tape();
    return matmul(tape.constant(std::move(avg)), fw.refined_stacked);
}

}  // namespace

TotalLossResult total_loss(Tape& tape, Model& model, const ModelTape& mt, const Batch& batch,
                           const LossWeights& weights, const Margins& margins,
                           const VatConfig& vat, TrainStage stage, Rng& rng,
                           const FrozenContext* frozen) {
    const int B_l = batch.n_labeled();
    const int B_u = batch.n_unlabeled();
    if (B_l < 1) throw std::invalid_argument("total_loss: batch has no labeled rows");
    const bool graph_stage = stage == TrainStage::Full && model.mode.use_graph;
    const bool proto_stage = stage == TrainStage::Full && model.has_prototypes();

    TotalLossResult res;
    FrozenContext& ctx = res.context;
    ctx.valid = true;

    Tensor x_all = tape.constant(batch.x);
    Tensor f_all = encode(mt.enc, x_all);

    // prototypes for this iteration (shared by the clean and perturbed passes)
    Tensor protos;
    if (graph_stage || proto_stage) protos = model_prototypes(tape, model, mt);

    Tensor logits;
    GraphForward fw;
    if (graph_stage) {
        fw = graph_forward_batch(mt.graph, f_all, protos);
        logits = classify(mt.graph, fw.refined_instances);
    } else {
        logits = classify(mt.graph, f_all);
    }
    Tensor probs = softmax_rows(logits);

    std::vector<int> lab_rows(B_l), unlab_rows(B_u);
    for (int i = 0; i < B_l; ++i) lab_rows[i] = i;
    for (int i = 0; i < B_u; ++i) unlab_rows[i] = B_l + i;

    Tensor probs_l = gather_rows(probs, lab_rows);
    Tensor l_clf_i = cross_entropy(probs_l, batch.labels);
    res.breakdown.clf_i = checked_term(l_clf_i, "l_clf_i");
    Tensor total = l_clf_i;

    if (B_u > 0) {
        Tensor probs_u = gather_rows(probs, unlab_rows);
        if (weights.entropy != 0.0) {
            Tensor l_em = entropy_min(probs_u);
            res.breakdown.em = checked_term(l_em, "l_em");
            total = add(total, scale(l_em, weights.entropy));
        }
        if (weights.consistency != 0.0) {
            Mat x_u(B_u, batch.x.cols);
            for (int i = 0; i < B_u; ++i)
                for (int c = 0; c < batch.x.cols; ++c) x_u.at(i, c) = batch.x.at(B_l + i, c);

            if (frozen && frozen->valid) {
                ctx.probs_clean_u = frozen->probs_clean_u;
                ctx.r_adv = frozen->r_adv;
            } else {
                ctx.probs_clean_u = probs_u.detached();
                Mat proto_vals = (graph_stage) ? protos.detached() : Mat();
                auto pipeline = model_const_pipeline(model, graph_stage, std::move(proto_vals));
                ctx.r_adv = vat_direction(pipeline, x_u, ctx.probs_clean_u, vat, rng);
            }

            Mat x_adv = x_u;
            for (int i = 0; i < x_adv.size(); ++i) x_adv.v[i] += ctx.r_adv.v[i];
            Tensor f_adv = encode(mt.enc, tape.constant(std::move(x_adv)));
            Tensor logits_adv;
            if (graph_stage) {
                GraphForward fw_adv = graph_forward_batch(mt.graph, f_adv, protos);
                logits_adv = classify(mt.graph, fw_adv.refined_instances);
            } else {
                logits_adv = classify(mt.graph, f_adv);
            }
            Tensor l_con = consistency(tape, ctx.probs_clean_u, softmax_rows(logits_adv));
            res.breakdown.con = checked_term(l_con, "l_con");
            total = add(total, scale(l_con, weights.consistency));
        }
    }

    if (proto_stage) {
        const std::vector<int> plabels = proto_labels(model.proto.cfg);
        const int K = model.proto.cfg.K, C = model.proto.cfg.C;
        Tensor centers = class_centers(protos, K, C);

        if (frozen && frozen->valid) {
            ctx.l_avg_batch = frozen->l_avg_batch;
            ctx.l_avg_protos = frozen->l_avg_protos;
            ctx.pseudo_labels = frozen->pseudo_labels;
        } else {
            ctx.l_avg_batch = mean_row_norm(f_all.value());
            ctx.l_avg_protos = mean_row_norm(protos.value());
            if (B_u > 0) {
                Mat f_u(B_u, f_all.cols());
                for (int i = 0; i < B_u; ++i)
                    for (int c = 0; c < f_all.cols(); ++c)
                        f_u.at(i, c) = f_all.value().at(B_l + i, c);
                ctx.pseudo_labels = pseudo_label(f_u, centers.value());
            }
        }

        Tensor entities = concat_rows(f_all, protos);
        std::vector<int> entity_labels = batch.labels;
        entity_labels.insert(entity_labels.end(), ctx.pseudo_labels.begin(),
                             ctx.pseudo_labels.end());
        entity_labels.insert(entity_labels.end(), plabels.begin(), plabels.end());

        if (weights.anchor != 0.0) {
            Tensor l_mag = anchor_magnitude(centers, ctx.l_avg_batch, margins.margin_l);
            res.breakdown.mag = checked_term(l_mag, "l_mag");

            std::vector<int> center_classes(C);
            for (int c = 0; c < C; ++c) center_classes[c] = c;
            if (frozen && frozen->valid) {
                ctx.triplets = frozen->triplets;
            } else {
                ctx.triplets = enumerate_triplets(center_classes, entity_labels, kTripletCap, &rng);
            }
            Tensor l_ang = anchor_triplet(centers, entities, ctx.triplets, margins.margin_a);
            res.breakdown.ang = checked_term(l_ang, "l_ang");

            Tensor l_bound = anchor_boundary(centers, entities, entity_labels);
            res.breakdown.bound = checked_term(l_bound, "l_bound");

            total = add(total, scale(add(add(l_mag, l_ang), l_bound), weights.anchor));
        }
        if (weights.divergence != 0.0) {
            Tensor l_div = divergence(protos, plabels, ctx.l_avg_protos, margins.margin_d);
            res.breakdown.div = checked_term(l_div, "l_div");
            total = add(total, scale(l_div, weights.divergence));
        }
        if (weights.proto_clf != 0.0) {
            Tensor pfeat = protos;
            if (model.mode.proto_clf_refined && graph_stage)
                pfeat = mean_refined_protos(fw, batch.x.rows, model.prototype_count());
            Tensor l_clf_p = cross_entropy(softmax_rows(classify(mt.graph, pfeat)), plabels);
            res.breakdown.clf_p = checked_term(l_clf_p, "l_clf_p");
            total = add(total, scale(l_clf_p, weights.proto_clf));
        }
    }

    res.total = total;
    res.breakdown.total = checked_term(total, "total");
    res.breakdown.con *= weights.consistency;
    res.breakdown.em *= weights.entropy;
    res.breakdown.mag *= weights.anchor;
    res.breakdown.ang *= weights.anchor;
    res.breakdown.bound *= weights.anchor;
    res.breakdown.div *= weights.divergence;
    res.breakdown.clf_p *= weights.proto_clf;
    return res;
}

}  // namespace mgssl
