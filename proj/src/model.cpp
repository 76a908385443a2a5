#include "mgssl/model.hpp"

#include <stdexcept>

namespace mgssl {

std::vector<std::pair<std::string, Mat*>> Model::parameters() {
    std::vector<std::pair<std::string, Mat*>> out;
    for (auto& p : encoder.parameters()) out.push_back(p);
    if (trains_prototypes())
        for (auto& p : proto.parameters()) out.push_back(p);
    auto gp = graph.parameters();
    for (auto& p : gp) {
        bool edge_or_mix = p.first.find(".edge_") != std::string::npos ||
                           p.first.find(".mix_") != std::string::npos;
        if (edge_or_mix && !mode.use_graph) continue;
        out.push_back(p);
    }
    return out;
}

ModelTape model_watch(Tape& tape, Model& model, bool requires_grad) {
    std::vector<Tensor> leaves;
    for (auto& [name, m] : model.parameters()) leaves.push_back(tape.leaf(*m, requires_grad));
    return model_from_leaves(model, leaves);
}

ModelTape model_from_leaves(Model& model, const std::vector<Tensor>& leaves) {
    ModelTape mt;
    mt.leaves = leaves;
    size_t off = 0;
    mt.enc = encoder_from_leaves(model.encoder.cfg, leaves, off);
    if (model.trains_prototypes())
        mt.proto = proto_from_leaves(model.proto.cfg, leaves, off);
    if (model.mode.use_graph) {
        mt.graph = graph_from_leaves(model.graph.cfg, leaves, off);
    } else {
        // only the classifier head is live; rebuild a graph view around it
        GraphTape g;
        g.cfg = &model.graph.cfg;
        Tape* tape = leaves.at(off).tape();
        for (int l = 0; l < model.graph.cfg.layers; ++l) {
            std::vector<Tensor> ws, bs;
            for (int h = 0; h < model.graph.cfg.heads; ++h) {
                ws.push_back(tape->constant(model.graph.edge_w[l][h]));
                bs.push_back(tape->constant(model.graph.edge_b[l][h]));
            }
            g.edge_w.push_back(std::move(ws));
            g.edge_b.push_back(std::move(bs));
            g.mix_w.push_back(tape->constant(model.graph.mix_w[l]));
            g.mix_b.push_back(tape->constant(model.graph.mix_b[l]));
        }
        g.cls_w = leaves.at(off++);
        g.cls_b = leaves.at(off++);
        mt.graph = std::move(g);
    }
    if (off != leaves.size())
        throw std::logic_error("model_from_leaves: leaf count mismatch");
    return mt;
}

Tensor model_prototypes(Tape& tape, const Model& model, const ModelTape& mt) {
    switch (model.mode.proto_mode) {
        case PrototypeMode::Learned:
            return generate_all(mt.proto);
        case PrototypeMode::RandomImages: {
            if (model.proto_source_rows.rows == 0)
                throw std::logic_error("model_prototypes: no prototype source rows stored");
            Mat feats = encode_values(model.encoder, model.proto_source_rows);
            return tape.constant(std::move(feats));  // frozen: no gradient path
        }
        case PrototypeMode::Off:
            throw std::logic_error("model_prototypes: prototypes are disabled in this mode");
    }
    throw std::logic_error("model_prototypes: unreachable");
}

std::function<Tensor(Tape&, const Tensor&)> model_const_pipeline(const Model& model,
                                                                 bool with_graph,
                                                                 Mat protos_values) {
    return [&model, with_graph, protos = std::move(protos_values)](Tape& tape,
                                                                   const Tensor& x) -> Tensor {
        EncoderTape enc = encoder_watch(tape, model.encoder, false);
        GraphTape g = graph_watch(tape, model.graph, false);
        Tensor f = encode(enc, x);
        if (with_graph) {
            GraphForward fw = graph_forward_batch(g, f, tape.constant(protos));
            f = fw.refined_instances;
        }
        return softmax_rows(classify(g, f));
    };
}

Mat model_predict_probs(const Model& model, const Mat& x, bool use_graph) {
    Tape tape;
    Mat protos;
    if (use_graph) {
        if (!model.has_prototypes())
            throw std::invalid_argument("model_predict_probs: graph inference needs prototypes");
        if (model.mode.proto_mode == PrototypeMode::Learned)
            protos = generate_set(model.proto).values;
        else
            protos = encode_values(model.encoder, model.proto_source_rows);
    }
    auto pipeline = model_const_pipeline(model, use_graph, std::move(protos));
    return pipeline(tape, tape.constant(x)).detached();
}

std::vector<int> model_predict(const Model& model, const Mat& x, bool use_graph) {
    Mat probs = model_predict_probs(model, x, use_graph);
    std::vector<int> out(probs.rows);
    for (int r = 0; r < probs.rows; ++r) {
        int best = 0;
        for (int c = 1; c < probs.cols; ++c)
            if (probs.at(r, c) > probs.at(r, best)) best = c;
        out[r] = best;
    }
    return out;
}

}  // namespace mgssl
