#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mgssl/encoder.hpp"
#include "mgssl/manifold_graph.hpp"
#include "mgssl/proto_gen.hpp"

namespace mgssl {

enum class PrototypeMode {
    Learned,       // generated prototypes (the full method)
    RandomImages,  // frozen features of randomly-picked labeled images
    Off,           // no prototypes, no graph (baselines)
};

struct ModelConfig {
    bool use_graph = true;
    PrototypeMode proto_mode = PrototypeMode::Learned;
    bool proto_clf_refined = false;  // classify graph-refined instead of raw prototypes
};

// The trainable state of one run: encoder, prototype generator and graph
// (attention + refinement + classifier head).
struct Model {
    ModelConfig mode;
    EncoderParams encoder;
    PrototypeParams proto;
    GraphParams graph;
    Mat proto_source_rows;  // RandomImages: raw input rows, (K*C) x input_dim

    bool trains_prototypes() const { return mode.proto_mode == PrototypeMode::Learned; }
    bool has_prototypes() const { return mode.proto_mode != PrototypeMode::Off; }
    int prototype_count() const { return proto.cfg.total(); }

    // Named trainable parameters in a stable order (respects the mode:
    // prototype and edge parameters drop out when unused).
    std::vector<std::pair<std::string, Mat*>> parameters();
};

struct ModelTape {
    EncoderTape enc;
    ProtoTape proto;
    GraphTape graph;
    std::vector<Tensor> leaves;  // aligned with Model::parameters()
};

ModelTape model_watch(Tape& tape, Model& model, bool requires_grad = true);
ModelTape model_from_leaves(Model& model, const std::vector<Tensor>& leaves);

// Prototype features for this iteration, on the tape. Learned prototypes are
// differentiable; random-image prototypes are detached encoder features of
// the stored source rows.
Tensor model_prototypes(Tape& tape, const Model& model, const ModelTape& mt);

// Prediction pipeline with all parameters treated as constants, for inner
// loops that differentiate w.r.t. the input only (the VAT direction search).
// `protos` are fixed values generated earlier in the iteration.
std::function<Tensor(Tape&, const Tensor&)> model_const_pipeline(const Model& model,
                                                                 bool with_graph,
                                                                 Mat protos_values);

// Deterministic inference: encode -> (graph) -> classify -> argmax.
std::vector<int> model_predict(const Model& model, const Mat& x, bool use_graph);
Mat model_predict_probs(const Model& model, const Mat& x, bool use_graph);

}  // namespace mgssl
