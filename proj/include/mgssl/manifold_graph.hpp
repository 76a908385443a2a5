#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mgssl/tensor.hpp"

namespace mgssl {

// Per-instance fully connected graph over one instance plus all prototypes.
// Edges are attention weights from dot products of learned edge embeddings;
// node features are refined through a residual message-passing block.
//
// Batched forwards stack B independent (P+1)-node blocks and process each
// block in isolation, so results are bit-identical to single-instance runs.

struct GraphConfig {
    int heads = 1;
    int layers = 1;
    int feature_dim = 64;
    int classes = 2;
    int edge_embed_dim = -1;  // -1: use feature_dim
    double leaky_slope = 0.1;
    bool logit_scaling = false;  // divide edge logits by sqrt(edge_embed_dim)
    uint64_t init_seed = 0;

    int edge_dim() const { return edge_embed_dim > 0 ? edge_embed_dim : feature_dim; }
    void validate() const;
};

struct GraphParams {
    GraphConfig cfg;
    // edge_w/edge_b: [layer][head], mix_w/mix_b: [layer]
    std::vector<std::vector<Mat>> edge_w, edge_b;
    std::vector<Mat> mix_w, mix_b;
    Mat cls_w, cls_b;

    std::vector<std::pair<std::string, Mat*>> parameters();
};

GraphParams graph_init(const GraphConfig& cfg);

struct GraphTape {
    const GraphConfig* cfg = nullptr;
    std::vector<std::vector<Tensor>> edge_w, edge_b;
    std::vector<Tensor> mix_w, mix_b;
    Tensor cls_w, cls_b;
};

GraphTape graph_watch(Tape& tape, const GraphParams& p, bool requires_grad = true);
GraphTape graph_from_leaves(const GraphConfig& cfg, const std::vector<Tensor>& leaves,
                            size_t& offset);

// Row-stochastic attention weights with a zeroed diagonal.
struct EdgeMatrix {
    Mat w;  // n x n, rows sum to 1, diagonal exactly 0
};

struct GraphForward {
    Tensor refined_instances;            // B x d
    Tensor refined_stacked;              // (B*(P+1)) x d, final-layer node features
    Tensor edges_stacked;                // final layer, head 0: (B*(P+1)) x (P+1)
    std::vector<Tensor> edges_per_head;  // final layer, each (B*(P+1)) x (P+1)
};

// Batched forward: one graph per instance row, every graph sharing `protos`.
GraphForward graph_forward_batch(const GraphTape& g, const Tensor& instances,
                                 const Tensor& protos);

// Single-graph edge learning over arbitrary node features (n x d), one
// EdgeMatrix per head.
std::vector<EdgeMatrix> learn_edges(const GraphParams& p, const Mat& node_features);

// Single-graph refinement given node features and per-head edges.
Mat refine(const GraphParams& p, const Mat& node_features,
           const std::vector<EdgeMatrix>& edges);

struct InstanceForward {
    Mat refined_instance;  // 1 x d
    Mat refined_protos;    // P x d
    std::vector<EdgeMatrix> edges;
};

InstanceForward forward_instance(const GraphParams& p, const Mat& instance_feature,
                                 const Mat& protos);

Tensor classify(const GraphTape& g, const Tensor& features);
Mat classify_values(const GraphParams& p, const Mat& features);

uint64_t graph_forward_call_count();
void graph_reset_call_count();

}  // namespace mgssl
