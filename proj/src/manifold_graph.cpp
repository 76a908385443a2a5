#include "mgssl/manifold_graph.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "mgssl/rng.hpp"

namespace mgssl {

namespace {

std::atomic<uint64_t> g_forward_calls{0};

// Excludes the within-block diagonal: row i of block b masks column i.
Mask block_diag_mask(int blocks, int n) {
    Mask mk(blocks * n, n);
    for (int b = 0; b < blocks; ++b)
        for (int i = 0; i < n; ++i) mk.exclude(b * n + i, i);
    return mk;
}

}  // namespace

uint64_t graph_forward_call_count() { return g_forward_calls.load(); }
void graph_reset_call_count() { g_forward_calls.store(0); }

void GraphConfig::validate() const {
    if (heads < 1) throw std::invalid_argument("GraphConfig: heads must be >= 1");
    if (layers < 1) throw std::invalid_argument("GraphConfig: layers must be >= 1");
    if (feature_dim < 1 || classes < 2)
        throw std::invalid_argument("GraphConfig: need feature_dim >= 1 and classes >= 2");
}

GraphParams graph_init(const GraphConfig& cfg) {
    cfg.validate();
    GraphParams p;
    p.cfg = cfg;
    Rng rng(cfg.init_seed);
    const int d = cfg.feature_dim, de = cfg.edge_dim();
    for (int l = 0; l < cfg.layers; ++l) {
        std::vector<Mat> ws, bs;
        for (int h = 0; h < cfg.heads; ++h) {
            Mat w(d, de);
            double s = 1.0 / std::sqrt(static_cast<double>(d));
            for (auto& x : w.v) x = rng.normal(0.0, s);
            ws.push_back(std::move(w));
            bs.emplace_back(1, de, 0.0);
        }
        p.edge_w.push_back(std::move(ws));
        p.edge_b.push_back(std::move(bs));
        int mix_in = 2 * cfg.heads * de;
        Mat mw(mix_in, d);
        double ms = 1.0 / std::sqrt(static_cast<double>(mix_in));
        for (auto& x : mw.v) x = rng.normal(0.0, ms);
        p.mix_w.push_back(std::move(mw));
        p.mix_b.emplace_back(1, d, 0.0);
    }
    p.cls_w = Mat(d, cfg.classes);
    double cs = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& x : p.cls_w.v) x = rng.normal(0.0, cs);
    p.cls_b = Mat(1, cfg.classes, 0.0);
    return p;
}

std::vector<std::pair<std::string, Mat*>> GraphParams::parameters() {
    std::vector<std::pair<std::string, Mat*>> out;
    for (size_t l = 0; l < edge_w.size(); ++l) {
        for (size_t h = 0; h < edge_w[l].size(); ++h) {
            std::string base = "graph.l" + std::to_string(l) + ".h" + std::to_string(h);
            out.emplace_back(base + ".edge_w", &edge_w[l][h]);
            out.emplace_back(base + ".edge_b", &edge_b[l][h]);
        }
        out.emplace_back("graph.l" + std::to_string(l) + ".mix_w", &mix_w[l]);
        out.emplace_back("graph.l" + std::to_string(l) + ".mix_b", &mix_b[l]);
    }
    out.emplace_back("graph.cls_w", &cls_w);
    out.emplace_back("graph.cls_b", &cls_b);
    return out;
}

GraphTape graph_watch(Tape& tape, const GraphParams& p, bool requires_grad) {
    GraphTape g;
    g.cfg = &p.cfg;
    for (size_t l = 0; l < p.edge_w.size(); ++l) {
        std::vector<Tensor> ws, bs;
        for (size_t h = 0; h < p.edge_w[l].size(); ++h) {
            ws.push_back(tape.leaf(p.edge_w[l][h], requires_grad));
            bs.push_back(tape.leaf(p.edge_b[l][h], requires_grad));
        }
        g.edge_w.push_back(std::move(ws));
        g.edge_b.push_back(std::move(bs));
        g.mix_w.push_back(tape.leaf(p.mix_w[l], requires_grad));
        g.mix_b.push_back(tape.leaf(p.mix_b[l], requires_grad));
    }
    g.cls_w = tape.leaf(p.cls_w, requires_grad);
    g.cls_b = tape.leaf(p.cls_b, requires_grad);
    return g;
}

GraphTape graph_from_leaves(const GraphConfig& cfg, const std::vector<Tensor>& leaves,
                            size_t& offset) {
    GraphTape g;
    g.cfg = &cfg;
    for (int l = 0; l < cfg.layers; ++l) {
        std::vector<Tensor> ws, bs;
        for (int h = 0; h < cfg.heads; ++h) {
            ws.push_back(leaves.at(offset++));
            bs.push_back(leaves.at(offset++));
        }
        g.edge_w.push_back(std::move(ws));
        g.edge_b.push_back(std::move(bs));
        g.mix_w.push_back(leaves.at(offset++));
        g.mix_b.push_back(leaves.at(offset++));
    }
    g.cls_w = leaves.at(offset++);
    g.cls_b = leaves.at(offset++);
    return g;
}

namespace {

struct LayerEdges {
    std::vector<Tensor> per_head;  // each (B*n) x n
};

// One message-passing block over stacked node features.
Tensor graph_layer(const GraphTape& g, int layer, const Tensor& f_stacked, int blocks, int n,
                   LayerEdges* edges_out) {
    const GraphConfig& cfg = *g.cfg;
    Mask diag = block_diag_mask(blocks, n);
    std::vector<Tensor> globals, aggregates;
    for (int h = 0; h < cfg.heads; ++h) {
        Tensor ge = leaky_relu(add(matmul(f_stacked, g.edge_w[layer][h]), g.edge_b[layer][h]),
                               cfg.leaky_slope);
        Tensor logits = block_gram(ge, n);
        if (cfg.logit_scaling)
            logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(cfg.edge_dim())));
        Tensor w = softmax_rows(logits, &diag);
        if (edges_out) edges_out->per_head.push_back(w);
        globals.push_back(ge);
        aggregates.push_back(block_matmul(w, ge, n));
    }
    Tensor mix_in = globals[0];
    for (size_t h = 1; h < globals.size(); ++h) mix_in = concat_cols(mix_in, globals[h]);
    for (const Tensor& a : aggregates) mix_in = concat_cols(mix_in, a);
    Tensor msg = add(matmul(mix_in, g.mix_w[layer]), g.mix_b[layer]);
    return leaky_relu(add(f_stacked, msg), cfg.leaky_slope);
}

}  // namespace

GraphForward graph_forward_batch(const GraphTape& g, const Tensor& instances,
                                 const Tensor& protos) {
    g_forward_calls.fetch_add(1, std::memory_order_relaxed);
    const GraphConfig& cfg = *g.cfg;
    if (instances.cols() != cfg.feature_dim || protos.cols() != cfg.feature_dim)
        throw std::invalid_argument("graph_forward_batch: feature dim mismatch, instances " +
                                    instances.value().shape_str() + ", protos " +
                                    protos.value().shape_str() + ", expected dim " +
                                    std::to_string(cfg.feature_dim));
    const int B = instances.rows();
    const int P = protos.rows();
    const int n = P + 1;
    if (n < 2) throw std::invalid_argument("graph_forward_batch: degenerate graph, need >= 2 nodes");

    // stack: block b = [instance b; all prototypes]
    Tensor pool = concat_rows(instances, protos);
    std::vector<int> idx(static_cast<size_t>(B) * n);
    for (int b = 0; b < B; ++b) {
        idx[static_cast<size_t>(b) * n] = b;
        for (int j = 0; j < P; ++j) idx[static_cast<size_t>(b) * n + 1 + j] = B + j;
    }
    Tensor f = gather_rows(pool, idx);

    GraphForward out;
    for (int l = 0; l < cfg.layers; ++l) {
        LayerEdges edges;
        f = graph_layer(g, l, f, B, n, &edges);
        if (l == cfg.layers - 1) out.edges_per_head = std::move(edges.per_head);
    }
    out.refined_stacked = f;
    out.edges_stacked = out.edges_per_head[0];
    std::vector<int> inst_rows(B);
    for (int b = 0; b < B; ++b) inst_rows[b] = b * n;
    out.refined_instances = gather_rows(f, inst_rows);
    return out;
}

std::vector<EdgeMatrix> learn_edges(const GraphParams& p, const Mat& node_features) {
    if (node_features.rows < 2)
        throw std::invalid_argument("learn_edges: degenerate graph with " +
                                    std::to_string(node_features.rows) + " node(s)");
    if (node_features.cols != p.cfg.feature_dim)
        throw std::invalid_argument("learn_edges: feature dim mismatch");
    Tape tape;
    GraphTape g = graph_watch(tape, p, false);
    Tensor f = tape.constant(node_features);
    const int n = node_features.rows;
    Mask diag = block_diag_mask(1, n);
    std::vector<EdgeMatrix> out;
    for (int h = 0; h < p.cfg.heads; ++h) {
        Tensor ge = leaky_relu(add(matmul(f, g.edge_w[0][h]), g.edge_b[0][h]), p.cfg.leaky_slope);
        Tensor logits = block_gram(ge, n);
        if (p.cfg.logit_scaling)
            logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(p.cfg.edge_dim())));
        out.push_back({softmax_rows(logits, &diag).detached()});
    }
    return out;
}

Mat refine(const GraphParams& p, const Mat& node_features, const std::vector<EdgeMatrix>& edges) {
    if (static_cast<int>(edges.size()) != p.cfg.heads)
        throw std::invalid_argument("refine: expected one edge matrix per head");
    Tape tape;
    GraphTape g = graph_watch(tape, p, false);
    Tensor f = tape.constant(node_features);
    const int n = node_features.rows;
    std::vector<Tensor> globals, aggregates;
    for (int h = 0; h < p.cfg.heads; ++h) {
        Tensor ge = leaky_relu(add(matmul(f, g.edge_w[0][h]), g.edge_b[0][h]), p.cfg.leaky_slope);
        Tensor w = tape.constant(edges[h].w);
        globals.push_back(ge);
        aggregates.push_back(block_matmul(w, ge, n));
    }
    Tensor mix_in = globals[0];
    for (size_t h = 1; h < globals.size(); ++h) mix_in = concat_cols(mix_in, globals[h]);
    for (const Tensor& a : aggregates) mix_in = concat_cols(mix_in, a);
    Tensor msg = add(matmul(mix_in, g.mix_w[0]), g.mix_b[0]);
    return leaky_relu(add(f, msg), p.cfg.leaky_slope).detached();
}

InstanceForward forward_instance(const GraphParams& p, const Mat& instance_feature,
                                 const Mat& protos) {
    if (instance_feature.rows != 1)
        throw std::invalid_argument("forward_instance: expected a single 1xd instance row");
    Tape tape;
    GraphTape g = graph_watch(tape, p, false);
    GraphForward fw = graph_forward_batch(g, tape.constant(instance_feature),
                                          tape.constant(protos));
    InstanceForward out;
    out.refined_instance = fw.refined_instances.detached();
    const Mat& stacked = fw.refined_stacked.value();
    out.refined_protos = Mat(protos.rows, protos.cols);
    for (int j = 0; j < protos.rows; ++j)
        for (int c = 0; c < protos.cols; ++c)
            out.refined_protos.at(j, c) = stacked.at(1 + j, c);
    for (const Tensor& e : fw.edges_per_head) out.edges.push_back({e.detached()});
    return out;
}

Tensor classify(const GraphTape& g, const Tensor& features) {
    if (features.cols() != g.cfg->feature_dim)
        throw std::invalid_argument("classify: feature dim mismatch");
    return add(matmul(features, g.cls_w), g.cls_b);
}

Mat classify_values(const GraphParams& p, const Mat& features) {
    Tape tape;
    GraphTape g = graph_watch(tape, p, false);
    return classify(g, tape.constant(features)).detached();
}

}  // namespace mgssl
