#include "mgssl/proto_gen.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "mgssl/rng.hpp"

namespace mgssl {

namespace {
std::atomic<uint64_t> g_generate_calls{0};
}

uint64_t proto_generate_call_count() { return g_generate_calls.load(); }
void proto_reset_call_count() { g_generate_calls.store(0); }

void PrototypeConfig::validate() const {
    if (K < 1) throw std::invalid_argument("PrototypeConfig: K must be >= 1");
    if (C < 2) throw std::invalid_argument("PrototypeConfig: C must be >= 2");
    if (embed_dim_k < 1 || embed_dim_c < 1 || output_dim < 1)
        throw std::invalid_argument("PrototypeConfig: dims must be >= 1");
}

PrototypeParams proto_init(const PrototypeConfig& cfg) {
    cfg.validate();
    PrototypeParams p;
    p.cfg = cfg;
    Rng rng(cfg.init_seed);
    // small embedding init keeps early prototypes near the origin
    p.embed_k = Mat(cfg.K, cfg.embed_dim_k);
    for (auto& x : p.embed_k.v) x = rng.normal(0.0, 0.05);
    p.embed_c = Mat(cfg.C, cfg.embed_dim_c);
    for (auto& x : p.embed_c.v) x = rng.normal(0.0, 0.05);

    std::vector<int> dims;
    dims.push_back(cfg.embed_dim_k + cfg.embed_dim_c);
    for (int h : cfg.mlp_hidden) dims.push_back(h);
    dims.push_back(cfg.output_dim);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        Mat w(dims[l], dims[l + 1]);
        double s = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        for (auto& x : w.v) x = rng.normal(0.0, s);
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(1, dims[l + 1], 0.0);
    }
    return p;
}

std::vector<std::pair<std::string, Mat*>> PrototypeParams::parameters() {
    std::vector<std::pair<std::string, Mat*>> out;
    out.emplace_back("proto.embed_k", &embed_k);
    out.emplace_back("proto.embed_c", &embed_c);
    for (size_t l = 0; l < weights.size(); ++l) {
        out.emplace_back("proto.w" + std::to_string(l), &weights[l]);
        out.emplace_back("proto.b" + std::to_string(l), &biases[l]);
    }
    return out;
}

ProtoTape proto_watch(Tape& tape, const PrototypeParams& p, bool requires_grad) {
    ProtoTape t;
    t.cfg = &p.cfg;
    t.embed_k = tape.leaf(p.embed_k, requires_grad);
    t.embed_c = tape.leaf(p.embed_c, requires_grad);
    for (size_t l = 0; l < p.weights.size(); ++l) {
        t.w.push_back(tape.leaf(p.weights[l], requires_grad));
        t.b.push_back(tape.leaf(p.biases[l], requires_grad));
    }
    return t;
}

ProtoTape proto_from_leaves(const PrototypeConfig& cfg, const std::vector<Tensor>& leaves,
                            size_t& offset) {
    ProtoTape t;
    t.cfg = &cfg;
    t.embed_k = leaves.at(offset++);
    t.embed_c = leaves.at(offset++);
    size_t layers = cfg.mlp_hidden.size() + 1;
    for (size_t l = 0; l < layers; ++l) {
        t.w.push_back(leaves.at(offset++));
        t.b.push_back(leaves.at(offset++));
    }
    return t;
}

Tensor generate_all(const ProtoTape& p) {
    const PrototypeConfig& cfg = *p.cfg;
    g_generate_calls.fetch_add(1, std::memory_order_relaxed);
    std::vector<int> idx_k(cfg.total()), idx_c(cfg.total());
    for (int c = 0; c < cfg.C; ++c) {
        for (int k = 0; k < cfg.K; ++k) {
            idx_k[c * cfg.K + k] = k;
            idx_c[c * cfg.K + k] = c;
        }
    }
    Tensor f_con = concat_cols(gather_rows(p.embed_k, idx_k), gather_rows(p.embed_c, idx_c));
    Tensor h = f_con;
    const size_t layers = p.w.size();
    for (size_t l = 0; l < layers; ++l) {
        h = add(matmul(h, p.w[l]), p.b[l]);
        if (l + 1 < layers) h = leaky_relu(h, 0.1);
    }
    return h;
}

std::vector<int> proto_labels(const PrototypeConfig& cfg) {
    std::vector<int> labels(cfg.total());
    for (int c = 0; c < cfg.C; ++c)
        for (int k = 0; k < cfg.K; ++k) labels[c * cfg.K + k] = c;
    return labels;
}

Tensor class_centers(const Tensor& protos, int K, int C) {
    if (protos.rows() != K * C)
        throw std::invalid_argument("class_centers: expected " + std::to_string(K * C) +
                                    " prototype rows, got " + std::to_string(protos.rows()));
    Mat avg(C, K * C, 0.0);
    for (int c = 0; c < C; ++c)
        for (int k = 0; k < K; ++k) avg.at(c, c * K + k) = 1.0 / K;
    return matmul(protos.tape()->constant(std::move(avg)), protos);
}

PrototypeSet generate_set(const PrototypeParams& p, long iteration) {
    Tape tape;
    ProtoTape t = proto_watch(tape, p, false);
    PrototypeSet s;
    s.values = generate_all(t).detached();
    s.labels = proto_labels(p.cfg);
    s.iteration = iteration;
    return s;
}

}  // namespace mgssl
