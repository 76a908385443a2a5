#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mgssl/tensor.hpp"

namespace mgssl {

// Prototype generator: K prototypes per class, produced by an MLP over the
// concatenation of a per-slot embedding and a per-class embedding. Parameter
// count grows additively in K and C rather than with their product.

struct PrototypeConfig {
    int K = 20;
    int C = 2;
    int embed_dim_k = 32;
    int embed_dim_c = 32;
    std::vector<int> mlp_hidden{128};
    int output_dim = 64;  // must match the encoder feature dim
    uint64_t init_seed = 0;

    int total() const { return K * C; }
    void validate() const;
};

struct PrototypeParams {
    PrototypeConfig cfg;
    Mat embed_k;  // K x embed_dim_k
    Mat embed_c;  // C x embed_dim_c
    std::vector<Mat> weights;
    std::vector<Mat> biases;

    std::vector<std::pair<std::string, Mat*>> parameters();
};

PrototypeParams proto_init(const PrototypeConfig& cfg);

struct ProtoTape {
    const PrototypeConfig* cfg = nullptr;
    Tensor embed_k, embed_c;
    std::vector<Tensor> w, b;
};

ProtoTape proto_watch(Tape& tape, const PrototypeParams& p, bool requires_grad = true);
ProtoTape proto_from_leaves(const PrototypeConfig& cfg, const std::vector<Tensor>& leaves,
                            size_t& offset);

// All K*C prototypes, class-major: row c*K + k holds prototype k of class c.
Tensor generate_all(const ProtoTape& p);

// Call counters let tests assert that warm-up never touches the generator.
uint64_t proto_generate_call_count();
void proto_reset_call_count();
std::vector<int> proto_labels(const PrototypeConfig& cfg);

// Per-class arithmetic mean of the prototypes, C x d.
Tensor class_centers(const Tensor& protos, int K, int C);

// Iteration-stamped value snapshot of the generated prototypes.
struct PrototypeSet {
    Mat values;               // (K*C) x d
    std::vector<int> labels;  // class per row
    long iteration = -1;
};

PrototypeSet generate_set(const PrototypeParams& p, long iteration = -1);

}  // namespace mgssl
