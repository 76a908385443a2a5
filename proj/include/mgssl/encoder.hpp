#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mgssl/rng.hpp"
#include "mgssl/tensor.hpp"

namespace mgssl {

// Feature extractor: a configurable MLP mapping raw inputs to feature vectors.

struct EncoderConfig {
    int input_dim = 2;
    std::vector<int> hidden_dims{128, 128};
    int feature_dim = 64;
    double leaky_slope = 0.1;
    double dropout_rate = 0.0;  // [0, 0.3] supported
    uint64_t init_seed = 0;

    void validate() const;
};

struct EncoderParams {
    EncoderConfig cfg;
    std::vector<Mat> weights;
    std::vector<Mat> biases;

    std::vector<std::pair<std::string, Mat*>> parameters();
};

EncoderParams encoder_init(const EncoderConfig& cfg);

// Tape-side view of the parameters: leaves when training, constants when the
// surrounding computation only differentiates w.r.t. the input.
struct EncoderTape {
    const EncoderConfig* cfg = nullptr;
    std::vector<Tensor> w, b;
};

EncoderTape encoder_watch(Tape& tape, const EncoderParams& p, bool requires_grad = true);
EncoderTape encoder_from_leaves(const EncoderConfig& cfg, const std::vector<Tensor>& leaves,
                                size_t& offset);

Tensor encode(const EncoderTape& e, const Tensor& x, bool stochastic = false, Rng* rng = nullptr);
Mat encode_values(const EncoderParams& p, const Mat& x);

}  // namespace mgssl
