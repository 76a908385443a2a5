#include "mgssl/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace mgssl {

void EncoderConfig::validate() const {
    if (input_dim < 1 || feature_dim < 1)
        throw std::invalid_argument("EncoderConfig: dims must be >= 1");
    for (int h : hidden_dims)
        if (h < 1) throw std::invalid_argument("EncoderConfig: hidden dims must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw std::invalid_argument("EncoderConfig: dropout_rate must be in [0, 1)");
}

EncoderParams encoder_init(const EncoderConfig& cfg) {
    cfg.validate();
    EncoderParams p;
    p.cfg = cfg;
    Rng rng(cfg.init_seed);
    std::vector<int> dims;
    dims.push_back(cfg.input_dim);
    for (int h : cfg.hidden_dims) dims.push_back(h);
    dims.push_back(cfg.feature_dim);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        int fan_in = dims[l], fan_out = dims[l + 1];
        Mat w(fan_in, fan_out);
        double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& x : w.v) x = rng.normal(0.0, s);
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(1, fan_out, 0.0);
    }
    return p;
}

std::vector<std::pair<std::string, Mat*>> EncoderParams::parameters() {
    std::vector<std::pair<std::string, Mat*>> out;
    for (size_t l = 0; l < weights.size(); ++l) {
        out.emplace_back("encoder.w" + std::to_string(l), &weights[l]);
        out.emplace_back("encoder.b" + std::to_string(l), &biases[l]);
    }
    return out;
}

EncoderTape encoder_watch(Tape& tape, const EncoderParams& p, bool requires_grad) {
    EncoderTape e;
    e.cfg = &p.cfg;
    for (size_t l = 0; l < p.weights.size(); ++l) {
        e.w.push_back(tape.leaf(p.weights[l], requires_grad));
        e.b.push_back(tape.leaf(p.biases[l], requires_grad));
    }
    return e;
}

EncoderTape encoder_from_leaves(const EncoderConfig& cfg, const std::vector<Tensor>& leaves,
                                size_t& offset) {
    EncoderTape e;
    e.cfg = &cfg;
    size_t layers = cfg.hidden_dims.size() + 1;
    for (size_t l = 0; l < layers; ++l) {
        e.w.push_back(leaves.at(offset++));
        e.b.push_back(leaves.at(offset++));
    }
    return e;
}

Tensor encode(const EncoderTape& e, const Tensor& x, bool stochastic, Rng* rng) {
    const EncoderConfig& cfg = *e.cfg;
    if (x.cols() != cfg.input_dim)
        throw std::invalid_argument("encode: input has " + std::to_string(x.cols()) +
                                    " columns, expected " + std::to_string(cfg.input_dim));
    Tensor h = x;
    const size_t layers = e.w.size();
    for (size_t l = 0; l < layers; ++l) {
        h = add(matmul(h, e.w[l]), e.b[l]);
        if (l + 1 < layers) {
            h = leaky_relu(h, cfg.leaky_slope);
            if (stochastic && cfg.dropout_rate > 0.0) {
                if (!rng) throw std::invalid_argument("encode: stochastic pass needs an rng");
                Mat mask(h.rows(), h.cols());
                double keep = 1.0 - cfg.dropout_rate;
                for (auto& m : mask.v) m = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
                h = mul(h, x.tape()->constant(std::move(mask)));
            }
        }
    }
    return h;
}

Mat encode_values(const EncoderParams& p, const Mat& x) {
    Tape tape;
    EncoderTape e = encoder_watch(tape, p, false);
    return encode(e, tape.constant(x)).detached();
}

}  // namespace mgssl
