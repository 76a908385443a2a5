#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

// Dense 2-D double tensors with reverse-mode differentiation on a tape.
// A Tape owns every intermediate value of one forward computation; ops
// append nodes in topological order and backward() walks them once in
// reverse. Tensors are cheap handles (tape pointer + node id).

namespace mgssl {

// Plain value matrix, row-major. Used for parameters, datasets and any
// detached result; Tape nodes copy Mats in and hand Mats back out.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}
    static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Mat row(std::initializer_list<double> vals);

    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    int size() const { return rows * cols; }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    std::string shape_str() const;
};

enum class Axis {
    All,   // collapse everything -> 1x1
    Rows,  // collapse rows       -> 1xC
    Cols,  // collapse cols       -> Rx1
};

enum class Reduce { Sum, Mean, MeanNonzero };

// Marks entries excluded from an op (softmax_rows, reduce_max).
struct Mask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> excluded;

    Mask() = default;
    Mask(int r, int c, bool all_excluded = false)
        : rows(r), cols(c), excluded(static_cast<size_t>(r) * c, all_excluded ? 1 : 0) {}
    void exclude(int r, int c) { excluded[static_cast<size_t>(r) * cols + c] = 1; }
    bool is_excluded(int r, int c) const { return excluded[static_cast<size_t>(r) * cols + c] != 0; }
};

class Tape;

class Tensor {
public:
    Tensor() = default;
    Tensor(Tape* t, int id) : tape_(t), id_(id) {}

    int rows() const;
    int cols() const;
    const Mat& value() const;
    Mat detached() const { return value(); }
    double scalar_value() const;  // requires 1x1
    bool requires_grad() const;
    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor leaf(Mat m, bool requires_grad = true);
    Tensor constant(Mat m) { return leaf(std::move(m), false); }
    Tensor scalar(double s);

    // Reverse sweep from a 1x1 loss. A second backward without reset() is a
    // contract error; reset() clears gradients and re-arms the tape.
    void backward(const Tensor& loss);
    void reset();
    bool backward_done() const { return ran_backward_; }

    const Mat& grad(const Tensor& t) const;
    int size() const { return static_cast<int>(nodes_.size()); }

    // --- internal (used by the op implementations) ---
    using BackFn = std::function<void(Tape&, int)>;
    int add_node(Mat val, bool needs_grad, BackFn back);
    Mat& val(int id) { return nodes_[id].val; }
    const Mat& val(int id) const { return nodes_[id].val; }
    Mat& grad_buf(int id) { return nodes_[id].grad; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }

private:
    struct Node {
        Mat val;
        Mat grad;  // allocated lazily in backward()
        bool needs_grad = false;
        BackFn back;
    };
    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

// --- Operations -------------------------------------------------------------
// Binary elementwise ops broadcast a 1x1, 1xC or Rx1 operand on either side.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& t);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor min_elem(const Tensor& a, const Tensor& b);  // subgradient to the first arg on ties

Tensor scale(const Tensor& t, double c);
Tensor add_scalar(const Tensor& t, double c);
Tensor leaky_relu(const Tensor& t, double slope = 0.1);
Tensor square(const Tensor& t);
Tensor hinge(const Tensor& t);  // max(x, 0), subgradient 0 at the kink
Tensor abs_val(const Tensor& t);
Tensor log_val(const Tensor& t);  // domain error on x <= 0
Tensor exp_val(const Tensor& t);
Tensor clamp_min(const Tensor& t, double c);

// Row softmax with optional exclusion mask: excluded entries are exactly 0 in
// the output and receive zero gradient. A fully excluded row is an error.
Tensor softmax_rows(const Tensor& t, const Mask* excluded = nullptr);

Tensor reduce(const Tensor& t, Reduce kind, Axis axis);
Tensor reduce_max(const Tensor& t, Axis axis, const Mask* excluded = nullptr);

Tensor rows_l2_norm(const Tensor& t);       // Rx1, zero rows get zero gradient
Tensor l2_normalize_rows(const Tensor& t);  // degenerate-vector error on a zero row
Tensor cosine_similarity(const Tensor& a, const Tensor& b);  // two 1xD rows -> 1x1
Tensor pairwise_cosine(const Tensor& a, const Tensor& b);    // NxD, MxD -> NxM

Tensor gather_rows(const Tensor& t, std::vector<int> idx);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& t, int rows, int cols);

// Block ops over a stack of B independent n-row blocks. Each block is
// processed in isolation, so results are bit-identical to running the
// blocks one at a time.
Tensor block_gram(const Tensor& g, int n);                    // per block: G_b G_b^T
Tensor block_matmul(const Tensor& w, const Tensor& g, int n); // per block: W_b G_b

// Value-level helpers shared across modules.
Mat one_hot(const std::vector<int>& labels, int classes);
double row_norm(const Mat& m, int r);
double mean_row_norm(const Mat& m);

}  // namespace mgssl
