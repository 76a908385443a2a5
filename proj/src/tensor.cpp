#include "mgssl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace mgssl {

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Mat m;
    m.rows = static_cast<int>(rows.size());
    m.cols = m.rows > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    m.v.reserve(static_cast<size_t>(m.rows) * m.cols);
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != m.cols)
            throw std::invalid_argument("Mat::from_rows: ragged rows");
        m.v.insert(m.v.end(), r.begin(), r.end());
    }
    return m;
}

Mat Mat::row(std::initializer_list<double> vals) {
    Mat m(1, static_cast<int>(vals.size()));
    std::copy(vals.begin(), vals.end(), m.v.begin());
    return m;
}

std::string Mat::shape_str() const {
    std::ostringstream os;
    os << "(" << rows << "x" << cols << ")";
    return os.str();
}

// --- Tape --------------------------------------------------------------------

int Tape::add_node(Mat val, bool needs_grad, BackFn back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::leaf(Mat m, bool requires_grad) {
    int id = add_node(std::move(m), requires_grad, nullptr);
    return Tensor(this, id);
}

Tensor Tape::scalar(double s) {
    Mat m(1, 1);
    m.v[0] = s;
    return constant(std::move(m));
}

void Tape::backward(const Tensor& loss) {
    if (loss.tape() != this || loss.id() < 0)
        throw std::invalid_argument("backward: loss is not on this tape");
    if (loss.rows() != 1 || loss.cols() != 1)
        throw std::invalid_argument("backward: loss must be 1x1, got " + loss.value().shape_str());
    if (ran_backward_)
        throw std::logic_error("backward: tape already consumed; call reset() first");
    ran_backward_ = true;

    for (auto& n : nodes_) {
        if (n.needs_grad) n.grad = Mat(n.val.rows, n.val.cols, 0.0);
    }
    Node& ln = nodes_[loss.id()];
    if (!ln.needs_grad)
        ln.grad = Mat(1, 1, 0.0);
    ln.grad.v[0] = 1.0;

    for (int i = loss.id(); i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.back && n.needs_grad) n.back(*this, i);
    }
}

void Tape::reset() {
    for (auto& n : nodes_) n.grad = Mat();
    ran_backward_ = false;
}

const Mat& Tape::grad(const Tensor& t) const {
    if (t.tape() != this) throw std::invalid_argument("grad: tensor is not on this tape");
    if (!ran_backward_) throw std::logic_error("grad: backward has not run");
    const Node& n = nodes_[t.id()];
    if (!n.needs_grad) throw std::invalid_argument("grad: tensor does not require grad");
    return n.grad;
}

// --- Tensor ------------------------------------------------------------------

int Tensor::rows() const { return value().rows; }
int Tensor::cols() const { return value().cols; }

const Mat& Tensor::value() const {
    if (!tape_) throw std::logic_error("Tensor: empty handle");
    return tape_->val(id_);
}

double Tensor::scalar_value() const {
    const Mat& m = value();
    if (m.rows != 1 || m.cols != 1)
        throw std::invalid_argument("scalar_value: tensor is " + m.shape_str() + ", not 1x1");
    return m.v[0];
}

bool Tensor::requires_grad() const {
    if (!tape_) return false;
    return tape_->needs_grad(id_);
}

// --- op helpers ----------------------------------------------------------------

namespace {

Tape* common_tape(const Tensor& a, const Tensor& b) {
    if (!a.valid() || !b.valid()) throw std::logic_error("op: empty tensor handle");
    if (a.tape() != b.tape()) throw std::invalid_argument("op: tensors live on different tapes");
    return a.tape();
}

Tape* own_tape(const Tensor& t) {
    if (!t.valid()) throw std::logic_error("op: empty tensor handle");
    return t.tape();
}

// Broadcast index for operand with shape (br, bc) against output (r, c).
inline size_t bidx(int r, int c, int br, int bc) {
    return static_cast<size_t>(br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c);
}

bool broadcastable(const Mat& out, const Mat& b) {
    return (b.rows == out.rows || b.rows == 1) && (b.cols == out.cols || b.cols == 1);
}

enum class Bin { Add, Sub, Mul, Div, Min };

Tensor binary_op(const Tensor& a, const Tensor& b, Bin op, const char* name) {
    Tape* tp = common_tape(a, b);
    const Mat& A = a.value();
    const Mat& B = b.value();

    // Output takes the larger shape; the other operand must broadcast to it.
    const Mat* big = &A;
    if (B.size() > A.size() || (B.rows >= A.rows && B.cols >= A.cols)) big = &B;
    Mat out(big->rows, big->cols);
    if (!broadcastable(out, A) || !broadcastable(out, B))
        throw std::invalid_argument(std::string(name) + ": incompatible shapes " + A.shape_str() +
                                    " vs " + B.shape_str());

    const int R = out.rows, C = out.cols;
    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < C; ++c) {
            double x = A.v[bidx(r, c, A.rows, A.cols)];
            double y = B.v[bidx(r, c, B.rows, B.cols)];
            double z = 0;
            switch (op) {
                case Bin::Add: z = x + y; break;
                case Bin::Sub: z = x - y; break;
                case Bin::Mul: z = x * y; break;
                case Bin::Div: z = x / y; break;
                case Bin::Min: z = x <= y ? x : y; break;
            }
            out.at(r, c) = z;
        }
    }

    bool ng = a.requires_grad() || b.requires_grad();
    int pa = a.id(), pb = b.id();
    auto back = [pa, pb, op](Tape& t, int self) {
        const Mat& g = t.grad_buf(self);
        const Mat& A = t.val(pa);
        const Mat& B = t.val(pb);
        const bool ga = t.needs_grad(pa);
        const bool gb = t.needs_grad(pb);
        Mat* da = ga ? &t.grad_buf(pa) : nullptr;
        Mat* db = gb ? &t.grad_buf(pb) : nullptr;
        for (int r = 0; r < g.rows; ++r) {
            for (int c = 0; c < g.cols; ++c) {
                double gv = g.at(r, c);
                size_t ia = bidx(r, c, A.rows, A.cols);
                size_t ib = bidx(r, c, B.rows, B.cols);
                double x = A.v[ia];
                double y = B.v[ib];
                switch (op) {
                    case Bin::Add:
                        if (da) da->v[ia] += gv;
                        if (db) db->v[ib] += gv;
                        break;
                    case Bin::Sub:
                        if (da) da->v[ia] += gv;
                        if (db) db->v[ib] -= gv;
                        break;
                    case Bin::Mul:
                        if (da) da->v[ia] += gv * y;
                        if (db) db->v[ib] += gv * x;
                        break;
                    case Bin::Div:
                        if (da) da->v[ia] += gv / y;
                        if (db) db->v[ib] -= gv * x / (y * y);
                        break;
                    case Bin::Min:
                        if (x <= y) {
                            if (da) da->v[ia] += gv;
                        } else if (db) {
                            db->v[ib] += gv;
                        }
                        break;
                }
            }
        }
    };
    int id = tp->add_node(std::move(out), ng, ng ? Tape::BackFn(back) : nullptr);
    return Tensor(tp, id);
}

enum class Un { LeakyRelu, Square, Hinge, Abs, Log, Exp, ClampMin, Scale, AddScalar };

Tensor unary(const Tensor& t, Un op, double p, const char* name) {
    Tape* tp = own_tape(t);
    const Mat& X = t.value();
    Mat out(X.rows, X.cols);
    const size_t n = X.v.size();
    for (size_t i = 0; i < n; ++i) {
        double x = X.v[i];
        double y = 0;
        switch (op) {
            case Un::LeakyRelu: y = x > 0 ? x : p * x; break;
            case Un::Square: y = x * x; break;
            case Un::Hinge: y = x > 0 ? x : 0.0; break;
            case Un::Abs: y = std::fabs(x); break;
            case Un::Log:
                if (x <= 0) throw std::domain_error(std::string(name) + ": log of non-positive value");
                y = std::log(x);
                break;
            case Un::Exp: y = std::exp(x); break;
            case Un::ClampMin: y = x > p ? x : p; break;
            case Un::Scale: y = p * x; break;
            case Un::AddScalar: y = x + p; break;
        }
        out.v[i] = y;
    }
    bool ng = t.requires_grad();
    int pid = t.id();
    Tape::BackFn back;
    if (ng) {
        back = [pid, op, p](Tape& tt, int self) {
            const Mat& g = tt.grad_buf(self);
            const Mat& X = tt.val(pid);
            const Mat& Y = tt.val(self);
            Mat& d = tt.grad_buf(pid);
            const size_t n = g.v.size();
            for (size_t i = 0; i < n; ++i) {
                double x = X.v[i];
                double dd = 0;
                switch (op) {
                    case Un::LeakyRelu: dd = x > 0 ? 1.0 : p; break;
                    case Un::Square: dd = 2.0 * x; break;
                    case Un::Hinge: dd = x > 0 ? 1.0 : 0.0; break;
                    case Un::Abs: dd = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); break;
                    case Un::Log: dd = 1.0 / x; break;
                    case Un::Exp: dd = Y.v[i]; break;
                    case Un::ClampMin: dd = x > p ? 1.0 : 0.0; break;
                    case Un::Scale: dd = p; break;
                    case Un::AddScalar: dd = 1.0; break;
                }
                d.v[i] += dd * g.v[i];
            }
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

}  // namespace

// --- public ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    Tape* tp = common_tape(a, b);
    const Mat& A = a.value();
    const Mat& B = b.value();
    if (A.cols != B.rows)
        throw std::invalid_argument("matmul: inner dimensions differ, " + A.shape_str() + " x " +
                                    B.shape_str());
    const int M = A.rows, K = A.cols, N = B.cols;
    Mat out(M, N, 0.0);
    for (int i = 0; i < M; ++i) {
        const double* arow = &A.v[static_cast<size_t>(i) * K];
        double* orow = &out.v[static_cast<size_t>(i) * N];
        for (int k = 0; k < K; ++k) {
            const double aik = arow[k];
            const double* brow = &B.v[static_cast<size_t>(k) * N];
            for (int j = 0; j < N; ++j) orow[j] += aik * brow[j];
        }
    }
    bool ng = a.requires_grad() || b.requires_grad();
    int pa = a.id(), pb = b.id();
    Tape::BackFn back;
    if (ng) {
        back = [pa, pb](Tape& t, int self) {
            const Mat& g = t.grad_buf(self);
            const Mat& A = t.val(pa);
            const Mat& B = t.val(pb);
            const int M = A.rows, K = A.cols, N = B.cols;
            if (t.needs_grad(pa)) {
                Mat& da = t.grad_buf(pa);  // dA += g B^T
                for (int i = 0; i < M; ++i) {
                    for (int k = 0; k < K; ++k) {
                        double s = 0;
                        const double* grow = &g.v[static_cast<size_t>(i) * N];
                        const double* brow = &B.v[static_cast<size_t>(k) * N];
                        for (int j = 0; j < N; ++j) s += grow[j] * brow[j];
                        da.v[static_cast<size_t>(i) * K + k] += s;
                    }
                }
            }
            if (t.needs_grad(pb)) {
                Mat& db = t.grad_buf(pb);  // dB += A^T g
                for (int k = 0; k < K; ++k) {
                    double* drow = &db.v[static_cast<size_t>(k) * N];
                    for (int i = 0; i < M; ++i) {
                        const double aik = A.v[static_cast<size_t>(i) * K + k];
                        if (aik == 0.0) continue;
                        const double* grow = &g.v[static_cast<size_t>(i) * N];
                        for (int j = 0; j < N; ++j) drow[j] += aik * grow[j];
                    }
                }
            }
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor transpose(const Tensor& t) {
    Tape* tp = own_tape(t);
    const Mat& X = t.value();
    Mat out(X.cols, X.rows);
    for (int r = 0; r < X.rows; ++r)
        for (int c = 0; c < X.cols; ++c) out.at(c, r) = X.at(r, c);
    bool ng = t.requires_grad();
    int pid = t.id();
    Tape::BackFn back;
    if (ng) {
        back = [pid](Tape& tt, int self) {
            const Mat& g = tt.grad_buf(self);
            Mat& d = tt.grad_buf(pid);
            for (int r = 0; r < g.rows; ++r)
                for (int c = 0; c < g.cols; ++c) d.at(c, r) += g.at(r, c);
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, Bin::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, Bin::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, Bin::Mul, "mul"); }
Tensor divide(const Tensor& a, const Tensor& b) { return binary_op(a, b, Bin::Div, "divide"); }
Tensor min_elem(const Tensor& a, const Tensor& b) { return binary_op(a, b, Bin::Min, "min_elem"); }

Tensor scale(const Tensor& t, double c) { return unary(t, Un::Scale, c, "scale"); }
Tensor add_scalar(const Tensor& t, double c) { return unary(t, Un::AddScalar, c, "add_scalar"); }
Tensor leaky_relu(const Tensor& t, double slope) { return unary(t, Un::LeakyRelu, slope, "leaky_relu"); }
Tensor square(const Tensor& t) { return unary(t, Un::Square, 0, "square"); }
Tensor hinge(const Tensor& t) { return unary(t, Un::Hinge, 0, "hinge"); }
Tensor abs_val(const Tensor& t) { return unary(t, Un::Abs, 0, "abs_val"); }
Tensor log_val(const Tensor& t) { return unary(t, Un::Log, 0, "log_val"); }
Tensor exp_val(const Tensor& t) { return unary(t, Un::Exp, 0, "exp_val"); }
Tensor clamp_min(const Tensor& t, double c) { return unary(t, Un::ClampMin, c, "clamp_min"); }

Tensor softmax_rows(const Tensor& t, const Mask* excluded) {
    Tape* tp = own_tape(t);
    const Mat& X = t.value();
    if (excluded && (excluded->rows != X.rows || excluded->cols != X.cols))
        throw std::invalid_argument("softmax_rows: mask shape differs from input " + X.shape_str());
    Mat out(X.rows, X.cols, 0.0);
    for (int r = 0; r < X.rows; ++r) {
        double m = -std::numeric_limits<double>::infinity();
        int kept = 0;
        for (int c = 0; c < X.cols; ++c) {
            if (excluded && excluded->is_excluded(r, c)) continue;
            ++kept;
            m = std::max(m, X.at(r, c));
        }
        if (kept == 0)
            throw std::invalid_argument("softmax_rows: row " + std::to_string(r) +
                                        " is fully masked");
        double sum = 0;
        for (int c = 0; c < X.cols; ++c) {
            if (excluded && excluded->is_excluded(r, c)) continue;
            double e = std::exp(X.at(r, c) - m);
            out.at(r, c) = e;
            sum += e;
        }
        for (int c = 0; c < X.cols; ++c) {
            if (excluded && excluded->is_excluded(r, c)) continue;
            out.at(r, c) /= sum;
        }
    }
    bool ng = t.requires_grad();
    int pid = t.id();
    Tape::BackFn back;
    if (ng) {
        std::shared_ptr<Mask> mk = excluded ? std::make_shared<Mask>(*excluded) : nullptr;
        back = [pid, mk](Tape& tt, int self) {
            const Mat& g = tt.grad_buf(self);
            const Mat& Y = tt.val(self);
            Mat& d = tt.grad_buf(pid);
            for (int r = 0; r < g.rows; ++r) {
                double dot = 0;
                for (int c = 0; c < g.cols; ++c) {
                    if (mk && mk->is_excluded(r, c)) continue;
                    dot += g.at(r, c) * Y.at(r, c);
                }
                for (int c = 0; c < g.cols; ++c) {
                    if (mk && mk->is_excluded(r, c)) continue;
                    d.at(r, c) += Y.at(r, c) * (g.at(r, c) - dot);
                }
            }
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor reduce(const Tensor& t, Reduce kind, Axis axis) {
    Tape* tp = own_tape(t);
    const Mat& X = t.value();
    int orows = axis == Axis::Rows ? 1 : (axis == Axis::All ? 1 : X.rows);
    int ocols = axis == Axis::Cols ? 1 : (axis == Axis::All ? 1 : X.cols);
    Mat out(orows, ocols, 0.0);
    Mat counts(orows, ocols, 0.0);  // for MeanNonzero backward scaling
    auto slot = [&](int r, int c) -> std::pair<int, int> {
        switch (axis) {
            case Axis::All: return {0, 0};
            case Axis::Rows: return {0, c};
            case Axis::Cols: return {r, 0};
        }
        return {0, 0};
    };
    for (int r = 0; r < X.rows; ++r) {
        for (int c = 0; c < X.cols; ++c) {
            auto [orr, occ] = slot(r, c);
            double x = X.at(r, c);
            if (kind == Reduce::MeanNonzero) {
                if (x > 0) {
                    out.at(orr, occ) += x;
                    counts.at(orr, occ) += 1;
                }
            } else {
                out.at(orr, occ) += x;
            }
        }
    }
    double full = axis == Axis::All ? X.size() : (axis == Axis::Rows ? X.rows : X.cols);
    for (int i = 0; i < out.size(); ++i) {
        if (kind == Reduce::Mean) out.v[i] /= full;
        if (kind == Reduce::MeanNonzero) {
            if (counts.v[i] > 0)
                out.v[i] /= counts.v[i];
            else
                out.v[i] = 0.0;
        }
    }
    bool ng = t.requires_grad();
    int pid = t.id();
    Tape::BackFn back;
    if (ng) {
        auto cnt = std::make_shared<Mat>(counts);
        back = [pid, kind, axis, cnt, full](Tape& tt, int self) {
            const Mat& g = tt.grad_buf(self);
            const Mat& X = tt.val(pid);
            Mat& d = tt.grad_buf(pid);
            for (int r = 0; r < X.rows; ++r) {
                for (int c = 0; c < X.cols; ++c) {
                    const int orr = axis == Axis::Cols ? r : 0;
                    const int occ = axis == Axis::Rows ? c : 0;
                    double gv = g.at(orr, occ);
                    switch (kind) {
                        case Reduce::Sum: d.at(r, c) += gv; break;
                        case Reduce::Mean: d.at(r, c) += gv / full; break;
                        case Reduce::MeanNonzero: {
                            double n = cnt->at(orr, occ);
                            if (n > 0 && X.at(r, c) > 0) d.at(r, c) += gv / n;
                            break;
                        }
                    }
                }
            }
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor reduce_max(const Tensor& t, Axis axis, const Mask* excluded) {
    Tape* tp = own_tape(t);
    const Mat& X = t.value();
    if (excluded && (excluded->rows != X.rows || excluded->cols != X.cols))
        throw std::invalid_argument("reduce_max: mask shape differs from input");
    const int orows = axis == Axis::Cols ? X.rows : 1;
    const int ocols = axis == Axis::Rows ? X.cols : 1;
    Mat out(orows, ocols, -std::numeric_limits<double>::infinity());
    // argmax (first maximal entry) per output slot, flat index into X
    auto arg = std::make_shared<std::vector<int>>(static_cast<size_t>(orows) * ocols, -1);
    for (int r = 0; r < X.rows; ++r) {
        for (int c = 0; c < X.cols; ++c) {
            if (excluded && excluded->is_excluded(r, c)) continue;
            int orr = axis == Axis::Cols ? r : 0;
            int occ = axis == Axis::Rows ? c : 0;
            double x = X.at(r, c);
            size_t oi = static_cast<size_t>(orr) * ocols + occ;
            if (x > out.v[oi]) {
                out.v[oi] = x;
                (*arg)[oi] = r * X.cols + c;
            }
        }
    }
    for (size_t i = 0; i < arg->size(); ++i)
        if ((*arg)[i] < 0)
            throw std::invalid_argument("reduce_max: slice " + std::to_string(i) + " fully masked");
    bool ng = t.requires_grad();
    int pid = t.id();
    Tape::BackFn back;
    if (ng) {
        back = [pid, arg](Tape& tt, int self) {
            const Mat& g = tt.grad_buf(self);
            Mat& d = tt.grad_buf(pid);
            for (size_t i = 0; i < arg->size(); ++i) d.v[(*arg)[i]] += g.v[i];
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor rows_l2_norm(const Tensor& t) {
    Tape* tp = own_tape(t);
    const Mat& X = t.value();
    Mat out(X.rows, 1, 0.0);
    for (int r = 0; r < X.rows; ++r) {
        double s = 0;
        for (int c = 0; c < X.cols; ++c) s += X.at(r, c) * X.at(r, c);
        out.at(r, 0) = std::sqrt(s);
    }
    bool ng = t.requires_grad();
    int pid = t.id();
    Tape::BackFn back;
    if (ng) {
        back = [pid](Tape& tt, int self) {
            const Mat& g = tt.grad_buf(self);
            const Mat& X = tt.val(pid);
            const Mat& Y = tt.val(self);
            Mat& d = tt.grad_buf(pid);
            for (int r = 0; r < X.rows; ++r) {
                double n = Y.at(r, 0);
                if (n == 0.0) continue;  // subgradient 0 at the origin
                double gv = g.at(r, 0) / n;
                for (int c = 0; c < X.cols; ++c) d.at(r, c) += gv * X.at(r, c);
            }
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor l2_normalize_rows(const Tensor& t) {
    Tape* tp = own_tape(t);
    const Mat& X = t.value();
    Mat out(X.rows, X.cols);
    std::vector<double> norms(X.rows);
    for (int r = 0; r < X.rows; ++r) {
        double s = 0;
        for (int c = 0; c < X.cols; ++c) s += X.at(r, c) * X.at(r, c);
        double n = std::sqrt(s);
        if (n == 0.0)
            throw std::domain_error("l2_normalize_rows: degenerate zero-norm row " + std::to_string(r));
        norms[r] = n;
        for (int c = 0; c < X.cols; ++c) out.at(r, c) = X.at(r, c) / n;
    }
    bool ng = t.requires_grad();
    int pid = t.id();
    Tape::BackFn back;
    if (ng) {
        auto ns = std::make_shared<std::vector<double>>(std::move(norms));
        back = [pid, ns](Tape& tt, int self) {
            const Mat& g = tt.grad_buf(self);
            const Mat& Y = tt.val(self);
            Mat& d = tt.grad_buf(pid);
            for (int r = 0; r < g.rows; ++r) {
                double dot = 0;
                for (int c = 0; c < g.cols; ++c) dot += g.at(r, c) * Y.at(r, c);
                double inv = 1.0 / (*ns)[r];
                for (int c = 0; c < g.cols; ++c)
                    d.at(r, c) += (g.at(r, c) - dot * Y.at(r, c)) * inv;
            }
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    const Mat& A = a.value();
    const Mat& B = b.value();
    if (A.rows != 1 || B.rows != 1 || A.cols != B.cols)
        throw std::invalid_argument("cosine_similarity: expected two 1xD rows, got " +
                                    A.shape_str() + " and " + B.shape_str());
    return reduce(mul(l2_normalize_rows(a), l2_normalize_rows(b)), Reduce::Sum, Axis::All);
}

Tensor pairwise_cosine(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw std::invalid_argument("pairwise_cosine: feature dims differ");
    return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)));
}

Tensor gather_rows(const Tensor& t, std::vector<int> idx) {
    Tape* tp = own_tape(t);
    const Mat& X = t.value();
    for (int i : idx)
        if (i < 0 || i >= X.rows)
            throw std::invalid_argument("gather_rows: index " + std::to_string(i) +
                                        " out of range for " + X.shape_str());
    Mat out(static_cast<int>(idx.size()), X.cols);
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy_n(&X.v[static_cast<size_t>(idx[r]) * X.cols], X.cols,
                    &out.v[r * X.cols]);
    bool ng = t.requires_grad();
    int pid = t.id();
    Tape::BackFn back;
    if (ng) {
        auto ix = std::make_shared<std::vector<int>>(std::move(idx));
        back = [pid, ix](Tape& tt, int self) {
            const Mat& g = tt.grad_buf(self);
            Mat& d = tt.grad_buf(pid);
            for (size_t r = 0; r < ix->size(); ++r) {
                double* drow = &d.v[static_cast<size_t>((*ix)[r]) * d.cols];
                const double* grow = &g.v[r * g.cols];
                for (int c = 0; c < g.cols; ++c) drow[c] += grow[c];
            }
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    Tape* tp = common_tape(a, b);
    const Mat& A = a.value();
    const Mat& B = b.value();
    if (A.cols != B.cols)
        throw std::invalid_argument("concat_rows: column counts differ, " + A.shape_str() +
                                    " vs " + B.shape_str());
    Mat out(A.rows + B.rows, A.cols);
    std::copy(A.v.begin(), A.v.end(), out.v.begin());
    std::copy(B.v.begin(), B.v.end(), out.v.begin() + A.v.size());
    bool ng = a.requires_grad() || b.requires_grad();
    int pa = a.id(), pb = b.id();
    Tape::BackFn back;
    if (ng) {
        back = [pa, pb](Tape& tt, int self) {
            const Mat& g = tt.grad_buf(self);
            const Mat& A = tt.val(pa);
            if (tt.needs_grad(pa)) {
                Mat& da = tt.grad_buf(pa);
                for (int i = 0; i < da.size(); ++i) da.v[i] += g.v[i];
            }
            if (tt.needs_grad(pb)) {
                Mat& db = tt.grad_buf(pb);
                size_t off = A.v.size();
                for (int i = 0; i < db.size(); ++i) db.v[i] += g.v[off + i];
            }
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    Tape* tp = common_tape(a, b);
    const Mat& A = a.value();
    const Mat& B = b.value();
    if (A.rows != B.rows)
        throw std::invalid_argument("concat_cols: row counts differ, " + A.shape_str() + " vs " +
                                    B.shape_str());
    Mat out(A.rows, A.cols + B.cols);
    for (int r = 0; r < A.rows; ++r) {
        std::copy_n(&A.v[static_cast<size_t>(r) * A.cols], A.cols,
                    &out.v[static_cast<size_t>(r) * out.cols]);
        std::copy_n(&B.v[static_cast<size_t>(r) * B.cols], B.cols,
                    &out.v[static_cast<size_t>(r) * out.cols + A.cols]);
    }
    bool ng = a.requires_grad() || b.requires_grad();
    int pa = a.id(), pb = b.id();
    Tape::BackFn back;
    if (ng) {
        back = [pa, pb](Tape& tt, int self) {
            const Mat& g = tt.grad_buf(self);
            const Mat& A = tt.val(pa);
            const Mat& B = tt.val(pb);
            for (int r = 0; r < g.rows; ++r) {
                if (tt.needs_grad(pa)) {
                    Mat& da = tt.grad_buf(pa);
                    for (int c = 0; c < A.cols; ++c) da.at(r, c) += g.at(r, c);
                }
                if (tt.needs_grad(pb)) {
                    Mat& db = tt.grad_buf(pb);
                    for (int c = 0; c < B.cols; ++c) db.at(r, c) += g.at(r, A.cols + c);
                }
            }
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor reshape(const Tensor& t, int rows, int cols) {
    Tape* tp = own_tape(t);
    const Mat& X = t.value();
    if (rows * cols != X.size())
        throw std::invalid_argument("reshape: element count mismatch, " + X.shape_str() + " -> (" +
                                    std::to_string(rows) + "x" + std::to_string(cols) + ")");
    Mat out(rows, cols);
    out.v = X.v;
    bool ng = t.requires_grad();
    int pid = t.id();
    Tape::BackFn back;
    if (ng) {
        back = [pid](Tape& tt, int self) {
            const Mat& g = tt.grad_buf(self);
            Mat& d = tt.grad_buf(pid);
            for (size_t i = 0; i < g.v.size(); ++i) d.v[i] += g.v[i];
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor block_gram(const Tensor& g, int n) {
    Tape* tp = own_tape(g);
    const Mat& G = g.value();
    if (n < 1 || G.rows % n != 0)
        throw std::invalid_argument("block_gram: row count " + std::to_string(G.rows) +
                                    " not divisible by block size " + std::to_string(n));
    const int B = G.rows / n, D = G.cols;
    Mat out(G.rows, n, 0.0);
    for (int b = 0; b < B; ++b) {
        const double* blk = &G.v[static_cast<size_t>(b) * n * D];
        double* orow = &out.v[static_cast<size_t>(b) * n * n];
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double s = 0;
                const double* ri = blk + static_cast<size_t>(i) * D;
                const double* rj = blk + static_cast<size_t>(j) * D;
                for (int k = 0; k < D; ++k) s += ri[k] * rj[k];
                orow[static_cast<size_t>(i) * n + j] = s;
            }
        }
    }
    bool ng = g.requires_grad();
    int pid = g.id();
    Tape::BackFn back;
    if (ng) {
        back = [pid, n](Tape& tt, int self) {
            const Mat& gr = tt.grad_buf(self);
            const Mat& G = tt.val(pid);
            Mat& d = tt.grad_buf(pid);
            const int B = G.rows / n, D = G.cols;
            // Y_b = G_b G_b^T  =>  dG_b += (dY_b + dY_b^T) G_b
            for (int b = 0; b < B; ++b) {
                const double* blk = &G.v[static_cast<size_t>(b) * n * D];
                const double* gy = &gr.v[static_cast<size_t>(b) * n * n];
                double* db = &d.v[static_cast<size_t>(b) * n * D];
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < n; ++j) {
                        double w = gy[static_cast<size_t>(i) * n + j] +
                                   gy[static_cast<size_t>(j) * n + i];
                        if (w == 0.0) continue;
                        const double* rj = blk + static_cast<size_t>(j) * D;
                        double* di = db + static_cast<size_t>(i) * D;
                        for (int k = 0; k < D; ++k) di[k] += w * rj[k];
                    }
                }
            }
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

Tensor block_matmul(const Tensor& w, const Tensor& g, int n) {
    Tape* tp = common_tape(w, g);
    const Mat& W = w.value();
    const Mat& G = g.value();
    if (n < 1 || W.rows % n != 0 || W.cols != n || G.rows != W.rows)
        throw std::invalid_argument("block_matmul: bad shapes " + W.shape_str() + ", " +
                                    G.shape_str() + " for block size " + std::to_string(n));
    const int B = W.rows / n, D = G.cols;
    Mat out(G.rows, D, 0.0);
    for (int b = 0; b < B; ++b) {
        const double* wb = &W.v[static_cast<size_t>(b) * n * n];
        const double* gb = &G.v[static_cast<size_t>(b) * n * D];
        double* ob = &out.v[static_cast<size_t>(b) * n * D];
        for (int i = 0; i < n; ++i) {
            double* orow = ob + static_cast<size_t>(i) * D;
            for (int j = 0; j < n; ++j) {
                const double wij = wb[static_cast<size_t>(i) * n + j];
                const double* grow = gb + static_cast<size_t>(j) * D;
                for (int k = 0; k < D; ++k) orow[k] += wij * grow[k];
            }
        }
    }
    bool ng = w.requires_grad() || g.requires_grad();
    int pw = w.id(), pg = g.id();
    Tape::BackFn back;
    if (ng) {
        back = [pw, pg, n](Tape& tt, int self) {
            const Mat& gy = tt.grad_buf(self);
            const Mat& W = tt.val(pw);
            const Mat& G = tt.val(pg);
            const int B = W.rows / n, D = G.cols;
            for (int b = 0; b < B; ++b) {
                const double* wb = &W.v[static_cast<size_t>(b) * n * n];
                const double* gb = &G.v[static_cast<size_t>(b) * n * D];
                const double* yb = &gy.v[static_cast<size_t>(b) * n * D];
                if (tt.needs_grad(pw)) {
                    double* dw = &tt.grad_buf(pw).v[static_cast<size_t>(b) * n * n];
                    for (int i = 0; i < n; ++i) {
                        for (int j = 0; j < n; ++j) {
                            double s = 0;
                            const double* yrow = yb + static_cast<size_t>(i) * D;
                            const double* grow = gb + static_cast<size_t>(j) * D;
                            for (int k = 0; k < D; ++k) s += yrow[k] * grow[k];
                            dw[static_cast<size_t>(i) * n + j] += s;
                        }
                    }
                }
                if (tt.needs_grad(pg)) {
                    double* dg = &tt.grad_buf(pg).v[static_cast<size_t>(b) * n * D];
                    for (int j = 0; j < n; ++j) {
                        double* drow = dg + static_cast<size_t>(j) * D;
                        for (int i = 0; i < n; ++i) {
                            const double wij = wb[static_cast<size_t>(i) * n + j];
                            if (wij == 0.0) continue;
                            const double* yrow = yb + static_cast<size_t>(i) * D;
                            for (int k = 0; k < D; ++k) drow[k] += wij * yrow[k];
                        }
                    }
                }
            }
        };
    }
    int id = tp->add_node(std::move(out), ng, std::move(back));
    return Tensor(tp, id);
}

// --- value-level helpers ---------------------------------------------------------

Mat one_hot(const std::vector<int>& labels, int classes) {
    Mat m(static_cast<int>(labels.size()), classes, 0.0);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes)
            throw std::invalid_argument("one_hot: label " + std::to_string(labels[i]) +
                                        " outside [0, " + std::to_string(classes) + ")");
        m.at(static_cast<int>(i), labels[i]) = 1.0;
    }
    return m;
}

double row_norm(const Mat& m, int r) {
    double s = 0;
    for (int c = 0; c < m.cols; ++c) s += m.at(r, c) * m.at(r, c);
    return std::sqrt(s);
}

double mean_row_norm(const Mat& m) {
    double s = 0;
    for (int r = 0; r < m.rows; ++r) s += row_norm(m, r);
    return m.rows > 0 ? s / m.rows : 0.0;
}

}  // namespace mgssl
