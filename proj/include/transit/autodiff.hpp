#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "transit/common.hpp"
#include "transit/tensor.hpp"

namespace transit::ad {

// Handle into a Graph's node list. Only meaningful for the graph that
// produced it.
struct Var {
    std::uint32_t idx = 0;
};

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    AddConst,
    MatMul,
    AddRow,
    Sigmoid,
    Tanh,
    Log,
    Clamp,
    ConcatRows,
    ConcatCols,
    RowSlice,
    Reshape,
    SoftmaxRows,
    Sum,
    Mean,
    PickPerRow,
    GradReverse,
};

// Reverse-mode tape over dense tensors. Values are computed eagerly as ops
// are recorded (define-by-run); the tape is rebuilt for every training step,
// which keeps variable-length sequences trivial. A Graph instance is
// single-threaded; independent instances may run concurrently.
class Graph {
public:
    Graph() { nodes_.reserve(4096); }

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // --- graph construction -------------------------------------------------

    Var leaf(Tensor t, bool requires_grad = false) {
        if (!all_finite(t.data))
            throw ValueError("leaf: non-finite value in input tensor of shape " +
                             shape_str(t.shape));
        return push(Op::Leaf, std::move(t), kNone, kNone, requires_grad);
    }

    Var constant(Tensor t) { return leaf(std::move(t), false); }
    Var constant(double v) { return leaf(Tensor::scalar(v), false); }

    Var add(Var a, Var b) {
        const Tensor &ta = val(a), &tb = val(b);
        require_same_shape("add", ta, tb);
        Tensor out = ta;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
        return push(Op::Add, std::move(out), a.idx, b.idx, needs(a) || needs(b));
    }

    Var sub(Var a, Var b) {
        const Tensor &ta = val(a), &tb = val(b);
        require_same_shape("sub", ta, tb);
        Tensor out = ta;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
        return push(Op::Sub, std::move(out), a.idx, b.idx, needs(a) || needs(b));
    }

    Var mul(Var a, Var b) {
        const Tensor &ta = val(a), &tb = val(b);
        require_same_shape("mul", ta, tb);
        Tensor out = ta;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
        return push(Op::Mul, std::move(out), a.idx, b.idx, needs(a) || needs(b));
    }

    Var scale(Var a, double c) {
        Tensor out = val(a);
        for (double& x : out.data) x *= c;
        Var v = push(Op::Scale, std::move(out), a.idx, kNone, needs(a));
        nodes_[v.idx].c0 = c;
        return v;
    }

    Var add_const(Var a, double c) {
        Tensor out = val(a);
        for (double& x : out.data) x += c;
        Var v = push(Op::AddConst, std::move(out), a.idx, kNone, needs(a));
        nodes_[v.idx].c0 = c;
        return v;
    }

    Var matmul(Var a, Var b) {
        const Tensor &ta = val(a), &tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0])
            throw ShapeError(detail::msg("matmul: incompatible shapes ", shape_str(ta.shape),
                                         " x ", shape_str(tb.shape)));
        const std::size_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
        Tensor out({m, n});
        matmul_acc(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
        return push(Op::MatMul, std::move(out), a.idx, b.idx, needs(a) || needs(b));
    }

    // matrix {R,C} + row {1,C}, broadcast over rows
    Var add_row(Var m, Var r) {
        const Tensor &tm = val(m), &tr = val(r);
        if (tm.rank() != 2 || tr.rank() != 2 || tr.shape[0] != 1 || tr.shape[1] != tm.shape[1])
            throw ShapeError(detail::msg("add_row: cannot broadcast ", shape_str(tr.shape),
                                         " over rows of ", shape_str(tm.shape)));
        Tensor out = tm;
        const std::size_t R = tm.shape[0], C = tm.shape[1];
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j) out.data[i * C + j] += tr.data[j];
        return push(Op::AddRow, std::move(out), m.idx, r.idx, needs(m) || needs(r));
    }

    Var sigmoid(Var a) {
        Tensor out = val(a);
        for (double& x : out.data) {
            if (x >= 0) {
                x = 1.0 / (1.0 + std::exp(-x));
            } else {
                double e = std::exp(x);
                x = e / (1.0 + e);
            }
        }
        return push(Op::Sigmoid, std::move(out), a.idx, kNone, needs(a));
    }

    Var tanh(Var a) {
        Tensor out = val(a);
        for (double& x : out.data) x = std::tanh(x);
        return push(Op::Tanh, std::move(out), a.idx, kNone, needs(a));
    }

    Var log(Var a) {
        Tensor out = val(a);
        for (double& x : out.data) {
            if (x <= 0.0)
                throw ValueError(detail::msg("log: non-positive input ", x));
            x = std::log(x);
        }
        return push(Op::Log, std::move(out), a.idx, kNone, needs(a));
    }

    // Elementwise clamp to [lo, hi]; gradient passes only strictly inside.
    Var clamp(Var a, double lo, double hi) {
        if (!(lo < hi)) throw ValueError("clamp: lo must be < hi");
        Tensor out = val(a);
        for (double& x : out.data) x = x < lo ? lo : (x > hi ? hi : x);
        Var v = push(Op::Clamp, std::move(out), a.idx, kNone, needs(a));
        nodes_[v.idx].c0 = lo;
        nodes_[v.idx].c1 = hi;
        return v;
    }

    Var concat_rows(std::span<const Var> parts) {
        if (parts.empty()) throw ShapeError("concat_rows: no inputs");
        const std::size_t C = val(parts[0]).cols();
        std::size_t R = 0;
        bool rg = false;
        for (Var p : parts) {
            const Tensor& t = val(p);
            if (t.rank() != 2 || t.shape[1] != C)
                throw ShapeError(detail::msg("concat_rows: column mismatch, expected ", C,
                                             " got ", shape_str(t.shape)));
            R += t.shape[0];
            rg = rg || needs(p);
        }
        Tensor out({R, C});
        std::size_t off = 0;
        for (Var p : parts) {
            const Tensor& t = val(p);
            std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
            off += t.data.size();
        }
        Var v = push(Op::ConcatRows, std::move(out), kNone, kNone, rg);
        for (Var p : parts) nodes_[v.idx].extra.push_back(p.idx);
        return v;
    }

    Var concat_rows(std::initializer_list<Var> parts) {
        return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
    }

    Var concat_cols(std::span<const Var> parts) {
        if (parts.empty()) throw ShapeError("concat_cols: no inputs");
        const std::size_t R = val(parts[0]).rows();
        std::size_t C = 0;
        bool rg = false;
        for (Var p : parts) {
            const Tensor& t = val(p);
            if (t.rank() != 2 || t.shape[0] != R)
                throw ShapeError(detail::msg("concat_cols: row mismatch, expected ", R, " got ",
                                             shape_str(t.shape)));
            C += t.shape[1];
            rg = rg || needs(p);
        }
        Tensor out({R, C});
        std::size_t coff = 0;
        for (Var p : parts) {
            const Tensor& t = val(p);
            const std::size_t c = t.shape[1];
            for (std::size_t i = 0; i < R; ++i)
                std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(i * c),
                          t.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * c),
                          out.data.begin() + static_cast<std::ptrdiff_t>(i * C + coff));
            coff += c;
        }
        Var v = push(Op::ConcatCols, std::move(out), kNone, kNone, rg);
        for (Var p : parts) nodes_[v.idx].extra.push_back(p.idx);
        return v;
    }

    Var concat_cols(std::initializer_list<Var> parts) {
        return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
    }

    Var row_slice(Var a, std::size_t i) {
        const Tensor& t = val(a);
        if (t.rank() != 2 || i >= t.shape[0])
            throw ShapeError(detail::msg("row_slice: row ", i, " out of range for ",
                                         shape_str(t.shape)));
        const std::size_t C = t.shape[1];
        Tensor out({1, C});
        std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(i * C),
                  t.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * C), out.data.begin());
        Var v = push(Op::RowSlice, std::move(out), a.idx, kNone, needs(a));
        nodes_[v.idx].c0 = static_cast<double>(i);
        return v;
    }

    Var reshape(Var a, std::vector<std::size_t> shape) {
        const Tensor& t = val(a);
        Tensor out(std::move(shape), t.data);
        return push(Op::Reshape, std::move(out), a.idx, kNone, needs(a));
    }

    // Row-major flatten to a single row vector.
    Var flatten(Var a) { return reshape(a, {1, val(a).numel()}); }

    // Row-wise softmax with max subtraction.
    Var softmax_rows(Var a) {
        const Tensor& t = val(a);
        if (t.rank() != 2)
            throw ShapeError("softmax_rows: expected a matrix, got " + shape_str(t.shape));
        if (t.shape[1] == 0) throw ShapeError("softmax_rows: empty row");
        Tensor out = t;
        const std::size_t R = t.shape[0], C = t.shape[1];
        for (std::size_t i = 0; i < R; ++i) {
            double* row = out.data.data() + i * C;
            double mx = row[0];
            for (std::size_t j = 1; j < C; ++j) mx = row[j] > mx ? row[j] : mx;
            double denom = 0.0;
            for (std::size_t j = 0; j < C; ++j) {
                row[j] = std::exp(row[j] - mx);
                denom += row[j];
            }
            for (std::size_t j = 0; j < C; ++j) row[j] /= denom;
        }
        return push(Op::SoftmaxRows, std::move(out), a.idx, kNone, needs(a));
    }

    Var sum(Var a) {
        const Tensor& t = val(a);
        double s = 0.0;
        for (double x : t.data) s += x;
        return push(Op::Sum, Tensor::scalar(s), a.idx, kNone, needs(a));
    }

    Var mean(Var a) {
        const Tensor& t = val(a);
        double s = 0.0;
        for (double x : t.data) s += x;
        return push(Op::Mean, Tensor::scalar(s / static_cast<double>(t.numel())), a.idx, kNone,
                    needs(a));
    }

    // out[i] = m[i, labels[i]]
    Var pick_per_row(Var m, const std::vector<int>& labels) {
        const Tensor& t = val(m);
        if (t.rank() != 2)
            throw ShapeError("pick_per_row: expected a matrix, got " + shape_str(t.shape));
        const std::size_t R = t.shape[0], C = t.shape[1];
        if (labels.size() != R)
            throw ShapeError(detail::msg("pick_per_row: ", labels.size(), " labels for ", R,
                                         " rows"));
        Tensor out({R, 1});
        for (std::size_t i = 0; i < R; ++i) {
            int l = labels[i];
            if (l < 0 || static_cast<std::size_t>(l) >= C)
                throw ValueError(detail::msg("pick_per_row: label ", l, " outside [0,", C, ")"));
            out.data[i] = t.data[i * C + static_cast<std::size_t>(l)];
        }
        Var v = push(Op::PickPerRow, std::move(out), m.idx, kNone, needs(m));
        for (int l : labels) nodes_[v.idx].extra.push_back(static_cast<std::uint32_t>(l));
        return v;
    }

    // Identity forward; backward multiplies the upstream gradient by -lambda.
    Var grad_reverse(Var a, double lambda) {
        if (!(lambda > 0.0) || !std::isfinite(lambda))
            throw ValueError(detail::msg("grad_reverse: lambda must be finite and > 0, got ",
                                         lambda));
        Tensor out = val(a);
        Var v = push(Op::GradReverse, std::move(out), a.idx, kNone, needs(a));
        nodes_[v.idx].c0 = lambda;
        return v;
    }

    // Value copy with no gradient path into the source.
    Var detach(Var a) { return constant(val(a)); }

    // --- access --------------------------------------------------------------

    const Tensor& val(Var v) const { return nodes_[v.idx].value; }

    double scalar(Var v) const {
        const Tensor& t = val(v);
        if (t.numel() != 1)
            throw ShapeError("scalar: tensor has shape " + shape_str(t.shape));
        return t.data[0];
    }

    // Gradient of the last backward() output w.r.t. v; zeros if v is not on
    // the differentiated path.
    std::vector<double> grad(Var v) const {
        const Node& n = nodes_[v.idx];
        if (n.grad.empty()) return std::vector<double>(n.value.numel(), 0.0);
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    // --- backward ------------------------------------------------------------

    void backward(Var out) {
        if (backward_done_)
            throw Error("backward: already invoked once on this tape");
        const Node& o = nodes_[out.idx];
        if (o.value.numel() != 1)
            throw ShapeError("backward: output is not a scalar, shape " +
                             shape_str(o.value.shape));
        backward_done_ = true;
        if (!o.requires_grad) return;
        ensure_grad(out.idx)[0] = 1.0;
        for (std::uint32_t i = out.idx + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.empty() || n.op == Op::Leaf) continue;
            propagate(n);
        }
    }

private:
    static constexpr std::uint32_t kNone = 0xFFFFFFFFu;

    struct Node {
        Op op;
        std::uint32_t a = kNone, b = kNone;
        double c0 = 0.0, c1 = 0.0;
        Tensor value;
        std::vector<double> grad;
        std::vector<std::uint32_t> extra;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;

    bool needs(Var v) const { return nodes_[v.idx].requires_grad; }

    Var push(Op op, Tensor value, std::uint32_t a, std::uint32_t b, bool requires_grad) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    static void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
        if (!a.same_shape(b))
            throw ShapeError(detail::msg(op, ": shape mismatch ", shape_str(a.shape), " vs ",
                                         shape_str(b.shape)));
    }

    // C += A(m x k) * B(k x n)
    static void matmul_acc(const double* A, const double* B, double* C, std::size_t m,
                           std::size_t k, std::size_t n) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* a_row = A + i * k;
            double* c_row = C + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double a = a_row[kk];
                if (a == 0.0) continue;
                const double* b_row = B + kk * n;
                for (std::size_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
            }
        }
    }

    std::vector<double>& ensure_grad(std::uint32_t i) {
        Node& n = nodes_[i];
        if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
        return n.grad;
    }

    void propagate(Node& n) {
        const std::vector<double>& g = n.grad;
        switch (n.op) {
            case Op::Add: {
                acc_into(n.a, g, +1.0);
                acc_into(n.b, g, +1.0);
                break;
            }
            case Op::Sub: {
                acc_into(n.a, g, +1.0);
                acc_into(n.b, g, -1.0);
                break;
            }
            case Op::Mul: {
                if (wants(n.a)) {
                    std::vector<double>& ga = ensure_grad(n.a);
                    const std::vector<double>& vb = nodes_[n.b].value.data;
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
                }
                if (wants(n.b)) {
                    std::vector<double>& gb = ensure_grad(n.b);
                    const std::vector<double>& va = nodes_[n.a].value.data;
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
                }
                break;
            }
            case Op::Scale: {
                acc_into(n.a, g, n.c0);
                break;
            }
            case Op::AddConst: {
                acc_into(n.a, g, 1.0);
                break;
            }
            case Op::MatMul: {
                const Tensor& ta = nodes_[n.a].value;
                const Tensor& tb = nodes_[n.b].value;
                const std::size_t m = ta.shape[0], k = ta.shape[1], nn = tb.shape[1];
                if (wants(n.a)) {
                    // dA += dC * B^T
                    std::vector<double>& ga = ensure_grad(n.a);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            double s = 0.0;
                            const double* g_row = g.data() + i * nn;
                            const double* b_row = tb.data.data() + kk * nn;
                            for (std::size_t j = 0; j < nn; ++j) s += g_row[j] * b_row[j];
                            ga[i * k + kk] += s;
                        }
                }
                if (wants(n.b)) {
                    // dB += A^T * dC
                    std::vector<double>& gb = ensure_grad(n.b);
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* a_row = ta.data.data() + i * k;
                        const double* g_row = g.data() + i * nn;
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const double a = a_row[kk];
                            if (a == 0.0) continue;
                            double* gb_row = gb.data() + kk * nn;
                            for (std::size_t j = 0; j < nn; ++j) gb_row[j] += a * g_row[j];
                        }
                    }
                }
                break;
            }
            case Op::AddRow: {
                acc_into(n.a, g, 1.0);
                if (wants(n.b)) {
                    std::vector<double>& gb = ensure_grad(n.b);
                    const std::size_t C = nodes_[n.b].value.shape[1];
                    const std::size_t R = nodes_[n.a].value.shape[0];
                    for (std::size_t i = 0; i < R; ++i)
                        for (std::size_t j = 0; j < C; ++j) gb[j] += g[i * C + j];
                }
                break;
            }
            case Op::Sigmoid: {
                if (wants(n.a)) {
                    std::vector<double>& ga = ensure_grad(n.a);
                    const std::vector<double>& y = n.value.data;
                    for (std::size_t i = 0; i < g.size(); ++i)
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                }
                break;
            }
            case Op::Tanh: {
                if (wants(n.a)) {
                    std::vector<double>& ga = ensure_grad(n.a);
                    const std::vector<double>& y = n.value.data;
                    for (std::size_t i = 0; i < g.size(); ++i)
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                }
                break;
            }
            case Op::Log: {
                if (wants(n.a)) {
                    std::vector<double>& ga = ensure_grad(n.a);
                    const std::vector<double>& x = nodes_[n.a].value.data;
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
                }
                break;
            }
            case Op::Clamp: {
                if (wants(n.a)) {
                    std::vector<double>& ga = ensure_grad(n.a);
                    const std::vector<double>& x = nodes_[n.a].value.data;
                    for (std::size_t i = 0; i < g.size(); ++i)
                        if (x[i] > n.c0 && x[i] < n.c1) ga[i] += g[i];
                }
                break;
            }
            case Op::ConcatRows: {
                std::size_t off = 0;
                for (std::uint32_t p : n.extra) {
                    const std::size_t sz = nodes_[p].value.numel();
                    if (wants(p)) {
                        std::vector<double>& gp = ensure_grad(p);
                        for (std::size_t i = 0; i < sz; ++i) gp[i] += g[off + i];
                    }
                    off += sz;
                }
                break;
            }
            case Op::ConcatCols: {
                const std::size_t R = n.value.shape[0], C = n.value.shape[1];
                std::size_t coff = 0;
                for (std::uint32_t p : n.extra) {
                    const std::size_t c = nodes_[p].value.shape[1];
                    if (wants(p)) {
                        std::vector<double>& gp = ensure_grad(p);
                        for (std::size_t i = 0; i < R; ++i)
                            for (std::size_t j = 0; j < c; ++j)
                                gp[i * c + j] += g[i * C + coff + j];
                    }
                    coff += c;
                }
                break;
            }
            case Op::RowSlice: {
                if (wants(n.a)) {
                    std::vector<double>& ga = ensure_grad(n.a);
                    const std::size_t C = n.value.shape[1];
                    const std::size_t r = static_cast<std::size_t>(n.c0);
                    for (std::size_t j = 0; j < C; ++j) ga[r * C + j] += g[j];
                }
                break;
            }
            case Op::Reshape: {
                acc_into(n.a, g, 1.0);
                break;
            }
            case Op::SoftmaxRows: {
                if (wants(n.a)) {
                    std::vector<double>& ga = ensure_grad(n.a);
                    const std::vector<double>& y = n.value.data;
                    const std::size_t R = n.value.shape[0], C = n.value.shape[1];
                    for (std::size_t i = 0; i < R; ++i) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < C; ++j) dot += g[i * C + j] * y[i * C + j];
                        for (std::size_t j = 0; j < C; ++j)
                            ga[i * C + j] += y[i * C + j] * (g[i * C + j] - dot);
                    }
                }
                break;
            }
            case Op::Sum: {
                if (wants(n.a)) {
                    std::vector<double>& ga = ensure_grad(n.a);
                    const double s = g[0];
                    for (double& x : ga) x += s;
                }
                break;
            }
            case Op::Mean: {
                if (wants(n.a)) {
                    std::vector<double>& ga = ensure_grad(n.a);
                    const double s = g[0] / static_cast<double>(nodes_[n.a].value.numel());
                    for (double& x : ga) x += s;
                }
                break;
            }
            case Op::PickPerRow: {
                if (wants(n.a)) {
                    std::vector<double>& ga = ensure_grad(n.a);
                    const std::size_t C = nodes_[n.a].value.shape[1];
                    for (std::size_t i = 0; i < n.extra.size(); ++i)
                        ga[i * C + n.extra[i]] += g[i];
                }
                break;
            }
            case Op::GradReverse: {
                acc_into(n.a, g, -n.c0);
                break;
            }
            case Op::Leaf:
                break;
        }
    }

    bool wants(std::uint32_t i) const { return i != kNone && nodes_[i].requires_grad; }

    void acc_into(std::uint32_t i, const std::vector<double>& g, double s) {
        if (!wants(i)) return;
        std::vector<double>& gi = ensure_grad(i);
        for (std::size_t k = 0; k < g.size(); ++k) gi[k] += s * g[k];
    }
};

}  // namespace transit::ad
