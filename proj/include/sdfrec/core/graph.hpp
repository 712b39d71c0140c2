#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <unordered_map>
#include <string>
#include <vector>

#include "sdfrec/core/error.hpp"
#include "sdfrec/core/tensor.hpp"

namespace sdfrec::ad {

enum class Op : uint8_t {
    Leaf,
    Add, Sub, Mul,
    AddRowVec,    // [MxN] + [1xN]
    MulColVec,    // [MxN] .* [Mx1]
    BroadcastCols,  // [Mx1] -> [MxN]
    BroadcastTo,    // [1x1] -> [MxN]
    ScalarMul, ScalarAdd,
    MatmulNN, MatmulNT, MatmulTN,
    Softplus,     // a0 = sharpness
    Sigmoid, Relu,
    Step,         // a0 = threshold, i0 = 0: x>a0, 1: x<a0; not differentiable
    Sign,         // not differentiable
    Exp, Log, Sin, Cos, Sqrt, Square, Abs, Reciprocal,
    ClampMin, ClampMax,  // a0 = bound
    PowRows,      // base [MxN] ^ exponent [Mx1]; base <= 0 maps to 0
    RotCoefA, RotCoefB, RotCoefADeriv, RotCoefBDeriv,  // sin(sqrt u)/sqrt u etc.
    SumAll, SumRows, SumCols,
    GroupSumRows,  // i0 = S: sums consecutive blocks of S rows
    RepeatRows,    // i0 = S: row i -> rows i*S..i*S+S-1
    ConcatCols,
    SliceCols,     // i0 = offset, i1 = width
    PadCols,       // i0 = offset, i1 = output width
    GatherRows,    // aux = row indices
    ScatterAddRows,  // aux = row indices, i0 = output row count
    Reshape,         // i0 x i1
    CompositeWeights,   // alpha [RxS] -> w_i = a_i * prod_{j<i}(1-a_j)
    CompositeBackward,  // (alpha, g) -> dL/dalpha; first-order only
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::AddRowVec: return "add_row_vec";
        case Op::MulColVec: return "mul_col_vec";
        case Op::BroadcastCols: return "broadcast_cols";
        case Op::BroadcastTo: return "broadcast_to";
        case Op::ScalarMul: return "scalar_mul";
        case Op::ScalarAdd: return "scalar_add";
        case Op::MatmulNN: return "matmul";
        case Op::MatmulNT: return "matmul_nt";
        case Op::MatmulTN: return "matmul_tn";
        case Op::Softplus: return "softplus";
        case Op::Sigmoid: return "sigmoid";
        case Op::Relu: return "relu";
        case Op::Step: return "step";
        case Op::Sign: return "sign";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sin: return "sin";
        case Op::Cos: return "cos";
        case Op::Sqrt: return "sqrt";
        case Op::Square: return "square";
        case Op::Abs: return "abs";
        case Op::Reciprocal: return "reciprocal";
        case Op::ClampMin: return "clamp_min";
        case Op::ClampMax: return "clamp_max";
        case Op::PowRows: return "pow_rows";
        case Op::RotCoefA: return "rot_coef_a";
        case Op::RotCoefB: return "rot_coef_b";
        case Op::RotCoefADeriv: return "rot_coef_a_deriv";
        case Op::RotCoefBDeriv: return "rot_coef_b_deriv";
        case Op::SumAll: return "sum_all";
        case Op::SumRows: return "sum_rows";
        case Op::SumCols: return "sum_cols";
        case Op::GroupSumRows: return "group_sum_rows";
        case Op::RepeatRows: return "repeat_rows";
        case Op::ConcatCols: return "concat_cols";
        case Op::SliceCols: return "slice_cols";
        case Op::PadCols: return "pad_cols";
        case Op::GatherRows: return "gather_rows";
        case Op::ScatterAddRows: return "scatter_add_rows";
        case Op::Reshape: return "reshape";
        case Op::CompositeWeights: return "composite_weights";
        case Op::CompositeBackward: return "composite_backward";
    }
    return "?";
}

class Tape;

// Lightweight handle into a Tape node.
struct Value {
    Tape* tape = nullptr;
    int idx = -1;
    bool valid() const { return tape != nullptr && idx >= 0; }
    const Tensor& val() const;
    int rows() const { return val().rows(); }
    int cols() const { return val().cols(); }
    double scalar() const { return val().value(); }
};

struct Node {
    Op op = Op::Leaf;
    std::vector<int> in;
    double a0 = 0, a1 = 0;
    int i0 = 0, i1 = 0;
    std::shared_ptr<std::vector<int>> aux;  // gather/scatter row indices
    Tensor val;
    bool needs_grad = false;
    int param = -1;  // ParamStore slot for parameter leaves
};

namespace detail {
constexpr long kEwGrain = 1 << 15;

inline double softplus_stable(double t) {
    if (t > 30) return t + std::log1p(std::exp(-t));
    if (t < -30) return std::exp(t);
    return std::log1p(std::exp(t));
}
inline double sigmoid_stable(double x) {
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}
// sin(sqrt(u))/sqrt(u) and (1-cos(sqrt(u)))/u with derivatives in u.
// Wide series branch plus the 2 sin^2(s/2) form keep full relative precision
// through u = 0; the naive 1-cos(s) loses ~6 digits near the origin.
inline double rot_coef_a(double u) {
    if (u < 1e-4) return 1.0 - u / 6.0 + u * u / 120.0 - u * u * u / 5040.0;
    double s = std::sqrt(u);
    return std::sin(s) / s;
}
inline double rot_coef_a_deriv(double u) {
    if (u < 1e-4) return -1.0 / 6.0 + u / 60.0 - u * u / 1680.0;
    double s = std::sqrt(u);
    return (s * std::cos(s) - std::sin(s)) / (2.0 * u * s);
}
inline double rot_coef_b(double u) {
    if (u < 1e-4) return 0.5 - u / 24.0 + u * u / 720.0 - u * u * u / 40320.0;
    double h = 0.5 * std::sqrt(u);
    double sh = std::sin(h);
    return 2.0 * sh * sh / u;
}
inline double rot_coef_b_deriv(double u) {
    if (u < 1e-4) return -1.0 / 24.0 + u / 360.0 - u * u / 13440.0;
    double s = std::sqrt(u);
    double h = 0.5 * s, sh = std::sin(h);
    return (s * std::sin(s) - 4.0 * sh * sh) / (2.0 * u * u);
}
}  // namespace detail

// Append-only computation record. Ops evaluate eagerly; `gradients` appends
// the backward computation as ordinary nodes, so gradients are themselves
// differentiable (needed for normals and the Eikonal term). Node order is
// the evaluation order, which makes replay and reduction order fixed.
class Tape {
public:
    Tape() { nodes_.reserve(256); }

    int size() const { return (int)nodes_.size(); }
    const Node& node(int i) const { return nodes_[i]; }
    const Tensor& val(Value v) const { return nodes_[v.idx].val; }
    Tensor& mutable_val(Value v) { return nodes_[v.idx].val; }

    void clear() {
        nodes_.clear();
        param_cache_.clear();
    }

    // ---- leaves ----------------------------------------------------------

    Value leaf(Tensor t, bool needs_grad = false) {
        Node n;
        n.op = Op::Leaf;
        n.val = std::move(t);
        n.needs_grad = needs_grad;
        return push(std::move(n));
    }
    Value constant(Tensor t) { return leaf(std::move(t), false); }
    Value constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

    // One leaf per parameter slot per tape; repeated requests return the
    // cached node so gradients w.r.t. a parameter live in a single slot.
    Value param_leaf(const Tensor& t, int param_slot) {
        auto it = param_cache_.find(param_slot);
        if (it != param_cache_.end()) return Value{this, it->second};
        Node n;
        n.op = Op::Leaf;
        n.val = t;
        n.needs_grad = true;
        n.param = param_slot;
        Value v = push(std::move(n));
        param_cache_[param_slot] = v.idx;
        return v;
    }

    // (param slot -> leaf node index) for every parameter used on this tape.
    const std::unordered_map<int, int>& param_leaves() const { return param_cache_; }

    void set_leaf(Value v, Tensor t) {
        Node& n = nodes_[v.idx];
        if (n.op != Op::Leaf) throw PreconditionError("set_leaf on non-leaf node");
        if (!n.val.same_shape(t))
            throw ShapeError("set_leaf shape mismatch " + n.val.shape_str() + " vs " + t.shape_str());
        n.val = std::move(t);
    }

    // ---- elementwise and broadcast ops -----------------------------------

    Value add(Value a, Value b) { return binary(Op::Add, a, b); }
    Value sub(Value a, Value b) { return binary(Op::Sub, a, b); }
    Value mul(Value a, Value b) { return binary(Op::Mul, a, b); }

    Value add_row_vec(Value x, Value r) {
        check_tape(x); check_tape(r);
        if (val(r).rows() != 1 || val(r).cols() != val(x).cols())
            throw ShapeError("add_row_vec wants [MxN] + [1xN]");
        return push(make(Op::AddRowVec, {x.idx, r.idx}));
    }
    Value mul_col_vec(Value x, Value c) {
        check_tape(x); check_tape(c);
        if (val(c).cols() != 1 || val(c).rows() != val(x).rows())
            throw ShapeError("mul_col_vec wants [MxN] .* [Mx1]");
        return push(make(Op::MulColVec, {x.idx, c.idx}));
    }
    Value broadcast_cols(Value c, int ncols) {
        Node n = make(Op::BroadcastCols, {c.idx});
        n.i0 = ncols;
        return push(std::move(n));
    }
    Value broadcast_to(Value s, int rows, int cols) {
        Node n = make(Op::BroadcastTo, {s.idx});
        n.i0 = rows;
        n.i1 = cols;
        return push(std::move(n));
    }
    Value scalar_mul(Value x, double c) {
        Node n = make(Op::ScalarMul, {x.idx});
        n.a0 = c;
        return push(std::move(n));
    }
    Value scalar_add(Value x, double c) {
        Node n = make(Op::ScalarAdd, {x.idx});
        n.a0 = c;
        return push(std::move(n));
    }
    Value neg(Value x) { return scalar_mul(x, -1.0); }

    // ---- matmul -----------------------------------------------------------

    Value matmul(Value a, Value b, Trans ta = Trans::N, Trans tb = Trans::N) {
        check_tape(a); check_tape(b);
        Op op = ta == Trans::N ? (tb == Trans::N ? Op::MatmulNN : Op::MatmulNT) : Op::MatmulTN;
        if (ta == Trans::T && tb == Trans::T) throw ShapeError("matmul TT unsupported on tape");
        return push(make(op, {a.idx, b.idx}));
    }

    // ---- nonlinearities ----------------------------------------------------

    Value softplus(Value x, double sharpness = 1.0) {
        Node n = make(Op::Softplus, {x.idx});
        n.a0 = sharpness;
        return push(std::move(n));
    }
    Value sigmoid(Value x) { return push(make(Op::Sigmoid, {x.idx})); }
    Value relu(Value x) { return push(make(Op::Relu, {x.idx})); }
    Value step_gt(Value x, double c) {
        Node n = make(Op::Step, {x.idx});
        n.a0 = c;
        n.i0 = 0;
        n.needs_grad = false;
        return push(std::move(n));
    }
    Value step_lt(Value x, double c) {
        Node n = make(Op::Step, {x.idx});
        n.a0 = c;
        n.i0 = 1;
        n.needs_grad = false;
        return push(std::move(n));
    }
    Value sign(Value x) {
        Node n = make(Op::Sign, {x.idx});
        n.needs_grad = false;
        return push(std::move(n));
    }
    Value exp(Value x) { return push(make(Op::Exp, {x.idx})); }
    Value log(Value x) { return push(make(Op::Log, {x.idx})); }
    Value sin(Value x) { return push(make(Op::Sin, {x.idx})); }
    Value cos(Value x) { return push(make(Op::Cos, {x.idx})); }
    Value sqrt(Value x) { return push(make(Op::Sqrt, {x.idx})); }
    Value square(Value x) { return push(make(Op::Square, {x.idx})); }
    Value abs(Value x) { return push(make(Op::Abs, {x.idx})); }
    Value reciprocal(Value x) { return push(make(Op::Reciprocal, {x.idx})); }
    Value clamp_min(Value x, double c) {
        Node n = make(Op::ClampMin, {x.idx});
        n.a0 = c;
        return push(std::move(n));
    }
    Value clamp_max(Value x, double c) {
        Node n = make(Op::ClampMax, {x.idx});
        n.a0 = c;
        return push(std::move(n));
    }
    Value pow_rows(Value base, Value exponent) {
        check_tape(base); check_tape(exponent);
        if (val(exponent).cols() != 1 || val(exponent).rows() != val(base).rows())
            throw ShapeError("pow_rows wants base [MxN], exponent [Mx1]");
        return push(make(Op::PowRows, {base.idx, exponent.idx}));
    }
    Value rot_coef_a(Value u) { return push(make(Op::RotCoefA, {u.idx})); }
    Value rot_coef_b(Value u) { return push(make(Op::RotCoefB, {u.idx})); }

    // ---- reductions and shape ops -----------------------------------------

    Value sum_all(Value x) { return push(make(Op::SumAll, {x.idx})); }
    Value sum_rows(Value x) { return push(make(Op::SumRows, {x.idx})); }
    Value sum_cols(Value x) { return push(make(Op::SumCols, {x.idx})); }
    Value mean_all(Value x) {
        long n = val(x).size();
        return scalar_mul(sum_all(x), 1.0 / (double)n);
    }
    Value group_sum_rows(Value x, int group) {
        if (group < 1 || val(x).rows() % group != 0)
            throw ShapeError("group_sum_rows group must divide rows");
        Node n = make(Op::GroupSumRows, {x.idx});
        n.i0 = group;
        return push(std::move(n));
    }
    Value repeat_rows(Value x, int times) {
        Node n = make(Op::RepeatRows, {x.idx});
        n.i0 = times;
        return push(std::move(n));
    }
    Value concat_cols(std::span<const Value> xs) {
        if (xs.empty()) throw ShapeError("concat_cols of nothing");
        Node n;
        n.op = Op::ConcatCols;
        for (const Value& v : xs) {
            check_tape(v);
            n.in.push_back(v.idx);
        }
        return push(std::move(n));
    }
    Value concat_cols(std::initializer_list<Value> xs) {
        return concat_cols(std::span<const Value>(xs.begin(), xs.size()));
    }
    Value slice_cols(Value x, int offset, int width) {
        if (offset < 0 || width < 1 || offset + width > val(x).cols())
            throw ShapeError("slice_cols out of range");
        Node n = make(Op::SliceCols, {x.idx});
        n.i0 = offset;
        n.i1 = width;
        return push(std::move(n));
    }
    Value pad_cols(Value x, int offset, int out_cols) {
        if (offset < 0 || offset + val(x).cols() > out_cols) throw ShapeError("pad_cols out of range");
        Node n = make(Op::PadCols, {x.idx});
        n.i0 = offset;
        n.i1 = out_cols;
        return push(std::move(n));
    }
    Value gather_rows(Value x, std::vector<int> rows) {
        Node n = make(Op::GatherRows, {x.idx});
        n.aux = std::make_shared<std::vector<int>>(std::move(rows));
        return push(std::move(n));
    }
    Value scatter_add_rows(Value x, std::vector<int> rows, int out_rows) {
        Node n = make(Op::ScatterAddRows, {x.idx});
        n.aux = std::make_shared<std::vector<int>>(std::move(rows));
        n.i0 = out_rows;
        return push(std::move(n));
    }
    Value reshape(Value x, int rows, int cols) {
        Node n = make(Op::Reshape, {x.idx});
        n.i0 = rows;
        n.i1 = cols;
        return push(std::move(n));
    }
    Value composite_weights(Value alphas) { return push(make(Op::CompositeWeights, {alphas.idx})); }

    // ---- gradients ---------------------------------------------------------

    // Reverse sweep from `out` restricted to paths reaching `wrt`. Returns one
    // grad Value per wrt entry (exact zeros when not reached). The backward is
    // appended as ordinary nodes, so results can be differentiated again.
    std::vector<Value> gradients(Value out, std::span<const Value> wrt) {
        check_tape(out);
        if (val(out).size() != 1) throw PreconditionError("backward requires a scalar output");
        for (const Value& w : wrt) {
            check_tape(w);
            if (!nodes_[w.idx].needs_grad)
                throw PreconditionError("wrt value is not a differentiable node of this graph");
        }
        const int n = out.idx + 1;

        // desc[i]: i depends on some wrt node. Limits the sweep to useful paths.
        std::vector<uint8_t> desc(n, 0);
        int min_idx = n;
        for (const Value& w : wrt)
            if (w.idx < n) {
                desc[w.idx] = 1;
                min_idx = std::min(min_idx, w.idx);
            }
        for (int i = min_idx; i < n; ++i) {
            if (desc[i]) continue;
            for (int j : nodes_[i].in)
                if (j >= min_idx && desc[j] && nodes_[i].op != Op::Step && nodes_[i].op != Op::Sign) {
                    desc[i] = 1;
                    break;
                }
        }

        // anc[i]: out depends on i. Walk inputs from out.
        std::vector<uint8_t> anc(n, 0);
        anc[out.idx] = 1;
        for (int i = out.idx; i >= min_idx; --i) {
            if (!anc[i]) continue;
            for (int j : nodes_[i].in) anc[j] = 1;
        }

        std::vector<int> slot(n, -1);
        slot[out.idx] = constant(Tensor::scalar(1.0)).idx;
        for (int i = out.idx; i >= min_idx; --i) {
            if (slot[i] < 0 || !desc[i] || !anc[i]) continue;
            if (nodes_[i].op == Op::Leaf) continue;
            append_backward(i, Value{this, slot[i]}, desc, slot);
        }

        std::vector<Value> result;
        result.reserve(wrt.size());
        for (const Value& w : wrt) {
            if (w.idx < n && slot[w.idx] >= 0)
                result.push_back(Value{this, slot[w.idx]});
            else
                result.push_back(constant(Tensor(val(w).rows(), val(w).cols())));
        }
        return result;
    }

    Value gradient(Value out, Value wrt) {
        Value w[1] = {wrt};
        return gradients(out, std::span<const Value>(w, 1))[0];
    }

    // Recomputes every node value in order from current leaf values.
    // Throws NonFiniteError naming the first node that turns non-finite.
    void recompute(bool check_finite = true) {
        for (int i = 0; i < size(); ++i) {
            Node& n = nodes_[i];
            if (n.op != Op::Leaf) n.val = eval(n);
            if (check_finite && !n.val.all_finite())
                throw NonFiniteError("non-finite value in node #" + std::to_string(i) + " (" +
                                         op_name(n.op) + ")",
                                     i);
        }
    }

private:
    friend struct Value;

    void check_tape(const Value& v) const {
        if (v.tape != this || v.idx < 0 || v.idx >= (int)nodes_.size())
            throw PreconditionError("value does not belong to this graph");
    }

    Node make(Op op, std::initializer_list<int> in) {
        Node n;
        n.op = op;
        n.in = in;
        return n;
    }

    Value binary(Op op, Value a, Value b) {
        check_tape(a); check_tape(b);
        if (!val(a).same_shape(val(b)))
            throw ShapeError(std::string(op_name(op)) + " shape mismatch " + val(a).shape_str() +
                             " vs " + val(b).shape_str());
        return push(make(op, {a.idx, b.idx}));
    }

    Value push(Node&& n) {
        if (n.op != Op::Leaf) {
            n.val = eval(n);
            if (n.op != Op::Step && n.op != Op::Sign)
                for (int j : n.in) n.needs_grad = n.needs_grad || nodes_[j].needs_grad;
            else
                n.needs_grad = false;
        }
        nodes_.push_back(std::move(n));
        return Value{this, (int)nodes_.size() - 1};
    }

    const Tensor& in_val(const Node& n, int k) const { return nodes_[n.in[k]].val; }

    Tensor eval(const Node& n) const;

    void append_backward(int i, Value g, const std::vector<uint8_t>& desc, std::vector<int>& slot);

    void accumulate(int target, Value contrib, const std::vector<uint8_t>& desc,
                    std::vector<int>& slot) {
        if (target >= (int)desc.size() || !desc[target]) return;
        if (slot[target] < 0)
            slot[target] = contrib.idx;
        else
            slot[target] = add(Value{this, slot[target]}, contrib).idx;
    }

    std::vector<Node> nodes_;
    std::unordered_map<int, int> param_cache_;
};

inline const Tensor& Value::val() const { return tape->val(*this); }

// ---- forward evaluation ----------------------------------------------------

inline Tensor Tape::eval(const Node& n) const {
    auto ew = [&](const Tensor& x, auto&& f) {
        Tensor out(x.rows(), x.cols());
        const double* src = x.data();
        double* dst = out.data();
        long count = x.size();
        auto body = [&](long b, long e) {
            for (long i = b; i < e; ++i) dst[i] = f(src[i]);
        };
        if (count > detail::kEwGrain)
            parallel_for(count, detail::kEwGrain, body);
        else
            body(0, count);
        return out;
    };

    switch (n.op) {
        case Op::Leaf: return n.val;
        case Op::Add: {
            const Tensor &a = in_val(n, 0), &b = in_val(n, 1);
            Tensor out(a.rows(), a.cols());
            for (long i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + b.at(i);
            return out;
        }
        case Op::Sub: {
            const Tensor &a = in_val(n, 0), &b = in_val(n, 1);
            Tensor out(a.rows(), a.cols());
            for (long i = 0; i < a.size(); ++i) out.at(i) = a.at(i) - b.at(i);
            return out;
        }
        case Op::Mul: {
            const Tensor &a = in_val(n, 0), &b = in_val(n, 1);
            Tensor out(a.rows(), a.cols());
            for (long i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * b.at(i);
            return out;
        }
        case Op::AddRowVec: {
            const Tensor &x = in_val(n, 0), &r = in_val(n, 1);
            Tensor out(x.rows(), x.cols());
            for (int i = 0; i < x.rows(); ++i)
                for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) + r(0, j);
            return out;
        }
        case Op::MulColVec: {
            const Tensor &x = in_val(n, 0), &c = in_val(n, 1);
            Tensor out(x.rows(), x.cols());
            for (int i = 0; i < x.rows(); ++i) {
                double s = c(i, 0);
                for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) * s;
            }
            return out;
        }
        case Op::BroadcastCols: {
            const Tensor& c = in_val(n, 0);
            Tensor out(c.rows(), n.i0);
            for (int i = 0; i < c.rows(); ++i)
                for (int j = 0; j < n.i0; ++j) out(i, j) = c(i, 0);
            return out;
        }
        case Op::BroadcastTo: {
            double v = in_val(n, 0).value();
            return Tensor::full(n.i0, n.i1, v);
        }
        case Op::ScalarMul: {
            double c = n.a0;
            return ew(in_val(n, 0), [c](double v) { return c * v; });
        }
        case Op::ScalarAdd: {
            double c = n.a0;
            return ew(in_val(n, 0), [c](double v) { return c + v; });
        }
        case Op::MatmulNN: return sdfrec::matmul(in_val(n, 0), in_val(n, 1));
        case Op::MatmulNT: return sdfrec::matmul(in_val(n, 0), in_val(n, 1), Trans::N, Trans::T);
        case Op::MatmulTN: return sdfrec::matmul(in_val(n, 0), in_val(n, 1), Trans::T, Trans::N);
        case Op::Softplus: {
            double k = n.a0;
            return ew(in_val(n, 0), [k](double v) { return detail::softplus_stable(k * v) / k; });
        }
        case Op::Sigmoid: return ew(in_val(n, 0), detail::sigmoid_stable);
        case Op::Relu: return ew(in_val(n, 0), [](double v) { return v > 0 ? v : 0.0; });
        case Op::Step: {
            double c = n.a0;
            if (n.i0 == 0) return ew(in_val(n, 0), [c](double v) { return v > c ? 1.0 : 0.0; });
            return ew(in_val(n, 0), [c](double v) { return v < c ? 1.0 : 0.0; });
        }
        case Op::Sign:
            return ew(in_val(n, 0), [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
        case Op::Exp: return ew(in_val(n, 0), [](double v) { return std::exp(std::min(v, 700.0)); });
        case Op::Log:
            return ew(in_val(n, 0), [](double v) { return std::log(std::max(v, 1e-300)); });
        case Op::Sin: return ew(in_val(n, 0), [](double v) { return std::sin(v); });
        case Op::Cos: return ew(in_val(n, 0), [](double v) { return std::cos(v); });
        case Op::Sqrt:
            return ew(in_val(n, 0), [](double v) { return std::sqrt(std::max(v, 0.0)); });
        case Op::Square: return ew(in_val(n, 0), [](double v) { return v * v; });
        case Op::Abs: return ew(in_val(n, 0), [](double v) { return std::fabs(v); });
        case Op::Reciprocal:
            return ew(in_val(n, 0), [](double v) { return 1.0 / std::max(v, 1e-300); });
        case Op::ClampMin: {
            double c = n.a0;
            return ew(in_val(n, 0), [c](double v) { return v < c ? c : v; });
        }
        case Op::ClampMax: {
            double c = n.a0;
            return ew(in_val(n, 0), [c](double v) { return v > c ? c : v; });
        }
        case Op::PowRows: {
            const Tensor &b = in_val(n, 0), &e = in_val(n, 1);
            Tensor out(b.rows(), b.cols());
            auto body = [&](long r0, long r1) {
                for (long i = r0; i < r1; ++i) {
                    double ei = e((int)i, 0);
                    for (int j = 0; j < b.cols(); ++j) {
                        double bij = b((int)i, j);
                        out((int)i, j) = bij > 0 ? std::pow(bij, ei) : 0.0;
                    }
                }
            };
            if ((long)b.size() > detail::kEwGrain)
                parallel_for(b.rows(), std::max(1L, detail::kEwGrain / std::max(1, b.cols())), body);
            else
                body(0, b.rows());
            return out;
        }
        case Op::RotCoefA: return ew(in_val(n, 0), detail::rot_coef_a);
        case Op::RotCoefADeriv: return ew(in_val(n, 0), detail::rot_coef_a_deriv);
        case Op::RotCoefB: return ew(in_val(n, 0), detail::rot_coef_b);
        case Op::RotCoefBDeriv: return ew(in_val(n, 0), detail::rot_coef_b_deriv);
        case Op::SumAll: {
            const Tensor& x = in_val(n, 0);
            double s = 0;
            for (long i = 0; i < x.size(); ++i) s += x.at(i);
            return Tensor::scalar(s);
        }
        case Op::SumRows: {
            const Tensor& x = in_val(n, 0);
            Tensor out(x.rows(), 1);
            for (int i = 0; i < x.rows(); ++i) {
                double s = 0;
                for (int j = 0; j < x.cols(); ++j) s += x(i, j);
                out(i, 0) = s;
            }
            return out;
        }
        case Op::SumCols: {
            const Tensor& x = in_val(n, 0);
            Tensor out(1, x.cols());
            for (int i = 0; i < x.rows(); ++i)
                for (int j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
            return out;
        }
        case Op::GroupSumRows: {
            const Tensor& x = in_val(n, 0);
            int S = n.i0, R = x.rows() / S;
            Tensor out(R, x.cols());
            for (int r = 0; r < R; ++r)
                for (int s = 0; s < S; ++s)
                    for (int j = 0; j < x.cols(); ++j) out(r, j) += x(r * S + s, j);
            return out;
        }
        case Op::RepeatRows: {
            const Tensor& x = in_val(n, 0);
            int S = n.i0;
            Tensor out(x.rows() * S, x.cols());
            for (int i = 0; i < x.rows(); ++i)
                for (int s = 0; s < S; ++s)
                    for (int j = 0; j < x.cols(); ++j) out(i * S + s, j) = x(i, j);
            return out;
        }
        case Op::ConcatCols: {
            int rows = in_val(n, 0).rows(), total = 0;
            for (int k = 0; k < (int)n.in.size(); ++k) {
                if (in_val(n, k).rows() != rows) throw ShapeError("concat_cols row mismatch");
                total += in_val(n, k).cols();
            }
            Tensor out(rows, total);
            int off = 0;
            for (int k = 0; k < (int)n.in.size(); ++k) {
                const Tensor& x = in_val(n, k);
                for (int i = 0; i < rows; ++i)
                    std::memcpy(out.row(i) + off, x.row(i), sizeof(double) * x.cols());
                off += x.cols();
            }
            return out;
        }
        case Op::SliceCols: {
            const Tensor& x = in_val(n, 0);
            Tensor out(x.rows(), n.i1);
            for (int i = 0; i < x.rows(); ++i)
                std::memcpy(out.row(i), x.row(i) + n.i0, sizeof(double) * n.i1);
            return out;
        }
        case Op::PadCols: {
            const Tensor& x = in_val(n, 0);
            Tensor out(x.rows(), n.i1);
            for (int i = 0; i < x.rows(); ++i)
                std::memcpy(out.row(i) + n.i0, x.row(i), sizeof(double) * x.cols());
            return out;
        }
        case Op::GatherRows: {
            const Tensor& x = in_val(n, 0);
            const auto& idx = *n.aux;
            Tensor out((int)idx.size(), x.cols());
            for (int i = 0; i < (int)idx.size(); ++i) {
                if (idx[i] < 0 || idx[i] >= x.rows()) throw ShapeError("gather_rows index range");
                std::memcpy(out.row(i), x.row(idx[i]), sizeof(double) * x.cols());
            }
            return out;
        }
        case Op::ScatterAddRows: {
            const Tensor& x = in_val(n, 0);
            const auto& idx = *n.aux;
            Tensor out(n.i0, x.cols());
            for (int i = 0; i < x.rows(); ++i) {
                if (idx[i] < 0 || idx[i] >= n.i0) throw ShapeError("scatter_add index range");
                for (int j = 0; j < x.cols(); ++j) out(idx[i], j) += x(i, j);
            }
            return out;
        }
        case Op::Reshape: return in_val(n, 0).reshaped(n.i0, n.i1);
        case Op::CompositeWeights: {
            const Tensor& a = in_val(n, 0);
            Tensor out(a.rows(), a.cols());
            for (int r = 0; r < a.rows(); ++r) {
                double T = 1.0;
                for (int j = 0; j < a.cols(); ++j) {
                    out(r, j) = a(r, j) * T;
                    T *= 1.0 - a(r, j);
                }
            }
            return out;
        }
        case Op::CompositeBackward: {
            const Tensor &a = in_val(n, 0), &g = in_val(n, 1);
            Tensor out(a.rows(), a.cols());
            for (int r = 0; r < a.rows(); ++r) {
                // dL/da_k = T_k * (g_k - A_k), A_k = suffix recurrence; no divisions.
                int S = a.cols();
                double A = 0.0;
                for (int k = S - 1; k >= 0; --k) {
                    out(r, k) = g(r, k) - A;  // T_k applied below
                    A = g(r, k) * a(r, k) + (1.0 - a(r, k)) * A;
                }
                double T = 1.0;
                for (int k = 0; k < S; ++k) {
                    out(r, k) *= T;
                    T *= 1.0 - a(r, k);
                }
            }
            return out;
        }
    }
    throw Error("internal", "unhandled op in eval");
}

// ---- backward rules ---------------------------------------------------------

inline void Tape::append_backward(int i, Value g, const std::vector<uint8_t>& desc,
                                  std::vector<int>& slot) {
    const Op op = nodes_[i].op;
    const auto in = nodes_[i].in;  // copy: nodes_ may reallocate below
    const double a0 = nodes_[i].a0;
    const int i0 = nodes_[i].i0, i1 = nodes_[i].i1;
    const auto aux = nodes_[i].aux;
    Value self{this, i};
    auto A = [&](int k) { return Value{this, in[k]}; };
    auto want = [&](int k) { return desc[in[k]] != 0; };
    auto put = [&](int k, Value contrib) { accumulate(in[k], contrib, desc, slot); };

    switch (op) {
        case Op::Leaf: return;
        case Op::Add:
            if (want(0)) put(0, g);
            if (want(1)) put(1, g);
            return;
        case Op::Sub:
            if (want(0)) put(0, g);
            if (want(1)) put(1, neg(g));
            return;
        case Op::Mul:
            if (want(0)) put(0, mul(g, A(1)));
            if (want(1)) put(1, mul(g, A(0)));
            return;
        case Op::AddRowVec:
            if (want(0)) put(0, g);
            if (want(1)) put(1, sum_cols(g));
            return;
        case Op::MulColVec:
            if (want(0)) put(0, mul_col_vec(g, A(1)));
            if (want(1)) put(1, sum_rows(mul(g, A(0))));
            return;
        case Op::BroadcastCols:
            if (want(0)) put(0, sum_rows(g));
            return;
        case Op::BroadcastTo:
            if (want(0)) put(0, sum_all(g));
            return;
        case Op::ScalarMul:
            if (want(0)) put(0, scalar_mul(g, a0));
            return;
        case Op::ScalarAdd:
            if (want(0)) put(0, g);
            return;
        case Op::MatmulNN:
            if (want(0)) put(0, matmul(g, A(1), Trans::N, Trans::T));
            if (want(1)) put(1, matmul(A(0), g, Trans::T, Trans::N));
            return;
        case Op::MatmulNT:
            if (want(0)) put(0, matmul(g, A(1)));
            if (want(1)) put(1, matmul(g, A(0), Trans::T, Trans::N));
            return;
        case Op::MatmulTN:
            if (want(0)) put(0, matmul(A(1), g, Trans::N, Trans::T));
            if (want(1)) put(1, matmul(A(0), g));
            return;
        case Op::Softplus:
            if (want(0)) put(0, mul(g, sigmoid(scalar_mul(A(0), a0))));
            return;
        case Op::Sigmoid:
            // y' = y (1 - y), reusing the forward value keeps this differentiable.
            if (want(0)) put(0, mul(mul(g, self), scalar_add(neg(self), 1.0)));
            return;
        case Op::Relu:
            if (want(0)) put(0, mul(g, step_gt(A(0), 0.0)));
            return;
        case Op::Exp:
            if (want(0)) put(0, mul(g, self));
            return;
        case Op::Log:
            if (want(0)) put(0, mul(g, reciprocal(clamp_min(A(0), 1e-300))));
            return;
        case Op::Sin:
            if (want(0)) put(0, mul(g, cos(A(0))));
            return;
        case Op::Cos:
            if (want(0)) put(0, neg(mul(g, sin(A(0)))));
            return;
        case Op::Sqrt:
            if (want(0)) put(0, scalar_mul(mul(g, reciprocal(clamp_min(self, 1e-150))), 0.5));
            return;
        case Op::Square:
            if (want(0)) put(0, scalar_mul(mul(g, A(0)), 2.0));
            return;
        case Op::Abs:
            if (want(0)) put(0, mul(g, sign(A(0))));
            return;
        case Op::Reciprocal:
            if (want(0)) put(0, neg(mul(g, square(self))));
            return;
        case Op::ClampMin:
            if (want(0)) put(0, mul(g, step_gt(A(0), a0)));
            return;
        case Op::ClampMax:
            if (want(0)) put(0, mul(g, step_lt(A(0), a0)));
            return;
        case Op::PowRows: {
            Value mask = step_gt(A(0), 0.0);
            if (want(0)) {
                Value pm1 = pow_rows(A(0), scalar_add(A(1), -1.0));
                put(0, mul(mul_col_vec(mul(g, pm1), A(1)), mask));
            }
            if (want(1)) {
                Value logb = mul(log(A(0)), mask);
                put(1, sum_rows(mul(mul(g, self), logb)));
            }
            return;
        }
        case Op::RotCoefA:
            if (want(0)) put(0, mul(g, push(make(Op::RotCoefADeriv, {in[0]}))));
            return;
        case Op::RotCoefB:
            if (want(0)) put(0, mul(g, push(make(Op::RotCoefBDeriv, {in[0]}))));
            return;
        case Op::RotCoefADeriv:
        case Op::RotCoefBDeriv:
        case Op::CompositeBackward:
            throw PreconditionError(std::string("double backward unsupported through ") +
                                    op_name(op));
        case Op::SumAll:
            if (want(0)) put(0, broadcast_to(g, val(A(0)).rows(), val(A(0)).cols()));
            return;
        case Op::SumRows:
            if (want(0)) put(0, broadcast_cols(g, val(A(0)).cols()));
            return;
        case Op::SumCols:
            if (want(0)) put(0, repeat_rows(g, val(A(0)).rows()));
            return;
        case Op::GroupSumRows:
            if (want(0)) put(0, repeat_rows(g, i0));
            return;
        case Op::RepeatRows:
            if (want(0)) put(0, group_sum_rows(g, i0));
            return;
        case Op::ConcatCols: {
            int off = 0;
            for (int k = 0; k < (int)in.size(); ++k) {
                int w = val(A(k)).cols();
                if (want(k)) put(k, slice_cols(g, off, w));
                off += w;
            }
            return;
        }
        case Op::SliceCols:
            if (want(0)) put(0, pad_cols(g, i0, val(A(0)).cols()));
            return;
        case Op::PadCols:
            if (want(0)) put(0, slice_cols(g, i0, val(A(0)).cols()));
            return;
        case Op::GatherRows:
            if (want(0)) {
                Node n = make(Op::ScatterAddRows, {g.idx});
                n.aux = aux;
                n.i0 = val(A(0)).rows();
                put(0, push(std::move(n)));
            }
            return;
        case Op::ScatterAddRows:
            if (want(0)) {
                Node n = make(Op::GatherRows, {g.idx});
                n.aux = aux;
                put(0, push(std::move(n)));
            }
            return;
        case Op::Reshape:
            if (want(0)) put(0, reshape(g, val(A(0)).rows(), val(A(0)).cols()));
            return;
        case Op::CompositeWeights:
            if (want(0)) put(0, push(make(Op::CompositeBackward, {in[0], g.idx})));
            return;
        case Op::Step:
        case Op::Sign:
            return;  // zero derivative
    }
    throw Error("internal", "unhandled op in backward");
}

// ---- finite-difference checking ---------------------------------------------

// Max over all elements of all `wrt` leaves of |analytic - central FD| /
// (|FD| + 1e-8). Rebuilds node values via recompute, so the tape must contain
// only the forward computation of `out` plus whatever gradients() appended.
inline double fd_check(Tape& tape, Value out, std::span<const Value> wrt, double step) {
    if (step <= 0) throw PreconditionError("fd_check requires step > 0");
    std::vector<Value> grads = tape.gradients(out, wrt);
    std::vector<Tensor> analytic;
    analytic.reserve(grads.size());
    for (Value gv : grads) analytic.push_back(gv.val());

    double worst = 0;
    for (size_t w = 0; w < wrt.size(); ++w) {
        Tensor base = wrt[w].val();
        for (long e = 0; e < base.size(); ++e) {
            Tensor t = base;
            t.at(e) = base.at(e) + step;
            tape.set_leaf(wrt[w], t);
            tape.recompute(false);
            double fp = out.val().value();
            t.at(e) = base.at(e) - step;
            tape.set_leaf(wrt[w], t);
            tape.recompute(false);
            double fm = out.val().value();
            double fd = (fp - fm) / (2 * step);
            double err = std::fabs(analytic[w].at(e) - fd) / (std::fabs(fd) + 1e-8);
            worst = std::max(worst, err);
        }
        tape.set_leaf(wrt[w], base);
    }
    tape.recompute(false);
    return worst;
}

}  // namespace sdfrec::ad
