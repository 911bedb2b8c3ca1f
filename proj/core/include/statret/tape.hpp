#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "statret/params.hpp"
#include "statret/tensor.hpp"

namespace statret {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& val() const;
    std::size_t numel() const { return val().numel(); }
};

/// Reverse-mode differentiation tape. A training step builds a fresh tape by
/// applying primitives to leaves, then calls backward(loss) once, which
/// accumulates d(loss)/d(leaf) into every reachable Parameter's grad.
///
/// Nodes are appended in execution order, so the tape is topologically sorted
/// by construction and a single reverse sweep suffices. Nodes derived only
/// from constants carry requires_grad = false and are skipped on the sweep.
class Tape {
public:
    // ---- leaves -----------------------------------------------------------
    Var leaf(Parameter& p);
    Var constant(Tensor t);

    // ---- primitives -------------------------------------------------------
    Var matmul(Var a, Var b);                 // {n,k} x {k,m} -> {n,m}
    Var transpose(Var a);                     // {n,m} -> {m,n}
    Var add(Var a, Var b);                    // same shape
    Var sub(Var a, Var b);                    // same shape
    Var add_bias(Var a, Var bias);            // {n,m} + {m} per row
    Var mul(Var a, Var b);                    // elementwise, same shape
    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var clamp_min(Var a, double c);           // zero gradient where clamped
    Var exp(Var a);
    Var log(Var a);
    Var leaky_relu(Var a, double slope);
    Var gelu(Var a);                          // exact erf formulation
    Var row_softmax(Var a);                   // per-row, max-subtracted
    Var maxpool_rows(Var a);                  // {n,m} -> {m}, columnwise max
    Var sum(Var a);                           // -> scalar {1}
    Var dot(Var a, Var b);                    // flat dot, same shape -> {1}
    Var concat_cols(const std::vector<Var>& parts);   // rank 2, same rows
    Var concat_rows(const std::vector<Var>& parts);   // {m} or {r,m} stacked
    Var slice_cols(Var a, std::size_t c0, std::size_t c1);
    Var gather_rows(Var a, std::vector<std::size_t> idx);   // scatter-add back
    Var gather_elems(Var a, std::vector<std::size_t> flat_idx);  // -> {k}
    Var reshape(Var a, std::vector<std::size_t> shape);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);

    // ---- composite helpers (built from primitives) ------------------------
    Var mean(Var a);
    /// Stabilized log(sum(exp(x))) over all elements; the max is detached,
    /// which is exact for any constant shift.
    Var log_sum_exp(Var a);
    /// Multiply by a dropout mask drawn from rng (inverted scaling), or pass
    /// through unchanged when rate == 0.
    Var dropout(Var a, double rate, Rng& rng);

    // ---- execution --------------------------------------------------------
    /// Runs the reverse sweep from a scalar loss. Rejects non-scalar inputs.
    void backward(Var loss);

    const Tensor& value(Var v) const { return nodes_[v.id].out; }
    /// Gradient buffer of a node after backward; zeros if unreached.
    Tensor grad_of(Var v) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor out;
        Tensor grad;            // lazily sized during backward
        bool requires_grad = false;
        bool grad_live = false;  // grad buffer allocated
        Parameter* param = nullptr;
        std::function<void(Tape&, Node&)> backward_fn;
    };

    std::vector<Node> nodes_;

    Var push(Tensor out, bool requires_grad, std::function<void(Tape&, Node&)> bw);
    Tensor& grad_buf(std::size_t id);
    bool wants(std::size_t id) const { return nodes_[id].requires_grad; }
    void accum(std::size_t id, const Tensor& g);

    friend struct Var;
};

}  // namespace statret
