#pragma once

// Minimal reverse-mode differentiation over dense vectors.
//
// A Tape records a straight-line program of vector operations. Values are
// computed eagerly when a node is appended; backward() walks the nodes in
// reverse and accumulates d(output)/d(parameter) into a caller-provided
// gradient buffer laid out like ParamStore::values(). Parameters are read
// directly from the store, so they are never copied onto the tape.
//
// Inference reuses one tape per history: record the shared history nodes,
// take a mark(), append the nodes for one query, read its value, rewind().

#include <cstdint>
#include <span>
#include <vector>

#include "evrank/params.hpp"

namespace evrank {

struct Var {
    std::uint32_t id = 0;
};

class Tape {
public:
    explicit Tape(const ParamStore& params) : params_(&params) {}

    const ParamStore& params() const { return *params_; }

    Var constant(std::span<const double> values);
    Var constant(double value);
    Var param(const ParamBlock& block);                    // whole block, flattened
    Var param_row(const ParamBlock& block, std::size_t row);
    Var matvec(const ParamBlock& matrix, Var x);           // matrix * x
    Var concat(std::span<const Var> parts);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double factor);
    Var tanh(Var a);
    Var softplus(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var dot(Var a, Var b);                                 // scalar
    Var sum(std::span<const Var> parts);                   // elementwise
    Var logsumexp(std::span<const Var> scalars);           // scalar

    /// Multi-head unnormalized attention with +1 smoothing:
    /// per head h, a_h = sum_j alpha_j v_j / (1 + sum_j alpha_j) with
    /// alpha_j = exp(scale * <k_j, q>) on the head's slices. Output has the
    /// size of a value vector; empty `keys` yields zeros.
    Var attend(Var query, std::span<const Var> keys, std::span<const Var> values, std::size_t heads, double scale);

    std::span<const double> value(Var v) const;
    double scalar(Var v) const { return value(v)[0]; }
    std::size_t size(Var v) const { return nodes_[v.id].size; }

    /// Accumulates seed * d(out)/d(param) into `param_grads` (same layout as
    /// ParamStore::values()). `out` must be a scalar node.
    void backward(Var out, std::span<double> param_grads, double seed = 1.0);

    struct Mark {
        std::size_t nodes = 0, values = 0, args = 0;
    };
    Mark mark() const { return {nodes_.size(), values_.size(), args_.size()}; }
    void rewind(Mark m);
    void clear() { rewind({}); }
    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class Op : std::uint8_t {
        constant, param, matvec, concat, add, sub, scale, tanh, softplus, exp, log, dot, sum, logsumexp, attend
    };

    struct Node {
        Op op;
        std::uint32_t out = 0;        // offset into values_
        std::uint32_t size = 0;
        std::uint32_t arg_begin = 0;  // offset into args_
        std::uint32_t arg_count = 0;
        std::size_t param_offset = 0;
        std::uint32_t rows = 0, cols = 0;
        double factor = 0.0;
    };

    Var push(Node node, std::span<const std::uint32_t> args);
    const double* ptr(std::uint32_t node) const { return values_.data() + nodes_[node].out; }

    const ParamStore* params_;
    std::vector<Node> nodes_;
    std::vector<double> values_;
    std::vector<std::uint32_t> args_;
    std::vector<double> grads_;  // scratch for backward
};

}  // namespace evrank
