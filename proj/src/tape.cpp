#include "evrank/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "evrank/error.hpp"

namespace evrank {

namespace {

double softplus_value(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Var Tape::push(Node node, std::span<const std::uint32_t> args) {
    node.out = static_cast<std::uint32_t>(values_.size());
    node.arg_begin = static_cast<std::uint32_t>(args_.size());
    node.arg_count = static_cast<std::uint32_t>(args.size());
    args_.insert(args_.end(), args.begin(), args.end());
    values_.resize(values_.size() + node.size, 0.0);
    nodes_.push_back(node);
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

std::span<const double> Tape::value(Var v) const {
    const auto& n = nodes_[v.id];
    return {values_.data() + n.out, n.size};
}

Var Tape::constant(std::span<const double> values) {
    Node n{Op::constant};
    n.size = static_cast<std::uint32_t>(values.size());
    Var v = push(n, {});
    std::copy(values.begin(), values.end(), values_.begin() + nodes_[v.id].out);
    return v;
}

Var Tape::constant(double value) {
    return constant(std::span<const double>(&value, 1));
}

Var Tape::param(const ParamBlock& block) {
    Node n{Op::param};
    n.size = static_cast<std::uint32_t>(block.size());
    n.param_offset = block.offset;
    Var v = push(n, {});
    auto src = params_->values().subspan(block.offset, block.size());
    std::copy(src.begin(), src.end(), values_.begin() + nodes_[v.id].out);
    return v;
}

Var Tape::param_row(const ParamBlock& block, std::size_t row) {
    if (row >= block.rows) throw Error("row " + std::to_string(row) + " out of range for '" + block.name + "'");
    Node n{Op::param};
    n.size = static_cast<std::uint32_t>(block.cols);
    n.param_offset = block.offset + row * block.cols;
    Var v = push(n, {});
    auto src = params_->values().subspan(n.param_offset, block.cols);
    std::copy(src.begin(), src.end(), values_.begin() + nodes_[v.id].out);
    return v;
}

Var Tape::matvec(const ParamBlock& matrix, Var x) {
    if (nodes_[x.id].size != matrix.cols)
        throw Error("matvec dimension mismatch for '" + matrix.name + "': " + std::to_string(matrix.cols) +
                    " columns vs input of size " + std::to_string(nodes_[x.id].size));
    Node n{Op::matvec};
    n.size = static_cast<std::uint32_t>(matrix.rows);
    n.param_offset = matrix.offset;
    n.rows = static_cast<std::uint32_t>(matrix.rows);
    n.cols = static_cast<std::uint32_t>(matrix.cols);
    const std::uint32_t a[] = {x.id};
    Var v = push(n, a);
    const double* w = params_->values().data() + matrix.offset;
    const double* xin = ptr(x.id);
    double* y = values_.data() + nodes_[v.id].out;
    for (std::size_t r = 0; r < matrix.rows; ++r) {
        double acc = 0.0;
        const double* wr = w + r * matrix.cols;
        for (std::size_t c = 0; c < matrix.cols; ++c) acc += wr[c] * xin[c];
        y[r] = acc;
    }
    return v;
}

Var Tape::concat(std::span<const Var> parts) {
    Node n{Op::concat};
    std::vector<std::uint32_t> ids;
    ids.reserve(parts.size());
    for (Var p : parts) {
        n.size += nodes_[p.id].size;
        ids.push_back(p.id);
    }
    Var v = push(n, ids);
    std::size_t at = nodes_[v.id].out;
    for (Var p : parts) {
        const auto& pn = nodes_[p.id];
        std::copy_n(values_.begin() + pn.out, pn.size, values_.begin() + at);
        at += pn.size;
    }
    return v;
}

Var Tape::add(Var a, Var b) {
    if (nodes_[a.id].size != nodes_[b.id].size) throw Error("add: size mismatch");
    Node n{Op::add};
    n.size = nodes_[a.id].size;
    const std::uint32_t ids[] = {a.id, b.id};
    Var v = push(n, ids);
    double* y = values_.data() + nodes_[v.id].out;
    const double* pa = ptr(a.id);
    const double* pb = ptr(b.id);
    for (std::size_t i = 0; i < n.size; ++i) y[i] = pa[i] + pb[i];
    return v;
}

Var Tape::sub(Var a, Var b) {
    if (nodes_[a.id].size != nodes_[b.id].size) throw Error("sub: size mismatch");
    Node n{Op::sub};
    n.size = nodes_[a.id].size;
    const std::uint32_t ids[] = {a.id, b.id};
    Var v = push(n, ids);
    double* y = values_.data() + nodes_[v.id].out;
    const double* pa = ptr(a.id);
    const double* pb = ptr(b.id);
    for (std::size_t i = 0; i < n.size; ++i) y[i] = pa[i] - pb[i];
    return v;
}

Var Tape::scale(Var a, double factor) {
    Node n{Op::scale};
    n.size = nodes_[a.id].size;
    n.factor = factor;
    const std::uint32_t ids[] = {a.id};
    Var v = push(n, ids);
    double* y = values_.data() + nodes_[v.id].out;
    const double* pa = ptr(a.id);
    for (std::size_t i = 0; i < n.size; ++i) y[i] = factor * pa[i];
    return v;
}

#define EVRANK_UNARY(NAME, OP, EXPR)                                 \
    Var Tape::NAME(Var a) {                                          \
        Node n{Op::OP};                                              \
        n.size = nodes_[a.id].size;                                  \
        const std::uint32_t ids[] = {a.id};                          \
        Var v = push(n, ids);                                        \
        double* y = values_.data() + nodes_[v.id].out;               \
        const double* pa = ptr(a.id);                                \
        for (std::size_t i = 0; i < n.size; ++i) {                   \
            const double x = pa[i];                                  \
            y[i] = (EXPR);                                           \
        }                                                            \
        return v;                                                    \
    }

EVRANK_UNARY(tanh, tanh, std::tanh(x))
EVRANK_UNARY(softplus, softplus, softplus_value(x))
EVRANK_UNARY(exp, exp, std::exp(x))
EVRANK_UNARY(log, log, std::log(x))

#undef EVRANK_UNARY

Var Tape::dot(Var a, Var b) {
    if (nodes_[a.id].size != nodes_[b.id].size) throw Error("dot: size mismatch");
    Node n{Op::dot};
    n.size = 1;
    const std::uint32_t ids[] = {a.id, b.id};
    Var v = push(n, ids);
    const double* pa = ptr(a.id);
    const double* pb = ptr(b.id);
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes_[a.id].size; ++i) acc += pa[i] * pb[i];
    values_[nodes_[v.id].out] = acc;
    return v;
}

Var Tape::sum(std::span<const Var> parts) {
    if (parts.empty()) throw Error("sum: no operands");
    Node n{Op::sum};
    n.size = nodes_[parts[0].id].size;
    std::vector<std::uint32_t> ids;
    for (Var p : parts) {
        if (nodes_[p.id].size != n.size) throw Error("sum: size mismatch");
        ids.push_back(p.id);
    }
    Var v = push(n, ids);
    double* y = values_.data() + nodes_[v.id].out;
    for (Var p : parts) {
        const double* pp = ptr(p.id);
        for (std::size_t i = 0; i < n.size; ++i) y[i] += pp[i];
    }
    return v;
}

Var Tape::logsumexp(std::span<const Var> scalars) {
    if (scalars.empty()) throw Error("logsumexp: no operands");
    Node n{Op::logsumexp};
    n.size = 1;
    std::vector<std::uint32_t> ids;
    double m = -std::numeric_limits<double>::infinity();
    for (Var s : scalars) {
        if (nodes_[s.id].size != 1) throw Error("logsumexp: operands must be scalars");
        ids.push_back(s.id);
        m = std::max(m, *ptr(s.id));
    }
    Var v = push(n, ids);
    double acc = 0.0;
    for (Var s : scalars) acc += std::exp(*ptr(s.id) - m);
    values_[nodes_[v.id].out] = m + std::log(acc);
    return v;
}

namespace {

// Per-head attention weights w_j = alpha_j / (1 + sum alpha), computed with
// a max shift so that large scores do not overflow.
void attention_weights(const double* q, const std::vector<const double*>& keys, std::size_t offset,
                       std::size_t width, double scale, std::vector<double>& w) {
    const std::size_t n = keys.size();
    w.resize(n);
    double m = 0.0;  // the +1 term is exp(0)
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < width; ++d) s += keys[j][offset + d] * q[offset + d];
        w[j] = scale * s;
        m = std::max(m, w[j]);
    }
    double denom = std::exp(-m);
    for (std::size_t j = 0; j < n; ++j) {
        w[j] = std::exp(w[j] - m);
        denom += w[j];
    }
    for (auto& x : w) x /= denom;
}

}  // namespace

Var Tape::attend(Var query, std::span<const Var> keys, std::span<const Var> values, std::size_t heads,
                 double scale) {
    if (keys.size() != values.size()) throw Error("attend: keys and values differ in count");
    if (heads == 0) throw Error("attend: zero heads");
    const std::size_t qsize = nodes_[query.id].size;
    if (qsize % heads != 0) throw Error("attend: query size not divisible by head count");
    Node n{Op::attend};
    n.factor = scale;
    n.rows = static_cast<std::uint32_t>(heads);
    if (values.empty()) {
        throw Error("attend: empty history (callers skip attention when nothing precedes the query)");
    }
    n.size = nodes_[values[0].id].size;
    if (n.size % heads != 0) throw Error("attend: value size not divisible by head count");
    std::vector<std::uint32_t> ids;
    ids.reserve(1 + 2 * keys.size());
    ids.push_back(query.id);
    for (Var k : keys) {
        if (nodes_[k.id].size != qsize) throw Error("attend: key/query size mismatch");
        ids.push_back(k.id);
    }
    for (Var v : values) {
        if (nodes_[v.id].size != n.size) throw Error("attend: value size mismatch");
        ids.push_back(v.id);
    }
    Var out = push(n, ids);

    const std::size_t kw = qsize / heads, vw = n.size / heads;
    std::vector<const double*> kp, vp;
    for (Var k : keys) kp.push_back(ptr(k.id));
    for (Var v : values) vp.push_back(ptr(v.id));
    const double* q = ptr(query.id);
    double* y = values_.data() + nodes_[out.id].out;
    std::vector<double> w;
    for (std::size_t h = 0; h < heads; ++h) {
        attention_weights(q, kp, h * kw, kw, scale, w);
        for (std::size_t j = 0; j < kp.size(); ++j)
            for (std::size_t d = 0; d < vw; ++d) y[h * vw + d] += w[j] * vp[j][h * vw + d];
    }
    return out;
}

void Tape::rewind(Mark m) {
    nodes_.resize(m.nodes);
    values_.resize(m.values);
    args_.resize(m.args);
}

void Tape::backward(Var out, std::span<double> param_grads, double seed) {
    if (nodes_[out.id].size != 1) throw Error("backward: output must be a scalar");
    if (param_grads.size() != params_->size()) throw Error("backward: gradient buffer has the wrong size");
    grads_.assign(values_.size(), 0.0);
    grads_[nodes_[out.id].out] = seed;
    const double* pv = params_->values().data();

    std::vector<double> w;
    std::vector<const double*> kp, vp;
    for (std::size_t idx = out.id + 1; idx-- > 0;) {
        const Node& n = nodes_[idx];
        const double* g = grads_.data() + n.out;
        bool any = false;
        for (std::size_t i = 0; i < n.size; ++i)
            if (g[i] != 0.0) {
                any = true;
                break;
            }
        if (!any) continue;
        const std::uint32_t* args = args_.data() + n.arg_begin;
        const double* y = values_.data() + n.out;
        auto ga = [&](std::uint32_t k) { return grads_.data() + nodes_[args[k]].out; };
        auto va = [&](std::uint32_t k) { return values_.data() + nodes_[args[k]].out; };

        switch (n.op) {
            case Op::constant:
                break;
            case Op::param:
                for (std::size_t i = 0; i < n.size; ++i) param_grads[n.param_offset + i] += g[i];
                break;
            case Op::matvec: {
                const double* x = va(0);
                double* gx = ga(0);
                const double* wm = pv + n.param_offset;
                double* gw = param_grads.data() + n.param_offset;
                for (std::size_t r = 0; r < n.rows; ++r) {
                    if (g[r] == 0.0) continue;
                    const double* wr = wm + r * n.cols;
                    double* gwr = gw + r * n.cols;
                    for (std::size_t c = 0; c < n.cols; ++c) {
                        gwr[c] += g[r] * x[c];
                        gx[c] += wr[c] * g[r];
                    }
                }
                break;
            }
            case Op::concat: {
                std::size_t at = 0;
                for (std::uint32_t k = 0; k < n.arg_count; ++k) {
                    const std::size_t sz = nodes_[args[k]].size;
                    double* gk = ga(k);
                    for (std::size_t i = 0; i < sz; ++i) gk[i] += g[at + i];
                    at += sz;
                }
                break;
            }
            case Op::add: {
                double* g0 = ga(0);
                double* g1 = ga(1);
                for (std::size_t i = 0; i < n.size; ++i) {
                    g0[i] += g[i];
                    g1[i] += g[i];
                }
                break;
            }
            case Op::sub: {
                double* g0 = ga(0);
                double* g1 = ga(1);
                for (std::size_t i = 0; i < n.size; ++i) {
                    g0[i] += g[i];
                    g1[i] -= g[i];
                }
                break;
            }
            case Op::scale: {
                double* g0 = ga(0);
                for (std::size_t i = 0; i < n.size; ++i) g0[i] += n.factor * g[i];
                break;
            }
            case Op::tanh: {
                double* g0 = ga(0);
                for (std::size_t i = 0; i < n.size; ++i) g0[i] += g[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case Op::softplus: {
                double* g0 = ga(0);
                const double* x = va(0);
                for (std::size_t i = 0; i < n.size; ++i) g0[i] += g[i] * sigmoid(x[i]);
                break;
            }
            case Op::exp: {
                double* g0 = ga(0);
                for (std::size_t i = 0; i < n.size; ++i) g0[i] += g[i] * y[i];
                break;
            }
            case Op::log: {
                double* g0 = ga(0);
                const double* x = va(0);
                for (std::size_t i = 0; i < n.size; ++i) g0[i] += g[i] / x[i];
                break;
            }
            case Op::dot: {
                const std::size_t sz = nodes_[args[0]].size;
                double* g0 = ga(0);
                double* g1 = ga(1);
                const double* a = va(0);
                const double* b = va(1);
                for (std::size_t i = 0; i < sz; ++i) {
                    g0[i] += g[0] * b[i];
                    g1[i] += g[0] * a[i];
                }
                break;
            }
            case Op::sum:
                for (std::uint32_t k = 0; k < n.arg_count; ++k) {
                    double* gk = ga(k);
                    for (std::size_t i = 0; i < n.size; ++i) gk[i] += g[i];
                }
                break;
            case Op::logsumexp:
                for (std::uint32_t k = 0; k < n.arg_count; ++k) ga(k)[0] += g[0] * std::exp(va(k)[0] - y[0]);
                break;
            case Op::attend: {
                const std::size_t count = (n.arg_count - 1) / 2;
                const std::size_t heads = n.rows;
                const std::size_t qsize = nodes_[args[0]].size;
                const std::size_t kw = qsize / heads, vw = n.size / heads;
                const double* q = va(0);
                double* gq = ga(0);
                kp.clear();
                vp.clear();
                for (std::size_t j = 0; j < count; ++j) {
                    kp.push_back(va(static_cast<std::uint32_t>(1 + j)));
                    vp.push_back(va(static_cast<std::uint32_t>(1 + count + j)));
                }
                for (std::size_t h = 0; h < heads; ++h) {
                    attention_weights(q, kp, h * kw, kw, n.factor, w);
                    const double* gh = g + h * vw;
                    const double* ah = y + h * vw;
                    for (std::size_t j = 0; j < count; ++j) {
                        double* gk = ga(static_cast<std::uint32_t>(1 + j));
                        double* gv = ga(static_cast<std::uint32_t>(1 + count + j));
                        const double* vj = vp[j] + h * vw;
                        double proj = 0.0;
                        for (std::size_t d = 0; d < vw; ++d) {
                            proj += gh[d] * (vj[d] - ah[d]);
                            gv[h * vw + d] += w[j] * gh[d];
                        }
                        const double gs = w[j] * proj * n.factor;
                        for (std::size_t d = 0; d < kw; ++d) {
                            gq[h * kw + d] += gs * kp[j][h * kw + d];
                            gk[h * kw + d] += gs * q[h * kw + d];
                        }
                    }
                }
                break;
            }
        }
    }
}

}  // namespace evrank
