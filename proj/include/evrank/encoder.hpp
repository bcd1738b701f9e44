#pragma once

// Continuous-time attention encoder.
//
// An event (type k, time t) starts from a learned layer-0 embedding and is
// refined layer by layer by attending to the events strictly before t:
//
//   h_l(t) = h_{l-1}(t) + tanh( sum_j alpha_j v_j / (1 + sum_j alpha_j) )
//   alpha_j = exp( <k_j, q(t)> / sqrt(D) )
//
// with v, k, q affine in [1; time_features(t); h_{l-1}]. The encoding of an
// event is the concatenation h_0 .. h_L. History events are themselves
// encoded causally, so a history's keys and values can be computed once and
// shared by any number of queries after it.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "evrank/params.hpp"
#include "evrank/tape.hpp"

namespace evrank {

struct EncoderShape {
    std::size_t embed_dim = 16;  // layer-0 embedding size; also every layer's width
    std::size_t time_dim = 8;    // sinusoidal time features (even)
    std::size_t key_dim = 8;     // per head
    std::size_t heads = 1;
    std::size_t layers = 1;
    double time_base = 10000.0;

    std::size_t input_dim() const { return 1 + time_dim + embed_dim; }
    std::size_t output_dim() const { return embed_dim * (layers + 1); }
    void validate() const;
};

nlohmann::json to_json(const EncoderShape& shape);
EncoderShape encoder_shape_from_json(const nlohmann::json& j);

/// Fixed features [sin(w_i t), cos(w_i t)] with w_i = base^(-2i/dim).
std::vector<double> time_features(double t, std::size_t dim, double base);

class AttentionEncoder {
public:
    AttentionEncoder() = default;
    /// Registers per-layer value/key/query matrices in `store` under `prefix`.
    AttentionEncoder(ParamStore& store, const std::string& prefix, EncoderShape shape);

    const EncoderShape& shape() const { return shape_; }

    struct History {
        std::vector<double> times;
        std::vector<std::vector<Var>> keys;    // [layer-1][event]
        std::vector<std::vector<Var>> values;  // [layer-1][event]
    };

    /// Encodes a time-sorted history. `base[j]` is event j's layer-0 embedding.
    History encode_history(Tape& tape, std::span<const double> times, std::span<const Var> base) const;

    /// Encoding of a query event with layer-0 embedding `base` at time `t`,
    /// attending to the first `prefix` history events (all of which must be
    /// strictly before t).
    Var embed(Tape& tape, const History& history, std::size_t prefix, Var base, double t) const;

private:
    Var layer_input(Tape& tape, double t, Var h) const;
    Var refine(Tape& tape, const History& history, std::size_t layer, std::size_t prefix, Var input, Var h) const;

    EncoderShape shape_;
    std::vector<std::size_t> value_, key_, query_;  // block indices per layer
};

}  // namespace evrank
