#include "evrank/encoder.hpp"

#include <cmath>

#include "evrank/error.hpp"

namespace evrank {

void EncoderShape::validate() const {
    if (embed_dim == 0 || key_dim == 0) throw Error("encoder: embed_dim and key_dim must be positive");
    if (time_dim % 2 != 0) throw Error("encoder: time_dim must be even");
    if (layers == 0) throw Error("encoder: at least one attention layer is required");
    if (heads == 0 || embed_dim % heads != 0)
        throw Error("encoder: embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                    std::to_string(heads) + " heads");
    if (!(time_base > 1.0)) throw Error("encoder: time_base must exceed 1");
}

nlohmann::json to_json(const EncoderShape& s) {
    return {{"embed_dim", s.embed_dim}, {"time_dim", s.time_dim}, {"key_dim", s.key_dim},
            {"heads", s.heads},         {"layers", s.layers},     {"time_base", s.time_base}};
}

EncoderShape encoder_shape_from_json(const nlohmann::json& j) {
    EncoderShape s;
    s.embed_dim = j.at("embed_dim").get<std::size_t>();
    s.time_dim = j.at("time_dim").get<std::size_t>();
    s.key_dim = j.at("key_dim").get<std::size_t>();
    s.heads = j.at("heads").get<std::size_t>();
    s.layers = j.at("layers").get<std::size_t>();
    s.time_base = j.at("time_base").get<double>();
    s.validate();
    return s;
}

std::vector<double> time_features(double t, std::size_t dim, double base) {
    std::vector<double> out(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double w = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        out[2 * i] = std::sin(w * t);
        out[2 * i + 1] = std::cos(w * t);
    }
    return out;
}

AttentionEncoder::AttentionEncoder(ParamStore& store, const std::string& prefix, EncoderShape shape)
    : shape_(shape) {
    shape_.validate();
    const std::size_t in = shape_.input_dim();
    for (std::size_t l = 1; l <= shape_.layers; ++l) {
        const std::string tag = prefix + ".layer" + std::to_string(l);
        value_.push_back(store.add(tag + ".value", shape_.embed_dim, in));
        key_.push_back(store.add(tag + ".key", shape_.key_dim * shape_.heads, in));
        query_.push_back(store.add(tag + ".query", shape_.key_dim * shape_.heads, in));
    }
}

Var AttentionEncoder::layer_input(Tape& tape, double t, Var h) const {
    std::vector<double> head(1 + shape_.time_dim);
    head[0] = 1.0;
    const auto tf = time_features(t, shape_.time_dim, shape_.time_base);
    std::copy(tf.begin(), tf.end(), head.begin() + 1);
    const Var parts[] = {tape.constant(head), h};
    return tape.concat(parts);
}

Var AttentionEncoder::refine(Tape& tape, const History& history, std::size_t layer, std::size_t prefix,
                             Var input, Var h) const {
    if (prefix == 0) return h;  // tanh(0) leaves the residual unchanged
    const auto& store = tape.params();
    const Var q = tape.matvec(store.block(query_[layer]), input);
    const std::span<const Var> keys(history.keys[layer].data(), prefix);
    const std::span<const Var> values(history.values[layer].data(), prefix);
    const Var a = tape.attend(q, keys, values, shape_.heads, 1.0 / std::sqrt(static_cast<double>(shape_.key_dim)));
    return tape.add(h, tape.tanh(a));
}

AttentionEncoder::History AttentionEncoder::encode_history(Tape& tape, std::span<const double> times,
                                                           std::span<const Var> base) const {
    if (times.size() != base.size()) throw Error("encoder: history times and embeddings differ in length");
    History hist;
    hist.times.assign(times.begin(), times.end());
    hist.keys.assign(shape_.layers, {});
    hist.values.assign(shape_.layers, {});
    const auto& store = tape.params();
    std::size_t prefix = 0;
    for (std::size_t j = 0; j < times.size(); ++j) {
        if (j > 0 && times[j] < times[j - 1]) throw Error("encoder: history is not sorted by time");
        while (prefix < j && times[prefix] < times[j]) ++prefix;
        if (tape.size(base[j]) != shape_.embed_dim) throw Error("encoder: layer-0 embedding has the wrong size");
        Var h = base[j];
        for (std::size_t l = 0; l < shape_.layers; ++l) {
            const Var input = layer_input(tape, times[j], h);
            hist.keys[l].push_back(tape.matvec(store.block(key_[l]), input));
            hist.values[l].push_back(tape.matvec(store.block(value_[l]), input));
            if (l + 1 < shape_.layers) h = refine(tape, hist, l, prefix, input, h);
        }
    }
    return hist;
}

Var AttentionEncoder::embed(Tape& tape, const History& history, std::size_t prefix, Var base, double t) const {
    if (prefix > history.times.size()) throw Error("encoder: prefix exceeds history length");
    if (prefix > 0 && !(history.times[prefix - 1] < t))
        throw Error("encoder: history event at " + std::to_string(history.times[prefix - 1]) +
                    " is not strictly before query time " + std::to_string(t));
    if (tape.size(base) != shape_.embed_dim) throw Error("encoder: layer-0 embedding has the wrong size");
    std::vector<Var> layers{base};
    Var h = base;
    for (std::size_t l = 0; l < shape_.layers; ++l) {
        const Var input = layer_input(tape, t, h);
        h = refine(tape, history, l, prefix, input, h);
        layers.push_back(h);
    }
    return tape.concat(layers);
}

}  // namespace evrank
