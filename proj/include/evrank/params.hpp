#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "evrank/random.hpp"

namespace evrank {

/// A named rows x cols slice of a ParamStore. Vectors are rows x 1.
struct ParamBlock {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
};

/// Flat storage for every trainable value of a model, with a parallel
/// gradient buffer. Blocks are registered once and addressed by index.
class ParamStore {
public:
    std::size_t add(std::string name, std::size_t rows, std::size_t cols);

    const ParamBlock& block(std::size_t index) const { return blocks_[index]; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }
    std::size_t find(std::string_view name) const;  // throws when absent

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<double> values(std::size_t index);
    std::span<const double> values(std::size_t index) const;
    std::span<double> grads() { return grads_; }
    std::span<const double> grads() const { return grads_; }

    std::size_t size() const { return values_.size(); }
    void zero_grad();

    void init_uniform(Rng& rng, double low, double high) {
        for (auto& v : values_) v = uniform(rng, low, high);
    }

    nlohmann::json to_json() const;
    /// Loads values from `j`; block names and shapes must match exactly.
    void load_json(const nlohmann::json& j);

private:
    std::vector<ParamBlock> blocks_;
    std::vector<double> values_;
    std::vector<double> grads_;
};

/// Adam over a flat parameter vector.
class Adam {
public:
    explicit Adam(std::size_t size, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// Descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
    void step(std::span<double> params, std::span<const double> grads);
    double learning_rate() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

}  // namespace evrank
