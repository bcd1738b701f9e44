#include "evrank/params.hpp"

#include <cmath>

#include "evrank/error.hpp"

namespace evrank {

std::size_t ParamStore::add(std::string name, std::size_t rows, std::size_t cols) {
    for (const auto& b : blocks_)
        if (b.name == name) throw Error("duplicate parameter block '" + name + "'");
    blocks_.push_back({std::move(name), values_.size(), rows, cols});
    values_.resize(values_.size() + rows * cols, 0.0);
    grads_.resize(values_.size(), 0.0);
    return blocks_.size() - 1;
}

std::size_t ParamStore::find(std::string_view name) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        if (blocks_[i].name == name) return i;
    throw Error("no parameter block named '" + std::string(name) + "'");
}

std::span<double> ParamStore::values(std::size_t index) {
    const auto& b = blocks_.at(index);
    return std::span<double>(values_).subspan(b.offset, b.size());
}

std::span<const double> ParamStore::values(std::size_t index) const {
    const auto& b = blocks_.at(index);
    return std::span<const double>(values_).subspan(b.offset, b.size());
}

void ParamStore::zero_grad() {
    std::fill(grads_.begin(), grads_.end(), 0.0);
}

nlohmann::json ParamStore::to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        auto v = values(i);
        out.push_back({{"name", b.name}, {"shape", {b.rows, b.cols}}, {"data", std::vector<double>(v.begin(), v.end())}});
    }
    return out;
}

void ParamStore::load_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != blocks_.size())
        throw Error("parameter checkpoint has " + std::to_string(j.size()) + " blocks, model expects " +
                    std::to_string(blocks_.size()));
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        const auto& entry = j[i];
        if (entry.at("name").get<std::string>() != b.name)
            throw Error("parameter block mismatch: expected '" + b.name + "', found '" +
                        entry.at("name").get<std::string>() + "'");
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2 || shape[0] != b.rows || shape[1] != b.cols)
            throw Error("parameter block '" + b.name + "' has the wrong shape");
        const auto data = entry.at("data").get<std::vector<double>>();
        auto dst = values(i);
        std::copy(data.begin(), data.end(), dst.begin());
    }
}

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

}  // namespace evrank
