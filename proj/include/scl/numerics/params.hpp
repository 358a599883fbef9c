#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "scl/numerics/tensor.hpp"

namespace scl {

/// Named learnable tensors in registration order.
class ParamRegistry {
public:
    Tensor add(const std::string& name, Tensor tensor) {
        if (!tensor.requires_grad()) throw ConfigError("parameter '" + name + "' must require grad");
        if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.emplace_back(name, tensor);
        return tensor;
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return entries_[it->second].second;
    }
    Tensor& get(const std::string& name) {
        return const_cast<Tensor&>(std::as_const(*this).get(name));
    }

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : entries_) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : entries_) t.zero_grad();
    }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Normal(0, std) resampled until within two standard deviations.
template <class Rng>
Tensor truncated_normal(Shape shape, double std, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> values(numel(shape));
    for (auto& v : values) {
        double z = normal(rng);
        while (z < -2.0 || z > 2.0) z = normal(rng);
        v = z * std;
    }
    return Tensor::from(std::move(shape), std::move(values), true);
}

}  // namespace scl
