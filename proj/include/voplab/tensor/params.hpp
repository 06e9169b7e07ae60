#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "voplab/tensor/autograd.hpp"

namespace voplab {

template <typename T>
struct ParameterGroup {
    std::string name;  // hierarchical, e.g. "vision.layer.3.attn.in_proj.weight"
    Var<T> tensor;
    bool trainable = false;
};

// Owns every parameter of a model. Names are unique; trainability drives
// requires_grad so frozen groups never enter the gradient graph.
template <typename T>
class ParamRegistry {
public:
    Var<T> add(const std::string& name, Tensor<T> value, bool trainable = false) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
        index_[name] = groups_.size();
        groups_.push_back({name, Var<T>(std::move(value), trainable), trainable});
        return groups_.back().tensor;
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    const ParameterGroup<T>& group(const std::string& name) const { return groups_.at(lookup(name)); }
    Var<T> get(const std::string& name) const { return groups_.at(lookup(name)).tensor; }

    void set_trainable(const std::string& name, bool trainable) {
        auto& g = groups_.at(lookup(name));
        g.trainable = trainable;
        g.tensor.set_requires_grad(trainable);
    }

    const std::vector<ParameterGroup<T>>& groups() const { return groups_; }
    std::vector<ParameterGroup<T>>& groups() { return groups_; }
    std::size_t size() const { return groups_.size(); }

    std::vector<ParameterGroup<T>> trainable_groups() const {
        std::vector<ParameterGroup<T>> out;
        for (const auto& g : groups_) {
            if (g.trainable) out.push_back(g);
        }
        return out;
    }

    std::size_t count(bool trainable_only) const {
        std::size_t n = 0;
        for (const auto& g : groups_) {
            if (!trainable_only || g.trainable) n += g.tensor.numel();
        }
        return n;
    }

    void zero_grad() {
        for (auto& g : groups_) g.tensor.zero_grad();
    }

private:
    std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<ParameterGroup<T>> groups_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace voplab
