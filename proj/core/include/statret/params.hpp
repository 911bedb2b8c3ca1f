#pragma once

#include <memory>
#include <string>
#include <vector>

#include "statret/tensor.hpp"

namespace statret {

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;  // same shape, accumulated by Tape::backward

    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

    void zero_grad() { grad.fill(0.0); }
};

/// Ordered, name-unique collection of parameters. Registration order is the
/// serialization order, which keeps checkpoints byte-stable.
class ParamStore {
public:
    Parameter& create(const std::string& name, Tensor init);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<Parameter*> all();
    /// Parameters whose name starts with the given prefix.
    std::vector<Parameter*> with_prefix(const std::string& prefix);

    std::size_t size() const { return params_.size(); }
    Parameter& at(std::size_t i) { return *params_[i]; }
    const Parameter& at(std::size_t i) const { return *params_[i]; }

    std::size_t total_elements() const;

private:
    std::vector<std::unique_ptr<Parameter>> params_;  // stable addresses
};

}  // namespace statret
