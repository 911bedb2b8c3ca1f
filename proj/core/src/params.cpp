#include "statret/params.hpp"

#include "statret/errors.hpp"

namespace statret {

Parameter& ParamStore::create(const std::string& name, Tensor init) {
    if (contains(name)) throw ConfigError("parameter already registered: " + name);
    params_.push_back(std::make_unique<Parameter>(name, std::move(init)));
    return *params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
    for (auto& p : params_) {
        if (p->name == name) return *p;
    }
    throw ConfigError("unknown parameter: " + name);
}

const Parameter& ParamStore::get(const std::string& name) const {
    for (const auto& p : params_) {
        if (p->name == name) return *p;
    }
    throw ConfigError("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
    for (const auto& p : params_) {
        if (p->name == name) return true;
    }
    return false;
}

std::vector<Parameter*> ParamStore::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<Parameter*> ParamStore::with_prefix(const std::string& prefix) {
    std::vector<Parameter*> out;
    for (auto& p : params_) {
        if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
    }
    return out;
}

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
}

}  // namespace statret
