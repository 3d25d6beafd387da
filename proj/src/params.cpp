#include "gazeatt/params.hpp"

#include <cmath>
#include <stdexcept>

namespace gazeatt {

ag::Var ParamStore::create(const std::string& name, std::vector<int> shape,
                           std::vector<double> values) {
    if (by_name_.count(name))
        throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    auto v = ag::make_var(std::move(shape), std::move(values), /*needs_grad=*/true);
    entries_.emplace_back(name, v);
    by_name_.emplace(name, v);
    return v;
}

ag::Var ParamStore::zeros(const std::string& name, std::vector<int> shape) {
    std::vector<double> v(ag::shape_numel(shape), 0.0);
    return create(name, std::move(shape), std::move(v));
}

ag::Var ParamStore::he_normal(const std::string& name, std::vector<int> shape, int fan_in,
                              std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    std::vector<double> v(ag::shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return create(name, std::move(shape), std::move(v));
}

ag::Var ParamStore::constant(const std::string& name, std::vector<int> shape, double value) {
    std::vector<double> v(ag::shape_numel(shape), value);
    return create(name, std::move(shape), std::move(v));
}

ag::Var ParamStore::get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end())
        throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
}

std::vector<ag::Var> ParamStore::vars() const {
    std::vector<ag::Var> out;
    out.reserve(entries_.size());
    for (const auto& [_, v] : entries_) out.push_back(v);
    return out;
}

std::size_t ParamStore::parameter_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_)
        if (name.rfind(prefix, 0) == 0) n += v->size();
    return n;
}

}  // namespace gazeatt
