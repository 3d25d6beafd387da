#pragma once

// Named parameter store shared by all model modules; the checkpoint format
// serializes it verbatim.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "gazeatt/autodiff.hpp"

namespace gazeatt {

class ParamStore {
public:
    // Creation order is preserved; it defines the checkpoint array order.
    ag::Var create(const std::string& name, std::vector<int> shape,
                   std::vector<double> values);
    ag::Var zeros(const std::string& name, std::vector<int> shape);
    // He-style normal init with std = sqrt(2 / fan_in).
    ag::Var he_normal(const std::string& name, std::vector<int> shape, int fan_in,
                      std::mt19937_64& rng);
    ag::Var constant(const std::string& name, std::vector<int> shape, double value);

    ag::Var get(const std::string& name) const;
    bool contains(const std::string& name) const { return by_name_.count(name) > 0; }

    const std::vector<std::pair<std::string, ag::Var>>& entries() const { return entries_; }
    std::vector<ag::Var> vars() const;
    std::size_t parameter_count(const std::string& prefix = "") const;

private:
    std::vector<std::pair<std::string, ag::Var>> entries_;
    std::map<std::string, ag::Var> by_name_;
};

}  // namespace gazeatt
