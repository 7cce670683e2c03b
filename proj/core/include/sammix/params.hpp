#pragma once

#include <random>
#include <string>
#include <vector>

#include "sammix/autograd.hpp"

namespace sammix {

/// A model tensor exposed under a stable dotted name.
struct NamedParam {
    std::string name;
    ag::Var var;

    bool trainable() const { return var.requires_grad(); }
};

using ParamList = std::vector<NamedParam>;

/// Gaussian-initialised leaf.
ag::Var normal_param(ag::Shape shape, double stddev, std::mt19937_64& rng, bool trainable);
ag::Var zeros_param(ag::Shape shape, bool trainable);
ag::Var filled_param(ag::Shape shape, double value, bool trainable);

std::size_t count_values(const ParamList& params, bool trainable_only);
void zero_grads(const ParamList& params);
/// Releases every gradient buffer.
void clear_grads(const ParamList& params);

/// Deep copy of values; the copies keep each parameter's trainable flag.
ParamList clone_params(const ParamList& params);

} // namespace sammix
