#include "sammix/params.hpp"

namespace sammix {

ag::Var normal_param(ag::Shape shape, double stddev, std::mt19937_64& rng, bool trainable) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(ag::numel_of(shape));
    for (auto& x : v) x = dist(rng);
    return ag::Var::leaf(std::move(shape), std::move(v), trainable);
}

ag::Var zeros_param(ag::Shape shape, bool trainable) { return filled_param(std::move(shape), 0.0, trainable); }

ag::Var filled_param(ag::Shape shape, double value, bool trainable) {
    const auto n = ag::numel_of(shape);
    return ag::Var::leaf(std::move(shape), std::vector<double>(n, value), trainable);
}

std::size_t count_values(const ParamList& params, bool trainable_only) {
    std::size_t n = 0;
    for (const auto& p : params) {
        if (!trainable_only || p.trainable()) n += p.var.numel();
    }
    return n;
}

void zero_grads(const ParamList& params) {
    for (const auto& p : params) {
        auto v = p.var;
        v.zero_grad();
    }
}

void clear_grads(const ParamList& params) {
    for (const auto& p : params) {
        auto v = p.var;
        v.clear_grad();
    }
}

ParamList clone_params(const ParamList& params) {
    ParamList out;
    out.reserve(params.size());
    for (const auto& p : params) {
        const auto val = p.var.value();
        out.push_back({p.name, ag::Var::leaf(p.var.shape(), {val.begin(), val.end()}, p.trainable())});
    }
    return out;
}

} // namespace sammix
