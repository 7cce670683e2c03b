#include "sammix/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <unordered_set>

#include "sammix/error.hpp"

namespace sammix::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

MapMat as_mat(Buffer& v, std::size_t rows, std::size_t cols) {
    return MapMat(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
CMapMat as_mat(const Buffer& v, std::size_t rows, std::size_t cols) {
    return CMapMat(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

void require(bool cond, const char* op, const std::string& what) {
    if (!cond) throw ArgumentError(std::string(op) + ": " + what);
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
    require(v.defined(), op, "undefined operand");
    require(v.rank() == rank, op, "expected rank " + std::to_string(rank) + ", got " + shape_str(v.shape()));
}

void require_same(const Var& a, const Var& b, const char* op) {
    require(a.defined() && b.defined(), op, "undefined operand");
    require(a.shape() == b.shape(), op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

/// Wraps an op result, recording the graph edge only when needed.
Var make_result(Shape shape, Buffer value, std::initializer_list<Var> inputs,
                std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->is_leaf = false;
    if (g_grad_enabled) {
        bool needs = false;
        for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
        if (needs) {
            node->requires_grad = true;
            for (const auto& in : inputs) {
                if (in.defined()) node->parents.push_back(in.shared());
            }
            node->backward_fn = std::move(backward);
        }
    }
    return Var(std::move(node));
}

Var make_result_list(Shape shape, Buffer value, const std::vector<Var>& inputs,
                     std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->is_leaf = false;
    if (g_grad_enabled) {
        bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
        if (needs) {
            node->requires_grad = true;
            for (const auto& in : inputs) node->parents.push_back(in.shared());
            node->backward_fn = std::move(backward);
        }
    }
    return Var(std::move(node));
}

bool wants(const Var& v) { return v.defined() && v.requires_grad(); }

template <class F>
Var unary(const Var& a, F&& f, auto&& df, const char* op) {
    require(a.defined(), op, "undefined operand");
    Buffer out(a.numel());
    auto in = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return make_result(a.shape(), std::move(out), {a}, [a, df](Node& self) {
        auto& g = a.node()->grad_buffer();
        const auto& x = a.node()->value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(x[i], self.value[i]);
    });
}

} // namespace

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Buffer& Node::grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

Var Var::constant(Shape shape, std::vector<double> value) {
    return leaf(std::move(shape), std::move(value), false);
}

Var Var::leaf(Shape shape, std::vector<double> value, bool requires_grad) {
    if (numel_of(shape) != value.size()) {
        throw ArgumentError("tensor payload " + std::to_string(value.size()) + " does not match shape " +
                            shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value.assign(value.begin(), value.end());
    node->requires_grad = requires_grad;
    return Var(std::move(node));
}

Var Var::zeros(Shape shape) {
    auto n = numel_of(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
}

double Var::item() const {
    if (numel() != 1) throw ArgumentError("item() on a tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

void Var::set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
}

void Var::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Var::clear_grad() { Buffer().swap(node_->grad); }

void Var::backward(double seed) const {
    if (numel() != 1) throw ArgumentError("backward() requires a scalar root, got " + shape_str(shape()));
    if (!requires_grad()) return;

    // Iterative post-order DFS yields a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
    }
    node_->grad_buffer()[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
        for (const Var* v : {&a, &b}) {
            if (!wants(*v)) continue;
            auto& g = v->node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
        if (wants(a)) {
            auto& g = a.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(b)) {
            auto& g = b.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](Node& self) {
        if (wants(a)) {
            auto& g = a.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.value()[i];
        }
        if (wants(b)) {
            auto& g = b.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.value()[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; }, "scale");
}

Var add_scalar(const Var& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; }, "add_scalar");
}

Var relu(const Var& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Var gelu(const Var& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [inv_sqrt_2pi](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
        },
        "gelu");
}

Var sigmoid(const Var& a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Var square(const Var& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; }, "square");
}

Var sum(const Var& a) {
    require(a.defined(), "sum", "undefined operand");
    double s = 0.0;
    for (double v : a.value()) s += v;
    return make_result({1}, {s}, {a}, [a](Node& self) {
        auto& g = a.node()->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

Var mean(const Var& a) {
    require(a.numel() > 0, "mean", "empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------- matrices

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    require(b.dim(0) == k, "matmul", "inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Buffer out(m * n);
    as_mat(out, m, n).noalias() = as_mat(a.node()->value, m, k) * as_mat(b.node()->value, k, n);
    return make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
        auto dc = as_mat(self.grad, m, n);
        if (wants(a)) as_mat(a.node()->grad_buffer(), m, k).noalias() += dc * as_mat(b.node()->value, k, n).transpose();
        if (wants(b)) as_mat(b.node()->grad_buffer(), k, n).noalias() += as_mat(a.node()->value, m, k).transpose() * dc;
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
    require(b.dim(1) == k, "matmul_nt", "inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    Buffer out(m * n);
    as_mat(out, m, n).noalias() = as_mat(a.node()->value, m, k) * as_mat(b.node()->value, n, k).transpose();
    return make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
        auto dc = as_mat(self.grad, m, n);
        if (wants(a)) as_mat(a.node()->grad_buffer(), m, k).noalias() += dc * as_mat(b.node()->value, n, k);
        if (wants(b)) as_mat(b.node()->grad_buffer(), n, k).noalias() += dc.transpose() * as_mat(a.node()->value, m, k);
    });
}

Var transpose(const Var& a) {
    require_rank(a, 2, "transpose");
    const auto m = a.dim(0), n = a.dim(1);
    Buffer out(m * n);
    as_mat(out, n, m) = as_mat(a.node()->value, m, n).transpose();
    return make_result({n, m}, std::move(out), {a}, [a, m, n](Node& self) {
        as_mat(a.node()->grad_buffer(), m, n) += as_mat(self.grad, n, m).transpose();
    });
}

Var add_row_bias(const Var& x, const Var& bias) {
    require_rank(x, 2, "add_row_bias");
    require(bias.defined() && bias.numel() == x.dim(1), "add_row_bias", "bias length mismatch");
    const auto n = x.dim(0), m = x.dim(1);
    Buffer out(x.value().begin(), x.value().end());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) out[r * m + c] += bias.value()[c];
    return make_result({n, m}, std::move(out), {x, bias}, [x, bias, n, m](Node& self) {
        if (wants(x)) {
            auto& g = x.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(bias)) {
            auto& g = bias.node()->grad_buffer();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < m; ++c) g[c] += self.grad[r * m + c];
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
    auto y = matmul_nt(x, w);
    return bias.defined() ? add_row_bias(y, bias) : y;
}

Var softmax_rows(const Var& x) {
    require_rank(x, 2, "softmax_rows");
    const auto n = x.dim(0), m = x.dim(1);
    Buffer out(n * m);
    for (std::size_t r = 0; r < n; ++r) {
        const double* in = x.value().data() + r * m;
        double* o = out.data() + r * m;
        const double mx = *std::max_element(in, in + m);
        double s = 0.0;
        for (std::size_t c = 0; c < m; ++c) s += (o[c] = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < m; ++c) o[c] /= s;
    }
    return make_result({n, m}, std::move(out), {x}, [x, n, m](Node& self) {
        auto& g = x.node()->grad_buffer();
        for (std::size_t r = 0; r < n; ++r) {
            const double* y = self.value.data() + r * m;
            const double* dy = self.grad.data() + r * m;
            double dot = 0.0;
            for (std::size_t c = 0; c < m; ++c) dot += dy[c] * y[c];
            for (std::size_t c = 0; c < m; ++c) g[r * m + c] += y[c] * (dy[c] - dot);
        }
    });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rank(x, 2, "layer_norm_rows");
    const auto n = x.dim(0), m = x.dim(1);
    require(gamma.numel() == m && beta.numel() == m, "layer_norm_rows", "affine length mismatch");
    Buffer out(n * m), xhat(n * m), inv_std(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double* in = x.value().data() + r * m;
        double mu = 0.0;
        for (std::size_t c = 0; c < m; ++c) mu += in[c];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t c = 0; c < m; ++c) var += (in[c] - mu) * (in[c] - mu);
        var /= static_cast<double>(m);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < m; ++c) {
            xhat[r * m + c] = (in[c] - mu) * inv_std[r];
            out[r * m + c] = xhat[r * m + c] * gamma.value()[c] + beta.value()[c];
        }
    }
    return make_result({n, m}, std::move(out), {x, gamma, beta},
                       [x, gamma, beta, n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           if (wants(gamma) || wants(beta)) {
                               auto* gg = wants(gamma) ? gamma.node()->grad_buffer().data() : nullptr;
                               auto* gb = wants(beta) ? beta.node()->grad_buffer().data() : nullptr;
                               for (std::size_t r = 0; r < n; ++r)
                                   for (std::size_t c = 0; c < m; ++c) {
                                       if (gg) gg[c] += self.grad[r * m + c] * xhat[r * m + c];
                                       if (gb) gb[c] += self.grad[r * m + c];
                                   }
                           }
                           if (!wants(x)) return;
                           auto& g = x.node()->grad_buffer();
                           const double inv_m = 1.0 / static_cast<double>(m);
                           for (std::size_t r = 0; r < n; ++r) {
                               double mean_d = 0.0, mean_dx = 0.0;
                               for (std::size_t c = 0; c < m; ++c) {
                                   const double d = self.grad[r * m + c] * gamma.value()[c];
                                   mean_d += d;
                                   mean_dx += d * xhat[r * m + c];
                               }
                               mean_d *= inv_m;
                               mean_dx *= inv_m;
                               for (std::size_t c = 0; c < m; ++c) {
                                   const double d = self.grad[r * m + c] * gamma.value()[c];
                                   g[r * m + c] += inv_std[r] * (d - mean_d - xhat[r * m + c] * mean_dx);
                               }
                           }
                       });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
    require_rank(x, 2, "slice_rows");
    const auto m = x.dim(1);
    require(begin + count <= x.dim(0), "slice_rows", "range out of bounds");
    Buffer out(x.value().begin() + static_cast<std::ptrdiff_t>(begin * m),
                            x.value().begin() + static_cast<std::ptrdiff_t>((begin + count) * m));
    return make_result({count, m}, std::move(out), {x}, [x, begin, m](Node& self) {
        auto& g = x.node()->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * m + i] += self.grad[i];
    });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
    require_rank(x, 2, "slice_cols");
    const auto n = x.dim(0), m = x.dim(1);
    require(begin + count <= m, "slice_cols", "range out of bounds");
    Buffer out(n * count);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < count; ++c) out[r * count + c] = x.value()[r * m + begin + c];
    return make_result({n, count}, std::move(out), {x}, [x, begin, count, n, m](Node& self) {
        auto& g = x.node()->grad_buffer();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < count; ++c) g[r * m + begin + c] += self.grad[r * count + c];
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows", "no operands");
    const auto m = parts.front().dim(1);
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_rows");
        require(p.dim(1) == m, "concat_rows", "column mismatch");
        rows += p.dim(0);
    }
    Buffer out;
    out.reserve(rows * m);
    for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
    return make_result_list({rows, m}, std::move(out), parts, [parts](Node& self) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            if (wants(p)) {
                auto& g = p.node()->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
            }
            offset += p.numel();
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols", "no operands");
    const auto n = parts.front().dim(0);
    std::size_t cols = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        require(p.dim(0) == n, "concat_cols", "row mismatch");
        cols += p.dim(1);
    }
    Buffer out(n * cols);
    std::size_t c0 = 0;
    for (const auto& p : parts) {
        const auto pc = p.dim(1);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < pc; ++c) out[r * cols + c0 + c] = p.value()[r * pc + c];
        c0 += pc;
    }
    return make_result_list({n, cols}, std::move(out), parts, [parts, n, cols](Node& self) {
        std::size_t c0 = 0;
        for (const auto& p : parts) {
            const auto pc = p.dim(1);
            if (wants(p)) {
                auto& g = p.node()->grad_buffer();
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < pc; ++c) g[r * pc + c] += self.grad[r * cols + c0 + c];
            }
            c0 += pc;
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    require(x.defined() && numel_of(shape) == x.numel(), "reshape",
            "cannot view " + (x.defined() ? shape_str(x.shape()) : std::string("?")) + " as " + shape_str(shape));
    Buffer out(x.value().begin(), x.value().end());
    return make_result(std::move(shape), std::move(out), {x}, [x](Node& self) {
        auto& g = x.node()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------- images

Var conv2d(const Var& x, const Var& w, const Var& bias, std::size_t stride, std::size_t pad) {
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d");
    const auto c_in = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const auto c_out = w.dim(0), k = w.dim(2);
    require(w.dim(1) == c_in, "conv2d", "weight expects " + std::to_string(w.dim(1)) + " input channels, got " +
                                            std::to_string(c_in));
    require(w.dim(3) == k && stride >= 1, "conv2d", "square kernel and positive stride required");
    require(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d", "input smaller than kernel");
    require(!bias.defined() || bias.numel() == c_out, "conv2d", "bias length mismatch");
    const auto ho = (h + 2 * pad - k) / stride + 1;
    const auto wo = (wd + 2 * pad - k) / stride + 1;
    const auto patch = c_in * k * k;
    const auto npix = ho * wo;

    Buffer cols(patch * npix, 0.0);
    const auto& xv = x.node()->value;
    for (std::size_t c = 0; c < c_in; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                double* row = cols.data() + ((c * k + ky) * k + kx) * npix;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                        row[oy * wo + ox] = xv[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)];
                    }
                }
            }

    Buffer out(c_out * npix);
    as_mat(out, c_out, npix).noalias() = as_mat(w.node()->value, c_out, patch) * as_mat(cols, patch, npix);
    if (bias.defined()) {
        for (std::size_t o = 0; o < c_out; ++o)
            for (std::size_t p = 0; p < npix; ++p) out[o * npix + p] += bias.value()[o];
    }

    return make_result(
        {c_out, ho, wo}, std::move(out), {x, w, bias},
        [x, w, bias, c_in, h, wd, c_out, k, stride, pad, ho, wo, patch, npix, cols = std::move(cols)](Node& self) {
            auto dout = as_mat(self.grad, c_out, npix);
            if (wants(w)) as_mat(w.node()->grad_buffer(), c_out, patch).noalias() += dout * as_mat(cols, patch, npix).transpose();
            if (wants(bias)) {
                auto& gb = bias.node()->grad_buffer();
                for (std::size_t o = 0; o < c_out; ++o) gb[o] += dout.row(static_cast<Eigen::Index>(o)).sum();
            }
            if (!wants(x)) return;
            Buffer dcols(patch * npix);
            as_mat(dcols, patch, npix).noalias() = as_mat(w.node()->value, c_out, patch).transpose() * dout;
            auto& gx = x.node()->grad_buffer();
            for (std::size_t c = 0; c < c_in; ++c)
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const double* row = dcols.data() + ((c * k + ky) * k + kx) * npix;
                        for (std::size_t oy = 0; oy < ho; ++oy) {
                            const auto iy =
                                static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                                const auto ix =
                                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                                gx[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)] +=
                                    row[oy * wo + ox];
                            }
                        }
                    }
        });
}

Var center_crop(const Var& x, std::size_t out_h, std::size_t out_w) {
    require_rank(x, 3, "center_crop");
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(out_h <= h && out_w <= w, "center_crop", "crop larger than input");
    const auto y0 = (h - out_h) / 2, x0 = (w - out_w) / 2;
    if (out_h == h && out_w == w) return x;
    Buffer out(c * out_h * out_w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t xx = 0; xx < out_w; ++xx)
                out[(ch * out_h + y) * out_w + xx] = x.value()[(ch * h + y0 + y) * w + x0 + xx];
    return make_result({c, out_h, out_w}, std::move(out), {x}, [x, c, h, w, out_h, out_w, y0, x0](Node& self) {
        auto& g = x.node()->grad_buffer();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < out_h; ++y)
                for (std::size_t xx = 0; xx < out_w; ++xx)
                    g[(ch * h + y0 + y) * w + x0 + xx] += self.grad[(ch * out_h + y) * out_w + xx];
    });
}

Var global_avg_pool(const Var& x) {
    require_rank(x, 3, "global_avg_pool");
    const auto c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Buffer out(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += x.value()[ch * hw + i];
        out[ch] = s / static_cast<double>(hw);
    }
    return make_result({c}, std::move(out), {x}, [x, c, hw](Node& self) {
        auto& g = x.node()->grad_buffer();
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) g[ch * hw + i] += self.grad[ch] * inv;
    });
}

namespace {

struct AxisWeights {
    std::vector<std::size_t> lo, hi;
    Buffer frac;
};

AxisWeights aligned_corner_weights(std::size_t in, std::size_t out) {
    AxisWeights a;
    a.lo.resize(out);
    a.hi.resize(out);
    a.frac.resize(out);
    for (std::size_t i = 0; i < out; ++i) {
        const double s = out > 1 ? static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
        auto lo = static_cast<std::size_t>(std::floor(s));
        if (lo > in - 1) lo = in - 1;
        a.lo[i] = lo;
        a.hi[i] = std::min(lo + 1, in - 1);
        a.frac[i] = s - static_cast<double>(lo);
    }
    return a;
}

} // namespace

Var upsample_bilinear(const Var& x, std::size_t out_h, std::size_t out_w) {
    require_rank(x, 3, "upsample_bilinear");
    require(out_h >= 1 && out_w >= 1, "upsample_bilinear", "target must be at least 1x1");
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto ay = aligned_corner_weights(h, out_h);
    auto ax = aligned_corner_weights(w, out_w);
    Buffer out(c * out_h * out_w);
    const auto& v = x.node()->value;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = v.data() + ch * h * w;
        double* dst = out.data() + ch * out_h * out_w;
        for (std::size_t i = 0; i < out_h; ++i) {
            const double fy = ay.frac[i];
            const double* r0 = src + ay.lo[i] * w;
            const double* r1 = src + ay.hi[i] * w;
            for (std::size_t j = 0; j < out_w; ++j) {
                const double fx = ax.frac[j];
                const auto x0 = ax.lo[j], x1 = ax.hi[j];
                dst[i * out_w + j] = (1 - fy) * ((1 - fx) * r0[x0] + fx * r0[x1]) + fy * ((1 - fx) * r1[x0] + fx * r1[x1]);
            }
        }
    }
    return make_result({c, out_h, out_w}, std::move(out), {x},
                       [x, c, h, w, out_h, out_w, ay = std::move(ay), ax = std::move(ax)](Node& self) {
                           auto& g = x.node()->grad_buffer();
                           for (std::size_t ch = 0; ch < c; ++ch) {
                               double* dst = g.data() + ch * h * w;
                               const double* d = self.grad.data() + ch * out_h * out_w;
                               for (std::size_t i = 0; i < out_h; ++i) {
                                   const double fy = ay.frac[i];
                                   double* r0 = dst + ay.lo[i] * w;
                                   double* r1 = dst + ay.hi[i] * w;
                                   for (std::size_t j = 0; j < out_w; ++j) {
                                       const double fx = ax.frac[j];
                                       const double gv = d[i * out_w + j];
                                       r0[ax.lo[j]] += gv * (1 - fy) * (1 - fx);
                                       r0[ax.hi[j]] += gv * (1 - fy) * fx;
                                       r1[ax.lo[j]] += gv * fy * (1 - fx);
                                       r1[ax.hi[j]] += gv * fy * fx;
                                   }
                               }
                           }
                       });
}

// ---------------------------------------------------------------- losses

Var focal_loss(const Var& logits, int label, double alpha, double gamma) {
    require(logits.defined() && logits.numel() == 2, "focal_loss", "expects two logits");
    require(label == 0 || label == 1, "focal_loss", "label must be 0 or 1");
    require(alpha > 0.0 && gamma >= 0.0, "focal_loss", "alpha > 0 and gamma >= 0 required");
    const auto l = logits.value();
    if (!std::isfinite(l[0]) || !std::isfinite(l[1])) throw ArgumentError("focal_loss: non-finite logits");
    const auto t = static_cast<std::size_t>(label);
    const auto o = 1 - t;
    // log p_t = -softplus(l_o - l_t); 1 - p_t = sigmoid(l_o - l_t), both stable.
    const double z = l[o] - l[t];
    const double log_pt = z > 0 ? -(z + std::log1p(std::exp(-z))) : -std::log1p(std::exp(z));
    const double one_minus = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    const double pt = std::exp(log_pt);
    const double modulator = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);
    const double loss = -alpha * modulator * log_pt;
    // dL/dlog_pt = -alpha u^g + alpha g u^(g-1) p_t log_pt.
    double dlogpt = -alpha * modulator;
    if (gamma != 0.0 && one_minus > 0.0) dlogpt += alpha * gamma * std::pow(one_minus, gamma - 1.0) * pt * log_pt;
    return make_result({1}, {loss}, {logits}, [logits, t, o, dlogpt, one_minus](Node& self) {
        auto& g = logits.node()->grad_buffer();
        // dlog_pt/dl_t = 1 - p_t, dlog_pt/dl_o = -p_o = -(1 - p_t).
        g[t] += self.grad[0] * dlogpt * one_minus;
        g[o] -= self.grad[0] * dlogpt * one_minus;
    });
}

Var dice_loss(const Var& pred, std::span<const double> gt, double eps) {
    require(pred.defined() && pred.numel() == gt.size(), "dice_loss",
            "prediction has " + std::to_string(pred.defined() ? pred.numel() : 0) + " values, target " +
                std::to_string(gt.size()));
    double inter = 0.0, total = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        inter += pred.value()[i] * gt[i];
        total += pred.value()[i] + gt[i];
    }
    const double num = 2.0 * inter + eps;
    const double den = total + eps;
    const double loss = den > 0.0 ? 1.0 - num / den : 0.0;
    Buffer target(gt.begin(), gt.end());
    return make_result({1}, {loss}, {pred}, [pred, target = std::move(target), num, den](Node& self) {
        if (den <= 0.0) return;
        auto& g = pred.node()->grad_buffer();
        const double inv = 1.0 / (den * den);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[0] * (2.0 * target[i] * den - num) * inv;
    });
}

} // namespace sammix::ag
