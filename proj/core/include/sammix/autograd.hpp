#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// Every operation returns a Var holding its value. When gradient recording is
// enabled and at least one input requires a gradient, the result also keeps
// its inputs and a closure that propagates its gradient into them. Leaves
// created with requires_grad=false (frozen weights, inputs) never receive a
// gradient buffer.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <vector>

namespace sammix::ag {

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocator. Every tensor buffer starts on the same
/// boundary, so vectorized kernels split work identically from run to run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t numel_of(const Shape& shape);

struct Node {
    Shape shape;
    Buffer value;
    Buffer grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t numel() const { return value.size(); }
    Buffer& grad_buffer();
};

class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Shape shape, std::vector<double> value);
    static Var leaf(Shape shape, std::vector<double> value, bool requires_grad);
    static Var scalar(double v) { return constant({1}, {v}); }
    static Var zeros(Shape shape);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> value() const { return node_->value; }
    std::span<double> mutable_value() { return node_->value; }
    /// Empty when no gradient has reached this node.
    std::span<const double> grad() const { return node_->grad; }
    double item() const;
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on);

    /// Back-propagates from this scalar, seeding its gradient with `seed`.
    /// Leaf gradients accumulate across calls; intermediate gradients are reset.
    void backward(double seed = 1.0) const;
    void zero_grad();
    /// Drops the gradient buffer so grad() is empty again.
    void clear_grad();

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

// Elementwise (operands must share a shape unless noted).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var square(const Var& a);

// Reductions to a {1} scalar.
Var sum(const Var& a);
Var mean(const Var& a);

// Matrix ops on rank-2 tensors.
Var matmul(const Var& a, const Var& b);    // [m,k]x[k,n]
Var matmul_nt(const Var& a, const Var& b); // [m,k]x[n,k]^T
Var transpose(const Var& a);
/// x[n,in] * w[out,in]^T + bias[out]; bias may be undefined.
Var linear(const Var& x, const Var& w, const Var& bias);
/// Adds bias[m] to every row of x[n,m].
Var add_row_bias(const Var& x, const Var& bias);
Var softmax_rows(const Var& x);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var reshape(const Var& x, Shape shape);

// Image ops on [C,H,W] tensors.
Var conv2d(const Var& x, const Var& w, const Var& bias, std::size_t stride, std::size_t pad);
Var center_crop(const Var& x, std::size_t out_h, std::size_t out_w);
Var global_avg_pool(const Var& x);
/// Bilinear resize with aligned corners.
Var upsample_bilinear(const Var& x, std::size_t out_h, std::size_t out_w);

// Losses.
/// -alpha (1-p_t)^gamma log p_t with p_t = softmax(logits)[label]; logits shape {2}.
Var focal_loss(const Var& logits, int label, double alpha, double gamma);
/// 1 - (2 sum(p*g) + eps) / (sum(p) + sum(g) + eps); gt is a constant.
Var dice_loss(const Var& pred, std::span<const double> gt, double eps);

} // namespace sammix::ag
