#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cpunet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

namespace ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the differentiation graph. Leaves (parameters, constants)
/// have no backward function; their grad accumulates across backward calls.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const noexcept { return !backward_fn; }
    /// Gradient buffer, allocated (zero-filled) on first use.
    double* grad_data();
};

/// Gradient target of `inputs[i]` inside a backward function, or nullptr
/// when that input does not take gradients.
double* input_grad(Node& self, std::size_t i);

/// When false, new operations record no graph (inference mode). Per thread.
bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard() noexcept;
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace ad

/// Handle to a graph node. Copies share the node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(ad::NodePtr node) : node_(std::move(node)) {}

    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    /// Leaf that accumulates gradients.
    static Tensor variable(Shape shape, std::vector<double> values);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    bool requires_grad() const;

    std::span<const double> values() const;
    /// Writable values. Only meaningful for leaves; mutating an interior node
    /// invalidates the graph built on top of it.
    std::span<double> mutable_values();
    double item() const;
    double at(std::size_t flat_index) const { return values()[flat_index]; }

    /// Accumulated gradient; zeros if backward never reached this node.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Constant copy cut from the graph.
    Tensor detach() const;

    const ad::NodePtr& node() const noexcept { return node_; }

private:
    ad::NodePtr node_;
};

/// Builds an interior node. `backward` receives the output node and pushes
/// its grad into `input_grad(self, i)`. Recording is skipped when no input
/// requires gradients or grad mode is off.
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
               std::function<void(ad::Node&)> backward);

enum class ElementwiseOp { add, sub, mul, broadcast_mul };
enum class ActivationOp { gelu, sigmoid, relu, softplus };

/// Binary elementwise op. `b` may broadcast against `a`: same rank, and each
/// of b's dims is either a's dim or 1. The adjoint of b sums over the
/// broadcast axes. `broadcast_mul` is `mul` restricted to a strictly smaller b.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

/// GELU uses the tanh approximation
/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor activation(ActivationOp op, const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);

double gelu_value(double x) noexcept;
double sigmoid_value(double x) noexcept;
double softplus_value(double x) noexcept;

/// Direct 2-D cross-correlation. x: [c_in,h,w], kernel: [c_out,c_in,k,k],
/// bias: [c_out] or undefined. Requires odd k, stride in {1,2}, h+2p >= k.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Global average pooling [c,h,w] -> [c,1,1].
Tensor gap(const Tensor& x);

/// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Row-wise affine map: x [m,k], weight [n,k], bias [n] or undefined -> [m,n]
/// with out[i,j] = <x_i, weight_j> + bias_j.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over the last axis, which is kept with size 1.
Tensor mean_last_axis(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
/// Repeats size-1 axes of x to reach `shape` (same rank).
Tensor broadcast_to(const Tensor& x, Shape shape);
/// Nearest-neighbour x2 upsampling of [c,h,w].
Tensor upsample_nearest2x(const Tensor& x);

/// Reverse sweep from a one-element loss. Leaf gradients accumulate across
/// calls; interior gradients are reset at the start of each sweep.
void backward(const Tensor& loss);

/// A named trainable leaf with its SGD momentum buffer.
struct Parameter {
    std::string name;
    Tensor tensor;
    std::vector<double> momentum;
};

/// Owns the parameters of a model. Addresses are stable for the lifetime of
/// the store; names are unique.
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) = default;
    ParameterStore& operator=(ParameterStore&&) = default;

    /// Zero-initialised parameter.
    Parameter& add(std::string name, Shape shape);
    /// Kaiming-uniform: U(-b, b), b = sqrt(6 / fan_in).
    Parameter& add_kaiming(std::string name, Shape shape, std::size_t fan_in, std::mt19937_64& rng);
    Parameter& add_constant(std::string name, Shape shape, double value);

    Parameter* find(const std::string& name) noexcept;
    const Parameter* find(const std::string& name) const noexcept;
    Parameter& at(const std::string& name);

    std::size_t size() const noexcept { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    void zero_grad();
    std::size_t total_count() const noexcept;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

}  // namespace cpunet
