#include "cpunet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "cpunet/errors.hpp"
#include "cpunet/kernels.hpp"

namespace cpunet {

std::size_t numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace ad {

namespace {
thread_local bool g_grad_enabled = true;
}

double* Node::grad_data() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad.data();
}

double* input_grad(Node& self, std::size_t i) {
    Node& in = *self.inputs[i];
    return in.requires_grad ? in.grad_data() : nullptr;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace ad

// ---------------------------------------------------------------------------
// Tensor

namespace {

ad::NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != values.size()) {
        throw_dimension("tensor", "shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                                      " values, got " + std::to_string(values.size()));
    }
    auto node = std::make_shared<ad::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

const ad::Node& checked(const ad::NodePtr& node) {
    if (!node) throw ContractError("use of an undefined tensor");
    return *node;
}

}  // namespace

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    std::vector<double> values(cpunet::numel(shape), value);
    return constant(std::move(shape), std::move(values));
}

Tensor Tensor::variable(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) throw_dimension("dim", "axis " + std::to_string(axis) + " of " + shape_str(s));
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).value.size(); }

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

std::span<const double> Tensor::values() const { return checked(node_).value; }

std::span<double> Tensor::mutable_values() {
    checked(node_);
    return node_->value;
}

double Tensor::item() const {
    const auto& v = checked(node_).value;
    if (v.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(node_->shape));
    return v[0];
}

std::span<const double> Tensor::grad() const {
    checked(node_);
    return std::span<const double>(node_->grad_data(), node_->value.size());
}

std::span<double> Tensor::mutable_grad() {
    checked(node_);
    return std::span<double>(node_->grad_data(), node_->value.size());
}

void Tensor::zero_grad() {
    checked(node_);
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    const auto& n = checked(node_);
    return constant(n.shape, n.value);
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
               std::function<void(ad::Node&)> backward) {
    auto node = std::make_shared<ad::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    if (ad::grad_enabled()) {
        for (const Tensor& t : inputs) needs = needs || (t.defined() && t.requires_grad());
    }
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (Tensor& t : inputs) node->inputs.push_back(t.defined() ? t.node() : make_leaf({1}, {0.0}, false));
        node->backward_fn = std::move(backward);
    }
    return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

struct Broadcast {
    Shape out;
    std::vector<std::size_t> b_stride;  // 0 on broadcast axes
    bool same = true;
};

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    if (a.size() != b.size()) {
        throw_dimension(op, "rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    Broadcast plan;
    plan.out = a;
    plan.b_stride.assign(a.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = a.size(); i-- > 0;) {
        if (b[i] == a[i]) {
            plan.b_stride[i] = stride;
        } else if (b[i] == 1) {
            plan.b_stride[i] = 0;
            plan.same = false;
        } else {
            throw_dimension(op, "cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
        }
        stride *= b[i];
    }
    return plan;
}

// Calls fn(flat_a, flat_b) for every element of a in row-major order.
template <typename Fn>
void for_each_broadcast(const Broadcast& plan, Fn&& fn) {
    const Shape& s = plan.out;
    const std::size_t rank = s.size();
    if (rank == 0) {
        fn(0, 0);
        return;
    }
    std::vector<std::size_t> idx(rank, 0);
    const std::size_t total = numel(s);
    const std::size_t inner = s[rank - 1];
    const std::size_t inner_b = plan.b_stride[rank - 1];
    std::size_t flat = 0;
    while (flat < total) {
        std::size_t base_b = 0;
        for (std::size_t ax = 0; ax + 1 < rank; ++ax) base_b += idx[ax] * plan.b_stride[ax];
        for (std::size_t j = 0; j < inner; ++j) fn(flat + j, base_b + j * inner_b);
        flat += inner;
        for (std::size_t ax = rank - 1; ax-- > 0;) {
            if (++idx[ax] < s[ax]) break;
            idx[ax] = 0;
        }
    }
}

}  // namespace

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
    const char* name = op == ElementwiseOp::add   ? "add"
                       : op == ElementwiseOp::sub ? "sub"
                                                  : "mul";
    Broadcast plan = plan_broadcast(name, a.shape(), b.shape());
    if (op == ElementwiseOp::broadcast_mul && plan.same) {
        throw_dimension("broadcast_mul", "operand " + shape_str(b.shape()) + " does not broadcast");
    }
    if (op == ElementwiseOp::broadcast_mul) op = ElementwiseOp::mul;

    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    if (plan.same && op == ElementwiseOp::mul) {
        kernels::active().mul(av.data(), bv.data(), out.data(), out.size());
    } else {
        for_each_broadcast(plan, [&](std::size_t i, std::size_t j) {
            switch (op) {
                case ElementwiseOp::add: out[i] = av[i] + bv[j]; break;
                case ElementwiseOp::sub: out[i] = av[i] - bv[j]; break;
                default: out[i] = av[i] * bv[j]; break;
            }
        });
    }

    return make_op(plan.out, std::move(out), {a, b}, [op, plan](ad::Node& self) {
        const double* g = self.grad.data();
        double* ga = ad::input_grad(self, 0);
        double* gb = ad::input_grad(self, 1);
        const double* av = self.inputs[0]->value.data();
        const double* bv = self.inputs[1]->value.data();
        for_each_broadcast(plan, [&](std::size_t i, std::size_t j) {
            switch (op) {
                case ElementwiseOp::add:
                    if (ga) ga[i] += g[i];
                    if (gb) gb[j] += g[i];
                    break;
                case ElementwiseOp::sub:
                    if (ga) ga[i] += g[i];
                    if (gb) gb[j] -= g[i];
                    break;
                default:
                    if (ga) ga[i] += g[i] * bv[j];
                    if (gb) gb[j] += g[i] * av[i];
                    break;
            }
        });
    });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::mul, a, b); }

Tensor scale(const Tensor& a, double factor) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
    return make_op(a.shape(), std::move(out), {a}, [factor](ad::Node& self) {
        double* ga = ad::input_grad(self, 0);
        if (!ga) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += factor * self.grad[i];
    });
}

Tensor add_scalar(const Tensor& a, double offset) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + offset;
    return make_op(a.shape(), std::move(out), {a}, [](ad::Node& self) {
        double* ga = ad::input_grad(self, 0);
        if (!ga) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Activations

namespace {

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

double gelu_grad(double x) noexcept {
    const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
    const double t = std::tanh(u);
    const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

double gelu_value(double x) noexcept {
    return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x)));
}

double sigmoid_value(double x) noexcept {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_value(double x) noexcept {
    // Below about -745 the exact value underflows; keep it strictly positive.
    const double v = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    return std::max(v, std::numeric_limits<double>::denorm_min());
}

Tensor activation(ActivationOp op, const Tensor& x) {
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        switch (op) {
            case ActivationOp::gelu: out[i] = gelu_value(xv[i]); break;
            case ActivationOp::sigmoid: out[i] = sigmoid_value(xv[i]); break;
            case ActivationOp::relu: out[i] = xv[i] > 0.0 ? xv[i] : 0.0; break;
            case ActivationOp::softplus: out[i] = softplus_value(xv[i]); break;
        }
    }
    return make_op(x.shape(), std::move(out), {x}, [op](ad::Node& self) {
        double* gx = ad::input_grad(self, 0);
        if (!gx) return;
        const auto& in = self.inputs[0]->value;
        for (std::size_t i = 0; i < in.size(); ++i) {
            double d = 0.0;
            switch (op) {
                case ActivationOp::gelu: d = gelu_grad(in[i]); break;
                case ActivationOp::sigmoid: d = self.value[i] * (1.0 - self.value[i]); break;
                case ActivationOp::relu: d = in[i] > 0.0 ? 1.0 : 0.0; break;
                case ActivationOp::softplus: d = sigmoid_value(in[i]); break;
            }
            gx[i] += self.grad[i] * d;
        }
    });
}

Tensor gelu(const Tensor& x) { return activation(ActivationOp::gelu, x); }
Tensor sigmoid(const Tensor& x) { return activation(ActivationOp::sigmoid, x); }
Tensor relu(const Tensor& x) { return activation(ActivationOp::relu, x); }
Tensor softplus(const Tensor& x) { return activation(ActivationOp::softplus, x); }

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeom {
    std::size_t c_in, h, w, c_out, k, stride, pad, ho, wo;
};

// Range of output columns [lo, hi) whose input column ox*stride + kx - pad
// lands inside [0, w).
inline void valid_range(std::size_t kx, const ConvGeom& g, std::size_t extent_in, std::size_t extent_out,
                        std::size_t& lo, std::size_t& hi) {
    const long off = static_cast<long>(kx) - static_cast<long>(g.pad);
    const long s = static_cast<long>(g.stride);
    long first = off >= 0 ? 0 : (-off + s - 1) / s;
    long last = (static_cast<long>(extent_in) - 1 - off);
    last = last < 0 ? -1 : last / s;
    last = std::min(last, static_cast<long>(extent_out) - 1);
    lo = static_cast<std::size_t>(first);
    hi = last < first ? lo : static_cast<std::size_t>(last + 1);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride, std::size_t padding) {
    if (x.rank() != 3) throw_dimension("conv2d", "input must be [c,h,w], got " + shape_str(x.shape()));
    if (kernel.rank() != 4) throw_dimension("conv2d", "kernel must be [o,c,k,k], got " + shape_str(kernel.shape()));
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), kernel.dim(0), kernel.dim(2), stride, padding, 0, 0};
    if (kernel.dim(1) != g.c_in) {
        throw_dimension("conv2d", "input has " + std::to_string(g.c_in) + " channels, kernel expects " +
                                      std::to_string(kernel.dim(1)));
    }
    if (kernel.dim(3) != g.k || g.k % 2 == 0) throw ContractError("conv2d: kernel must be square with odd size");
    if (stride != 1 && stride != 2) throw ContractError("conv2d: stride must be 1 or 2");
    if (g.h + 2 * padding < g.k || g.w + 2 * padding < g.k) {
        throw ContractError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel");
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.c_out)) {
        throw_dimension("conv2d", "bias must be [" + std::to_string(g.c_out) + "]");
    }
    g.ho = (g.h + 2 * padding - g.k) / stride + 1;
    g.wo = (g.w + 2 * padding - g.k) / stride + 1;

    const auto& kt = kernels::active();
    const double* xv = x.values().data();
    const double* wv = kernel.values().data();
    std::vector<double> out(g.c_out * g.ho * g.wo, 0.0);
    const std::size_t plane_in = g.h * g.w;
    const std::size_t plane_out = g.ho * g.wo;

    for (std::size_t oc = 0; oc < g.c_out; ++oc) {
        double* op = out.data() + oc * plane_out;
        if (bias.defined()) std::fill(op, op + plane_out, bias.values()[oc]);
        for (std::size_t ic = 0; ic < g.c_in; ++ic) {
            const double* ip = xv + ic * plane_in;
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                std::size_t oy0, oy1;
                valid_range(ky, g, g.h, g.ho, oy0, oy1);
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const double wgt = wv[((oc * g.c_in + ic) * g.k + ky) * g.k + kx];
                    std::size_t ox0, ox1;
                    valid_range(kx, g, g.w, g.wo, ox0, ox1);
                    if (ox1 <= ox0) continue;
                    const std::size_t ix0 = ox0 * stride + kx - padding;
                    for (std::size_t oy = oy0; oy < oy1; ++oy) {
                        const std::size_t iy = oy * stride + ky - padding;
                        kt.axpy_gather(wgt, ip + iy * g.w + ix0, stride, op + oy * g.wo + ox0, ox1 - ox0);
                    }
                }
            }
        }
    }

    return make_op({g.c_out, g.ho, g.wo}, std::move(out), {x, kernel, bias}, [g](ad::Node& self) {
        const auto& kt = kernels::active();
        const double* gout = self.grad.data();
        double* gx = ad::input_grad(self, 0);
        double* gw = ad::input_grad(self, 1);
        double* gb = ad::input_grad(self, 2);
        const double* xv = self.inputs[0]->value.data();
        const double* wv = self.inputs[1]->value.data();
        const std::size_t plane_in = g.h * g.w;
        const std::size_t plane_out = g.ho * g.wo;
        for (std::size_t oc = 0; oc < g.c_out; ++oc) {
            const double* gp = gout + oc * plane_out;
            if (gb) {
                double s = 0.0;
                for (std::size_t i = 0; i < plane_out; ++i) s += gp[i];
                gb[oc] += s;
            }
            for (std::size_t ic = 0; ic < g.c_in; ++ic) {
                const double* ip = xv + ic * plane_in;
                double* gip = gx ? gx + ic * plane_in : nullptr;
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    std::size_t oy0, oy1;
                    valid_range(ky, g, g.h, g.ho, oy0, oy1);
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const std::size_t widx = ((oc * g.c_in + ic) * g.k + ky) * g.k + kx;
                        std::size_t ox0, ox1;
                        valid_range(kx, g, g.w, g.wo, ox0, ox1);
                        if (ox1 <= ox0) continue;
                        const std::size_t ix0 = ox0 * g.stride + kx - g.pad;
                        const std::size_t n = ox1 - ox0;
                        double acc = 0.0;
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const std::size_t iy = oy * g.stride + ky - g.pad;
                            const double* grow = gp + oy * g.wo + ox0;
                            if (gip) kt.axpy_scatter(wv[widx], grow, gip + iy * g.w + ix0, g.stride, n);
                            if (gw) acc += kt.dot_strided(ip + iy * g.w + ix0, g.stride, grow, n);
                        }
                        if (gw) gw[widx] += acc;
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions and reshapes

Tensor gap(const Tensor& x) {
    if (x.rank() != 3) throw_dimension("gap", "input must be [c,h,w], got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0);
    const std::size_t n = x.dim(1) * x.dim(2);
    if (n == 0) throw ContractError("gap: empty spatial grid");
    const auto xv = x.values();
    std::vector<double> out(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += xv[ch * n + i];
        out[ch] = s / static_cast<double>(n);
    }
    return make_op({c, 1, 1}, std::move(out), {x}, [c, n](ad::Node& self) {
        double* gx = ad::input_grad(self, 0);
        if (!gx) return;
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double gv = self.grad[ch] * inv;
            for (std::size_t i = 0; i < n; ++i) gx[ch * n + i] += gv;
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw_dimension("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const auto& kt = kernels::active();
    const double* av = a.values().data();
    const double* bv = b.values().data();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) kt.axpy(av[i * k + p], bv + p * n, out.data() + i * n, n);
    }
    return make_op({m, n}, std::move(out), {a, b}, [m, k, n](ad::Node& self) {
        const auto& kt = kernels::active();
        const double* g = self.grad.data();
        double* ga = ad::input_grad(self, 0);
        double* gb = ad::input_grad(self, 1);
        const double* av = self.inputs[0]->value.data();
        const double* bv = self.inputs[1]->value.data();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                if (ga) ga[i * k + p] += kt.dot(g + i * n, bv + p * n, n);
                if (gb) kt.axpy(av[i * k + p], g + i * n, gb + p * n, n);
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
        throw_dimension("linear", shape_str(x.shape()) + " against weight " + shape_str(weight.shape()));
    }
    const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(0);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != n)) {
        throw_dimension("linear", "bias must be [" + std::to_string(n) + "], got " + shape_str(bias.shape()));
    }
    const auto& kt = kernels::active();
    const double* xv = x.values().data();
    // out^T = W x^T, so the large weight matrix is the row-strided operand.
    std::vector<double> xt(k * m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) xt[p * m + i] = xv[i * k + p];
    std::vector<double> outt(n * m, 0.0);
    kt.gemm(n, m, k, weight.values().data(), k, 1, xt.data(), m, outt.data(), m);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = outt[j * m + i] + (bias.defined() ? bias.values()[j] : 0.0);
    return make_op({m, n}, std::move(out), {x, weight, bias}, [m, k, n](ad::Node& self) {
        const auto& kt = kernels::active();
        const double* g = self.grad.data();
        double* gx = ad::input_grad(self, 0);
        double* gw = ad::input_grad(self, 1);
        double* gb = ad::input_grad(self, 2);
        // dx += g W, dW += g^T x
        if (gx) kt.gemm(m, k, n, g, n, 1, self.inputs[1]->value.data(), k, gx, k);
        if (gw) kt.gemm(n, k, m, g, 1, n, self.inputs[0]->value.data(), k, gw, k);
        if (gb) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return make_op({1}, {s}, {x}, [](ad::Node& self) {
        double* gx = ad::input_grad(self, 0);
        if (!gx) return;
        const std::size_t n = self.inputs[0]->value.size();
        for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    const std::size_t n = x.numel();
    if (n == 0) throw ContractError("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(n));
}

Tensor mean_last_axis(const Tensor& x) {
    if (x.rank() == 0) throw_dimension("mean_last_axis", "scalar input");
    const std::size_t d = x.shape().back();
    if (d == 0) throw ContractError("mean_last_axis: empty axis");
    const std::size_t rows = x.numel() / d;
    const auto xv = x.values();
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += xv[r * d + j];
        out[r] = s / static_cast<double>(d);
    }
    Shape shape = x.shape();
    shape.back() = 1;
    return make_op(shape, std::move(out), {x}, [rows, d](ad::Node& self) {
        double* gx = ad::input_grad(self, 0);
        if (!gx) return;
        const double inv = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += self.grad[r] * inv;
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw_dimension("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_op(std::move(shape), std::move(out), {x}, [](ad::Node& self) {
        double* gx = ad::input_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    });
}

Tensor broadcast_to(const Tensor& x, Shape shape) {
    // Reuse the elementwise broadcast plan with x in the "b" role.
    Broadcast plan = plan_broadcast("broadcast_to", shape, x.shape());
    const auto xv = x.values();
    std::vector<double> out(numel(shape));
    for_each_broadcast(plan, [&](std::size_t i, std::size_t j) { out[i] = xv[j]; });
    return make_op(std::move(shape), std::move(out), {x}, [plan](ad::Node& self) {
        double* gx = ad::input_grad(self, 0);
        if (!gx) return;
        for_each_broadcast(plan, [&](std::size_t i, std::size_t j) { gx[j] += self.grad[i]; });
    });
}

Tensor upsample_nearest2x(const Tensor& x) {
    if (x.rank() != 3) throw_dimension("upsample_nearest2x", "input must be [c,h,w]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const auto xv = x.values();
    std::vector<double> out(c * 4 * h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < 2 * h; ++y) {
            for (std::size_t xx = 0; xx < 2 * w; ++xx) {
                out[(ch * 2 * h + y) * 2 * w + xx] = xv[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    return make_op({c, 2 * h, 2 * w}, std::move(out), {x}, [c, h, w](ad::Node& self) {
        double* gx = ad::input_grad(self, 0);
        if (!gx) return;
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t y = 0; y < 2 * h; ++y) {
                for (std::size_t xx = 0; xx < 2 * w; ++xx) {
                    gx[(ch * h + y / 2) * w + xx / 2] += self.grad[(ch * 2 * h + y) * 2 * w + xx];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Reverse sweep

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must hold exactly one value, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    ad::Node* root = loss.node().get();
    if (!root->requires_grad) return;

    // Iterative post-order DFS; reversed it is a topological order.
    std::vector<ad::Node*> order;
    std::unordered_set<ad::Node*> seen;
    std::vector<std::pair<ad::Node*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            ad::Node* child = node->inputs[next++].get();
            if (child->requires_grad && !child->is_leaf() && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    for (ad::Node* node : order) {
        if (!node->is_leaf()) node->grad.assign(node->value.size(), 0.0);
    }
    root->grad_data()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        ad::Node* node = *it;
        if (!node->is_leaf()) node->backward_fn(*node);
    }
}

// ---------------------------------------------------------------------------
// Parameters

Parameter& ParameterStore::add(std::string name, Shape shape) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = std::move(name);
    const std::size_t n = numel(shape);
    p->tensor = Tensor::variable(std::move(shape), std::vector<double>(n, 0.0));
    p->momentum.assign(n, 0.0);
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParameterStore::add_kaiming(std::string name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    Parameter& p = add(std::move(name), std::move(shape));
    // He uniform: sqrt(2) gain, bound sqrt(6 / fan_in).
    const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : p.tensor.mutable_values()) v = dist(rng);
    return p;
}

Parameter& ParameterStore::add_constant(std::string name, Shape shape, double value) {
    Parameter& p = add(std::move(name), std::move(shape));
    for (double& v : p.tensor.mutable_values()) v = value;
    return p;
}

Parameter* ParameterStore::find(const std::string& name) noexcept {
    for (auto& p : params_) {
        if (p->name == name) return p.get();
    }
    return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const noexcept {
    for (const auto& p : params_) {
        if (p->name == name) return p.get();
    }
    return nullptr;
}

Parameter& ParameterStore::at(const std::string& name) {
    Parameter* p = find(name);
    if (!p) throw ConfigError("no parameter named '" + name + "'");
    return *p;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p->tensor.zero_grad();
}

std::size_t ParameterStore::total_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->tensor.numel();
    return n;
}

}  // namespace cpunet
