#include "maskwright/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "maskwright/error.hpp"
#include "maskwright/kernels.hpp"

namespace maskwright {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

std::uint64_t next_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

void check_shape(const Shape& shape) {
    if (shape.empty()) throw SizeError("tensor shape must have at least one dimension");
    for (int d : shape)
        if (d < 1) throw SizeError("tensor dimensions must be >= 1, got " + shape_str(shape));
}

std::shared_ptr<TensorImpl> new_impl(const Shape& shape, std::vector<double> data, bool requires_grad) {
    check_shape(shape);
    if (data.size() != shape_numel(shape))
        throw SizeError("buffer of length " + std::to_string(data.size()) + " does not match shape " +
                        shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    if (requires_grad) impl->grad.assign(impl->data.size(), 0.0);
    impl->id = next_id();
    return impl;
}

void check_axis(const Tensor& x, int axis, const char* op) {
    if (axis < 0 || axis >= x.rank())
        throw AxisError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                        shape_str(x.shape()));
}

// outer * dim * inner decomposition of a shape around one axis.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t dim = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[i]);
    s.dim = static_cast<std::size_t>(shape[axis]);
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= static_cast<std::size_t>(shape[i]);
    return s;
}

template <class F, class D>
Tensor unary(const char* op, const Tensor& a, F f, D dfdx) {
    auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return make_op_result(op, a.shape(), std::move(out), {a},
                          [a, dfdx](std::span<const double> g, std::span<const double> y) {
                              auto xv = a.data();
                              std::vector<double> dx(g.size());
                              for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * dfdx(xv[i], y[i]);
                              a.accumulate_grad(dx);
                          });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw SizeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// ---- Tensor ------------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    check_shape(shape);
    return Tensor(new_impl(shape, std::vector<double>(shape_numel(shape), value), requires_grad));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
    return Tensor(new_impl(shape, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

Tensor Tensor::ones_like(const Tensor& t) { return full(t.shape(), 1.0); }
Tensor Tensor::zeros_like(const Tensor& t) { return full(t.shape(), 0.0); }

const Shape& Tensor::shape() const {
    if (!impl_) throw StateError("use of undefined tensor");
    return impl_->shape;
}

int Tensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw AxisError("dim(): axis out of range for " + shape_str(shape()));
    return shape()[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
    if (!impl_) throw StateError("use of undefined tensor");
    return impl_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!impl_) throw StateError("use of undefined tensor");
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (!impl_) throw StateError("use of undefined tensor");
    impl_->requires_grad = on;
    if (on && impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    if (!on) impl_->grad.clear();
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw StateError("tensor has no gradient");
    return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (!has_grad()) throw StateError("tensor has no gradient");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) const {
    if (!impl_ || !impl_->requires_grad) return;
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) impl_->grad[i] += g[i];
}

std::uint64_t Tensor::id() const { return impl_ ? impl_->id : 0; }

const TapeNode* Tensor::node() const { return impl_ ? impl_->node.get() : nullptr; }

Tensor Tensor::detach() const { return Tensor(new_impl(shape(), impl_->data, false)); }

Tensor Tensor::clone() const {
    auto copy = new_impl(shape(), impl_->data, impl_->requires_grad);
    if (has_grad()) copy->grad = impl_->grad;
    return Tensor(copy);
}

Tensor make_op_result(std::string op_kind, Shape shape, std::vector<double> data,
                      const std::vector<Tensor>& inputs, BackwardFn backward) {
    auto impl = new_impl(shape, std::move(data), false);
    const bool record = t_grad_enabled &&
                        std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (record) {
        impl->requires_grad = true;
        impl->grad.assign(impl->data.size(), 0.0);
        auto node = std::make_shared<TapeNode>();
        node->op_kind = std::move(op_kind);
        for (const auto& t : inputs) {
            if (!t.requires_grad()) continue;
            node->input_ids.push_back(t.id());
            node->inputs.push_back(t.impl());
        }
        node->backward = std::move(backward);
        impl->node = std::move(node);
    }
    return Tensor(impl);
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward() needs a scalar loss, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (!loss.requires_grad()) throw StateError("backward(): loss is not on the tape");

    std::vector<TensorImpl*> order;
    std::unordered_set<std::uint64_t> seen;
    std::vector<TensorImpl*> stack{loss.impl().get()};
    while (!stack.empty()) {
        TensorImpl* t = stack.back();
        stack.pop_back();
        if (!seen.insert(t->id).second) continue;
        order.push_back(t);
        if (!t->node) continue;
        for (const auto& in : t->node->inputs)
            if (in->requires_grad && !seen.count(in->id)) stack.push_back(in.get());
    }
    std::sort(order.begin(), order.end(), [](const TensorImpl* a, const TensorImpl* b) { return a->id > b->id; });

    for (TensorImpl* t : order)
        if (t->node) std::fill(t->grad.begin(), t->grad.end(), 0.0);
    TensorImpl* root = loss.impl().get();
    if (root->grad.empty()) root->grad.assign(1, 0.0);
    root->grad[0] += 1.0;

    for (TensorImpl* t : order)
        if (t->node) t->node->backward(t->grad, t->data);
}

// ---- elementwise ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return make_op_result("add", a.shape(), std::move(out), {a, b},
                          [a, b](std::span<const double> g, std::span<const double>) {
                              a.accumulate_grad(g);
                              b.accumulate_grad(g);
                          });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    return make_op_result("sub", a.shape(), std::move(out), {a, b},
                          [a, b](std::span<const double> g, std::span<const double>) {
                              a.accumulate_grad(g);
                              if (!b.requires_grad()) return;
                              std::vector<double> d(g.begin(), g.end());
                              for (double& v : d) v = -v;
                              b.accumulate_grad(d);
                          });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return make_op_result("mul", a.shape(), std::move(out), {a, b},
                          [a, b](std::span<const double> g, std::span<const double>) {
                              auto xv = a.data(), yv = b.data();
                              std::vector<double> d(g.size());
                              if (a.requires_grad()) {
                                  for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * yv[i];
                                  a.accumulate_grad(d);
                              }
                              if (b.requires_grad()) {
                                  for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * xv[i];
                                  b.accumulate_grad(d);
                              }
                          });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (y[i] == 0.0) throw DomainError("div: division by zero at flat index " + std::to_string(i));
        out[i] = x[i] / y[i];
    }
    return make_op_result("div", a.shape(), std::move(out), {a, b},
                          [a, b](std::span<const double> g, std::span<const double> q) {
                              auto yv = b.data();
                              std::vector<double> d(g.size());
                              if (a.requires_grad()) {
                                  for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] / yv[i];
                                  a.accumulate_grad(d);
                              }
                              if (b.requires_grad()) {
                                  for (std::size_t i = 0; i < g.size(); ++i) d[i] = -g[i] * q[i] / yv[i];
                                  b.accumulate_grad(d);
                              }
                          });
}

Tensor neg(const Tensor& a) {
    return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (!(a.at(i) > 0.0))
            throw DomainError("log: nonpositive value " + std::to_string(a.at(i)) + " at flat index " +
                              std::to_string(i));
    return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor scale(const Tensor& a, double s) {
    return unary("scalar_mul", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
    return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
    return unary(
        "abs", a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor tanh(const Tensor& a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
    return unary(
        "softplus", a, [](double x) { return std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0); },
        [](double x, double) { return stable_sigmoid(x); });
}

Tensor selu(const Tensor& a) {
    return unary(
        "selu", a,
        [](double x) { return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x); },
        [](double x, double) { return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x); });
}

Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b) {
    switch (kind) {
        case Elementwise::add: return add(a, b);
        case Elementwise::sub: return sub(a, b);
        case Elementwise::mul: return mul(a, b);
        case Elementwise::div: return div(a, b);
        case Elementwise::neg: return neg(a);
        case Elementwise::exp: return exp(a);
        case Elementwise::log: return log(a);
        case Elementwise::scalar_mul:
            if (b.numel() != 1) throw SizeError("scalar_mul needs a scalar operand");
            return scale(a, b.item());
    }
    throw ConfigError("unknown elementwise kind");
}

Tensor elementwise(Elementwise kind, const Tensor& a, double b) {
    switch (kind) {
        case Elementwise::add: return add_scalar(a, b);
        case Elementwise::sub: return add_scalar(a, -b);
        case Elementwise::mul:
        case Elementwise::scalar_mul: return scale(a, b);
        case Elementwise::div:
            if (b == 0.0) throw DomainError("div: division by zero scalar");
            return scale(a, 1.0 / b);
        case Elementwise::neg: return neg(a);
        case Elementwise::exp: return exp(a);
        case Elementwise::log: return log(a);
    }
    throw ConfigError("unknown elementwise kind");
}

// ---- axis broadcasting --------------------------------------------------------

Tensor add_along(const Tensor& x, const Tensor& b, int axis) {
    check_axis(x, axis, "add_along");
    if (b.rank() != 1 || b.dim(0) != x.dim(axis))
        throw SizeError("add_along: bias shape " + shape_str(b.shape()) + " does not match axis " +
                        std::to_string(axis) + " of " + shape_str(x.shape()));
    const AxisSplit s = split_at(x.shape(), axis);
    auto xv = x.data(), bv = b.data();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t c = 0; c < s.dim; ++c)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t k = (o * s.dim + c) * s.inner + i;
                out[k] = xv[k] + bv[c];
            }
    return make_op_result("add_along", x.shape(), std::move(out), {x, b},
                          [x, b, s](std::span<const double> g, std::span<const double>) {
                              x.accumulate_grad(g);
                              if (!b.requires_grad()) return;
                              std::vector<double> db(s.dim, 0.0);
                              for (std::size_t o = 0; o < s.outer; ++o)
                                  for (std::size_t c = 0; c < s.dim; ++c)
                                      for (std::size_t i = 0; i < s.inner; ++i)
                                          db[c] += g[(o * s.dim + c) * s.inner + i];
                              b.accumulate_grad(db);
                          });
}

Tensor mul_broadcast(const Tensor& x, const Tensor& m, int axis) {
    check_axis(x, axis, "mul_broadcast");
    Shape expected = x.shape();
    expected.erase(expected.begin() + axis);
    if (expected.empty()) expected = {1};
    if (m.shape() != expected)
        throw SizeError("mul_broadcast: mask shape " + shape_str(m.shape()) + " incompatible with input " +
                        shape_str(x.shape()) + " broadcast over axis " + std::to_string(axis));
    const AxisSplit s = split_at(x.shape(), axis);
    auto xv = x.data(), mv = m.data();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t c = 0; c < s.dim; ++c)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t k = (o * s.dim + c) * s.inner + i;
                out[k] = xv[k] * mv[o * s.inner + i];
            }
    return make_op_result("mul_broadcast", x.shape(), std::move(out), {x, m},
                          [x, m, s](std::span<const double> g, std::span<const double>) {
                              auto xd = x.data(), md = m.data();
                              if (x.requires_grad()) {
                                  std::vector<double> dx(g.size());
                                  for (std::size_t o = 0; o < s.outer; ++o)
                                      for (std::size_t c = 0; c < s.dim; ++c)
                                          for (std::size_t i = 0; i < s.inner; ++i) {
                                              const std::size_t k = (o * s.dim + c) * s.inner + i;
                                              dx[k] = g[k] * md[o * s.inner + i];
                                          }
                                  x.accumulate_grad(dx);
                              }
                              if (m.requires_grad()) {
                                  std::vector<double> dm(md.size(), 0.0);
                                  for (std::size_t o = 0; o < s.outer; ++o)
                                      for (std::size_t c = 0; c < s.dim; ++c)
                                          for (std::size_t i = 0; i < s.inner; ++i) {
                                              const std::size_t k = (o * s.dim + c) * s.inner + i;
                                              dm[o * s.inner + i] += g[k] * xd[k];
                                          }
                                  m.accumulate_grad(dm);
                              }
                          });
}

// ---- matmul / conv ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul needs rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw SizeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    kernels::matmul(a.data(), b.data(), out, m, k, n);
    return make_op_result("matmul", {m, n}, std::move(out), {a, b},
                          [a, b, m, k, n](std::span<const double> g, std::span<const double>) {
                              if (a.requires_grad()) {
                                  std::vector<double> da(static_cast<std::size_t>(m) * k);
                                  kernels::matmul_nt(g, b.data(), da, m, n, k);
                                  a.accumulate_grad(da);
                              }
                              if (b.requires_grad()) {
                                  std::vector<double> db(static_cast<std::size_t>(k) * n);
                                  kernels::matmul_tn(a.data(), g, db, m, k, n);
                                  b.accumulate_grad(db);
                              }
                          });
}

namespace {

Tensor conv_impl(const char* op, const Tensor& x, const Tensor& w, kernels::ConvGeometry geo, Shape out_shape) {
    std::vector<double> out(shape_numel(out_shape));
    kernels::conv2d_forward(geo, x.data(), w.data(), out);
    return make_op_result(op, std::move(out_shape), std::move(out), {x, w},
                          [x, w, geo](std::span<const double> g, std::span<const double>) {
                              if (x.requires_grad()) {
                                  std::vector<double> dx(x.numel());
                                  kernels::conv2d_backward_input(geo, g, w.data(), dx);
                                  x.accumulate_grad(dx);
                              }
                              if (w.requires_grad()) {
                                  std::vector<double> dw(w.numel());
                                  kernels::conv2d_backward_kernel(geo, g, x.data(), dw);
                                  w.accumulate_grad(dw);
                              }
                          });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernels, Padding padding) {
    if ((x.rank() != 3 && x.rank() != 4) || kernels.rank() != 4)
        throw ShapeError("conv2d: expected x [N,C,H,W] or [C,H,W] and kernels [Co,Ci,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(kernels.shape()));
    const bool batched = x.rank() == 4;
    const int off = batched ? 1 : 0;
    kernels::ConvGeometry geo;
    geo.batch = batched ? x.dim(0) : 1;
    geo.in_ch = x.dim(off);
    geo.height = x.dim(off + 1);
    geo.width = x.dim(off + 2);
    geo.out_ch = kernels.dim(0);
    geo.kh = kernels.dim(2);
    geo.kw = kernels.dim(3);
    if (kernels.dim(1) != geo.in_ch)
        throw SizeError("conv2d: kernel expects " + std::to_string(kernels.dim(1)) + " input channels, input has " +
                        std::to_string(geo.in_ch));
    if (padding == Padding::same) {
        if (geo.kh % 2 == 0 || geo.kw % 2 == 0) throw SizeError("conv2d: same padding needs odd kernel sizes");
        geo.pad_h = geo.kh / 2;
        geo.pad_w = geo.kw / 2;
    }
    if (geo.out_h() < 1 || geo.out_w() < 1)
        throw SizeError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than padded input " +
                        shape_str(x.shape()));
    Shape out_shape = batched ? Shape{geo.batch, geo.out_ch, geo.out_h(), geo.out_w()}
                              : Shape{geo.out_ch, geo.out_h(), geo.out_w()};
    return conv_impl("conv2d", x, kernels, geo, std::move(out_shape));
}

Tensor conv1d(const Tensor& x, const Tensor& kernels, Padding padding) {
    if ((x.rank() != 2 && x.rank() != 3) || kernels.rank() != 3)
        throw ShapeError("conv1d: expected x [N,C,T] or [C,T] and kernels [Co,Ci,k], got " + shape_str(x.shape()) +
                         " and " + shape_str(kernels.shape()));
    const bool batched = x.rank() == 3;
    const int off = batched ? 1 : 0;
    kernels::ConvGeometry geo;
    geo.batch = batched ? x.dim(0) : 1;
    geo.in_ch = x.dim(off);
    geo.width = x.dim(off + 1);
    geo.out_ch = kernels.dim(0);
    geo.kw = kernels.dim(2);
    if (kernels.dim(1) != geo.in_ch)
        throw SizeError("conv1d: kernel expects " + std::to_string(kernels.dim(1)) + " input channels, input has " +
                        std::to_string(geo.in_ch));
    if (padding == Padding::same) {
        if (geo.kw % 2 == 0) throw SizeError("conv1d: same padding needs an odd kernel size");
        geo.pad_w = geo.kw / 2;
    }
    if (geo.out_w() < 1)
        throw SizeError("conv1d: kernel " + shape_str(kernels.shape()) + " larger than padded input " +
                        shape_str(x.shape()));
    Shape out_shape = batched ? Shape{geo.batch, geo.out_ch, geo.out_w()} : Shape{geo.out_ch, geo.out_w()};
    return conv_impl("conv1d", x, kernels, geo, std::move(out_shape));
}

// ---- reductions --------------------------------------------------------------------

Tensor reduce(Reduce kind, const Tensor& x, const std::vector<int>& axes) {
    const int r = x.rank();
    std::vector<bool> reduced(r, false);
    for (int a : axes) {
        if (a < 0 || a >= r) throw AxisError("reduce: axis " + std::to_string(a) + " invalid for " + shape_str(x.shape()));
        if (reduced[a]) throw AxisError("reduce: axis " + std::to_string(a) + " listed twice");
        reduced[a] = true;
    }
    Shape out_shape;
    for (int i = 0; i < r; ++i)
        if (!reduced[i]) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape = {1};

    // Map each input flat index to its output flat index.
    const std::size_t n = x.numel();
    std::vector<std::size_t> target(n);
    {
        std::vector<std::size_t> out_stride(r, 0);
        std::size_t stride = 1;
        for (int i = r - 1; i >= 0; --i) {
            if (reduced[i]) continue;
            out_stride[i] = stride;
            stride *= static_cast<std::size_t>(x.dim(i));
        }
        std::vector<int> idx(r, 0);
        for (std::size_t flat = 0; flat < n; ++flat) {
            std::size_t t = 0;
            for (int i = 0; i < r; ++i) t += idx[i] * out_stride[i];
            target[flat] = t;
            for (int i = r - 1; i >= 0; --i) {
                if (++idx[i] < x.dim(i)) break;
                idx[i] = 0;
            }
        }
    }
    const std::size_t out_n = shape_numel(out_shape);
    const double count = static_cast<double>(n / out_n);
    auto xv = x.data();
    std::vector<double> out(out_n, 0.0);

    if (kind == Reduce::max) {
        std::vector<std::size_t> arg(out_n, n);
        for (std::size_t flat = 0; flat < n; ++flat) {
            const std::size_t t = target[flat];
            if (arg[t] == n || xv[flat] > out[t]) {
                out[t] = xv[flat];
                arg[t] = flat;
            }
        }
        return make_op_result("reduce_max", out_shape, std::move(out), {x},
                              [x, arg](std::span<const double> g, std::span<const double>) {
                                  std::vector<double> dx(x.numel(), 0.0);
                                  for (std::size_t t = 0; t < arg.size(); ++t) dx[arg[t]] += g[t];
                                  x.accumulate_grad(dx);
                              });
    }

    for (std::size_t flat = 0; flat < n; ++flat) out[target[flat]] += xv[flat];
    const double factor = kind == Reduce::mean ? 1.0 / count : 1.0;
    if (kind == Reduce::mean)
        for (double& v : out) v /= count;
    return make_op_result(kind == Reduce::mean ? "reduce_mean" : "reduce_sum", out_shape, std::move(out), {x},
                          [x, target = std::move(target), factor](std::span<const double> g,
                                                                  std::span<const double>) {
                              std::vector<double> dx(target.size());
                              for (std::size_t flat = 0; flat < target.size(); ++flat)
                                  dx[flat] = g[target[flat]] * factor;
                              x.accumulate_grad(dx);
                          });
}

Tensor sum(const Tensor& x) {
    std::vector<int> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce(Reduce::sum, x, axes);
}

Tensor mean(const Tensor& x) {
    std::vector<int> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce(Reduce::mean, x, axes);
}

// ---- shape manipulation ---------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
    check_shape(shape);
    if (shape_numel(shape) != x.numel())
        throw SizeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_op_result("reshape", shape, std::move(out), {x},
                          [x](std::span<const double> g, std::span<const double>) { x.accumulate_grad(g); });
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
    check_axis(x, axis, "slice");
    if (start < 0 || length < 1 || start + length > x.dim(axis))
        throw SizeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                        ") outside axis of size " + std::to_string(x.dim(axis)));
    const AxisSplit s = split_at(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[axis] = length;
    auto xv = x.data();
    std::vector<double> out(s.outer * length * s.inner);
    const std::size_t block = length * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(xv.begin() + (o * s.dim + start) * s.inner, block, out.begin() + o * block);
    return make_op_result("slice", out_shape, std::move(out), {x},
                          [x, s, start, block](std::span<const double> g, std::span<const double>) {
                              std::vector<double> dx(x.numel(), 0.0);
                              for (std::size_t o = 0; o < s.outer; ++o)
                                  std::copy_n(g.begin() + o * block, block,
                                              dx.begin() + (o * s.dim + start) * s.inner);
                              x.accumulate_grad(dx);
                          });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw SizeError("concat: no inputs");
    check_axis(parts[0], axis, "concat");
    Shape out_shape = parts[0].shape();
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        Shape a = p.shape(), b = parts[0].shape();
        if (a.size() != b.size()) throw SizeError("concat: rank mismatch");
        a[axis] = b[axis] = 0;
        if (a != b) throw SizeError("concat: shapes " + shape_str(p.shape()) + " and " +
                                    shape_str(parts[0].shape()) + " differ off-axis");
        out_shape[axis] += p.dim(axis);
    }
    const AxisSplit s = split_at(out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t block = p.dim(axis) * s.inner;
        auto pv = p.data();
        for (std::size_t o = 0; o < s.outer; ++o)
            std::copy_n(pv.begin() + o * block, block, out.begin() + o * s.dim * s.inner + offset);
        offset += block;
    }
    return make_op_result("concat", out_shape, std::move(out), parts,
                          [parts, offsets, s, axis](std::span<const double> g, std::span<const double>) {
                              for (std::size_t k = 0; k < parts.size(); ++k) {
                                  const auto& p = parts[k];
                                  if (!p.requires_grad()) continue;
                                  const std::size_t block = p.dim(axis) * s.inner;
                                  std::vector<double> dp(p.numel());
                                  for (std::size_t o = 0; o < s.outer; ++o)
                                      std::copy_n(g.begin() + o * s.dim * s.inner + offsets[k], block,
                                                  dp.begin() + o * block);
                                  p.accumulate_grad(dp);
                              }
                          });
}

Tensor reverse(const Tensor& x, int axis) {
    check_axis(x, axis, "reverse");
    const AxisSplit s = split_at(x.shape(), axis);
    auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t c = 0; c < s.dim; ++c)
            std::copy_n(xv.begin() + (o * s.dim + c) * s.inner, s.inner,
                        out.begin() + (o * s.dim + (s.dim - 1 - c)) * s.inner);
    return make_op_result("reverse", x.shape(), std::move(out), {x},
                          [x, s](std::span<const double> g, std::span<const double>) {
                              std::vector<double> dx(g.size());
                              for (std::size_t o = 0; o < s.outer; ++o)
                                  for (std::size_t c = 0; c < s.dim; ++c)
                                      std::copy_n(g.begin() + (o * s.dim + (s.dim - 1 - c)) * s.inner, s.inner,
                                                  dx.begin() + (o * s.dim + c) * s.inner);
                              x.accumulate_grad(dx);
                          });
}

Tensor swap_axes(const Tensor& x, int a, int b) {
    check_axis(x, a, "swap_axes");
    check_axis(x, b, "swap_axes");
    const int r = x.rank();
    Shape out_shape = x.shape();
    std::swap(out_shape[a], out_shape[b]);
    std::vector<std::size_t> in_stride(r), out_stride(r);
    std::size_t si = 1, so = 1;
    for (int i = r - 1; i >= 0; --i) {
        in_stride[i] = si;
        out_stride[i] = so;
        si *= x.dim(i);
        so *= out_shape[i];
    }
    // perm[flat input] = flat output
    std::vector<std::size_t> perm(x.numel());
    std::vector<int> idx(r, 0);
    for (std::size_t flat = 0; flat < perm.size(); ++flat) {
        std::size_t t = 0;
        for (int i = 0; i < r; ++i) {
            const int j = i == a ? b : (i == b ? a : i);
            t += idx[i] * out_stride[j];
        }
        perm[flat] = t;
        for (int i = r - 1; i >= 0; --i) {
            if (++idx[i] < x.dim(i)) break;
            idx[i] = 0;
        }
    }
    auto xv = x.data();
    std::vector<double> out(xv.size());
    for (std::size_t flat = 0; flat < perm.size(); ++flat) out[perm[flat]] = xv[flat];
    return make_op_result("swap_axes", out_shape, std::move(out), {x},
                          [x, perm = std::move(perm)](std::span<const double> g, std::span<const double>) {
                              std::vector<double> dx(perm.size());
                              for (std::size_t flat = 0; flat < perm.size(); ++flat) dx[flat] = g[perm[flat]];
                              x.accumulate_grad(dx);
                          });
}

Tensor upsample2x(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("upsample2x needs rank >= 2, got " + shape_str(x.shape()));
    const int h = x.dim(-2), w = x.dim(-1);
    const std::size_t planes = x.numel() / (static_cast<std::size_t>(h) * w);
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 2] = 2 * h;
    out_shape[out_shape.size() - 1] = 2 * w;
    auto xv = x.data();
    std::vector<double> out(x.numel() * 4);
    for (std::size_t p = 0; p < planes; ++p)
        for (int i = 0; i < 2 * h; ++i)
            for (int j = 0; j < 2 * w; ++j)
                out[(p * 2 * h + i) * 2 * w + j] = xv[(p * h + i / 2) * w + j / 2];
    return make_op_result("upsample2x", out_shape, std::move(out), {x},
                          [x, planes, h, w](std::span<const double> g, std::span<const double>) {
                              std::vector<double> dx(x.numel(), 0.0);
                              for (std::size_t p = 0; p < planes; ++p)
                                  for (int i = 0; i < 2 * h; ++i)
                                      for (int j = 0; j < 2 * w; ++j)
                                          dx[(p * h + i / 2) * w + j / 2] += g[(p * 2 * h + i) * 2 * w + j];
                              x.accumulate_grad(dx);
                          });
}

Tensor pool2x(const Tensor& x, Pool mode) {
    if (x.rank() < 2) throw ShapeError("pool2x needs rank >= 2, got " + shape_str(x.shape()));
    const int h = x.dim(-2), w = x.dim(-1);
    if (h % 2 || w % 2) throw SizeError("pool2x needs even spatial dims, got " + shape_str(x.shape()));
    const int oh = h / 2, ow = w / 2;
    const std::size_t planes = x.numel() / (static_cast<std::size_t>(h) * w);
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 2] = oh;
    out_shape[out_shape.size() - 1] = ow;
    auto xv = x.data();
    std::vector<double> out(planes * oh * ow);
    std::vector<std::size_t> src(out.size());  // argmax for max pooling
    for (std::size_t p = 0; p < planes; ++p)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j) {
                const std::size_t o = (p * oh + i) * ow + j;
                double acc = 0.0;
                std::size_t best = (p * h + 2 * i) * w + 2 * j;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) {
                        const std::size_t k = (p * h + 2 * i + a) * w + 2 * j + b;
                        acc += xv[k];
                        if (xv[k] > xv[best]) best = k;
                    }
                out[o] = mode == Pool::max ? xv[best] : acc * 0.25;
                src[o] = best;
            }
    return make_op_result(mode == Pool::max ? "maxpool2x" : "meanpool2x", out_shape, std::move(out), {x},
                          [x, mode, src, planes, h, w, oh, ow](std::span<const double> g, std::span<const double>) {
                              std::vector<double> dx(x.numel(), 0.0);
                              for (std::size_t p = 0; p < planes; ++p)
                                  for (int i = 0; i < oh; ++i)
                                      for (int j = 0; j < ow; ++j) {
                                          const std::size_t o = (p * oh + i) * ow + j;
                                          if (mode == Pool::max) {
                                              dx[src[o]] += g[o];
                                              continue;
                                          }
                                          for (int a = 0; a < 2; ++a)
                                              for (int b = 0; b < 2; ++b)
                                                  dx[(p * h + 2 * i + a) * w + 2 * j + b] += 0.25 * g[o];
                                      }
                              x.accumulate_grad(dx);
                          });
}

Tensor embedding(const Tensor& ids, const Tensor& table) {
    if (table.rank() != 2) throw ShapeError("embedding table must be [V,d], got " + shape_str(table.shape()));
    const int vocab = table.dim(0), d = table.dim(1);
    auto iv = ids.data();
    std::vector<int> rows(iv.size());
    for (std::size_t t = 0; t < iv.size(); ++t) {
        const double v = iv[t];
        if (!(v >= 0.0 && v < vocab) || v != std::floor(v))
            throw IndexError("embedding: id " + std::to_string(v) + " outside [0, " + std::to_string(vocab) + ")");
        rows[t] = static_cast<int>(v);
    }
    Shape out_shape = ids.shape();
    out_shape.push_back(d);
    auto tv = table.data();
    std::vector<double> out(rows.size() * d);
    for (std::size_t t = 0; t < rows.size(); ++t)
        std::copy_n(tv.begin() + static_cast<std::size_t>(rows[t]) * d, d, out.begin() + t * d);
    return make_op_result("embedding", out_shape, std::move(out), {table},
                          [table, rows, d](std::span<const double> g, std::span<const double>) {
                              std::vector<double> dt(table.numel(), 0.0);
                              for (std::size_t t = 0; t < rows.size(); ++t)
                                  for (int k = 0; k < d; ++k)
                                      dt[static_cast<std::size_t>(rows[t]) * d + k] += g[t * d + k];
                              table.accumulate_grad(dt);
                          });
}

}  // namespace maskwright
