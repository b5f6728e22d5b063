#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace maskwright {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

// (grad_out, output_values) -> accumulates into the op's inputs.
using BackwardFn = std::function<void(std::span<const double>, std::span<const double>)>;

// One recorded operation. Nodes are created in execution order and carry the
// ids of their inputs, so sorting by id gives a topological order.
struct TapeNode {
    std::string op_kind;
    std::vector<std::uint64_t> input_ids;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty when absent
    std::uint64_t id = 0;
    std::shared_ptr<TapeNode> node;
};

// Reference-counted handle to a dense row-major float64 array. Copies share
// storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor ones_like(const Tensor& t);
    static Tensor zeros_like(const Tensor& t);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int dim(int axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();
    // Adds g into the gradient buffer when this tensor requires grad.
    void accumulate_grad(std::span<const double> g) const;

    std::uint64_t id() const;
    const TapeNode* node() const;
    bool is_leaf() const { return node() == nullptr; }

    Tensor detach() const;
    Tensor clone() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    friend Tensor make_op_result(std::string, Shape, std::vector<double>, const std::vector<Tensor>&,
                                 BackwardFn);
    std::shared_ptr<TensorImpl> impl_;
};

// Builds an op output and, when gradients are enabled and any input requires
// them, records a tape node with the given backward rule.
Tensor make_op_result(std::string op_kind, Shape shape, std::vector<double> data,
                      const std::vector<Tensor>& inputs,
                      BackwardFn backward);

bool grad_enabled();

// Disables tape recording for the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

// ---- elementwise ----------------------------------------------------------

enum class Elementwise { add, sub, mul, div, neg, exp, log, scalar_mul };

Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor& b);
Tensor elementwise(Elementwise kind, const Tensor& a, double b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);

Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor selu(const Tensor& a);

inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kSeluLambda = 1.0507009873554805;

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---- broadcasting along one axis ------------------------------------------

// y = x + b where b is 1-D with b.size == x.shape[axis].
Tensor add_along(const Tensor& x, const Tensor& b, int axis);
// y = x * m where m.shape is x.shape with `axis` removed; each m value is
// replicated along `axis`.
Tensor mul_broadcast(const Tensor& x, const Tensor& m, int axis);

// ---- linear algebra and convolution -------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

enum class Padding { same, valid };

// x: [C_in,H,W] or [N,C_in,H,W]; kernels: [C_out,C_in,kh,kw].
Tensor conv2d(const Tensor& x, const Tensor& kernels, Padding padding);
// x: [C_in,T] or [N,C_in,T]; kernels: [C_out,C_in,k].
Tensor conv1d(const Tensor& x, const Tensor& kernels, Padding padding);

// ---- reductions ----------------------------------------------------------

enum class Reduce { sum, mean, max };

Tensor reduce(Reduce kind, const Tensor& x, const std::vector<int>& axes);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- shape manipulation --------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor slice(const Tensor& x, int axis, int start, int length);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reverse(const Tensor& x, int axis);
Tensor swap_axes(const Tensor& x, int a, int b);

// Nearest-neighbour 2x upsampling / 2x2 pooling over the last two axes.
Tensor upsample2x(const Tensor& x);
enum class Pool { max, mean };
Tensor pool2x(const Tensor& x, Pool mode);

// Row lookup: ids holds integer values in [0, V); output shape is
// ids.shape + [d].
Tensor embedding(const Tensor& ids, const Tensor& table);

}  // namespace maskwright
