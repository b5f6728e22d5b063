#include "maskwright/gradcheck.hpp"

#include <cmath>
#include <limits>

#include "maskwright/error.hpp"

namespace maskwright {

namespace {

double scalar_value(const Tensor& t) {
    if (t.numel() != 1) throw ShapeError("finite_diff_check: function must return a scalar");
    return t.item();
}

// Folds one coordinate into the running maximum; NaN is sticky.
void fold(double& worst, double analytic, double numeric) {
    if (std::isnan(worst)) return;
    if (std::isnan(analytic) || std::isnan(numeric)) {
        worst = std::numeric_limits<double>::quiet_NaN();
        return;
    }
    const double err = std::fabs(analytic - numeric) / std::max(1.0, std::fabs(analytic));
    if (err > worst) worst = err;
}

}  // namespace

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor leaf = x.detach();
    leaf.set_requires_grad(true);
    const Tensor loss = f(leaf);
    scalar_value(loss);
    if (!loss.requires_grad()) {
        // f does not depend on x: the analytic gradient is identically zero.
        leaf.zero_grad();
    } else {
        backward(loss);
    }
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

    NoGradGuard guard;
    double worst = 0.0;
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        const double up = scalar_value(f(leaf));
        values[i] = saved - h;
        const double down = scalar_value(f(leaf));
        values[i] = saved;
        fold(worst, analytic[i], (up - down) / (2.0 * h));
    }
    return worst;
}

double finite_diff_check_params(const std::function<Tensor()>& loss, const std::vector<Tensor>& params, double h) {
    std::vector<Tensor> leaves = params;
    for (auto& p : leaves) {
        if (!p.requires_grad()) throw StateError("finite_diff_check_params: parameter does not require grad");
        p.zero_grad();
    }
    const Tensor value = loss();
    scalar_value(value);
    if (value.requires_grad()) backward(value);

    NoGradGuard guard;
    double worst = 0.0;
    for (auto& p : leaves) {
        const std::vector<double> analytic(p.grad().begin(), p.grad().end());
        auto values = p.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = scalar_value(loss());
            values[i] = saved - h;
            const double down = scalar_value(loss());
            values[i] = saved;
            fold(worst, analytic[i], (up - down) / (2.0 * h));
        }
    }
    return worst;
}

}  // namespace maskwright
