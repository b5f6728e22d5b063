#include "maskwright/objectives.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <sstream>

#include "maskwright/error.hpp"

namespace maskwright {

std::string to_string(EntropyKind k) { return k == EntropyKind::distribution ? "distribution" : "bernoulli"; }

EntropyKind parse_entropy_kind(const std::string& text) {
    if (text == "distribution") return EntropyKind::distribution;
    if (text == "bernoulli") return EntropyKind::bernoulli;
    throw ConfigError("unknown entropy kind '" + text + "'");
}

void RegularizerConfig::validate() const {
    for (auto [name, v] : {std::pair{"l1", l1}, {"l2", l2}, {"entropy", entropy}})
        if (!std::isfinite(v) || v < 0.0)
            throw ConfigError(std::string("regularizer coefficient ") + name + " must be finite and >= 0");
}

RegularizerConfig RegularizerConfig::parse(const std::string& text) { return parse(text, RegularizerConfig{}); }

RegularizerConfig RegularizerConfig::parse(const std::string& text, RegularizerConfig base) {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("regularizer entry '" + item + "' is not key=value");
        const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
        if (key == "entropy_kind") {
            base.entropy_kind = parse_entropy_kind(value);
            continue;
        }
        double v = 0.0;
        try {
            std::size_t used = 0;
            v = std::stod(value, &used);
            if (used != value.size()) throw ConfigError("");
        } catch (const std::exception&) {
            throw ConfigError("regularizer value '" + value + "' is not a number");
        }
        if (key == "l1")
            base.l1 = v;
        else if (key == "l2")
            base.l2 = v;
        else if (key == "entropy")
            base.entropy = v;
        else
            throw ConfigError("unknown regularizer '" + key + "'");
    }
    base.validate();
    return base;
}

std::string RegularizerConfig::to_string() const {
    std::ostringstream os;
    os.precision(17);
    os << "l1=" << l1 << ",l2=" << l2 << ",entropy=" << entropy
       << ",entropy_kind=" << maskwright::to_string(entropy_kind);
    return os.str();
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy_loss: logits must be [n,K], got " + shape_str(logits.shape()));
    const int n = logits.dim(0), classes = logits.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw SizeError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                        " rows");
    for (int y : labels)
        if (y < 0 || y >= classes)
            throw IndexError("cross_entropy_loss: label " + std::to_string(y) + " outside [0," +
                             std::to_string(classes) + ")");
    auto z = logits.data();
    std::vector<double> probs(z.size());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = z.data() + static_cast<std::size_t>(i) * classes;
        const double shift = *std::max_element(row, row + classes);
        double s = 0.0;
        for (int k = 0; k < classes; ++k) s += std::exp(row[k] - shift);
        const double lse = shift + std::log(s);
        total += lse - row[labels[i]];
        for (int k = 0; k < classes; ++k) probs[i * classes + k] = std::exp(row[k] - lse);
    }
    return make_op_result("cross_entropy", {1}, {total / n}, {logits},
                          [logits, labels, probs = std::move(probs), n, classes](std::span<const double> g,
                                                                                 std::span<const double>) {
                              std::vector<double> d(probs.size());
                              for (int i = 0; i < n; ++i)
                                  for (int k = 0; k < classes; ++k) {
                                      const double onehot = k == labels[i] ? 1.0 : 0.0;
                                      d[i * classes + k] = g[0] * (probs[i * classes + k] - onehot) / n;
                                  }
                              logits.accumulate_grad(d);
                          });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.numel() != target.numel())
        throw SizeError("mse_loss: " + std::to_string(pred.numel()) + " predictions for " +
                        std::to_string(target.numel()) + " targets");
    return mean(square(sub(reshape(pred, target.shape()), target)));
}

Tensor l1_penalty(const Tensor& m, double coeff) { return scale(sum(abs(m)), coeff); }

Tensor l2_penalty(const Tensor& m, double coeff) { return scale(sum(square(m)), coeff); }

Tensor entropy_penalty(const Tensor& m, double coeff, EntropyKind kind) {
    return entropy_penalty_rows(m, coeff, kind, 1);
}

Tensor entropy_penalty_rows(const Tensor& m, double coeff, EntropyKind kind, int rows) {
    if (rows < 1 || m.numel() % static_cast<std::size_t>(rows) != 0)
        throw SizeError("entropy_penalty: " + std::to_string(m.numel()) + " values do not split into " +
                        std::to_string(rows) + " rows");
    const std::size_t width = m.numel() / rows;
    auto v = m.data();
    for (double x : v) {
        if (x < 0.0 || std::isnan(x)) throw DomainError("entropy_penalty: mask values must be nonnegative");
        if (kind == EntropyKind::bernoulli && x > 1.0)
            throw DomainError("entropy_penalty: bernoulli form needs mask values in [0,1]");
    }
    auto xlogx = [](double p) { return p > 0.0 ? p * std::log(p) : 0.0; };
    std::vector<double> row_sum(rows, 0.0), row_entropy(rows, 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* x = v.data() + r * width;
        if (kind == EntropyKind::distribution) {
            double s = 0.0;
            for (std::size_t i = 0; i < width; ++i) s += x[i];
            if (!(s > 0.0)) throw DegenerateMaskError("entropy_penalty: mask sums to zero");
            double h = 0.0;
            for (std::size_t i = 0; i < width; ++i) h -= xlogx(x[i] / s);
            row_sum[r] = s;
            row_entropy[r] = h;
        } else {
            double h = 0.0;
            for (std::size_t i = 0; i < width; ++i) h -= xlogx(x[i]) + xlogx(1.0 - x[i]);
            row_entropy[r] = h;
        }
    }
    double total = 0.0;
    for (double h : row_entropy) total += h;
    const double factor = coeff / rows;
    return make_op_result(
        "entropy_penalty", {1}, {factor * total}, {m},
        [m, kind, rows, width, factor, row_sum, row_entropy](std::span<const double> g, std::span<const double>) {
            auto x = m.data();
            std::vector<double> d(x.size());
            // Clamping keeps the gradient finite at exact 0 or 1 entries.
            auto safe_log = [](double p) { return std::log(std::max(p, DBL_MIN)); };
            for (int r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < width; ++i) {
                    const std::size_t k = r * width + i;
                    double dh;
                    if (kind == EntropyKind::distribution)
                        dh = -(safe_log(x[k] / row_sum[r]) + row_entropy[r]) / row_sum[r];
                    else
                        dh = safe_log(1.0 - x[k]) - safe_log(x[k]);
                    d[k] = g[0] * factor * dh;
                }
            m.accumulate_grad(d);
        });
}

ObjectiveTerms total_objective(const Tensor& task_loss, const Tensor& mask, const RegularizerConfig& reg,
                               int batch_size) {
    reg.validate();
    if (task_loss.numel() != 1) throw ShapeError("total_objective: task loss must be a scalar");
    if (batch_size < 1 || mask.numel() % static_cast<std::size_t>(batch_size) != 0)
        throw SizeError("total_objective: mask does not split into " + std::to_string(batch_size) + " examples");
    const double per_example = 1.0 / batch_size;
    ObjectiveTerms out;
    out.task = task_loss.item();
    Tensor total = reshape(task_loss, {1});
    if (reg.l1 > 0.0) {
        Tensor p = l1_penalty(mask, reg.l1 * per_example);
        out.l1 = p.item();
        total = add(total, p);
    }
    if (reg.l2 > 0.0) {
        Tensor p = l2_penalty(mask, reg.l2 * per_example);
        out.l2 = p.item();
        total = add(total, p);
    }
    if (reg.entropy > 0.0) {
        Tensor p = entropy_penalty_rows(mask, reg.entropy, reg.entropy_kind, batch_size);
        out.entropy = p.item();
        total = add(total, p);
    }
    out.total = total;
    return out;
}

}  // namespace maskwright
