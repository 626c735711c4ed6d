#include "cstvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cstvae/errors.hpp"
#include "cstvae/kernels.hpp"

namespace cstvae {

i64 numel(const Shape& s) {
    i64 n = 1;
    for (i64 d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

void check_shape(const Shape& s, std::size_t data_len, const char* who) {
    for (i64 d : s) {
        if (d <= 0) throw DimensionError(std::string(who) + ": non-positive extent in " + shape_str(s));
    }
    if (static_cast<std::size_t>(numel(s)) != data_len) {
        throw DimensionError(std::string(who) + ": shape " + shape_str(s) + " does not match data length " +
                             std::to_string(data_len));
    }
}

const NodePtr& node_of(const Tensor& t, const char* who) {
    if (!t.defined()) throw ContractError(std::string(who) + ": undefined tensor");
    return t.node_;
}

struct OpContext {
    Tape* tape = nullptr;
    bool record = false;
};

OpContext resolve(std::initializer_list<const Tensor*> ins, const char* who) {
    OpContext ctx;
    bool any_grad = false;
    for (const Tensor* t : ins) {
        const NodePtr& n = node_of(*t, who);
        if (n->tape != nullptr) {
            if (ctx.tape != nullptr && ctx.tape != n->tape) {
                throw ContractError(std::string(who) + ": operands belong to different tapes");
            }
            ctx.tape = n->tape;
        }
        any_grad = any_grad || n->grad_path;
    }
    ctx.record = ctx.tape != nullptr && any_grad;
    return ctx;
}

Tensor wrap(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

NodePtr new_node(Shape shape, std::vector<double> value, const OpContext& ctx) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->tape = ctx.tape;
    if (ctx.record) {
        n->grad_path = true;
        n->grad.assign(n->value.size(), 0.0);
    }
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

// Shared body of the elementwise binary ops.
template <class Fwd, class Bwd>
Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* who, Fwd fwd, Bwd make_partials) {
    require_same_shape(a, b, who);
    const auto& an = node_of(a, who);
    const auto& bn = node_of(b, who);
    const i64 n = a.size();
    std::vector<double> out(static_cast<std::size_t>(n));
    kernels::parallel_for(n, [&](i64 i) { out[static_cast<std::size_t>(i)] = fwd(an->value[i], bn->value[i]); });
    OpContext ctx = resolve({&a, &b}, who);
    NodePtr on = new_node(a.shape(), std::move(out), ctx);
    if (ctx.record) {
        ctx.tape->record(on, [an, bn, on, n, make_partials] {
            const auto& g = on->grad;
            kernels::parallel_for(n, [&](i64 i) {
                double da = 0.0, db = 0.0;
                make_partials(an->value[i], bn->value[i], da, db);
                if (an->grad_path) an->grad[i] += g[i] * da;
                if (bn->grad_path) bn->grad[i] += g[i] * db;
            });
        });
    }
    return wrap(on);
}

template <class Fwd, class Deriv>
Tensor unary_ew(const Tensor& x, const char* who, Fwd fwd, Deriv deriv) {
    const auto& xn = node_of(x, who);
    const i64 n = x.size();
    std::vector<double> out(static_cast<std::size_t>(n));
    kernels::parallel_for(n, [&](i64 i) { out[static_cast<std::size_t>(i)] = fwd(xn->value[i]); });
    OpContext ctx = resolve({&x}, who);
    NodePtr on = new_node(x.shape(), std::move(out), ctx);
    if (ctx.record) {
        ctx.tape->record(on, [xn, on, n, deriv] {
            const auto& g = on->grad;
            kernels::parallel_for(n, [&](i64 i) { xn->grad[i] += g[i] * deriv(xn->value[i], on->value[i]); });
        });
    }
    return wrap(on);
}

}  // namespace

// ---- Tensor ----

Tensor Tensor::constant(Shape shape, std::vector<double> value) {
    check_shape(shape, value.size(), "Tensor::constant");
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, double v) {
    std::vector<double> data(static_cast<std::size_t>(numel(shape)), v);
    return constant(std::move(shape), std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::param(Shape shape, std::vector<double> value) {
    check_shape(shape, value.size(), "Tensor::param");
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->grad_path = true;
    n->leaf = true;
    n->grad.assign(n->value.size(), 0.0);
    return wrap(std::move(n));
}

const Shape& Tensor::shape() const { return node_of(*this, "Tensor::shape")->shape; }
i64 Tensor::size() const { return static_cast<i64>(node_of(*this, "Tensor::size")->value.size()); }
i64 Tensor::rank() const { return static_cast<i64>(shape().size()); }
const std::vector<double>& Tensor::value() const { return node_of(*this, "Tensor::value")->value; }

std::vector<double>& Tensor::mutable_value() {
    return node_of(*this, "Tensor::mutable_value")->value;
}

double Tensor::item() const {
    const auto& n = node_of(*this, "Tensor::item");
    if (n->value.size() != 1) {
        throw ContractError("Tensor::item: tensor has " + std::to_string(n->value.size()) + " elements");
    }
    return n->value[0];
}

bool Tensor::requires_grad() const { return node_of(*this, "Tensor::requires_grad")->grad_path; }
bool Tensor::is_leaf() const { return node_of(*this, "Tensor::is_leaf")->leaf; }

const std::vector<double>& Tensor::grad() const {
    const auto& n = node_of(*this, "Tensor::grad");
    if (!n->grad_path) throw ContractError("Tensor::grad: tensor is not on the gradient path");
    return n->grad;
}

void Tensor::zero_grad() {
    auto& n = node_of(*this, "Tensor::zero_grad");
    std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

Tape* Tensor::tape() const { return node_of(*this, "Tensor::tape")->tape; }

// ---- Tape ----

Tensor Tape::input(Shape shape, std::vector<double> value) {
    check_shape(shape, value.size(), "Tape::input");
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->tape = this;
    return wrap(std::move(n));
}

Tensor Tape::watch(const Tensor& leaf) {
    const auto& n = node_of(leaf, "Tape::watch");
    if (!n->grad_path) throw ContractError("Tape::watch: tensor is not differentiable");
    if (n->tape != nullptr && n->tape != this) {
        throw ContractError("Tape::watch: tensor already bound to another tape");
    }
    if (n->tape == nullptr) {
        n->tape = this;
        watched_.push_back(n);
    }
    return leaf;
}

Tape::~Tape() {
    for (auto& n : watched_) n->tape = nullptr;
}

void Tape::record(std::shared_ptr<detail::TensorNode> out, std::function<void()> fn) {
    ops_.push_back({std::move(out), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    const auto& ln = node_of(loss, "Tape::backward");
    if (ln->value.size() != 1) {
        throw ContractError("Tape::backward: loss must be scalar, got " + shape_str(ln->shape));
    }
    if (ln->tape != this) throw ContractError("Tape::backward: loss was not computed on this tape");
    if (!ln->grad_path) return;  // loss does not depend on anything differentiable
    for (auto& op : ops_) std::fill(op.out->grad.begin(), op.out->grad.end(), 0.0);
    ln->grad[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->fn();
}

// ---- operations ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& an = node_of(a, "matmul");
    const auto& bn = node_of(b, "matmul");
    if (an->shape.size() != 2 || bn->shape.size() != 2 || an->shape[1] != bn->shape[0]) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(an->shape) + " and " +
                             shape_str(bn->shape));
    }
    const i64 m = an->shape[0], k = an->shape[1], n = bn->shape[1];
    std::vector<double> out(static_cast<std::size_t>(m * n));
    kernels::matmul_nn(an->value.data(), bn->value.data(), out.data(), m, k, n);
    OpContext ctx = resolve({&a, &b}, "matmul");
    NodePtr on = new_node({m, n}, std::move(out), ctx);
    if (ctx.record) {
        ctx.tape->record(on, [an, bn, on, m, k, n] {
            if (an->grad_path) {
                // dA += dC * B^T, with B^T materialized for streaming access.
                std::vector<double> bt(static_cast<std::size_t>(k * n));
                kernels::transpose(bn->value.data(), bt.data(), k, n);
                kernels::matmul_nn(on->grad.data(), bt.data(), an->grad.data(), m, n, k, true);
            }
            if (bn->grad_path) {
                kernels::matmul_tn(an->value.data(), on->grad.data(), bn->grad.data(), k, m, n, true);
            }
        });
    }
    return wrap(on);
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double& da, double& db) { da = 1.0; db = 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double& da, double& db) { da = 1.0; db = -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double x, double y, double& da, double& db) { da = y; db = x; });
}

Tensor add(const Tensor& a, double s) {
    return unary_ew(
        a, "add", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, double s) { return add(a, -s); }

Tensor sub(double s, const Tensor& a) {
    return unary_ew(
        a, "sub", [s](double x) { return s - x; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, double s) {
    return unary_ew(
        a, "mul", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& x) {
    // Subgradient at 0 is 0.
    return unary_ew(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
    return unary_ew(
        x, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_ew(
        x, "sigmoid",
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
    const auto& xn = node_of(x, "log");
    for (std::size_t i = 0; i < xn->value.size(); ++i) {
        if (!(xn->value[i] > 0.0)) {
            throw NumericDomainError("log: non-positive operand " + std::to_string(xn->value[i]) +
                                     " at index " + std::to_string(i));
        }
    }
    return unary_ew(
        x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
    return unary_ew(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
    return unary_ew(
        x, "clamp", [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
    const auto& xn = node_of(x, "sum");
    const i64 n = x.size();
    const double total = kernels::reduce_sum(xn->value.data(), n);
    OpContext ctx = resolve({&x}, "sum");
    NodePtr on = new_node({1}, {total}, ctx);
    if (ctx.record) {
        ctx.tape->record(on, [xn, on, n] {
            const double g = on->grad[0];
            kernels::parallel_for(n, [&](i64 i) { xn->grad[i] += g; });
        });
    }
    return wrap(on);
}

Tensor mean(const Tensor& x) {
    const i64 n = x.size();
    return mul(sum(x), 1.0 / static_cast<double>(n));
}

Tensor sum(const Tensor& x, int axis) {
    const auto& xn = node_of(x, "sum(axis)");
    if (xn->shape.size() != 2) {
        throw DimensionError("sum(axis): expected a 2-d tensor, got " + shape_str(xn->shape));
    }
    if (axis != 0 && axis != 1) throw DimensionError("sum(axis): invalid axis " + std::to_string(axis));
    const i64 m = xn->shape[0], n = xn->shape[1];
    std::vector<double> out;
    if (axis == 1) {
        out.assign(static_cast<std::size_t>(m), 0.0);
        kernels::parallel_for(m, [&](i64 i) {
            double s = 0.0;
            const double* row = xn->value.data() + i * n;
            for (i64 j = 0; j < n; ++j) s += row[j];
            out[static_cast<std::size_t>(i)] = s;
        });
    } else {
        out.assign(static_cast<std::size_t>(n), 0.0);
        kernels::parallel_for(n, [&](i64 j) {
            double s = 0.0;
            for (i64 i = 0; i < m; ++i) s += xn->value[i * n + j];
            out[static_cast<std::size_t>(j)] = s;
        });
    }
    OpContext ctx = resolve({&x}, "sum(axis)");
    NodePtr on = new_node({axis == 1 ? m : n}, std::move(out), ctx);
    if (ctx.record) {
        ctx.tape->record(on, [xn, on, m, n, axis] {
            const auto& g = on->grad;
            if (axis == 1) {
                kernels::parallel_for(m, [&](i64 i) {
                    double* row = xn->grad.data() + i * n;
                    const double gi = g[static_cast<std::size_t>(i)];
                    for (i64 j = 0; j < n; ++j) row[j] += gi;
                });
            } else {
                kernels::parallel_for(n, [&](i64 j) {
                    const double gj = g[static_cast<std::size_t>(j)];
                    for (i64 i = 0; i < m; ++i) xn->grad[i * n + j] += gj;
                });
            }
        });
    }
    return wrap(on);
}

Tensor mean(const Tensor& x, int axis) {
    const auto& xn = node_of(x, "mean(axis)");
    if (xn->shape.size() != 2) {
        throw DimensionError("mean(axis): expected a 2-d tensor, got " + shape_str(xn->shape));
    }
    const i64 extent = axis == 1 ? xn->shape[1] : xn->shape[0];
    return mul(sum(x, axis), 1.0 / static_cast<double>(extent));
}

Tensor reshape(const Tensor& x, Shape shape) {
    const auto& xn = node_of(x, "reshape");
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(xn->shape) + " as " + shape_str(shape));
    }
    std::vector<double> out = xn->value;
    OpContext ctx = resolve({&x}, "reshape");
    NodePtr on = new_node(std::move(shape), std::move(out), ctx);
    if (ctx.record) {
        const i64 n = x.size();
        ctx.tape->record(on, [xn, on, n] {
            kernels::parallel_for(n, [&](i64 i) { xn->grad[i] += on->grad[i]; });
        });
    }
    return wrap(on);
}

Tensor slice_cols(const Tensor& x, i64 c0, i64 c1) {
    const auto& xn = node_of(x, "slice_cols");
    if (xn->shape.size() != 2) {
        throw DimensionError("slice_cols: expected a 2-d tensor, got " + shape_str(xn->shape));
    }
    const i64 m = xn->shape[0], n = xn->shape[1];
    if (c0 < 0 || c1 > n || c0 >= c1) {
        throw DimensionError("slice_cols: invalid column range [" + std::to_string(c0) + ", " +
                             std::to_string(c1) + ") for " + shape_str(xn->shape));
    }
    const i64 w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(m * w));
    kernels::parallel_for(m, [&](i64 i) {
        for (i64 j = 0; j < w; ++j) out[static_cast<std::size_t>(i * w + j)] = xn->value[i * n + c0 + j];
    });
    OpContext ctx = resolve({&x}, "slice_cols");
    NodePtr on = new_node({m, w}, std::move(out), ctx);
    if (ctx.record) {
        ctx.tape->record(on, [xn, on, m, n, w, c0] {
            kernels::parallel_for(m, [&](i64 i) {
                for (i64 j = 0; j < w; ++j) xn->grad[i * n + c0 + j] += on->grad[i * w + j];
            });
        });
    }
    return wrap(on);
}

Tensor broadcast_rows(const Tensor& v, i64 rows) {
    const auto& vn = node_of(v, "broadcast_rows");
    if (vn->shape.size() != 1) {
        throw DimensionError("broadcast_rows: expected a 1-d tensor, got " + shape_str(vn->shape));
    }
    if (rows < 1) throw DimensionError("broadcast_rows: rows must be positive");
    const i64 n = vn->shape[0];
    std::vector<double> out(static_cast<std::size_t>(rows * n));
    kernels::parallel_for(rows, [&](i64 i) {
        for (i64 j = 0; j < n; ++j) out[static_cast<std::size_t>(i * n + j)] = vn->value[j];
    });
    OpContext ctx = resolve({&v}, "broadcast_rows");
    NodePtr on = new_node({rows, n}, std::move(out), ctx);
    if (ctx.record) {
        ctx.tape->record(on, [vn, on, rows, n] {
            kernels::parallel_for(n, [&](i64 j) {
                double s = 0.0;
                for (i64 i = 0; i < rows; ++i) s += on->grad[i * n + j];
                vn->grad[j] += s;
            });
        });
    }
    return wrap(on);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<i64>& labels) {
    const auto& xn = node_of(logits, "softmax_cross_entropy");
    if (xn->shape.size() != 2) {
        throw DimensionError("softmax_cross_entropy: expected 2-d logits, got " + shape_str(xn->shape));
    }
    const i64 m = xn->shape[0], k = xn->shape[1];
    if (static_cast<i64>(labels.size()) != m) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(m) + " rows");
    }
    for (i64 lab : labels) {
        if (lab < 0 || lab >= k) throw ContractError("softmax_cross_entropy: label out of range");
    }
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m * k));
    std::vector<double> out(static_cast<std::size_t>(m));
    kernels::parallel_for(m, [&](i64 i) {
        const double* row = xn->value.data() + i * k;
        double mx = row[0];
        for (i64 j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (i64 j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (i64 j = 0; j < k; ++j) (*probs)[static_cast<std::size_t>(i * k + j)] = std::exp(row[j] - lse);
        out[static_cast<std::size_t>(i)] = lse - row[labels[static_cast<std::size_t>(i)]];
    });
    OpContext ctx = resolve({&logits}, "softmax_cross_entropy");
    NodePtr on = new_node({m}, std::move(out), ctx);
    if (ctx.record) {
        auto labs = std::make_shared<std::vector<i64>>(labels);
        ctx.tape->record(on, [xn, on, probs, labs, m, k] {
            kernels::parallel_for(m, [&](i64 i) {
                const double g = on->grad[static_cast<std::size_t>(i)];
                const i64 lab = (*labs)[static_cast<std::size_t>(i)];
                for (i64 j = 0; j < k; ++j) {
                    const double p = (*probs)[static_cast<std::size_t>(i * k + j)];
                    xn->grad[i * k + j] += g * (p - (j == lab ? 1.0 : 0.0));
                }
            });
        });
    }
    return wrap(on);
}

}  // namespace cstvae
