#include "mulki/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <unordered_set>

#include "mulki/error.hpp"

namespace mulki {

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            s += "x";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace detail {

namespace {
std::atomic<std::uint64_t> g_next_id{1};
}

struct Access {
    static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
    static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

}  // namespace detail

namespace {

using detail::Access;
using detail::Node;

std::size_t product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data, bool requires_grad) {
    if (product(shape) != data.size()) {
        throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    n->id = detail::g_next_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}

// Result of a primitive. The backward closure is only kept when some input is
// on the tape, so constant subgraphs cost nothing.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   detail::BackwardFn fn) {
    bool any = false;
    for (const Tensor* t : inputs) {
        any = any || t->requires_grad();
    }
    auto n = new_node(std::move(shape), std::move(data), any);
    if (any) {
        for (const Tensor* t : inputs) {
            if (t->requires_grad()) {
                n->inputs.push_back(Access::node(*t));
            }
        }
        n->backward_fn = std::move(fn);
    }
    return Access::wrap(std::move(n));
}

// Gradient buffer of an input, or nullptr if it is off the tape.
double* grad_ptr(const Tensor& t) {
    const auto& n = Access::node(t);
    if (!n->requires_grad) {
        return nullptr;
    }
    if (n->grad.size() != n->data.size()) {
        n->grad.assign(n->data.size(), 0.0);
    }
    return n->grad.data();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

// View of a tensor as [outer x len x inner] around one axis.
struct AxisView {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;

    std::size_t at(std::size_t o, std::size_t k, std::size_t i) const { return (o * len + k) * inner + i; }
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(shape));
    }
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) {
        v.outer *= shape[i];
    }
    v.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        v.inner *= shape[i];
    }
    return v;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != axis) {
            out.push_back(shape[i]);
        }
    }
    return out;
}

template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx) {
    auto an = Access::node(a);
    std::vector<double> out(an->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = f(an->data[i]);
    }
    auto outv = std::make_shared<std::vector<double>>(out);
    return make_result(a.shape(), std::move(out), {&a}, [a, outv, dfdx](std::span<const double> g) {
        double* ga = grad_ptr(a);
        const auto& x = Access::node(a)->data;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * dfdx(x[i], (*outv)[i]);
        }
    });
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : node_(new_node({0}, {}, false)) {}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = product(shape);
    return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> data, bool requires_grad) {
    const std::size_t n = data.size();
    return from_data({n}, std::move(data), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data, bool requires_grad) {
    return from_data({rows, cols}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
    if (rank() != 2) {
        throw DimensionError("rows() on non-matrix " + shape_str(shape()));
    }
    return shape()[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) {
        throw DimensionError("cols() on non-matrix " + shape_str(shape()));
    }
    return shape()[1];
}

std::span<const double> Tensor::data() const { return node_->data; }

std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
}

double Tensor::operator[](std::size_t i) const { return node_->data.at(i); }

double Tensor::at(std::size_t row, std::size_t col) const { return node_->data.at(row * cols() + col); }

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::is_leaf() const { return !node_->backward_fn; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() { node_->grad.clear(); }

std::span<double> Tensor::mutable_data() {
    if (!is_leaf()) {
        throw ContractError("mutable_data() on a non-leaf tensor");
    }
    return node_->data;
}

Tensor Tensor::clone(bool requires_grad) const { return from_data(shape(), node_->data, requires_grad); }

void Tensor::backward() const {
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (!node_->requires_grad) {
        return;
    }
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& in : n->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) {
                stack.push_back(in.get());
            }
        }
    }
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });
    for (Node* n : order) {
        if (n->backward_fn || n->grad.size() != n->data.size()) {
            n->grad.assign(n->data.size(), 0.0);
        }
    }
    node_->grad[0] += 1.0;
    for (Node* n : order) {
        if (n->backward_fn) {
            n->backward_fn(n->grad);
        }
    }
}

// ---------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const std::size_t n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " +
                             shape_str(b.shape()));
    }
    const auto& x = Access::node(a)->data;
    const auto& y = Access::node(b)->data;
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x[i * k + p];
            for (std::size_t j = 0; j < n; ++j) {
                out[i * n + j] += xv * y[p * n + j];
            }
        }
    }
    return make_result({m, n}, std::move(out), {&a, &b}, [a, b, m, k, n](std::span<const double> g) {
        const auto& x = Access::node(a)->data;
        const auto& y = Access::node(b)->data;
        if (double* ga = grad_ptr(a)) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        acc += g[i * n + j] * y[p * n + j];
                    }
                    ga[i * k + p] += acc;
                }
            }
        }
        if (double* gb = grad_ptr(b)) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double xv = x[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) {
                        gb[p * n + j] += xv * g[i * n + j];
                    }
                }
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    const auto& x = Access::node(a)->data;
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = x[i * n + j];
        }
    }
    return make_result({n, m}, std::move(out), {&a}, [a, m, n](std::span<const double> g) {
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                ga[i * n + j] += g[j * m + i];
            }
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (product(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    return make_result(std::move(shape), a.to_vector(), {&a}, [a](std::span<const double> g) {
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
        }
    });
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    return make_result(a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const double> g) {
        if (double* ga = grad_ptr(a)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
            }
        }
        if (double* gb = grad_ptr(b)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] += g[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    return make_result(a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const double> g) {
        if (double* ga = grad_ptr(a)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
            }
        }
        if (double* gb = grad_ptr(b)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] -= g[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    return make_result(a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const double> g) {
        if (double* ga = grad_ptr(a)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * b[i];
            }
        }
        if (double* gb = grad_ptr(b)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] += g[i] * a[i];
            }
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * factor;
    }
    return make_result(a.shape(), std::move(out), {&a}, [a, factor](std::span<const double> g) {
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * factor;
        }
    });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    require_rank(a, 2, "add_bias");
    require_rank(bias, 1, "add_bias");
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    if (bias.numel() != n) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs " + shape_str(a.shape()));
    }
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = a[i * n + j] + bias[j];
        }
    }
    return make_result({m, n}, std::move(out), {&a, &bias}, [a, bias, m, n](std::span<const double> g) {
        if (double* ga = grad_ptr(a)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
            }
        }
        if (double* gb = grad_ptr(bias)) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    gb[j] += g[i * n + j];
                }
            }
        }
    });
}

Tensor mul_rows(const Tensor& a, const Tensor& w) {
    require_rank(a, 2, "mul_rows");
    require_rank(w, 1, "mul_rows");
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    if (w.numel() != m) {
        throw DimensionError("mul_rows: weights " + shape_str(w.shape()) + " vs " + shape_str(a.shape()));
    }
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = a[i * n + j] * w[i];
        }
    }
    return make_result({m, n}, std::move(out), {&a, &w}, [a, w, m, n](std::span<const double> g) {
        if (double* ga = grad_ptr(a)) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    ga[i * n + j] += g[i * n + j] * w[i];
                }
            }
        }
        if (double* gw = grad_ptr(w)) {
            for (std::size_t i = 0; i < m; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    acc += g[i * n + j] * a[i * n + j];
                }
                gw[i] += acc;
            }
        }
    });
}

Tensor exp(const Tensor& a) {
    return unary(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& a) {
    return unary(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) {
        acc += v;
    }
    return make_result({}, {acc}, {&a}, [a](std::span<const double> g) {
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            ga[i] += g[0];
        }
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) {
        throw DegenerateInputError("mean of an empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum(const Tensor& a, std::size_t axis) {
    const AxisView v = axis_view(a.shape(), axis, "sum");
    std::vector<double> out(v.outer * v.inner, 0.0);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t k = 0; k < v.len; ++k) {
            for (std::size_t i = 0; i < v.inner; ++i) {
                out[o * v.inner + i] += a[v.at(o, k, i)];
            }
        }
    }
    return make_result(drop_axis(a.shape(), axis), std::move(out), {&a}, [a, v](std::span<const double> g) {
        double* ga = grad_ptr(a);
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t k = 0; k < v.len; ++k) {
                for (std::size_t i = 0; i < v.inner; ++i) {
                    ga[v.at(o, k, i)] += g[o * v.inner + i];
                }
            }
        }
    });
}

Tensor mean(const Tensor& a, std::size_t axis) {
    const AxisView v = axis_view(a.shape(), axis, "mean");
    if (v.len == 0) {
        throw DegenerateInputError("mean over an empty axis");
    }
    return scale(sum(a, axis), 1.0 / static_cast<double>(v.len));
}

// ---------------------------------------------------------------- normalizers

Tensor softmax(const Tensor& x, std::size_t axis) {
    const AxisView v = axis_view(x.shape(), axis, "softmax");
    std::vector<double> out(x.numel());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
            double mx = -INFINITY;
            for (std::size_t k = 0; k < v.len; ++k) {
                mx = std::max(mx, x[v.at(o, k, i)]);
            }
            double z = 0.0;
            for (std::size_t k = 0; k < v.len; ++k) {
                const double e = std::exp(x[v.at(o, k, i)] - mx);
                out[v.at(o, k, i)] = e;
                z += e;
            }
            for (std::size_t k = 0; k < v.len; ++k) {
                out[v.at(o, k, i)] /= z;
            }
        }
    }
    auto y = std::make_shared<std::vector<double>>(out);
    return make_result(x.shape(), std::move(out), {&x}, [x, y, v](std::span<const double> g) {
        double* gx = grad_ptr(x);
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t i = 0; i < v.inner; ++i) {
                double dot = 0.0;
                for (std::size_t k = 0; k < v.len; ++k) {
                    dot += g[v.at(o, k, i)] * (*y)[v.at(o, k, i)];
                }
                for (std::size_t k = 0; k < v.len; ++k) {
                    const std::size_t idx = v.at(o, k, i);
                    gx[idx] += (*y)[idx] * (g[idx] - dot);
                }
            }
        }
    });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
    const AxisView v = axis_view(x.shape(), axis, "log_softmax");
    std::vector<double> out(x.numel());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
            double mx = -INFINITY;
            for (std::size_t k = 0; k < v.len; ++k) {
                mx = std::max(mx, x[v.at(o, k, i)]);
            }
            double z = 0.0;
            for (std::size_t k = 0; k < v.len; ++k) {
                z += std::exp(x[v.at(o, k, i)] - mx);
            }
            const double lse = mx + std::log(z);
            for (std::size_t k = 0; k < v.len; ++k) {
                out[v.at(o, k, i)] = x[v.at(o, k, i)] - lse;
            }
        }
    }
    auto y = std::make_shared<std::vector<double>>(out);
    return make_result(x.shape(), std::move(out), {&x}, [x, y, v](std::span<const double> g) {
        double* gx = grad_ptr(x);
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t i = 0; i < v.inner; ++i) {
                double gsum = 0.0;
                for (std::size_t k = 0; k < v.len; ++k) {
                    gsum += g[v.at(o, k, i)];
                }
                for (std::size_t k = 0; k < v.len; ++k) {
                    const std::size_t idx = v.at(o, k, i);
                    gx[idx] += g[idx] - std::exp((*y)[idx]) * gsum;
                }
            }
        }
    });
}

Tensor l2_normalize(const Tensor& x, std::size_t axis) {
    const AxisView v = axis_view(x.shape(), axis, "l2_normalize");
    std::vector<double> out(x.numel());
    auto norms = std::make_shared<std::vector<double>>(v.outer * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t i = 0; i < v.inner; ++i) {
            double ss = 0.0;
            for (std::size_t k = 0; k < v.len; ++k) {
                const double e = x[v.at(o, k, i)];
                ss += e * e;
            }
            const double nrm = std::sqrt(ss);
            if (!(nrm > 0.0)) {
                throw DegenerateInputError("l2_normalize: zero-norm slice");
            }
            (*norms)[o * v.inner + i] = nrm;
            for (std::size_t k = 0; k < v.len; ++k) {
                out[v.at(o, k, i)] = x[v.at(o, k, i)] / nrm;
            }
        }
    }
    auto y = std::make_shared<std::vector<double>>(out);
    return make_result(x.shape(), std::move(out), {&x}, [x, y, norms, v](std::span<const double> g) {
        double* gx = grad_ptr(x);
        for (std::size_t o = 0; o < v.outer; ++o) {
            for (std::size_t i = 0; i < v.inner; ++i) {
                double dot = 0.0;
                for (std::size_t k = 0; k < v.len; ++k) {
                    dot += g[v.at(o, k, i)] * (*y)[v.at(o, k, i)];
                }
                const double nrm = (*norms)[o * v.inner + i];
                for (std::size_t k = 0; k < v.len; ++k) {
                    const std::size_t idx = v.at(o, k, i);
                    gx[idx] += (g[idx] - (*y)[idx] * dot) / nrm;
                }
            }
        }
    });
}

Tensor cosine_sim_matrix(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "cosine_sim_matrix");
    require_rank(b, 2, "cosine_sim_matrix");
    if (a.cols() != b.cols()) {
        throw DimensionError("cosine_sim_matrix: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t m = a.rows();
    const std::size_t n = b.rows();
    const std::size_t d = a.cols();
    auto unit_rows = [d](const Tensor& t, std::vector<double>& norms) {
        std::vector<double> u(t.numel());
        for (std::size_t r = 0; r < t.numel() / std::max<std::size_t>(d, 1); ++r) {
            double ss = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                ss += t[r * d + c] * t[r * d + c];
            }
            const double nrm = std::sqrt(ss);
            if (!(nrm > 0.0)) {
                throw DegenerateInputError("cosine similarity of a zero vector");
            }
            norms.push_back(nrm);
            for (std::size_t c = 0; c < d; ++c) {
                u[r * d + c] = t[r * d + c] / nrm;
            }
        }
        return u;
    };
    auto na = std::make_shared<std::vector<double>>();
    auto nb = std::make_shared<std::vector<double>>();
    auto ua = std::make_shared<std::vector<double>>(unit_rows(a, *na));
    auto ub = std::make_shared<std::vector<double>>(unit_rows(b, *nb));
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                dot += (*ua)[i * d + c] * (*ub)[j * d + c];
            }
            out[i * n + j] = std::clamp(dot, -1.0, 1.0);
        }
    }
    return make_result({m, n}, std::move(out), {&a, &b},
                       [a, b, ua, ub, na, nb, m, n, d](std::span<const double> g) {
                           // d/dx of x/|x| applied to the upstream vector gu: (gu - u (u.gu)) / |x|.
                           auto project = [d](double* gx, const std::vector<double>& u, std::size_t row,
                                              const std::vector<double>& gu, double nrm) {
                               double dot = 0.0;
                               for (std::size_t c = 0; c < d; ++c) {
                                   dot += gu[c] * u[row * d + c];
                               }
                               for (std::size_t c = 0; c < d; ++c) {
                                   gx[row * d + c] += (gu[c] - u[row * d + c] * dot) / nrm;
                               }
                           };
                           std::vector<double> gu(d);
                           if (double* ga = grad_ptr(a)) {
                               for (std::size_t i = 0; i < m; ++i) {
                                   std::fill(gu.begin(), gu.end(), 0.0);
                                   for (std::size_t j = 0; j < n; ++j) {
                                       for (std::size_t c = 0; c < d; ++c) {
                                           gu[c] += g[i * n + j] * (*ub)[j * d + c];
                                       }
                                   }
                                   project(ga, *ua, i, gu, (*na)[i]);
                               }
                           }
                           if (double* gb = grad_ptr(b)) {
                               for (std::size_t j = 0; j < n; ++j) {
                                   std::fill(gu.begin(), gu.end(), 0.0);
                                   for (std::size_t i = 0; i < m; ++i) {
                                       for (std::size_t c = 0; c < d; ++c) {
                                           gu[c] += g[i * n + j] * (*ua)[i * d + c];
                                       }
                                   }
                                   project(gb, *ub, j, gu, (*nb)[j]);
                               }
                           }
                       });
}

Tensor cosine_sim(const Tensor& a, const Tensor& b) {
    require_rank(a, 1, "cosine_sim");
    require_rank(b, 1, "cosine_sim");
    const Tensor s = cosine_sim_matrix(reshape(a, {1, a.numel()}), reshape(b, {1, b.numel()}));
    return reshape(s, {});
}

// ---------------------------------------------------------------- losses

Tensor soft_cross_entropy_rows(const Tensor& target, const Tensor& pred) {
    require_rank(pred, 2, "soft_cross_entropy_rows");
    require_same_shape(target, pred, "soft_cross_entropy_rows");
    const std::size_t m = pred.rows();
    const std::size_t n = pred.cols();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double t = target[i * n + j];
            if (t != 0.0) {
                out[i] -= t * std::log(std::max(pred[i * n + j], kLogClamp));
            }
        }
    }
    const Tensor tgt = detach(target);
    return make_result({m}, std::move(out), {&pred}, [tgt, pred, m, n](std::span<const double> g) {
        double* gp = grad_ptr(pred);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double p = pred[i * n + j];
                if (p > kLogClamp) {
                    gp[i * n + j] -= g[i] * tgt[i * n + j] / p;
                }
            }
        }
    });
}

Tensor soft_cross_entropy(const Tensor& target, const Tensor& pred) {
    require_same_shape(target, pred, "soft_cross_entropy");
    const std::size_t n = pred.numel();
    const std::size_t cols = pred.rank() == 2 ? pred.cols() : n;
    const std::size_t rows = cols == 0 ? 0 : n / cols;
    return sum(soft_cross_entropy_rows(reshape(target, {rows, cols}), reshape(pred, {rows, cols})));
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t m = logits.rows();
    const std::size_t n = logits.cols();
    if (labels.size() != m) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(m) + " rows");
    }
    if (m == 0) {
        throw DegenerateInputError("cross_entropy over an empty batch");
    }
    std::vector<double> onehot(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] >= n) {
            throw LookupError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
        }
        onehot[i * n + labels[i]] = 1.0;
    }
    const Tensor nll = scale(mul(Tensor::matrix(m, n, std::move(onehot)), log_softmax(logits, 1)), -1.0);
    return scale(sum(nll), 1.0 / static_cast<double>(m));
}

Tensor row_sq_dist(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "row_sq_dist");
    require_same_shape(a, b, "row_sq_dist");
    return sum(square(sub(a, b)), 1);
}

Tensor frobenius_norm(const Tensor& a) {
    double ss = 0.0;
    for (double v : a.data()) {
        ss += v * v;
    }
    const double nrm = std::sqrt(ss);
    return make_result({}, {nrm}, {&a}, [a, nrm](std::span<const double> g) {
        // Subgradient 0 at the origin.
        if (nrm == 0.0) {
            return;
        }
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < a.numel(); ++i) {
            ga[i] += g[0] * a[i] / nrm;
        }
    });
}

// ---------------------------------------------------------------- structural

Tensor detach(const Tensor& a) { return a.clone(false); }

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
    require_rank(table, 2, "gather_rows");
    const std::size_t v = table.rows();
    const std::size_t d = table.cols();
    std::vector<double> out(ids.size() * d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= v) {
            throw LookupError("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(v) + " rows");
        }
        for (std::size_t c = 0; c < d; ++c) {
            out[r * d + c] = table[ids[r] * d + c];
        }
    }
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    return make_result({ids.size(), d}, std::move(out), {&table}, [table, idv, d](std::span<const double> g) {
        double* gt = grad_ptr(table);
        for (std::size_t r = 0; r < idv.size(); ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                gt[idv[r] * d + c] += g[r * d + c];
            }
        }
    });
}

Tensor concat_flat(std::span<const Tensor> parts) {
    std::vector<double> out;
    bool any = false;
    for (const Tensor& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        any = any || p.requires_grad();
    }
    const std::size_t n = out.size();
    auto node = new_node({n}, std::move(out), any);
    if (any) {
        std::vector<Tensor> held(parts.begin(), parts.end());
        for (const Tensor& p : held) {
            if (p.requires_grad()) {
                node->inputs.push_back(Access::node(p));
            }
        }
        node->backward_fn = [held](std::span<const double> g) {
            std::size_t off = 0;
            for (const Tensor& p : held) {
                if (double* gp = grad_ptr(p)) {
                    for (std::size_t i = 0; i < p.numel(); ++i) {
                        gp[i] += g[off + i];
                    }
                }
                off += p.numel();
            }
        };
    }
    return Access::wrap(std::move(node));
}

}  // namespace mulki
