#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "chemtyper/common.hpp"

namespace chemtyper {

// Dense 64-bit float tensor (rank 1 or 2, row-major) with a dynamic
// reverse-mode gradient tape. Tensor is a cheap shared handle; every
// operation that touches a requires_grad input records its backward
// closure on the result node, and backward() replays the tape in reverse
// topological order, accumulating (never overwriting) gradients.
class Tensor {
public:
    struct Node {
        std::vector<std::size_t> shape;
        std::vector<double> data;
        std::vector<double> grad;  // same length as data when allocated
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void()> backward_fn;
    };

    Tensor() = default;

    static Tensor from_data(std::vector<double> data, std::vector<std::size_t> shape) {
        check_shape(shape, data.size());
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor zeros(std::vector<std::size_t> shape) {
        const std::size_t count = numel_of(shape);
        return from_data(std::vector<double>(count, 0.0), std::move(shape));
    }

    static Tensor full(std::vector<std::size_t> shape, double value) {
        const std::size_t count = numel_of(shape);
        return from_data(std::vector<double>(count, value), std::move(shape));
    }

    static Tensor scalar(double value) { return from_data({value}, {1}); }

    /// Trainable tensor with N(0, stddev^2) entries.
    static Tensor param(std::vector<std::size_t> shape, RandomSource& rng, double stddev) {
        const std::size_t count = numel_of(shape);
        std::vector<double> data(count);
        for (double& x : data) x = rng.gaussian(0.0, stddev);
        Tensor t = from_data(std::move(data), std::move(shape));
        t.set_requires_grad(true);
        return t;
    }

    static Tensor param_zeros(std::vector<std::size_t> shape) {
        Tensor t = zeros(std::move(shape));
        t.set_requires_grad(true);
        return t;
    }

    static Tensor param_full(std::vector<std::size_t> shape, double value) {
        Tensor t = full(std::move(shape), value);
        t.set_requires_grad(true);
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node().shape; }
    std::size_t rank() const { return node().shape.size(); }
    std::size_t numel() const { return node().data.size(); }

    std::size_t rows() const {
        require(rank() == 2, "rows(): tensor is not rank 2");
        return node().shape[0];
    }
    std::size_t cols() const {
        require(rank() == 2, "cols(): tensor is not rank 2");
        return node().shape[1];
    }

    std::vector<double>& data() { return node().data; }
    const std::vector<double>& data() const { return node().data; }

    bool has_grad() const { return defined() && !n_->grad.empty(); }
    std::vector<double>& grad() {
        require(has_grad(), "grad(): no gradient buffer allocated");
        return n_->grad;
    }
    const std::vector<double>& grad() const {
        require(has_grad(), "grad(): no gradient buffer allocated");
        return n_->grad;
    }

    bool requires_grad() const { return defined() && n_->requires_grad; }
    void set_requires_grad(bool on) {
        Node& n = node();
        n.requires_grad = on;
        if (on && n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
    }

    void zero_grad() {
        if (has_grad()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }

    double item() const {
        require(numel() == 1, "item(): tensor is not scalar");
        return node().data[0];
    }

    double at(std::size_t i) const { return node().data.at(i); }
    double at(std::size_t i, std::size_t j) const {
        require(rank() == 2, "at(i,j): tensor is not rank 2");
        return node().data.at(i * cols() + j);
    }

    Node* raw() const { return n_.get(); }
    const std::shared_ptr<Node>& handle() const { return n_; }

    static std::string shape_str(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
        os << ']';
        return os.str();
    }

    // Result node wiring: allocates grad and records parents + closure only
    // when some input is on the tape.
    static Tensor make_result(std::vector<double> data, std::vector<std::size_t> shape,
                              std::vector<Tensor> inputs,
                              std::function<void()> backward_fn) {
        Tensor out = from_data(std::move(data), std::move(shape));
        bool track = false;
        for (const Tensor& t : inputs) track = track || t.requires_grad();
        if (track) {
            out.set_requires_grad(true);
            for (const Tensor& t : inputs) out.n_->parents.push_back(t.n_);
            out.n_->backward_fn = std::move(backward_fn);
        }
        return out;
    }

private:
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    Node& node() {
        require(defined(), "operation on empty tensor");
        return *n_;
    }
    const Node& node() const {
        require(defined(), "operation on empty tensor");
        return *n_;
    }

    static void require(bool cond, const char* msg) {
        if (!cond) throw ContractError(msg);
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        if (shape.empty()) throw DimensionError("tensor shape must be non-empty");
        std::size_t count = 1;
        for (std::size_t dim : shape) {
            if (dim == 0) throw DimensionError("tensor dimensions must be positive");
            count *= dim;
        }
        return count;
    }

    static void check_shape(const std::vector<std::size_t>& shape, std::size_t len) {
        if (numel_of(shape) != len) {
            throw DimensionError("data length " + std::to_string(len) +
                                 " does not match shape " + shape_str(shape));
        }
    }

    std::shared_ptr<Node> n_;

    friend void backward(const Tensor&);
};

namespace detail {

inline void dim_check(bool ok, const std::string& op, const Tensor& a, const Tensor& b) {
    if (!ok) {
        throw DimensionError(op + ": incompatible shapes " + Tensor::shape_str(a.shape()) +
                             " and " + Tensor::shape_str(b.shape()));
    }
}

inline void dim_check(bool ok, const std::string& op, const Tensor& a) {
    if (!ok) {
        throw DimensionError(op + ": unsupported shape " + Tensor::shape_str(a.shape()));
    }
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
inline double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
/// into every requires_grad tensor reachable from the loss.
inline void backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: empty tensor");
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            Tensor::shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss is not on the tape (no requires_grad input)");
    }

    // Iterative post-order DFS; reverse gives a valid topological order.
    std::vector<Tensor::Node*> order;
    std::unordered_set<Tensor::Node*> visited;
    struct Frame {
        Tensor::Node* node;
        std::size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.raw(), 0});
    visited.insert(loss.raw());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.node->parents.size()) {
            Tensor::Node* child = f.node->parents[f.next_child++].get();
            if (child->requires_grad && visited.insert(child).second) {
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.raw()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

// ---------------------------------------------------------------------------
// Primitives. Each returns a fresh tensor and registers its backward closure.
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::dim_check(a.shape() == b.shape(), "add", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    Tensor result = Tensor::make_result(std::move(out), a.shape(), {a, b}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* r = result.raw();
        Tensor::Node* an = a.raw();
        Tensor::Node* bn = b.raw();
        result.raw()->backward_fn = [r, an, bn] {
            for (std::size_t i = 0; i < r->grad.size(); ++i) {
                if (an->requires_grad) an->grad[i] += r->grad[i];
                if (bn->requires_grad) bn->grad[i] += r->grad[i];
            }
        };
    }
    return result;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::dim_check(a.shape() == b.shape(), "mul", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    Tensor result = Tensor::make_result(std::move(out), a.shape(), {a, b}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* r = result.raw();
        Tensor::Node* an = a.raw();
        Tensor::Node* bn = b.raw();
        result.raw()->backward_fn = [r, an, bn] {
            for (std::size_t i = 0; i < r->grad.size(); ++i) {
                if (an->requires_grad) an->grad[i] += r->grad[i] * bn->data[i];
                if (bn->requires_grad) bn->grad[i] += r->grad[i] * an->data[i];
            }
        };
    }
    return result;
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    Tensor result = Tensor::make_result(std::move(out), a.shape(), {a}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* r = result.raw();
        Tensor::Node* an = a.raw();
        result.raw()->backward_fn = [r, an, c] {
            for (std::size_t i = 0; i < r->grad.size(); ++i) an->grad[i] += c * r->grad[i];
        };
    }
    return result;
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::dim_check(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(), "matmul", a, b);
    const std::size_t r = a.rows(), k_dim = a.cols(), c = b.cols();
    std::vector<double> out(r * c, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double aik = a.data()[i * k_dim + k];
            if (aik == 0.0) continue;
            const double* brow = b.data().data() + k * c;
            double* orow = out.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) orow[j] += aik * brow[j];
        }
    }
    Tensor result = Tensor::make_result(std::move(out), {r, c}, {a, b}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* an = a.raw();
        Tensor::Node* bn = b.raw();
        result.raw()->backward_fn = [rn, an, bn, r, k_dim, c] {
            if (an->requires_grad) {
                // dA += dC * B^T
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                        const double g = rn->grad[i * c + j];
                        if (g == 0.0) continue;
                        for (std::size_t k = 0; k < k_dim; ++k) {
                            an->grad[i * k_dim + k] += g * bn->data[k * c + j];
                        }
                    }
                }
            }
            if (bn->requires_grad) {
                // dB += A^T * dC
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t k = 0; k < k_dim; ++k) {
                        const double aik = an->data[i * k_dim + k];
                        if (aik == 0.0) continue;
                        for (std::size_t j = 0; j < c; ++j) {
                            bn->grad[k * c + j] += aik * rn->grad[i * c + j];
                        }
                    }
                }
            }
        };
    }
    return result;
}

inline Tensor transpose(const Tensor& a) {
    detail::dim_check(a.rank() == 2, "transpose", a);
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
    Tensor result = Tensor::make_result(std::move(out), {c, r}, {a}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* an = a.raw();
        result.raw()->backward_fn = [rn, an, r, c] {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += rn->grad[j * r + i];
        };
    }
    return result;
}

/// Broadcast-add a length-c row vector to every row of an r x c matrix.
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    detail::dim_check(m.rank() == 2 && v.rank() == 1 && v.numel() == m.cols(), "add_rowvec", m, v);
    const std::size_t r = m.rows(), c = m.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] + v.data()[j];
    Tensor result = Tensor::make_result(std::move(out), {r, c}, {m, v}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* mn = m.raw();
        Tensor::Node* vn = v.raw();
        result.raw()->backward_fn = [rn, mn, vn, r, c] {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    const double g = rn->grad[i * c + j];
                    if (mn->requires_grad) mn->grad[i * c + j] += g;
                    if (vn->requires_grad) vn->grad[j] += g;
                }
            }
        };
    }
    return result;
}

/// Concatenation along the last axis (vectors end to end; matrices by columns).
inline Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.rank() == 1 && b.rank() == 1) {
        const std::size_t na = a.numel(), nb = b.numel();
        std::vector<double> out(na + nb);
        std::copy(a.data().begin(), a.data().end(), out.begin());
        std::copy(b.data().begin(), b.data().end(), out.begin() + static_cast<std::ptrdiff_t>(na));
        Tensor result = Tensor::make_result(std::move(out), {na + nb}, {a, b}, nullptr);
        if (result.requires_grad()) {
            Tensor::Node* rn = result.raw();
            Tensor::Node* an = a.raw();
            Tensor::Node* bn = b.raw();
            result.raw()->backward_fn = [rn, an, bn, na, nb] {
                if (an->requires_grad)
                    for (std::size_t i = 0; i < na; ++i) an->grad[i] += rn->grad[i];
                if (bn->requires_grad)
                    for (std::size_t i = 0; i < nb; ++i) bn->grad[i] += rn->grad[na + i];
            };
        }
        return result;
    }
    detail::dim_check(a.rank() == 2 && b.rank() == 2 && a.rows() == b.rows(), "concat", a, b);
    const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols();
    std::vector<double> out(r * (ca + cb));
    for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(i * ca), ca,
                    out.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb)));
        std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(i * cb), cb,
                    out.begin() + static_cast<std::ptrdiff_t>(i * (ca + cb) + ca));
    }
    Tensor result = Tensor::make_result(std::move(out), {r, ca + cb}, {a, b}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* an = a.raw();
        Tensor::Node* bn = b.raw();
        result.raw()->backward_fn = [rn, an, bn, r, ca, cb] {
            const std::size_t co = ca + cb;
            for (std::size_t i = 0; i < r; ++i) {
                if (an->requires_grad)
                    for (std::size_t j = 0; j < ca; ++j) an->grad[i * ca + j] += rn->grad[i * co + j];
                if (bn->requires_grad)
                    for (std::size_t j = 0; j < cb; ++j) bn->grad[i * cb + j] += rn->grad[i * co + ca + j];
            }
        };
    }
    return result;
}

inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat: no tensors given");
    Tensor out = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) out = concat(out, parts[i]);
    return out;
}

/// Vertical stack of two matrices with equal column counts.
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    detail::dim_check(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(), "concat_rows", a, b);
    const std::size_t ra = a.rows(), rb = b.rows(), c = a.cols();
    std::vector<double> out(a.numel() + b.numel());
    std::copy(a.data().begin(), a.data().end(), out.begin());
    std::copy(b.data().begin(), b.data().end(), out.begin() + static_cast<std::ptrdiff_t>(a.numel()));
    Tensor result = Tensor::make_result(std::move(out), {ra + rb, c}, {a, b}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* an = a.raw();
        Tensor::Node* bn = b.raw();
        const std::size_t na = a.numel();
        result.raw()->backward_fn = [rn, an, bn, na] {
            if (an->requires_grad)
                for (std::size_t i = 0; i < na; ++i) an->grad[i] += rn->grad[i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += rn->grad[na + i];
        };
    }
    return result;
}

/// Mean over one axis of a matrix: axis 0 gives column means (length cols),
/// axis 1 gives row means (length rows).
inline Tensor mean_axis(const Tensor& m, int axis) {
    detail::dim_check(m.rank() == 2, "mean_axis", m);
    if (axis != 0 && axis != 1) throw ContractError("mean_axis: axis must be 0 or 1");
    const std::size_t r = m.rows(), c = m.cols();
    std::vector<double> out;
    if (axis == 0) {
        out.assign(c, 0.0);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[j] += m.data()[i * c + j];
        for (double& x : out) x /= static_cast<double>(r);
    } else {
        out.assign(r, 0.0);
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) out[i] += m.data()[i * c + j];
            out[i] /= static_cast<double>(c);
        }
    }
    Tensor result = Tensor::make_result(std::move(out), {axis == 0 ? c : r}, {m}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* mn = m.raw();
        result.raw()->backward_fn = [rn, mn, r, c, axis] {
            if (axis == 0) {
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        mn->grad[i * c + j] += rn->grad[j] / static_cast<double>(r);
            } else {
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        mn->grad[i * c + j] += rn->grad[i] / static_cast<double>(c);
            }
        };
    }
    return result;
}

/// Copy of row i of a matrix as a rank-1 tensor.
inline Tensor row(const Tensor& m, std::size_t i) {
    detail::dim_check(m.rank() == 2, "row", m);
    if (i >= m.rows()) {
        throw IndexError("row: index " + std::to_string(i) + " out of range for " +
                         Tensor::shape_str(m.shape()));
    }
    const std::size_t c = m.cols();
    std::vector<double> out(m.data().begin() + static_cast<std::ptrdiff_t>(i * c),
                            m.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
    Tensor result = Tensor::make_result(std::move(out), {c}, {m}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* mn = m.raw();
        result.raw()->backward_fn = [rn, mn, i, c] {
            for (std::size_t j = 0; j < c; ++j) mn->grad[i * c + j] += rn->grad[j];
        };
    }
    return result;
}

/// Columns [c0, c1) of a matrix.
inline Tensor slice_cols(const Tensor& m, std::size_t c0, std::size_t c1) {
    detail::dim_check(m.rank() == 2, "slice_cols", m);
    if (!(c0 < c1 && c1 <= m.cols())) {
        throw IndexError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + Tensor::shape_str(m.shape()));
    }
    const std::size_t r = m.rows(), c = m.cols(), w = c1 - c0;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = m.data()[i * c + c0 + j];
    Tensor result = Tensor::make_result(std::move(out), {r, w}, {m}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* mn = m.raw();
        result.raw()->backward_fn = [rn, mn, r, c, c0, w] {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j) mn->grad[i * c + c0 + j] += rn->grad[i * w + j];
        };
    }
    return result;
}

inline Tensor tanh(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
    Tensor result = Tensor::make_result(std::move(out), a.shape(), {a}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* an = a.raw();
        result.raw()->backward_fn = [rn, an] {
            for (std::size_t i = 0; i < rn->grad.size(); ++i) {
                const double y = rn->data[i];
                an->grad[i] += rn->grad[i] * (1.0 - y * y);
            }
        };
    }
    return result;
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid(a.data()[i]);
    Tensor result = Tensor::make_result(std::move(out), a.shape(), {a}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* an = a.raw();
        result.raw()->backward_fn = [rn, an] {
            for (std::size_t i = 0; i < rn->grad.size(); ++i) {
                const double y = rn->data[i];
                an->grad[i] += rn->grad[i] * y * (1.0 - y);
            }
        };
    }
    return result;
}

/// Row-wise softmax (a rank-1 tensor is one row). Max-shifted for stability.
inline Tensor softmax_rows(const Tensor& a) {
    detail::dim_check(a.rank() == 1 || a.rank() == 2, "softmax_rows", a);
    const std::size_t r = a.rank() == 2 ? a.rows() : 1;
    const std::size_t c = a.rank() == 2 ? a.cols() : a.numel();
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < r; ++i) {
        const double* in = a.data().data() + i * c;
        double mx = in[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(in[j] - mx);
            z += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
    }
    Tensor result = Tensor::make_result(std::move(out), a.shape(), {a}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* an = a.raw();
        result.raw()->backward_fn = [rn, an, r, c] {
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j)
                    dot += rn->grad[i * c + j] * rn->data[i * c + j];
                for (std::size_t j = 0; j < c; ++j) {
                    const double y = rn->data[i * c + j];
                    an->grad[i * c + j] += y * (rn->grad[i * c + j] - dot);
                }
            }
        };
    }
    return result;
}

/// Row-wise layer normalization with learnable gain/bias:
/// y = gamma * (x - mean) / sqrt(var + eps) + beta, var biased (divide by c).
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    detail::dim_check(x.rank() == 1 || x.rank() == 2, "layer_norm", x);
    const std::size_t r = x.rank() == 2 ? x.rows() : 1;
    const std::size_t c = x.rank() == 2 ? x.cols() : x.numel();
    detail::dim_check(gamma.rank() == 1 && gamma.numel() == c, "layer_norm", x, gamma);
    detail::dim_check(beta.rank() == 1 && beta.numel() == c, "layer_norm", x, beta);

    std::vector<double> out(x.numel());
    std::vector<double> inv_sigma(r), xhat(x.numel());
    for (std::size_t i = 0; i < r; ++i) {
        const double* in = x.data().data() + i * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += in[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = in[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        inv_sigma[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (in[j] - mean) * inv_sigma[i];
            out[i * c + j] = gamma.data()[j] * xhat[i * c + j] + beta.data()[j];
        }
    }
    Tensor result = Tensor::make_result(std::move(out), x.shape(), {x, gamma, beta}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* xn = x.raw();
        Tensor::Node* gn = gamma.raw();
        Tensor::Node* bn = beta.raw();
        result.raw()->backward_fn = [rn, xn, gn, bn, r, c, inv_sigma = std::move(inv_sigma),
                                     xhat = std::move(xhat)] {
            for (std::size_t i = 0; i < r; ++i) {
                double mean_g = 0.0, mean_gx = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double gy = rn->grad[i * c + j] * gn->data[j];
                    mean_g += gy;
                    mean_gx += gy * xhat[i * c + j];
                }
                mean_g /= static_cast<double>(c);
                mean_gx /= static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const double gy = rn->grad[i * c + j] * gn->data[j];
                    if (xn->requires_grad) {
                        xn->grad[i * c + j] +=
                            inv_sigma[i] * (gy - mean_g - xhat[i * c + j] * mean_gx);
                    }
                    if (gn->requires_grad)
                        gn->grad[j] += rn->grad[i * c + j] * xhat[i * c + j];
                    if (bn->requires_grad) bn->grad[j] += rn->grad[i * c + j];
                }
            }
        };
    }
    return result;
}

/// Gather rows of an embedding table; ids outside [0, rows) raise IndexError.
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    detail::dim_check(table.rank() == 2, "embedding", table);
    if (ids.empty()) throw ContractError("embedding: empty id list");
    const std::size_t v = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw IndexError("embedding: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(v) + ")");
        }
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(id) * static_cast<std::ptrdiff_t>(d),
                    d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    Tensor result = Tensor::make_result(std::move(out), {ids.size(), d}, {table}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* tn = table.raw();
        result.raw()->backward_fn = [rn, tn, ids, d] {
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const std::size_t base = static_cast<std::size_t>(ids[i]) * d;
                for (std::size_t j = 0; j < d; ++j) tn->grad[base + j] += rn->grad[i * d + j];
            }
        };
    }
    return result;
}

/// Sum of all entries as a scalar.
inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    Tensor result = Tensor::make_result({s}, {1}, {a}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* an = a.raw();
        result.raw()->backward_fn = [rn, an] {
            for (double& g : an->grad) g += rn->grad[0];
        };
    }
    return result;
}

/// Multi-label soft margin loss over one logit vector:
///   L = (1/C) sum_i [ y_i * softplus(-x_i) + (1 - y_i) * softplus(x_i) ]
/// which is the negated per-class binary cross entropy on sigmoid logits,
/// computed in log-sum-exp form. dL/dx_i = (sigmoid(x_i) - y_i) / C.
inline Tensor multilabel_soft_margin_loss(const Tensor& logits, const std::vector<double>& y) {
    detail::dim_check(logits.rank() == 1, "multilabel_soft_margin_loss", logits);
    if (logits.numel() != y.size()) {
        throw DimensionError("multilabel_soft_margin_loss: " + std::to_string(logits.numel()) +
                             " logits vs " + std::to_string(y.size()) + " labels");
    }
    const std::size_t c = y.size();
    for (double v : y) {
        if (v != 0.0 && v != 1.0)
            throw ContractError("multilabel_soft_margin_loss: labels must be binary");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        const double x = logits.data()[i];
        total += y[i] * detail::softplus(-x) + (1.0 - y[i]) * detail::softplus(x);
    }
    total /= static_cast<double>(c);
    Tensor result = Tensor::make_result({total}, {1}, {logits}, nullptr);
    if (result.requires_grad()) {
        Tensor::Node* rn = result.raw();
        Tensor::Node* ln = logits.raw();
        result.raw()->backward_fn = [rn, ln, y, c] {
            for (std::size_t i = 0; i < c; ++i) {
                ln->grad[i] += rn->grad[0] * (detail::stable_sigmoid(ln->data[i]) - y[i]) /
                               static_cast<double>(c);
            }
        };
    }
    return result;
}

}  // namespace chemtyper
