#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Graph records one forward pass; backward() walks it in reverse
// and accumulates parameter gradients into Parameter::grad.

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mgm/errors.hpp"

namespace mgm::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Parameter {
    std::string name;
    Matrix<T> value;
    Matrix<T> grad;

    Parameter(std::string n, Matrix<T> v)
        : name(std::move(n)), value(std::move(v)), grad(Matrix<T>::Zero(value.rows(), value.cols())) {}
};

// Owns parameters with stable addresses, in registration order.
template <typename T>
class ParameterStore {
public:
    Parameter<T>& add(std::string name, Matrix<T> value) {
        return params_.emplace_back(std::move(name), std::move(value));
    }

    void zero_grad() {
        for (auto& p : params_) p.grad.setZero();
    }

    Parameter<T>* find(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t size() const { return params_.size(); }

private:
    std::deque<Parameter<T>> params_;
};

struct Var {
    int id = -1;
};

template <typename T>
class Graph {
public:
    using Mat = Matrix<T>;

    // With record = false no backward closures are kept (inference).
    explicit Graph(bool record = true) : record_(record) {}

    Var param(Parameter<T>& p) {
        Var v = push(p.value, record_);
        nodes_[v.id].param = &p;
        return v;
    }

    Var constant(Mat value) { return push(std::move(value), false); }

    const Mat& value(Var v) const { return nodes_[v.id].value; }
    T scalar(Var v) const { return nodes_[v.id].value(0, 0); }
    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

    // ---- elementwise / linear ----

    Var matmul(Var a, Var b) {
        Var out = push(value(a) * value(b), any(a, b));
        on_backward(out, [a, b, out](Graph& g) {
            const Mat& go = g.grad_of(out);
            if (g.needs_grad(a)) g.acc(a).noalias() += go * g.value(b).transpose();
            if (g.needs_grad(b)) g.acc(b).noalias() += g.value(a).transpose() * go;
        });
        return out;
    }

    // a * b^T
    Var matmul_nt(Var a, Var b) {
        Var out = push(value(a) * value(b).transpose(), any(a, b));
        on_backward(out, [a, b, out](Graph& g) {
            const Mat& go = g.grad_of(out);
            if (g.needs_grad(a)) g.acc(a).noalias() += go * g.value(b);
            if (g.needs_grad(b)) g.acc(b).noalias() += go.transpose() * g.value(a);
        });
        return out;
    }

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        Var out = push(value(a) + value(b), any(a, b));
        on_backward(out, [a, b, out](Graph& g) {
            if (g.needs_grad(a)) g.acc(a) += g.grad_of(out);
            if (g.needs_grad(b)) g.acc(b) += g.grad_of(out);
        });
        return out;
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        Var out = push(value(a) - value(b), any(a, b));
        on_backward(out, [a, b, out](Graph& g) {
            if (g.needs_grad(a)) g.acc(a) += g.grad_of(out);
            if (g.needs_grad(b)) g.acc(b) -= g.grad_of(out);
        });
        return out;
    }

    // x + bias, bias is 1 x cols broadcast over rows.
    Var add_row(Var x, Var bias) {
        if (value(bias).rows() != 1 || value(bias).cols() != value(x).cols())
            throw InvalidArgument("add_row: bias shape mismatch");
        Var out = push(value(x).rowwise() + value(bias).row(0), any(x, bias));
        on_backward(out, [x, bias, out](Graph& g) {
            if (g.needs_grad(x)) g.acc(x) += g.grad_of(out);
            if (g.needs_grad(bias)) g.acc(bias) += g.grad_of(out).colwise().sum();
        });
        return out;
    }

    Var scale(Var x, T s) {
        Var out = push(value(x) * s, needs_grad(x));
        on_backward(out, [x, s, out](Graph& g) { g.acc(x) += g.grad_of(out) * s; });
        return out;
    }

    Var relu(Var x) {
        Var out = push(value(x).cwiseMax(T(0)), needs_grad(x));
        on_backward(out, [x, out](Graph& g) {
            g.acc(x).array() += g.grad_of(out).array() * (g.value(x).array() > T(0)).template cast<T>();
        });
        return out;
    }

    // Root-mean-square normalisation per row with a learned gain (no bias).
    Var rms_norm(Var x, Var gain, T eps = T(1e-6)) {
        const Mat& xv = value(x);
        const Eigen::Index n = xv.cols();
        Eigen::Matrix<T, Eigen::Dynamic, 1> inv(xv.rows());
        for (Eigen::Index r = 0; r < xv.rows(); ++r)
            inv(r) = T(1) / std::sqrt(xv.row(r).squaredNorm() / T(n) + eps);
        Mat normed = xv;
        for (Eigen::Index r = 0; r < xv.rows(); ++r) normed.row(r) *= inv(r);
        Mat outv = normed.array().rowwise() * value(gain).row(0).array();
        Var out = push(std::move(outv), any(x, gain));
        on_backward(out, [x, gain, out, inv, normed, n](Graph& g) {
            const Mat& go = g.grad_of(out);
            if (g.needs_grad(gain)) g.acc(gain) += (go.array() * normed.array()).colwise().sum().matrix();
            if (g.needs_grad(x)) {
                Mat gn = go.array().rowwise() * g.value(gain).row(0).array();
                Mat& gx = g.acc(x);
                for (Eigen::Index r = 0; r < gn.rows(); ++r) {
                    const T dot = gn.row(r).dot(normed.row(r)) / T(n);
                    gx.row(r) += inv(r) * (gn.row(r) - dot * normed.row(r));
                }
            }
        });
        return out;
    }

    // Row-wise softmax. With `causal`, entry (i, j) for j > i + offset is masked.
    Var softmax_rows(Var x, bool causal = false, Eigen::Index offset = 0) {
        const Mat& xv = value(x);
        Mat y(xv.rows(), xv.cols());
        for (Eigen::Index r = 0; r < xv.rows(); ++r) {
            const Eigen::Index limit = causal ? std::min<Eigen::Index>(r + offset + 1, xv.cols()) : xv.cols();
            const T mx = xv.row(r).head(limit).maxCoeff();
            T sum = 0;
            for (Eigen::Index c = 0; c < limit; ++c) {
                y(r, c) = std::exp(xv(r, c) - mx);
                sum += y(r, c);
            }
            for (Eigen::Index c = 0; c < limit; ++c) y(r, c) /= sum;
            for (Eigen::Index c = limit; c < xv.cols(); ++c) y(r, c) = 0;
        }
        Var out = push(std::move(y), needs_grad(x));
        on_backward(out, [x, out](Graph& g) {
            const Mat& yv = g.value(out);
            const Mat& go = g.grad_of(out);
            Mat& gx = g.acc(x);
            for (Eigen::Index r = 0; r < yv.rows(); ++r) {
                const T dot = go.row(r).dot(yv.row(r));
                gx.row(r).array() += yv.row(r).array() * (go.row(r).array() - dot);
            }
        });
        return out;
    }

    // ---- shape / indexing ----

    Var gather_rows(Var table, std::span<const int> ids) {
        const Mat& tv = value(table);
        Mat outv(static_cast<Eigen::Index>(ids.size()), tv.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= tv.rows()) throw InvalidArgument("gather_rows: index out of range");
            outv.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
        }
        std::vector<int> idx(ids.begin(), ids.end());
        Var out = push(std::move(outv), needs_grad(table));
        on_backward(out, [table, out, idx](Graph& g) {
            const Mat& go = g.grad_of(out);
            Mat& gt = g.acc(table);
            for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += go.row(static_cast<Eigen::Index>(i));
        });
        return out;
    }

    Var rows(Var x, Eigen::Index start, Eigen::Index count) {
        Var out = push(value(x).middleRows(start, count), needs_grad(x));
        on_backward(out, [x, out, start, count](Graph& g) {
            g.acc(x).middleRows(start, count) += g.grad_of(out);
        });
        return out;
    }

    Var cols(Var x, Eigen::Index start, Eigen::Index count) {
        Var out = push(value(x).middleCols(start, count), needs_grad(x));
        on_backward(out, [x, out, start, count](Graph& g) {
            g.acc(x).middleCols(start, count) += g.grad_of(out);
        });
        return out;
    }

    Var concat_cols(const std::vector<Var>& parts) {
        Eigen::Index rows = value(parts.front()).rows(), total = 0;
        bool ng = false;
        for (Var p : parts) {
            if (value(p).rows() != rows) throw InvalidArgument("concat_cols: row mismatch");
            total += value(p).cols();
            ng = ng || needs_grad(p);
        }
        Mat outv(rows, total);
        Eigen::Index at = 0;
        for (Var p : parts) {
            outv.middleCols(at, value(p).cols()) = value(p);
            at += value(p).cols();
        }
        Var out = push(std::move(outv), ng);
        on_backward(out, [parts, out](Graph& g) {
            Eigen::Index at2 = 0;
            for (Var p : parts) {
                const Eigen::Index c = g.value(p).cols();
                if (g.needs_grad(p)) g.acc(p) += g.grad_of(out).middleCols(at2, c);
                at2 += c;
            }
        });
        return out;
    }

    // Rows [t*stride - pad, t*stride - pad + kernel) flattened into one row per
    // output step; rows outside [0, T) read as zero.
    Var unfold(Var x, int kernel, int stride, int pad) {
        const Mat& xv = value(x);
        const Eigen::Index len = xv.rows(), ch = xv.cols();
        const Eigen::Index steps = (len + 2 * pad - kernel) / stride + 1;
        if (steps < 1) throw InvalidArgument("unfold: input shorter than kernel");
        Mat outv = Mat::Zero(steps, kernel * ch);
        for (Eigen::Index t = 0; t < steps; ++t)
            for (int k = 0; k < kernel; ++k) {
                const Eigen::Index src = t * stride - pad + k;
                if (src >= 0 && src < len) outv.block(t, k * ch, 1, ch) = xv.row(src);
            }
        Var out = push(std::move(outv), needs_grad(x));
        on_backward(out, [x, out, kernel, stride, pad, len, ch, steps](Graph& g) {
            const Mat& go = g.grad_of(out);
            Mat& gx = g.acc(x);
            for (Eigen::Index t = 0; t < steps; ++t)
                for (int k = 0; k < kernel; ++k) {
                    const Eigen::Index src = t * stride - pad + k;
                    if (src >= 0 && src < len) gx.row(src) += go.block(t, k * ch, 1, ch);
                }
        });
        return out;
    }

    // Nearest-neighbour temporal upsampling: each row repeated `factor` times.
    Var repeat_rows(Var x, int factor) {
        const Mat& xv = value(x);
        Mat outv(xv.rows() * factor, xv.cols());
        for (Eigen::Index r = 0; r < xv.rows(); ++r)
            for (int f = 0; f < factor; ++f) outv.row(r * factor + f) = xv.row(r);
        Var out = push(std::move(outv), needs_grad(x));
        on_backward(out, [x, out, factor](Graph& g) {
            const Mat& go = g.grad_of(out);
            Mat& gx = g.acc(x);
            for (Eigen::Index r = 0; r < gx.rows(); ++r)
                for (int f = 0; f < factor; ++f) gx.row(r) += go.row(r * factor + f);
        });
        return out;
    }

    // x + B where B(i, j) = table(index[i * cols + j], column). Used for
    // learned relative-position attention biases.
    Var add_table_bias(Var x, Var table, std::shared_ptr<const std::vector<int>> index, Eigen::Index column) {
        const Mat& xv = value(x);
        const Mat& tv = value(table);
        if (static_cast<Eigen::Index>(index->size()) != xv.size())
            throw InvalidArgument("add_table_bias: index size mismatch");
        Mat outv = xv;
        for (Eigen::Index i = 0; i < xv.size(); ++i) outv.data()[i] += tv((*index)[static_cast<std::size_t>(i)], column);
        Var out = push(std::move(outv), any(x, table));
        on_backward(out, [x, table, out, index, column](Graph& g) {
            const Mat& go = g.grad_of(out);
            if (g.needs_grad(x)) g.acc(x) += go;
            if (g.needs_grad(table)) {
                Mat& gt = g.acc(table);
                for (Eigen::Index i = 0; i < go.size(); ++i) gt((*index)[static_cast<std::size_t>(i)], column) += go.data()[i];
            }
        });
        return out;
    }

    // ---- gradient routing ----

    Var detach(Var x) { return push(value(x), false); }

    // Forward value of `quantized`, gradient copied to `continuous` only.
    Var straight_through(Var continuous, Var quantized) {
        check_same(continuous, quantized, "straight_through");
        Var out = push(value(quantized), needs_grad(continuous));
        on_backward(out, [continuous, out](Graph& g) { g.acc(continuous) += g.grad_of(out); });
        return out;
    }

    // ---- losses (1 x 1 results) ----

    Var mse(Var a, Var b) {
        check_same(a, b, "mse");
        const T n = static_cast<T>(value(a).size());
        Mat diff = value(a) - value(b);
        Mat v(1, 1);
        v(0, 0) = diff.squaredNorm() / n;
        Var out = push(std::move(v), any(a, b));
        on_backward(out, [a, b, out, diff, n](Graph& g) {
            const T s = g.grad_of(out)(0, 0) * T(2) / n;
            if (g.needs_grad(a)) g.acc(a) += s * diff;
            if (g.needs_grad(b)) g.acc(b) -= s * diff;
        });
        return out;
    }

    // Summed token cross-entropy; rows whose target equals `ignore` contribute
    // nothing.
    Var cross_entropy_sum(Var logits, std::span<const int> targets, int ignore = -1) {
        const Mat& lv = value(logits);
        if (static_cast<Eigen::Index>(targets.size()) != lv.rows())
            throw InvalidArgument("cross_entropy: target count mismatch");
        Mat probs(lv.rows(), lv.cols());
        T total = 0;
        std::vector<int> tgt(targets.begin(), targets.end());
        for (Eigen::Index r = 0; r < lv.rows(); ++r) {
            const T mx = lv.row(r).maxCoeff();
            probs.row(r) = (lv.row(r).array() - mx).exp();
            const T sum = probs.row(r).sum();
            probs.row(r) /= sum;
            if (tgt[r] == ignore) continue;
            if (tgt[r] < 0 || tgt[r] >= lv.cols()) throw InvalidArgument("cross_entropy: target out of range");
            total += -(lv(r, tgt[r]) - mx - std::log(sum));
        }
        Mat v(1, 1);
        v(0, 0) = total;
        Var out = push(std::move(v), needs_grad(logits));
        on_backward(out, [logits, out, probs, tgt, ignore](Graph& g) {
            const T s = g.grad_of(out)(0, 0);
            Mat& gl = g.acc(logits);
            for (Eigen::Index r = 0; r < probs.rows(); ++r) {
                if (tgt[r] == ignore) continue;
                gl.row(r) += s * probs.row(r);
                gl(r, tgt[r]) -= s;
            }
        });
        return out;
    }

    void backward(Var loss) {
        if (!record_) throw InvalidArgument("backward on a non-recording graph");
        if (value(loss).size() != 1) throw InvalidArgument("backward needs a scalar");
        acc(loss).setConstant(T(1));
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.has_grad) continue;
            if (n.back) n.back(*this);
            if (n.param) n.param->grad += n.grad;
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool has_grad = false;
        bool needs_grad = false;
        Parameter<T>* param = nullptr;
        std::function<void(Graph&)> back;
    };

    Var push(Mat v, bool needs) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs && record_;
        nodes_.push_back(std::move(n));
        return {static_cast<int>(nodes_.size()) - 1};
    }

    template <typename F>
    void on_backward(Var out, F&& f) {
        if (nodes_[out.id].needs_grad) nodes_[out.id].back = std::forward<F>(f);
    }

    bool any(Var a, Var b) const { return needs_grad(a) || needs_grad(b); }

    void check_same(Var a, Var b, const char* op) const {
        if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
            throw InvalidArgument(std::string(op) + ": shape mismatch");
    }

    Mat& acc(Var v) {
        Node& n = nodes_[v.id];
        if (!n.has_grad) {
            n.grad = Mat::Zero(n.value.rows(), n.value.cols());
            n.has_grad = true;
        }
        return n.grad;
    }

    const Mat& grad_of(Var v) { return acc(v); }

    bool record_;
    std::vector<Node> nodes_;
};

}  // namespace mgm::nn
