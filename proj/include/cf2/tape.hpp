#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cf2/error.hpp"
#include "cf2/tensor.hpp"

namespace cf2 {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t index = std::numeric_limits<std::size_t>::max();

    const Matrix& value() const;
    bool requires_grad() const;
};

/// Receives the node's output value and its gradient, and accumulates into the
/// gradients of its parents. A null slot means that parent needs no gradient.
using BackwardFn =
    std::function<void(const Matrix& out, const Matrix& grad_out, std::span<Matrix* const> parent_grads)>;

inline void add_into(Matrix& dst, const Matrix& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

/// Linear record of matrix operations supporting one reverse sweep.
///
/// Nodes are appended in evaluation order, so the record is already a
/// topological order and backward() walks it in reverse. A tape is owned by one
/// thread; independent tapes may run concurrently.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value) { return push(std::move(value), {}, nullptr, false, false); }

    Var parameter(Matrix value) { return push(std::move(value), {}, nullptr, true, true); }

    /// Appends an operation. `backward` may be empty when no parent needs a gradient.
    Var record(Matrix value, std::vector<Var> parents, BackwardFn backward) {
        bool needs = false;
        std::vector<std::size_t> idx;
        idx.reserve(parents.size());
        for (const Var& p : parents) {
            check_owned(p);
            idx.push_back(p.index);
            needs = needs || nodes_[p.index].requires_grad;
        }
        if (!value.all_finite()) {
            throw std::domain_error("tape: non-finite value produced by operation #" +
                                    std::to_string(nodes_.size()));
        }
        return push(std::move(value), std::move(idx), needs ? std::move(backward) : nullptr, needs, false);
    }

    const Matrix& value(Var v) const {
        check_owned(v);
        return nodes_[v.index].value;
    }
    bool requires_grad(Var v) const {
        check_owned(v);
        return nodes_[v.index].requires_grad;
    }
    std::size_t size() const noexcept { return nodes_.size(); }

    class Gradients {
    public:
        /// Gradient of the loss with respect to a parameter. Parameters the
        /// loss does not depend on get a zero matrix.
        const Matrix& operator[](Var p) const {
            if (p.tape != tape_ || p.index >= grads_.size() || !is_param_[p.index]) {
                throw UsageError("gradients: variable is not a parameter of this tape");
            }
            return grads_[p.index];
        }

    private:
        friend class Tape;
        const Tape* tape_ = nullptr;
        std::vector<Matrix> grads_;
        std::vector<bool> is_param_;
    };

    /// Reverse sweep from a 1x1 loss recorded on this tape. Operations are
    /// visited in exact reverse order of recording.
    Gradients backward(Var loss) {
        if (loss.tape != this || loss.index >= nodes_.size()) {
            throw UsageError("backward: loss is not recorded on this tape");
        }
        const Matrix& lv = nodes_[loss.index].value;
        if (lv.rows() != 1 || lv.cols() != 1) {
            throw UsageError("backward: loss must be 1x1, got " + lv.shape());
        }
        Gradients g;
        g.tape_ = this;
        g.grads_.resize(nodes_.size());
        g.is_param_.resize(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            g.is_param_[i] = nodes_[i].is_parameter;
            if (nodes_[i].requires_grad) {
                g.grads_[i] = Matrix(nodes_[i].value.rows(), nodes_[i].value.cols());
            }
        }
        if (!nodes_[loss.index].requires_grad) return g;
        g.grads_[loss.index](0, 0) = 1.0;

        std::vector<Matrix*> slots;
        for (std::size_t i = loss.index + 1; i-- > 0;) {
            Node& node = nodes_[i];
            if (!node.backward) continue;
            slots.assign(node.parents.size(), nullptr);
            for (std::size_t k = 0; k < node.parents.size(); ++k) {
                const std::size_t p = node.parents[k];
                if (nodes_[p].requires_grad) slots[k] = &g.grads_[p];
            }
            node.backward(node.value, g.grads_[i], slots);
        }
        return g;
    }

private:
    struct Node {
        Matrix value;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        bool requires_grad = false;
        bool is_parameter = false;
    };

    Var push(Matrix value, std::vector<std::size_t> parents, BackwardFn fn, bool needs, bool param) {
        nodes_.push_back(Node{std::move(value), std::move(parents), std::move(fn), needs, param});
        return Var{this, nodes_.size() - 1};
    }

    void check_owned(Var v) const {
        if (v.tape != this || v.index >= nodes_.size()) {
            throw UsageError("tape: variable belongs to a different tape");
        }
    }

    // deque keeps element addresses stable, so backward closures may hold
    // references to operand values.
    std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }
inline bool Var::requires_grad() const { return tape->requires_grad(*this); }

// ---------------------------------------------------------------------------
// Differentiable primitives
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    Matrix out = matmul(av, bv);
    return a.tape->record(std::move(out), {a, b}, [&av, &bv](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
        if (pg[0]) add_into(*pg[0], matmul_nt(g, bv));
        if (pg[1]) add_into(*pg[1], matmul_tn(av, g));
    });
}

/// Row-major list of the positions where a square propagation matrix may be non-zero.
using Support = std::vector<std::pair<std::size_t, std::size_t>>;

/// a * b for an `a` that is zero outside `support`. Sums run in the same order
/// as the dense product, so values agree bit for bit; the gradient for `a` is
/// formed on the support only.
inline Var sparse_matmul(Var a, Var b, std::shared_ptr<const Support> support) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw ShapeError("sparse_matmul: cannot multiply " + av.shape() + " by " + bv.shape());
    }
    Matrix out(av.rows(), bv.cols());
    for (const auto& [i, k] : *support) {
        const double x = av(i, k);
        if (x == 0.0) continue;
        auto o = out.row(i);
        auto br = bv.row(k);
        for (std::size_t j = 0; j < o.size(); ++j) o[j] += x * br[j];
    }
    return a.tape->record(std::move(out), {a, b},
                          [&av, &bv, support](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
                              for (const auto& [i, k] : *support) {
                                  auto gi = g.row(i);
                                  if (pg[0]) {
                                      auto br = bv.row(k);
                                      double acc = 0.0;
                                      for (std::size_t j = 0; j < gi.size(); ++j) acc += gi[j] * br[j];
                                      (*pg[0])(i, k) += acc;
                                  }
                                  if (pg[1]) {
                                      const double x = av(i, k);
                                      auto o = pg[1]->row(k);
                                      for (std::size_t j = 0; j < gi.size(); ++j) o[j] += x * gi[j];
                                  }
                              }
                          });
}

inline Var add(Var a, Var b) {
    return a.tape->record(add(a.value(), b.value()), {a, b}, [](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
        if (pg[0]) add_into(*pg[0], g);
        if (pg[1]) add_into(*pg[1], g);
    });
}

inline Var sub(Var a, Var b) {
    return a.tape->record(sub(a.value(), b.value()), {a, b}, [](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
        if (pg[0]) add_into(*pg[0], g);
        if (pg[1]) for (std::size_t i = 0; i < g.size(); ++i) pg[1]->data()[i] -= g.data()[i];
    });
}

inline Var hadamard(Var a, Var b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    return a.tape->record(hadamard(av, bv), {a, b}, [&av, &bv](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
        if (pg[0]) add_into(*pg[0], hadamard(g, bv));
        if (pg[1]) add_into(*pg[1], hadamard(g, av));
    });
}

inline Var scale(Var a, double s) {
    return a.tape->record(map(a.value(), [s](double x) { return s * x; }), {a},
                          [s](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
                              auto o = pg[0]->data();
                              auto gi = g.data();
                              for (std::size_t i = 0; i < o.size(); ++i) o[i] += s * gi[i];
                          });
}

inline Var add_scalar(Var a, double s) {
    return a.tape->record(map(a.value(), [s](double x) { return x + s; }), {a},
                          [](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) { add_into(*pg[0], g); });
}

/// a + row broadcast over every row of a (bias add). `row` is 1 x a.cols().
inline Var add_row(Var a, Var row) {
    const Matrix& av = a.value();
    const Matrix& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
        throw ShapeError("add_row: shape mismatch " + av.shape() + " + " + rv.shape());
    }
    Matrix out = av;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
    return a.tape->record(std::move(out), {a, row}, [](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
        if (pg[0]) add_into(*pg[0], g);
        if (pg[1]) {
            Matrix& r = *pg[1];
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) r(0, j) += g(i, j);
        }
    });
}

/// Repeats a 1 x c row `n` times.
inline Var broadcast_rows(Var row, std::size_t n) {
    const Matrix& rv = row.value();
    if (rv.rows() != 1) throw ShapeError("broadcast_rows: expected a row, got " + rv.shape());
    Matrix out(n, rv.cols());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < rv.cols(); ++j) out(i, j) = rv(0, j);
    return row.tape->record(std::move(out), {row}, [](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
        Matrix& r = *pg[0];
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) r(0, j) += g(i, j);
    });
}

/// Elementwise max(x, 0). The subgradient at exactly 0 is 0.
inline Var relu(Var a) {
    const Matrix& av = a.value();
    return a.tape->record(map(av, [](double x) { return x > 0.0 ? x : 0.0; }), {a},
                          [&av](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
                              auto x = av.data();
                              auto gi = g.data();
                              auto out = pg[0]->data();
                              for (std::size_t i = 0; i < x.size(); ++i)
                                  if (x[i] > 0.0) out[i] += gi[i];
                          });
}

inline Var sigmoid(Var a) {
    return a.tape->record(map(a.value(), [](double x) { return sigmoid(x); }), {a},
                          [](const Matrix& yv, const Matrix& g, std::span<Matrix* const> pg) {
                              auto y = yv.data();
                              auto gi = g.data();
                              auto o = pg[0]->data();
                              for (std::size_t i = 0; i < y.size(); ++i) o[i] += gi[i] * y[i] * (1.0 - y[i]);
                          });
}

inline Var row_softmax(Var a) {
    return a.tape->record(row_softmax(a.value()), {a},
                          [](const Matrix& yv, const Matrix& g, std::span<Matrix* const> pg) {
                              Matrix& o = *pg[0];
                              for (std::size_t i = 0; i < yv.rows(); ++i) {
                                  double dot = 0.0;
                                  for (std::size_t j = 0; j < yv.cols(); ++j) dot += g(i, j) * yv(i, j);
                                  for (std::size_t j = 0; j < yv.cols(); ++j) o(i, j) += yv(i, j) * (g(i, j) - dot);
                              }
                          });
}

/// Scales every row to unit Euclidean length. All-zero rows stay zero.
inline Var row_l2_normalize(Var a) {
    const Matrix& av = a.value();
    Matrix out = av;
    std::vector<double> norm(av.rows(), 0.0);
    for (std::size_t i = 0; i < av.rows(); ++i) {
        double s = 0.0;
        for (double v : av.row(i)) s += v * v;
        norm[i] = std::sqrt(s);
        if (norm[i] > 0.0)
            for (double& v : out.row(i)) v /= norm[i];
    }
    return a.tape->record(std::move(out), {a},
                          [norm = std::move(norm)](const Matrix& y, const Matrix& g, std::span<Matrix* const> pg) {
                              Matrix& o = *pg[0];
                              for (std::size_t i = 0; i < y.rows(); ++i) {
                                  if (norm[i] == 0.0) continue;
                                  double dot = 0.0;
                                  for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                                  for (std::size_t j = 0; j < y.cols(); ++j)
                                      o(i, j) += (g(i, j) - dot * y(i, j)) / norm[i];
                              }
                          });
}

/// Column means: n x c -> 1 x c.
inline Var mean_rows(Var a) {
    const Matrix& av = a.value();
    if (av.rows() == 0) throw ShapeError("mean_rows: empty input");
    Matrix out(1, av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) out(0, j) += av(i, j);
    const double inv = 1.0 / static_cast<double>(av.rows());
    for (double& v : out.data()) v *= inv;
    const std::size_t n = av.rows();
    return a.tape->record(std::move(out), {a}, [n, inv](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
        Matrix& o = *pg[0];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) o(i, j) += g(0, j) * inv;
    });
}

inline Var sum(Var a) {
    Matrix out(1, 1, sum(a.value()));
    return a.tape->record(std::move(out), {a}, [](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
        const double s = g(0, 0);
        for (double& v : pg[0]->data()) v += s;
    });
}

/// Sum of absolute values. Subgradient at 0 is 0.
inline Var l1_norm(Var a) {
    const Matrix& av = a.value();
    double s = 0.0;
    for (double v : av.data()) s += std::abs(v);
    return a.tape->record(Matrix(1, 1, s), {a}, [&av](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
        auto x = av.data();
        auto o = pg[0]->data();
        const double s = g(0, 0);
        for (std::size_t i = 0; i < x.size(); ++i) o[i] += x[i] > 0.0 ? s : (x[i] < 0.0 ? -s : 0.0);
    });
}

/// Single entry as a 1x1 value.
inline Var entry(Var a, std::size_t r, std::size_t c) {
    const Matrix& av = a.value();
    if (r >= av.rows() || c >= av.cols()) {
        throw ShapeError("entry: index (" + std::to_string(r) + "," + std::to_string(c) + ") outside " +
                         av.shape());
    }
    return a.tape->record(Matrix(1, 1, av(r, c)), {a}, [r, c](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
        (*pg[0])(r, c) += g(0, 0);
    });
}

/// Mean negative log-likelihood of `labels[k]` under row_softmax(logits) for
/// the listed rows. Fused for numerical stability.
inline Var cross_entropy(Var logits, std::span<const std::size_t> rows, std::span<const std::size_t> labels) {
    const Matrix& z = logits.value();
    if (rows.size() != labels.size() || rows.empty()) {
        throw UsageError("cross_entropy: need matching non-empty row and label lists");
    }
    Matrix p = row_softmax(z);
    double loss = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t i = rows[k];
        const std::size_t y = labels[k];
        if (i >= z.rows() || y >= z.cols()) throw ShapeError("cross_entropy: row or label out of range");
        auto zr = z.row(i);
        const double mx = *std::max_element(zr.begin(), zr.end());
        double lse = 0.0;
        for (double v : zr) lse += std::exp(v - mx);
        loss -= zr[y] - mx - std::log(lse);
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    loss *= inv;
    std::vector<std::size_t> rs(rows.begin(), rows.end());
    std::vector<std::size_t> ys(labels.begin(), labels.end());
    return logits.tape->record(
        Matrix(1, 1, loss), {logits},
        [p = std::move(p), rs = std::move(rs), ys = std::move(ys), inv](const Matrix&, const Matrix& g,
                                                                         std::span<Matrix* const> pg) {
            Matrix& o = *pg[0];
            const double s = g(0, 0) * inv;
            for (std::size_t k = 0; k < rs.size(); ++k) {
                const std::size_t i = rs[k];
                for (std::size_t j = 0; j < p.cols(); ++j) o(i, j) += s * p(i, j);
                o(i, ys[k]) -= s;
            }
        });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace cf2
