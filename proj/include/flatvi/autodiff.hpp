#ifndef FLATVI_AUTODIFF_HPP_
#define FLATVI_AUTODIFF_HPP_

// Reverse-mode differentiation over whole matrices. Every op records its
// value and a closure that scatters the output adjoint into its parents.
// Nodes that depend only on constants record no closure, so evaluating a
// graph with frozen parameters costs a plain forward pass.

#include "nn.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <deque>
#include <functional>
#include <initializer_list>

namespace flatvi::ad {

class Tape;

struct Var {
    Tape *tape = nullptr;
    std::size_t id = 0;

    const Matrix &value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

class Tape {
public:
    using Backward = std::function<void(Tape &, const Matrix &grad, const Matrix &out)>;

    Var constant(Matrix v) { return push(std::move(v), false, {}); }
    Var variable(Matrix v) { return push(std::move(v), true, {}); }

    const Matrix &value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    bool requires_grad(Var v) const { return requires_grad(v.id); }

    /// Gradient of the last backward() target w.r.t. v (zeros if unreached).
    Matrix grad(Var v) const
    {
        const auto &n = nodes_[v.id];
        if (n.has_grad) return n.grad;
        return Matrix::Zero(n.value.rows(), n.value.cols());
    }

    template <class Expr>
    void accumulate(Var v, const Expr &g)
    {
        auto &n = nodes_[v.id];
        if (!n.requires_grad) return;
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
        } else {
            n.grad += g;
        }
    }

    void backward(Var target)
    {
        require_dims(target.rows() == 1 && target.cols() == 1, "backward: target must be scalar");
        for (auto &n : nodes_) n.has_grad = false;
        accumulate(target, Matrix::Constant(1, 1, 1.0));
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            auto &n = nodes_[i];
            if (n.has_grad && n.backward) n.backward(*this, n.grad, n.value);
        }
    }

    /// Records an op output; `backward` is dropped when no parent needs grad.
    Var push(Matrix value, std::initializer_list<Var> parents, Backward backward)
    {
        bool rg = false;
        for (const auto &p : parents) rg = rg || requires_grad(p);
        return push(std::move(value), rg, rg ? std::move(backward) : Backward{});
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
    };

    Var push(Matrix value, bool rg, Backward backward)
    {
        nodes_.push_back(Node{std::move(value), Matrix(), rg, false, std::move(backward)});
        return Var{this, nodes_.size() - 1};
    }

    std::deque<Node> nodes_;
};

inline const Matrix &Var::value() const { return tape->value(id); }

inline Var matmul(Var a, Var b)
{
    require_dims(a.cols() == b.rows(), "ad::matmul: inner dimensions differ");
    return a.tape->push(a.value() * b.value(), {a, b}, [a, b](Tape &t, const Matrix &g, const Matrix &) {
        if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
        if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
    });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b)
{
    require_dims(a.cols() == b.cols(), "ad::matmul_nt: inner dimensions differ");
    return a.tape->push(a.value() * b.value().transpose(), {a, b}, [a, b](Tape &t, const Matrix &g, const Matrix &) {
        if (t.requires_grad(a)) t.accumulate(a, g * b.value());
        if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
    });
}

inline Var add(Var a, Var b)
{
    require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "ad::add: shape mismatch");
    return a.tape->push(a.value() + b.value(), {a, b}, [a, b](Tape &t, const Matrix &g, const Matrix &) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

inline Var sub(Var a, Var b)
{
    require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "ad::sub: shape mismatch");
    return a.tape->push(a.value() - b.value(), {a, b}, [a, b](Tape &t, const Matrix &g, const Matrix &) {
        t.accumulate(a, g);
        if (t.requires_grad(b)) t.accumulate(b, -g);
    });
}

inline Var mul(Var a, Var b)
{
    require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "ad::mul: shape mismatch");
    Matrix v = a.value().cwiseProduct(b.value());
    return a.tape->push(std::move(v), {a, b}, [a, b](Tape &t, const Matrix &g, const Matrix &) {
        if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
        if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
    });
}

/// Adds a 1 x n row to every row of a.
inline Var add_row(Var a, Var r)
{
    require_dims(r.rows() == 1 && r.cols() == a.cols(), "ad::add_row: shape mismatch");
    Matrix v = a.value();
    v.rowwise() += r.value().row(0);
    return a.tape->push(std::move(v), {a, r}, [a, r](Tape &t, const Matrix &g, const Matrix &) {
        t.accumulate(a, g);
        if (t.requires_grad(r)) t.accumulate(r, g.colwise().sum());
    });
}

/// Scales every row of a elementwise by the 1 x n row r.
inline Var mul_row(Var a, Var r)
{
    require_dims(r.rows() == 1 && r.cols() == a.cols(), "ad::mul_row: shape mismatch");
    Matrix v = a.value().array().rowwise() * r.value().row(0).array();
    return a.tape->push(std::move(v), {a, r}, [a, r](Tape &t, const Matrix &g, const Matrix &) {
        if (t.requires_grad(a))
            t.accumulate(a, (g.array().rowwise() * r.value().row(0).array()).matrix());
        if (t.requires_grad(r)) t.accumulate(r, g.cwiseProduct(a.value()).colwise().sum());
    });
}

/// Scales row i of a by c(i), c being n x 1.
inline Var mul_col(Var a, Var c)
{
    require_dims(c.cols() == 1 && c.rows() == a.rows(), "ad::mul_col: shape mismatch");
    Matrix v = a.value().array().colwise() * c.value().col(0).array();
    return a.tape->push(std::move(v), {a, c}, [a, c](Tape &t, const Matrix &g, const Matrix &) {
        if (t.requires_grad(a))
            t.accumulate(a, (g.array().colwise() * c.value().col(0).array()).matrix());
        if (t.requires_grad(c)) t.accumulate(c, g.cwiseProduct(a.value()).rowwise().sum());
    });
}

/// Subtracts c(i) from every entry of row i.
inline Var sub_col(Var a, Var c)
{
    require_dims(c.cols() == 1 && c.rows() == a.rows(), "ad::sub_col: shape mismatch");
    Matrix v = a.value().colwise() - c.value().col(0);
    return a.tape->push(std::move(v), {a, c}, [a, c](Tape &t, const Matrix &g, const Matrix &) {
        t.accumulate(a, g);
        if (t.requires_grad(c)) t.accumulate(c, -g.rowwise().sum());
    });
}

inline Var scale(Var a, double s)
{
    return a.tape->push(a.value() * s, {a}, [a, s](Tape &t, const Matrix &g, const Matrix &) { t.accumulate(a, g * s); });
}

inline Var add_scalar(Var a, double s)
{
    Matrix v = a.value().array() + s;
    return a.tape->push(std::move(v), {a}, [a](Tape &t, const Matrix &g, const Matrix &) { t.accumulate(a, g); });
}

/// a * s for a 1 x 1 variable s.
inline Var mul_scalar(Var a, Var s)
{
    require_dims(s.rows() == 1 && s.cols() == 1, "ad::mul_scalar: s must be 1x1");
    return a.tape->push(a.value() * s.value()(0, 0), {a, s}, [a, s](Tape &t, const Matrix &g, const Matrix &) {
        if (t.requires_grad(a)) t.accumulate(a, g * s.value()(0, 0));
        if (t.requires_grad(s)) t.accumulate(s, Matrix::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
    });
}

inline Var exp(Var a)
{
    Matrix v = a.value().array().exp();
    return a.tape->push(std::move(v), {a}, [a](Tape &t, const Matrix &g, const Matrix &out) {
        t.accumulate(a, g.cwiseProduct(out));
    });
}

inline Var log(Var a)
{
    Matrix v = a.value().array().log();
    return a.tape->push(std::move(v), {a}, [a](Tape &t, const Matrix &g, const Matrix &) {
        t.accumulate(a, g.cwiseQuotient(a.value()));
    });
}

inline Var lgamma(Var a)
{
    Matrix v = a.value().unaryExpr([](double x) { return std::lgamma(x); });
    return a.tape->push(std::move(v), {a}, [a](Tape &t, const Matrix &g, const Matrix &) {
        Matrix dg = a.value().unaryExpr([](double x) { return boost::math::digamma(x); });
        t.accumulate(a, g.cwiseProduct(dg));
    });
}

inline Var reciprocal(Var a)
{
    Matrix v = a.value().cwiseInverse();
    return a.tape->push(std::move(v), {a}, [a](Tape &t, const Matrix &g, const Matrix &out) {
        t.accumulate(a, -g.cwiseProduct(out.cwiseProduct(out)));
    });
}

inline Var square(Var a)
{
    Matrix v = a.value().cwiseAbs2();
    return a.tape->push(std::move(v), {a}, [a](Tape &t, const Matrix &g, const Matrix &) {
        t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
    });
}

/// Elementwise activation (softmax goes through softmax_rows).
inline Var activation(Var a, Activation kind)
{
    if (kind == Activation::softmax) throw DomainError("ad::activation: use softmax_rows");
    if (kind == Activation::identity) return a;
    Matrix v = a.value().unaryExpr([kind](double x) { return act::value(kind, x); });
    return a.tape->push(std::move(v), {a}, [a, kind](Tape &t, const Matrix &g, const Matrix &) {
        Matrix d = a.value().unaryExpr([kind](double x) { return act::d1(kind, x); });
        t.accumulate(a, g.cwiseProduct(d));
    });
}

/// Elementwise first derivative of an activation, itself differentiable.
inline Var activation_derivative(Var a, Activation kind)
{
    if (kind == Activation::softmax) throw DomainError("ad::activation_derivative: softmax is not elementwise");
    Matrix v = a.value().unaryExpr([kind](double x) { return act::d1(kind, x); });
    return a.tape->push(std::move(v), {a}, [a, kind](Tape &t, const Matrix &g, const Matrix &) {
        Matrix d = a.value().unaryExpr([kind](double x) { return act::d2(kind, x); });
        t.accumulate(a, g.cwiseProduct(d));
    });
}

inline Var softmax_rows(Var a)
{
    return a.tape->push(flatvi::softmax_rows(a.value()), {a}, [a](Tape &t, const Matrix &g, const Matrix &s) {
        Vector dots = g.cwiseProduct(s).rowwise().sum();
        t.accumulate(a, s.cwiseProduct((g.colwise() - dots)));
    });
}

/// Output row i*k + j is input row i.
inline Var repeat_rows(Var a, Eigen::Index k)
{
    const Matrix &x = a.value();
    Matrix v(x.rows() * k, x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < k; ++j) v.row(i * k + j) = x.row(i);
    return a.tape->push(std::move(v), {a}, [a, k](Tape &t, const Matrix &g, const Matrix &) {
        Matrix ga = Matrix::Zero(a.rows(), a.cols());
        for (Eigen::Index i = 0; i < ga.rows(); ++i)
            for (Eigen::Index j = 0; j < k; ++j) ga.row(i) += g.row(i * k + j);
        t.accumulate(a, ga);
    });
}

inline Var row_sum(Var a)
{
    Matrix v = a.value().rowwise().sum();
    return a.tape->push(std::move(v), {a}, [a](Tape &t, const Matrix &g, const Matrix &) {
        t.accumulate(a, g.col(0).replicate(1, a.cols()));
    });
}

inline Var sum(Var a)
{
    return a.tape->push(Matrix::Constant(1, 1, a.value().sum()), {a}, [a](Tape &t, const Matrix &g, const Matrix &) {
        t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count)
{
    require_dims(start >= 0 && count >= 0 && start + count <= a.cols(), "ad::slice_cols: out of range");
    Matrix v = a.value().middleCols(start, count);
    return a.tape->push(std::move(v), {a}, [a, start, count](Tape &t, const Matrix &g, const Matrix &) {
        Matrix ga = Matrix::Zero(a.rows(), a.cols());
        ga.middleCols(start, count) = g;
        t.accumulate(a, ga);
    });
}

inline Var vstack(std::initializer_list<Var> parts)
{
    require_dims(parts.size() > 0, "ad::vstack: nothing to stack");
    Tape *tape = parts.begin()->tape;
    const Eigen::Index cols = parts.begin()->cols();
    Eigen::Index rows = 0;
    for (const auto &p : parts) {
        require_dims(p.cols() == cols, "ad::vstack: column mismatch");
        rows += p.rows();
    }
    Matrix v(rows, cols);
    Eigen::Index r = 0;
    for (const auto &p : parts) {
        v.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    std::vector<Var> list(parts);
    return tape->push(std::move(v), parts, [list](Tape &t, const Matrix &g, const Matrix &) {
        Eigen::Index off = 0;
        for (const auto &p : list) {
            if (t.requires_grad(p)) t.accumulate(p, g.middleRows(off, p.rows()));
            off += p.rows();
        }
    });
}

/// Per-item weighted Gram matrices. jac stacks B blocks of d rows (one row
/// per tangent direction, columns are outputs); weights is B x G. Output block
/// b (rows b*d .. b*d+d-1) is J_b diag(w_b) J_b^T.
inline Var weighted_gram(Var jac, Var weights, Eigen::Index d)
{
    const Matrix &J = jac.value();
    const Matrix &W = weights.value();
    const Eigen::Index batch = W.rows();
    require_dims(d > 0 && J.rows() == batch * d && J.cols() == W.cols(), "ad::weighted_gram: shape mismatch");
    Matrix v(batch * d, d);
    for (Eigen::Index b = 0; b < batch; ++b) {
        auto Jb = J.middleRows(b * d, d);
        Matrix scaled = Jb.array().rowwise() * W.row(b).array();
        v.middleRows(b * d, d) = scaled * Jb.transpose();
    }
    return jac.tape->push(std::move(v), {jac, weights}, [jac, weights, d](Tape &t, const Matrix &g, const Matrix &) {
        const Matrix &J = jac.value();
        const Matrix &W = weights.value();
        const Eigen::Index batch = W.rows();
        Matrix gJ, gW;
        if (t.requires_grad(jac)) gJ.resize(J.rows(), J.cols());
        if (t.requires_grad(weights)) gW.resize(W.rows(), W.cols());
        for (Eigen::Index b = 0; b < batch; ++b) {
            auto Jb = J.middleRows(b * d, d);
            const Matrix gb = g.middleRows(b * d, d);
            if (gJ.size() > 0) {
                Matrix sym = gb + gb.transpose();
                gJ.middleRows(b * d, d) = (sym * Jb).array().rowwise() * W.row(b).array();
            }
            if (gW.size() > 0) gW.row(b) = (Jb.transpose() * gb).cwiseProduct(Jb.transpose()).rowwise().sum().transpose();
        }
        if (gJ.size() > 0) t.accumulate(jac, gJ);
        if (gW.size() > 0) t.accumulate(weights, gW);
    });
}

/// q_k = D_k^T M_k D_k for stacked d x d blocks M (K*d x d) and rows of D (K x d).
inline Var block_quadratic(Var metrics, Var deltas)
{
    const Matrix &M = metrics.value();
    const Matrix &D = deltas.value();
    const Eigen::Index d = D.cols();
    const Eigen::Index k = D.rows();
    require_dims(M.rows() == k * d && M.cols() == d, "ad::block_quadratic: shape mismatch");
    Matrix v(k, 1);
    for (Eigen::Index i = 0; i < k; ++i)
        v(i, 0) = D.row(i) * M.middleRows(i * d, d) * D.row(i).transpose();
    return metrics.tape->push(std::move(v), {metrics, deltas}, [metrics, deltas](Tape &t, const Matrix &g, const Matrix &) {
        const Matrix &M = metrics.value();
        const Matrix &D = deltas.value();
        const Eigen::Index d = D.cols();
        Matrix gM = Matrix::Zero(M.rows(), M.cols());
        Matrix gD = Matrix::Zero(D.rows(), D.cols());
        for (Eigen::Index i = 0; i < D.rows(); ++i) {
            auto Mi = M.middleRows(i * d, d);
            gM.middleRows(i * d, d) = g(i, 0) * (D.row(i).transpose() * D.row(i));
            gD.row(i) = g(i, 0) * (D.row(i) * (Mi + Mi.transpose()));
        }
        t.accumulate(metrics, gM);
        t.accumulate(deltas, gD);
    });
}

/// B x B matrix of Euclidean distances between rows of z.
inline Var pairwise_distances(Var z)
{
    const Matrix &Z = z.value();
    const Eigen::Index n = Z.rows();
    Matrix v = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) v(i, j) = v(j, i) = (Z.row(i) - Z.row(j)).norm();
    return z.tape->push(std::move(v), {z}, [z](Tape &t, const Matrix &g, const Matrix &dist) {
        const Matrix &Z = z.value();
        const Eigen::Index n = Z.rows();
        Matrix gz = Matrix::Zero(n, Z.cols());
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i == j || dist(i, j) == 0.0) continue;
                const double c = (g(i, j) + g(j, i)) / dist(i, j);
                gz.row(i) += c * (Z.row(i) - Z.row(j));
            }
        t.accumulate(z, gz);
    });
}

}  // namespace flatvi::ad

#endif  // FLATVI_AUTODIFF_HPP_
