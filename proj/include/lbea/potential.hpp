#pragma once

#include "lbea/poly.hpp"

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lbea {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Potential V on R^d with derivatives.
///
/// Polynomial potentials carry their sparse form and answer every derivative
/// order exactly, in any scalar type. Closure-backed potentials supply value,
/// gradient and Hessian only and are evaluated in double.
///
/// Immutable after construction; safe to share across threads.
class PotentialModel {
public:
    using ValueFn = std::function<double(const Eigen::VectorXd&)>;
    using GradFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
    using HessFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

    static PotentialModel polynomial(std::string name, Poly v);
    static PotentialModel closure(std::string name, int dim, ValueFn value, GradFn grad, HessFn hess);

    const std::string& name() const { return name_; }
    int dimension() const { return dim_; }
    bool is_polynomial() const { return poly_.has_value(); }
    /// True when V is a polynomial of degree <= 2 (L is then degree-preserving).
    bool is_quadratic() const;
    /// Sparse form over (q_1..q_d); throws if the potential is not polynomial.
    const Poly& poly_form() const;
    /// Highest derivative order available: unbounded (INT_MAX) for polynomials.
    int max_derivative_order() const;

    template <typename Scalar>
    Scalar value(const VectorX<Scalar>& q) const
    {
        if (poly_) return c_value_.template operator()<Scalar>(q);
        return Scalar(value_fn_(q.template cast<double>()));
    }

    template <typename Scalar>
    VectorX<Scalar> gradient(const VectorX<Scalar>& q) const
    {
        if (!poly_) return grad_fn_(q.template cast<double>()).template cast<Scalar>();
        VectorX<Scalar> g(dim_);
        for (int i = 0; i < dim_; ++i) g[i] = c_grad_[i].template operator()<Scalar>(q);
        return g;
    }

    template <typename Scalar>
    MatrixX<Scalar> hessian(const VectorX<Scalar>& q) const
    {
        if (!poly_) return hess_fn_(q.template cast<double>()).template cast<Scalar>();
        MatrixX<Scalar> h(dim_, dim_);
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j <= i; ++j) {
                h(i, j) = c_hess_[i * dim_ + j].template operator()<Scalar>(q);
                h(j, i) = h(i, j);
            }
        return h;
    }

    double operator()(const Eigen::VectorXd& q) const { return value<double>(q); }

    /// Contraction of the derivative tensor: d^k V(q)(h_1, ..., h_k), k = dirs.size().
    double derivative_contraction(const Eigen::VectorXd& q, const std::vector<Eigen::VectorXd>& dirs) const;

    /// Partial derivative d^|vars| V / dq_{vars...} as a polynomial over q.
    Poly partial(const std::vector<int>& vars) const;

private:
    PotentialModel() = default;

    std::string name_;
    int dim_ = 0;
    std::optional<Poly> poly_;
    CompiledPoly c_value_;
    std::vector<CompiledPoly> c_grad_;
    std::vector<CompiledPoly> c_hess_;
    ValueFn value_fn_;
    GradFn grad_fn_;
    HessFn hess_fn_;
};

/// |q|^2 / 2.
PotentialModel quadratic_potential(int dim);
/// sum_i q_i^4 + q_i^2.
PotentialModel quartic_potential(int dim);
/// sum_i q_i^4 - q_i^2, optionally shifted by a constant.
PotentialModel double_well_potential(int dim, double shift = 0.0);
/// Polynomial potential from (multi-index, coefficient) pairs.
PotentialModel custom_potential(int dim, const std::vector<std::pair<Monomial, double>>& terms);
/// Shipped potentials by name: quadratic, quartic, double-well.
PotentialModel make_potential(const std::string& name, int dim);

/// Axis-aligned box [lower, upper] in R^d sampled with `resolution` points per axis.
struct Box {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    static Box cube(int dim, double half_width);
    int dimension() const { return static_cast<int>(lower.size()); }
    bool contains(const Box& other) const;
};

/// Calls `f(node)` for every node of the tensor grid on `box`.
void for_each_grid_node(const Box& box, int resolution, const std::function<void(const Eigen::VectorXd&)>& f);

/// Grid-based audit of the standing assumptions on V. Necessary-condition
/// check over the audit box only.
struct PotentialAudit {
    double theta = 0.0;    ///< semi-convexity constant, d^2V >= -theta I
    double beta_b2 = 0.0;  ///< exponent of the dissipativity-type inequality
    double kappa = 0.0;    ///< additive constant of that inequality
    double beta1 = 0.0;    ///< <q, dV> >= beta1 |q|^2 - kappa_dissip
    double kappa_dissip = 0.0;
    double kappa1 = 0.0;   ///< V >= kappa1 |q|^2 - kappa2
    double kappa2 = 0.0;
    double gamma = 0.0;

    bool semiconvex_pass = false;
    bool b2_pass = false;
    bool dissipativity_pass = false;
    bool b4_pass = false;

    Box box;
    int resolution = 0;

    bool all_pass() const { return semiconvex_pass && b2_pass && dissipativity_pass && b4_pass; }
};

/// Thrown when V (or a derivative) is not finite at some audit node.
class AuditFailure : public std::runtime_error {
public:
    AuditFailure(const std::string& what, Eigen::VectorXd node) : std::runtime_error(what), node_(std::move(node)) {}
    const Eigen::VectorXd& node() const { return node_; }

private:
    Eigen::VectorXd node_;
};

/// theta = max(0, -min over grid of the smallest Hessian eigenvalue).
double semiconvexity_constant(const PotentialModel& model, const Box& box, int resolution);

/// Coefficient gamma^2 beta (2 - beta) / (8 (1 - beta)) of |q|^2 in the
/// dissipativity-type inequality.
double b2_quadratic_coefficient(double gamma, double beta);

/// Audits semi-convexity, the dissipativity-type inequality with exponent
/// `candidate_beta`, the derived inequality <q, dV> >= beta1 |q|^2 - kappa and
/// the relaxed quadratic lower bound. `kappa1_target` caps kappa1: the largest
/// value <= target with kappa2 = 0 is used if positive, else the target itself.
PotentialAudit audit_assumptions(const PotentialModel& model, const Box& box, int resolution, double gamma,
                                 double candidate_beta, double kappa1_target = 1.0);

}  // namespace lbea
