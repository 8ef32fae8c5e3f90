#include "lbea/potential.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <climits>
#include <cmath>
#include <stdexcept>

namespace lbea {

PotentialModel PotentialModel::polynomial(std::string name, Poly v)
{
    if (v.nvars() < 1) throw std::invalid_argument("polynomial potential needs at least one variable");
    PotentialModel m;
    m.name_ = std::move(name);
    m.dim_ = v.nvars();
    m.c_value_ = CompiledPoly(v);
    for (int i = 0; i < m.dim_; ++i) m.c_grad_.emplace_back(v.derivative(i));
    m.c_hess_.resize(static_cast<std::size_t>(m.dim_ * m.dim_));
    for (int i = 0; i < m.dim_; ++i)
        for (int j = 0; j < m.dim_; ++j) m.c_hess_[i * m.dim_ + j] = CompiledPoly(v.derivative(i).derivative(j));
    m.poly_ = std::move(v);
    return m;
}

PotentialModel PotentialModel::closure(std::string name, int dim, ValueFn value, GradFn grad, HessFn hess)
{
    if (dim < 1) throw std::invalid_argument("closure potential: dimension must be positive");
    PotentialModel m;
    m.name_ = std::move(name);
    m.dim_ = dim;
    m.value_fn_ = std::move(value);
    m.grad_fn_ = std::move(grad);
    m.hess_fn_ = std::move(hess);
    return m;
}

bool PotentialModel::is_quadratic() const { return poly_ && poly_->degree() <= 2; }

const Poly& PotentialModel::poly_form() const
{
    if (!poly_) throw std::logic_error("potential '" + name_ + "' has no polynomial form");
    return *poly_;
}

int PotentialModel::max_derivative_order() const { return poly_ ? INT_MAX : 2; }

double PotentialModel::derivative_contraction(const Eigen::VectorXd& q, const std::vector<Eigen::VectorXd>& dirs) const
{
    const int k = static_cast<int>(dirs.size());
    if (k == 0) return value<double>(q);
    if (!poly_) {
        if (k == 1) return gradient<double>(q).dot(dirs[0]);
        if (k == 2) return dirs[0].dot(hessian<double>(q) * dirs[1]);
        throw std::logic_error("closure potential provides derivatives up to order 2 only");
    }
    // Sum over index tuples (i_1..i_k) of d^k V / dq_{i_1}..dq_{i_k} * prod h_j[i_j].
    double acc = 0.0;
    std::vector<int> idx(static_cast<std::size_t>(k), 0);
    const std::span<const double> qs(q.data(), static_cast<std::size_t>(q.size()));
    while (true) {
        double w = 1.0;
        for (int j = 0; j < k; ++j) w *= dirs[j][idx[j]];
        if (w != 0.0) acc += w * poly_->derivative(idx).evaluate<double>(qs);
        int j = 0;
        while (j < k && ++idx[j] == dim_) idx[j++] = 0;
        if (j == k) break;
    }
    return acc;
}

Poly PotentialModel::partial(const std::vector<int>& vars) const { return poly_form().derivative(vars); }

PotentialModel quadratic_potential(int dim)
{
    Poly v(dim);
    for (int i = 0; i < dim; ++i) {
        Monomial m(dim, 0);
        m[i] = 2;
        v.add_term(m, 0.5);
    }
    return PotentialModel::polynomial("quadratic", v);
}

PotentialModel quartic_potential(int dim)
{
    Poly v(dim);
    for (int i = 0; i < dim; ++i) {
        Monomial m(dim, 0);
        m[i] = 4;
        v.add_term(m, 1.0);
        m[i] = 2;
        v.add_term(m, 1.0);
    }
    return PotentialModel::polynomial("quartic", v);
}

PotentialModel double_well_potential(int dim, double shift)
{
    Poly v(dim);
    for (int i = 0; i < dim; ++i) {
        Monomial m(dim, 0);
        m[i] = 4;
        v.add_term(m, 1.0);
        m[i] = 2;
        v.add_term(m, -1.0);
    }
    v.add_term(Monomial(dim, 0), shift);
    return PotentialModel::polynomial("double-well", v);
}

PotentialModel custom_potential(int dim, const std::vector<std::pair<Monomial, double>>& terms)
{
    Poly v(dim);
    for (const auto& [m, c] : terms) {
        if (static_cast<int>(m.size()) != dim)
            throw std::invalid_argument("custom potential: multi-index length does not match dimension");
        if (std::any_of(m.begin(), m.end(), [](int e) { return e < 0; }))
            throw std::invalid_argument("custom potential: negative exponent");
        v.add_term(m, c);
    }
    return PotentialModel::polynomial("custom", v);
}

PotentialModel make_potential(const std::string& name, int dim)
{
    if (dim < 1) throw std::invalid_argument("potential dimension must be positive");
    if (name == "quadratic") return quadratic_potential(dim);
    if (name == "quartic") return quartic_potential(dim);
    if (name == "double-well" || name == "double_well") return double_well_potential(dim);
    throw std::invalid_argument("unknown potential '" + name + "' (expected quadratic, quartic, double-well)");
}

Box Box::cube(int dim, double half_width)
{
    return {Eigen::VectorXd::Constant(dim, -half_width), Eigen::VectorXd::Constant(dim, half_width)};
}

bool Box::contains(const Box& other) const
{
    return (lower.array() <= other.lower.array()).all() && (upper.array() >= other.upper.array()).all();
}

void for_each_grid_node(const Box& box, int resolution, const std::function<void(const Eigen::VectorXd&)>& f)
{
    if (resolution < 2) throw std::invalid_argument("grid resolution must be at least 2");
    const int d = box.dimension();
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    Eigen::VectorXd x(d);
    while (true) {
        for (int i = 0; i < d; ++i)
            x[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * idx[i] / (resolution - 1);
        f(x);
        int j = 0;
        while (j < d && ++idx[j] == resolution) idx[j++] = 0;
        if (j == d) break;
    }
}

namespace {

bool on_boundary(const Box& box, const Eigen::VectorXd& x)
{
    for (int i = 0; i < x.size(); ++i)
        if (x[i] == box.lower[i] || x[i] == box.upper[i]) return true;
    return false;
}

// Tracks the maximum of an excess function over the grid, separately over the
// box boundary. A maximum attained only on the boundary signals that the
// inequality's constant is being driven by the box, not by V.
struct ExcessTracker {
    double max_all = -INFINITY;
    double max_boundary = -INFINITY;

    void add(double v, bool boundary)
    {
        max_all = std::max(max_all, v);
        if (boundary) max_boundary = std::max(max_boundary, v);
    }
    double constant() const { return std::max(0.0, max_all); }
    bool interior_controlled() const
    {
        const double slack = 1e-12 * std::max(1.0, std::abs(max_all));
        return max_boundary <= slack || max_boundary < max_all - slack;
    }
};

void require_finite(double v, const Eigen::VectorXd& q, const char* what)
{
    if (!std::isfinite(v)) throw AuditFailure(std::string("non-finite ") + what + " at audit node", q);
}

}  // namespace

double semiconvexity_constant(const PotentialModel& model, const Box& box, int resolution)
{
    double min_eig = INFINITY;
    for_each_grid_node(box, resolution, [&](const Eigen::VectorXd& q) {
        Eigen::MatrixXd h = model.hessian<double>(q);
        for (int i = 0; i < h.size(); ++i) require_finite(h.data()[i], q, "Hessian");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h, Eigen::EigenvaluesOnly);
        min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
    });
    return std::max(0.0, -min_eig);
}

double b2_quadratic_coefficient(double gamma, double beta)
{
    return gamma * gamma * beta * (2.0 - beta) / (8.0 * (1.0 - beta));
}

PotentialAudit audit_assumptions(const PotentialModel& model, const Box& box, int resolution, double gamma,
                                 double candidate_beta, double kappa1_target)
{
    if (resolution < 3) throw std::invalid_argument("audit resolution must be at least 3");
    if (!(candidate_beta > 0.0 && candidate_beta < 1.0)) throw std::invalid_argument("candidate beta must lie in (0,1)");
    if (box.dimension() != model.dimension()) throw std::invalid_argument("audit box dimension mismatch");
    if (!(kappa1_target > 0.0)) throw std::invalid_argument("kappa1 target must be positive");

    PotentialAudit a;
    a.box = box;
    a.resolution = resolution;
    a.gamma = gamma;
    a.beta_b2 = candidate_beta;
    const double c2 = b2_quadratic_coefficient(gamma, candidate_beta);
    a.beta1 = 2.0 * c2;

    ExcessTracker b2, dissip;
    double min_eig = INFINITY;
    double min_ratio = INFINITY;  // inf of V / |q|^2 over q != 0
    bool v_negative_at_origin = false;
    for_each_grid_node(box, resolution, [&](const Eigen::VectorXd& q) {
        const double v = model.value<double>(q);
        require_finite(v, q, "potential value");
        const Eigen::VectorXd g = model.gradient<double>(q);
        for (int i = 0; i < g.size(); ++i) require_finite(g[i], q, "gradient");
        const Eigen::MatrixXd h = model.hessian<double>(q);
        for (int i = 0; i < h.size(); ++i) require_finite(h.data()[i], q, "Hessian");

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h, Eigen::EigenvaluesOnly);
        min_eig = std::min(min_eig, es.eigenvalues().minCoeff());

        const double q2 = q.squaredNorm();
        const double qg = q.dot(g);
        const bool bnd = on_boundary(box, q);
        b2.add(candidate_beta * v + c2 * q2 - 0.5 * qg, bnd);
        dissip.add(a.beta1 * q2 - qg, bnd);
        if (q2 > 0.0) min_ratio = std::min(min_ratio, v / q2);
        else if (v < 0.0) v_negative_at_origin = true;
    });

    a.theta = std::max(0.0, -min_eig);
    a.semiconvex_pass = std::isfinite(min_eig);
    a.kappa = b2.constant();
    a.b2_pass = b2.interior_controlled();
    a.kappa_dissip = dissip.constant();
    a.dissipativity_pass = dissip.interior_controlled();

    if (min_ratio > 0.0 && !v_negative_at_origin) a.kappa1 = std::min(kappa1_target, min_ratio);
    else a.kappa1 = kappa1_target;

    ExcessTracker lower;
    for_each_grid_node(box, resolution, [&](const Eigen::VectorXd& q) {
        lower.add(a.kappa1 * q.squaredNorm() - model.value<double>(q), on_boundary(box, q));
    });
    a.kappa2 = lower.constant();
    a.b4_pass = a.kappa1 > 0.0 && lower.interior_controlled();
    return a;
}

}  // namespace lbea
