#include "lbea/generator.hpp"

#include "lbea/quadrature.hpp"
#include "lbea/stats.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace lbea {

std::string to_string(OperatorKind k)
{
    switch (k) {
    case OperatorKind::L: return "L";
    case OperatorKind::L_transpose: return "LT";
    case OperatorKind::L_star: return "Lstar";
    }
    return "unknown";
}

OperatorKind parse_operator_kind(const std::string& s)
{
    if (s == "L") return OperatorKind::L;
    if (s == "LT" || s == "L_transpose" || s == "Ltranspose") return OperatorKind::L_transpose;
    if (s == "Lstar" || s == "L_star" || s == "L*") return OperatorKind::L_star;
    throw std::invalid_argument("unknown operator '" + s + "' (expected L, LT, Lstar)");
}

namespace {

std::vector<int> momentum_vars(int d)
{
    std::vector<int> v(static_cast<std::size_t>(d));
    std::iota(v.begin(), v.end(), d);
    return v;
}

// Drift and diffusion pieces shared by L and its flat adjoint.
struct GeneratorParts {
    Poly transport;  // sum p_i d_{q_i} phi
    Poly grad_v_dp;  // sum dV_i d_{p_i} phi
    Poly p_dp;       // sum p_i d_{p_i} phi
    Poly laplace_p;  // sum d^2_{p_i} phi
};

GeneratorParts parts(const PotentialModel& model, const Poly& phi)
{
    const int d = model.dimension();
    if (phi.nvars() != 2 * d)
        throw std::invalid_argument("operator: polynomial must have 2d variables (q_1..q_d, p_1..p_d)");
    const Poly& v = model.poly_form();
    GeneratorParts out{Poly(2 * d), Poly(2 * d), Poly(2 * d), Poly(2 * d)};
    for (int i = 0; i < d; ++i) {
        const Poly p_i = Poly::variable(2 * d, d + i);
        const Poly dq = phi.derivative(i);
        const Poly dp = phi.derivative(d + i);
        out.transport += p_i * dq;
        out.grad_v_dp += v.derivative(i).extended(2 * d) * dp;
        out.p_dp += p_i * dp;
        out.laplace_p += dp.derivative(d + i);
    }
    return out;
}

Poly apply_L(const PotentialModel& model, const Poly& phi, double gamma, double sigma)
{
    const GeneratorParts g = parts(model, phi);
    return g.transport - g.grad_v_dp - gamma * g.p_dp + 0.5 * sigma * sigma * g.laplace_p;
}

}  // namespace

Poly apply_operator(OperatorKind kind, const PotentialModel& model, const Poly& phi, double gamma, double sigma)
{
    if (!model.is_polynomial()) throw std::invalid_argument("apply_operator: potential must be polynomial");
    const int d = model.dimension();
    switch (kind) {
    case OperatorKind::L: return apply_L(model, phi, gamma, sigma);
    case OperatorKind::L_transpose: {
        const GeneratorParts g = parts(model, phi);
        return -g.transport + g.grad_v_dp + gamma * g.p_dp + 0.5 * sigma * sigma * g.laplace_p +
               (d * gamma) * phi;
    }
    case OperatorKind::L_star: {
        const auto pv = momentum_vars(d);
        return apply_L(model, phi.flip_sign(pv), gamma, sigma).flip_sign(pv);
    }
    }
    throw std::logic_error("apply_operator: bad kind");
}

Poly product_rule_defect(const PotentialModel& model, const Poly& phi, const Poly& psi, double gamma, double sigma)
{
    const int d = model.dimension();
    Poly grad_dot(2 * d);
    for (int i = 0; i < d; ++i) grad_dot += phi.derivative(d + i) * psi.derivative(d + i);
    return apply_L(model, phi * psi, gamma, sigma) - psi * apply_L(model, phi, gamma, sigma) -
           phi * apply_L(model, psi, gamma, sigma) - (sigma * sigma) * grad_dot;
}

PolyBasis::PolyBasis(int dim, int degree_cap) : dim_(dim), degree_cap_(degree_cap)
{
    if (dim < 1) throw std::invalid_argument("PolyBasis: dimension must be positive");
    if (degree_cap < 0) throw std::invalid_argument("PolyBasis: degree cap must be non-negative");
    monos_ = monomial_basis(2 * dim, degree_cap);
    for (int i = 0; i < size(); ++i) index_.emplace(monos_[i], i);
}

int PolyBasis::index_of(const Monomial& m) const
{
    auto it = index_.find(m);
    return it == index_.end() ? -1 : it->second;
}

Poly PolyBasis::to_poly(const Eigen::VectorXd& coeffs) const
{
    if (coeffs.size() != size()) throw std::invalid_argument("PolyBasis::to_poly: size mismatch");
    Poly out(2 * dim_);
    for (int i = 0; i < size(); ++i) out.add_term(monos_[i], coeffs[i]);
    return out;
}

Eigen::VectorXd PolyBasis::coefficients(const Poly& p, double* outside_mass) const
{
    if (p.nvars() != 2 * dim_ && !p.is_zero()) throw std::invalid_argument("PolyBasis::coefficients: ring mismatch");
    Eigen::VectorXd c = Eigen::VectorXd::Zero(size());
    double mass = 0.0;
    for (const auto& [m, v] : p.terms()) {
        const int i = index_of(m);
        if (i < 0) mass += std::abs(v);
        else c[i] = v;
    }
    if (outside_mass) *outside_mass = mass;
    return c;
}

Eigen::VectorXd PolyBasis::flip_signs() const
{
    Eigen::VectorXd f(size());
    for (int i = 0; i < size(); ++i) {
        int pd = 0;
        for (int j = dim_; j < 2 * dim_; ++j) pd += monos_[i][j];
        f[i] = (pd % 2) ? -1.0 : 1.0;
    }
    return f;
}

Poly OperatorMatrix::apply(const Poly& phi) const
{
    double outside = 0.0;
    const Eigen::VectorXd c = basis.coefficients(phi, &outside);
    if (outside > 0.0) throw std::invalid_argument("OperatorMatrix::apply: input outside the basis span");
    return basis.to_poly(matrix * c);
}

OperatorMatrix build_operator_matrix(OperatorKind kind, const PotentialModel& model, double gamma, double sigma,
                                     int degree_cap)
{
    OperatorMatrix op;
    op.label = to_string(kind);
    op.basis = PolyBasis(model.dimension(), degree_cap);
    const int n = op.basis.size();
    op.matrix = Eigen::MatrixXd::Zero(n, n);
    op.column_truncation.assign(static_cast<std::size_t>(n), 0.0);
    for (int j = 0; j < n; ++j) {
        const Poly img = apply_operator(kind, model, Poly::monomial(op.basis[j]), gamma, sigma);
        double mass = 0.0;
        op.matrix.col(j) = op.basis.coefficients(img, &mass);
        op.column_truncation[j] = mass;
        op.truncation_mass += mass;
    }
    op.exact_on_basis = op.truncation_mass == 0.0;
    return op;
}

Eigen::MatrixXd flip_conjugate(const PolyBasis& basis, const Eigen::MatrixXd& m)
{
    const Eigen::VectorXd f = basis.flip_signs();
    return f.asDiagonal() * m * f.asDiagonal();
}

namespace {

double double_factorial_odd(int k)  // (k-1)!! for even k
{
    double r = 1.0;
    for (int j = k - 1; j > 1; j -= 2) r *= j;
    return r;
}

// All position multi-indices of total degree <= deg in d variables.
std::vector<Monomial> position_monomials(int d, int deg) { return monomial_basis(d, deg); }

}  // namespace

GibbsMeasure::GibbsMeasure(PotentialModel model, double gamma, double sigma, double tol)
    : model_(std::move(model)), gamma_(gamma), sigma_(sigma), beta_(2.0 * gamma / (sigma * sigma)), tol_(tol)
{
    if (!(gamma > 0.0) || !(sigma > 0.0)) throw std::invalid_argument("GibbsMeasure: gamma and sigma must be positive");
    if (!model_.is_polynomial()) throw std::invalid_argument("GibbsMeasure: polynomial potential required");
    build_position_moments(8);
}

double GibbsMeasure::momentum_moment(const Monomial& b) const
{
    double r = 1.0;
    for (int e : b) {
        if (e % 2) return 0.0;
        r *= double_factorial_odd(e) * std::pow(beta_, -0.5 * e);
    }
    return r;
}

double GibbsMeasure::position_moment(const Monomial& a)
{
    const int deg = std::accumulate(a.begin(), a.end(), 0);
    if (deg > moment_degree_) build_position_moments(std::max(deg, moment_degree_ + 8));
    return q_moments_.at(a);
}

void GibbsMeasure::build_position_moments(int degree)
{
    const int d = model_.dimension();
    const auto monos = position_monomials(d, degree);
    std::map<Monomial, double> moments;
    trace_.clear();

    auto accumulate_node = [&](const Eigen::VectorXd& q, double w, std::vector<CompensatedSum>& acc) {
        // powers[i][e] = q_i^e
        std::vector<std::vector<double>> pw(static_cast<std::size_t>(d), std::vector<double>(degree + 1, 1.0));
        for (int i = 0; i < d; ++i)
            for (int e = 1; e <= degree; ++e) pw[i][e] = pw[i][e - 1] * q[i];
        for (std::size_t k = 0; k < monos.size(); ++k) {
            double t = w;
            for (int i = 0; i < d; ++i) t *= pw[i][monos[k][i]];
            acc[k].add(t);
        }
    };

    if (model_.is_quadratic()) {
        const Eigen::VectorXd zero = Eigen::VectorXd::Zero(d);
        const Eigen::MatrixXd a = model_.hessian<double>(zero);
        Eigen::LLT<Eigen::MatrixXd> llt(beta_ * a);
        if (llt.info() != Eigen::Success)
            throw QuadratureError("Gibbs measure not normalizable: quadratic potential is not strictly convex", {});
        const Eigen::VectorXd mean = -a.ldlt().solve(model_.gradient<double>(zero));
        // cov = (beta A)^{-1} = (L L^T)^{-1}; q = mean + L^{-T} x
        const Eigen::MatrixXd lt = llt.matrixU();
        const int nodes = degree / 2 + 2;
        const auto rule = gauss_hermite<double>(nodes);
        std::vector<CompensatedSum> acc(monos.size());
        for_each_tensor_node(rule, d, [&](const Eigen::VectorXd& x, double w) {
            const Eigen::VectorXd q = mean + lt.triangularView<Eigen::Upper>().solve(x);
            accumulate_node(q, w, acc);
        });
        for (std::size_t k = 0; k < monos.size(); ++k) moments[monos[k]] = acc[k].value();
        zq_ = std::pow(2.0 * std::numbers::pi, 0.5 * d) / llt.matrixL().determinant() *
              std::exp(-beta_ * model_.value<double>(mean));
        rule_ = "gauss-hermite(" + std::to_string(nodes) + ")";
    } else {
        // Truncation box: grow until beta (V - Vmin) >= 60 on its whole boundary.
        const int probe = 41;
        double radius = 1.0, vmin = INFINITY;
        for (int attempt = 0; attempt < 20; ++attempt, radius *= 1.5) {
            const Box box = Box::cube(d, radius);
            double bmin = INFINITY;
            for_each_grid_node(box, probe, [&](const Eigen::VectorXd& q) {
                const double v = model_.value<double>(q);
                vmin = std::min(vmin, v);
                bool bnd = false;
                for (int i = 0; i < d; ++i) bnd = bnd || std::abs(std::abs(q[i]) - radius) < 1e-14 * radius;
                if (bnd) bmin = std::min(bmin, v);
            });
            if (beta_ * (bmin - vmin) >= 60.0) break;
            if (attempt == 19) throw QuadratureError("Gibbs measure: potential does not confine", {});
        }
        const auto rule = gauss_legendre<double>(20);
        std::vector<double> prev;
        bool converged = false;
        double z = 0.0;
        const int max_panels = d == 1 ? 512 : 64;
        for (int panels = 8; panels <= max_panels; panels *= 2) {
            // composite rule on [-radius, radius]
            QuadratureRule<double> comp;
            const double h = 2.0 * radius / panels;
            for (int k = 0; k < panels; ++k) {
                const double mid = -radius + (k + 0.5) * h;
                for (int i = 0; i < rule.size(); ++i) {
                    comp.nodes.push_back(mid + 0.5 * h * rule.nodes[i]);
                    comp.weights.push_back(0.5 * h * rule.weights[i]);
                }
            }
            std::vector<CompensatedSum> acc(monos.size());
            for_each_tensor_node(comp, d, [&](const Eigen::VectorXd& q, double w) {
                accumulate_node(q, w * std::exp(-beta_ * (model_.value<double>(q) - vmin)), acc);
            });
            std::vector<double> cur(monos.size());
            z = acc[0].value();
            for (std::size_t k = 0; k < monos.size(); ++k) cur[k] = acc[k].value() / z;
            double change = INFINITY;
            if (!prev.empty()) {
                change = 0.0;
                for (std::size_t k = 0; k < cur.size(); ++k)
                    change = std::max(change, std::abs(cur[k] - prev[k]) / std::max(1.0, std::abs(cur[k])));
            }
            std::ostringstream os;
            os << "panels=" << panels << " radius=" << radius << " max_change=" << change;
            trace_.push_back(os.str());
            prev = cur;
            if (change <= 1e-3 * tol_) {
                converged = true;
                rule_ = "composite-gauss-legendre(20x" + std::to_string(panels) + ")";
                break;
            }
        }
        if (!converged) throw QuadratureError("Gibbs measure: position quadrature did not converge", trace_);
        for (std::size_t k = 0; k < monos.size(); ++k) moments[monos[k]] = prev[k];
        zq_ = z * std::exp(-beta_ * vmin);
    }
    const double mass = moments.at(Monomial(d, 0));
    for (auto& [m, v] : moments) v /= mass;
    q_moments_ = std::move(moments);
    moment_degree_ = degree;
}

double rho_average(GibbsMeasure& measure, const Poly& phi)
{
    const int d = measure.model().dimension();
    if (phi.nvars() != 2 * d && !phi.is_zero()) throw std::invalid_argument("rho_average: polynomial must be over (q, p)");
    CompensatedSum s;
    for (const auto& [m, c] : phi.terms()) {
        const Monomial b(m.begin() + d, m.end());
        const double pm = measure.momentum_moment(b);
        if (pm == 0.0) continue;
        s.add(c * pm * measure.position_moment(Monomial(m.begin(), m.begin() + d)));
    }
    return s.value();
}

Eigen::MatrixXd gram_matrix(GibbsMeasure& measure, const PolyBasis& basis)
{
    const int n = basis.size();
    Eigen::MatrixXd g(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            Monomial m = basis[i];
            for (std::size_t k = 0; k < m.size(); ++k) m[k] += basis[j][k];
            g(i, j) = g(j, i) = rho_average(measure, Poly::monomial(m));
        }
    return g;
}

Eigen::VectorXd basis_averages(GibbsMeasure& measure, const PolyBasis& basis)
{
    Eigen::VectorXd r(basis.size());
    for (int j = 0; j < basis.size(); ++j) r[j] = rho_average(measure, Poly::monomial(basis[j]));
    return r;
}

Eigen::MatrixXd rho_adjoint(const Eigen::MatrixXd& m, const Eigen::MatrixXd& gram)
{
    // Diagonal rescaling keeps the Gram solve well conditioned.
    const Eigen::VectorXd s = gram.diagonal().cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd gs = s.asDiagonal() * gram * s.asDiagonal();
    const Eigen::MatrixXd rhs = s.asDiagonal() * (m.transpose() * gram);
    return s.asDiagonal() * gs.ldlt().solve(rhs);
}

Eigen::VectorXd semigroup_apply(const OperatorMatrix& op, double t, const Eigen::VectorXd& coeffs)
{
    if (!(t >= 0.0)) throw std::invalid_argument("semigroup_apply: t must be non-negative");
    if (coeffs.size() != op.matrix.rows()) throw std::invalid_argument("semigroup_apply: size mismatch");
    if (t == 0.0) return coeffs;
    const Eigen::MatrixXd e = (t * op.matrix).exp();
    return e * coeffs;
}

PoissonSolution solve_poisson(const Eigen::MatrixXd& m, const PolyBasis& basis, GibbsMeasure& measure,
                              const Poly& g, double compat_tol)
{
    const int n = basis.size();
    double outside = 0.0;
    const Eigen::VectorXd gv = basis.coefficients(g, &outside);
    if (outside > 0.0) throw std::invalid_argument("solve_poisson: right-hand side exceeds the degree cap");
    const Eigen::VectorXd r = basis_averages(measure, basis);

    const double g_mean = r.dot(gv);
    double scale = 0.0;
    for (int j = 0; j < n; ++j) {
        if (gv[j] == 0.0) continue;
        Monomial sq = basis[j];
        for (int& e : sq) e *= 2;
        scale += std::abs(gv[j]) * std::sqrt(rho_average(measure, Poly::monomial(sq)));
    }
    if (std::abs(g_mean) > compat_tol * std::max(1.0, scale))
        throw IncompatibleRHS("solve_poisson: right-hand side has nonzero rho-average", g_mean);

    Eigen::MatrixXd a(n + 1, n);
    a.topRows(n) = m;
    a.row(n) = r.transpose();
    Eigen::VectorXd rhs(n + 1);
    rhs.head(n) = gv;
    rhs[n] = 0.0;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
    PoissonSolution out;
    out.coeffs = cod.solve(rhs);
    out.rank = static_cast<int>(cod.rank());
    out.rank_deficient = out.rank < n;
    out.residual = (m * out.coeffs - gv).norm();
    out.mu = basis.to_poly(out.coeffs);
    out.mean = r.dot(out.coeffs);
    return out;
}

PoissonSolution solve_poisson(OperatorKind which, const PotentialModel& model, double gamma, double sigma,
                              const Poly& g, int degree_cap, GibbsMeasure& measure, double compat_tol)
{
    if (which == OperatorKind::L_transpose)
        throw std::invalid_argument("solve_poisson: operator must be L or Lstar");
    const OperatorMatrix op = build_operator_matrix(which, model, gamma, sigma, degree_cap);
    return solve_poisson(op.matrix, op.basis, measure, g, compat_tol);
}

}  // namespace lbea
