#pragma once

#include "lbea/poly.hpp"
#include "lbea/potential.hpp"

#include <Eigen/Dense>

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace lbea {

/// L: Kolmogorov generator. L_transpose: flat (Lebesgue) adjoint.
/// L_star: adjoint in L^2(rho), obtained by conjugating L with p -> -p.
enum class OperatorKind { L, L_transpose, L_star };

std::string to_string(OperatorKind k);
OperatorKind parse_operator_kind(const std::string& s);

/// Variables 0..d-1 are q, d..2d-1 are p.
Poly apply_operator(OperatorKind kind, const PotentialModel& model, const Poly& phi, double gamma, double sigma);

/// L(phi psi) - psi L phi - phi L psi - sigma^2 <d_p phi, d_p psi>; zero in exact arithmetic.
Poly product_rule_defect(const PotentialModel& model, const Poly& phi, const Poly& psi, double gamma, double sigma);

/// Ordered monomial basis over (q, p) with a coefficient map.
class PolyBasis {
public:
    PolyBasis() = default;
    PolyBasis(int dim, int degree_cap);

    int dimension() const { return dim_; }
    int degree_cap() const { return degree_cap_; }
    int size() const { return static_cast<int>(monos_.size()); }
    const std::vector<Monomial>& monomials() const { return monos_; }
    const Monomial& operator[](int i) const { return monos_[static_cast<std::size_t>(i)]; }
    /// -1 if the monomial is not in the basis.
    int index_of(const Monomial& m) const;

    Poly to_poly(const Eigen::VectorXd& coeffs) const;
    /// Coefficients of the part of `p` inside the basis; `outside_mass`
    /// receives the sum of |c| of terms that do not fit.
    Eigen::VectorXd coefficients(const Poly& p, double* outside_mass = nullptr) const;
    /// Diagonal of the involution p -> -p: (-1)^{total momentum degree}.
    Eigen::VectorXd flip_signs() const;

private:
    int dim_ = 0;
    int degree_cap_ = 0;
    std::vector<Monomial> monos_;
    std::map<Monomial, int> index_;
};

/// Linear operator represented on a PolyBasis: column j holds the
/// coefficients of K(basis_j), truncated to the basis.
struct OperatorMatrix {
    std::string label;
    PolyBasis basis;
    Eigen::MatrixXd matrix;
    /// True iff no column lost terms to truncation.
    bool exact_on_basis = true;
    /// Sum over columns of the truncated coefficient mass.
    double truncation_mass = 0.0;
    std::vector<double> column_truncation;

    Poly apply(const Poly& phi) const;
};

OperatorMatrix build_operator_matrix(OperatorKind kind, const PotentialModel& model, double gamma, double sigma,
                                     int degree_cap);

/// F M F with F the momentum-flip involution on the basis.
Eigen::MatrixXd flip_conjugate(const PolyBasis& basis, const Eigen::MatrixXd& m);

class QuadratureError : public std::runtime_error {
public:
    QuadratureError(const std::string& what, std::vector<std::string> trace)
        : std::runtime_error(what), trace_(std::move(trace))
    {
    }
    const std::vector<std::string>& trace() const { return trace_; }

private:
    std::vector<std::string> trace_;
};

/// rho proportional to exp(-beta H), beta = 2 gamma / sigma^2, H = |p|^2/2 + V(q).
///
/// Momentum moments are Gaussian and exact. Position moments use a
/// Gauss-Hermite rule after a Cholesky change of variables when V is a
/// strictly convex quadratic (exact for polynomials), and adaptive composite
/// Gauss-Legendre on a truncated box otherwise. Moments are cached; the class
/// is not thread-safe while the cache grows.
class GibbsMeasure {
public:
    GibbsMeasure(PotentialModel model, double gamma, double sigma, double tol = 1e-10);

    double beta() const { return beta_; }
    double gamma() const { return gamma_; }
    double sigma() const { return sigma_; }
    const PotentialModel& model() const { return model_; }
    /// Integral of exp(-beta V) over R^d.
    double position_partition() const { return zq_; }
    /// Description of the position rule, e.g. "gauss-hermite(24)".
    const std::string& rule() const { return rule_; }
    const std::vector<std::string>& refinement_trace() const { return trace_; }

    /// E_rho[q^a] for a position multi-index a.
    double position_moment(const Monomial& a);
    /// E_rho[p^b].
    double momentum_moment(const Monomial& b) const;

private:
    void build_position_moments(int degree);

    PotentialModel model_;
    double gamma_, sigma_, beta_, tol_;
    double zq_ = 1.0;
    int moment_degree_ = -1;
    std::map<Monomial, double> q_moments_;
    std::string rule_;
    std::vector<std::string> trace_;
};

/// Integral of phi against rho.
double rho_average(GibbsMeasure& measure, const Poly& phi);

/// G_ij = <b_i b_j>_rho on the basis.
Eigen::MatrixXd gram_matrix(GibbsMeasure& measure, const PolyBasis& basis);

/// Vector r_j = <b_j>_rho.
Eigen::VectorXd basis_averages(GibbsMeasure& measure, const PolyBasis& basis);

/// L^2(rho) adjoint of an operator on the basis: G^{-1} M^T G. This is the
/// Galerkin projection of the true adjoint; exact when the adjoint maps the
/// basis span into itself.
Eigen::MatrixXd rho_adjoint(const Eigen::MatrixXd& m, const Eigen::MatrixXd& gram);

/// exp(t M) v by scaling and squaring.
Eigen::VectorXd semigroup_apply(const OperatorMatrix& op, double t, const Eigen::VectorXd& coeffs);

class IncompatibleRHS : public std::runtime_error {
public:
    IncompatibleRHS(const std::string& what, double mean) : std::runtime_error(what), mean_(mean) {}
    double mean() const { return mean_; }

private:
    double mean_;
};

struct PoissonSolution {
    Poly mu;
    Eigen::VectorXd coeffs;
    double residual = 0.0;  ///< |M mu - g| in coefficient 2-norm
    double mean = 0.0;      ///< <mu>_rho after the solve
    bool rank_deficient = false;
    int rank = 0;
};

/// Solves K mu = g with <mu>_rho = 0 on the degree-D span, K given as a matrix.
/// Least squares on the stacked system [M; r^T] mu = [g; 0].
/// Throws IncompatibleRHS when |<g>_rho| exceeds `compat_tol` (scaled).
PoissonSolution solve_poisson(const Eigen::MatrixXd& m, const PolyBasis& basis, GibbsMeasure& measure,
                              const Poly& g, double compat_tol = 1e-9);

/// Convenience form building K from `which` (L or L_star).
PoissonSolution solve_poisson(OperatorKind which, const PotentialModel& model, double gamma, double sigma,
                              const Poly& g, int degree_cap, GibbsMeasure& measure, double compat_tol = 1e-9);

}  // namespace lbea
