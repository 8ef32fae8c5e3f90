#pragma once

#include "lbea/generator.hpp"
#include "lbea/integrators.hpp"
#include "lbea/quadrature.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace lbea {

/// d_k(x, y) for k = 1..K as vector-valued polynomials over (x, y) = (q, p):
/// the position solve of the split-step scheme satisfies
/// z = q + sum_k delta^k d_k(q, p) as a formal series.
struct DriftExpansion {
    int dimension = 0;
    double gamma = 0.0;
    /// terms[k-1][i] is component i of d_k.
    std::vector<std::vector<Poly>> terms;

    int order() const { return static_cast<int>(terms.size()); }
    const std::vector<Poly>& operator[](int k) const { return terms.at(static_cast<std::size_t>(k - 1)); }
    Eigen::VectorXd evaluate(int k, const PhaseState<double>& s) const;
};

DriftExpansion drift_coefficients(const PotentialModel& model, double gamma, int K);

/// Taylor coefficients in delta of the numerically solved position map
/// z(delta) - q at one state, recovered by a Vandermonde fit in long double on
/// `ladder`. Returns coefficients for powers 1..K.
std::vector<Eigen::VectorXd> fixed_point_taylor(const PotentialModel& model, double gamma,
                                                const PhaseState<double>& s, int K,
                                                const std::vector<double>& ladder);

/// Chebyshev points on [-radius, radius]. The position map is analytic in
/// delta around 0, so its Taylor fit may use negative step sizes.
std::vector<double> chebyshev_ladder(double radius, int points);

/// Geometric ladder of `points` values from delta0/lo_div up to delta0/hi_div.
std::vector<double> geometric_ladder(double delta0, int points, double lo_div, double hi_div);

/// Least-squares fit y(x) = sum_j c_j x^{powers_j} with columns scaled by
/// (x / max x)^{powers_j}. Returns unscaled c and the 2-norm condition number
/// of the scaled design matrix.
struct PowerFit {
    std::vector<long double> coeffs;
    double condition = 0.0;
};
PowerFit fit_power_series(const std::vector<long double>& x, const std::vector<long double>& y,
                          const std::vector<double>& powers);

/// E phi(q1, p1) for one step from `s`, computed by tensor Gauss-Hermite
/// quadrature in the noise. Several observables share the same step.
template <typename Scalar>
std::vector<Scalar> one_step_expectations(const PotentialModel& model, const StepParams& params,
                                          const PhaseState<double>& s, const std::vector<CompiledPoly>& phis,
                                          const QuadratureRule<Scalar>& rule, const SolverConfig& solver)
{
    const int d = s.dimension();
    std::vector<Scalar> acc(phis.size(), Scalar(0));
    const PhaseState<Scalar> x = s.template cast<Scalar>();
    VectorX<Scalar> z(2 * d);
    auto visit = [&](const VectorX<Scalar>& eta, Scalar w) {
        const PhaseState<Scalar> y = step<Scalar>(x, model, params, eta, solver);
        z << y.q, y.p;
        for (std::size_t i = 0; i < phis.size(); ++i) acc[i] += w * phis[i].template operator()<Scalar>(z);
    };
    if (params.sigma == 0.0) visit(VectorX<Scalar>::Zero(d), Scalar(1));
    else for_each_tensor_node(rule, d, visit);
    return acc;
}

struct ExtractionOptions {
    /// Integer-power ladder. Empty: geometric_ladder(delta0, 12, 512, 8).
    std::vector<double> ladder;
    /// Half-power fit: polynomial in s = delta^{1/2} on `half_points`
    /// Chebyshev nodes in [-half_radius, half_radius]; 0 means sqrt(delta0/64).
    double half_radius = 0.0;
    int half_points = 24;
    /// Reference step size used for the default ladders.
    double delta0 = 1.0;
    /// Unknowns in the integer-power fit; 0 means one per ladder point.
    int fit_terms = 0;
    int gh_nodes = 10;
    bool check_half_powers = false;
    /// Condition numbers above this raise ExtractionError.
    double max_condition = 1e16;
};

class ExtractionError : public std::runtime_error {
public:
    ExtractionError(const std::string& what, double condition) : std::runtime_error(what), condition_(condition) {}
    double condition() const { return condition_; }

private:
    double condition_;
};

struct WeakCoefficients {
    std::vector<double> c;  ///< c_0..c_N
    double condition = 0.0;
    /// Coefficients of delta^{1/2}, delta^{3/2} from the half-power fit.
    std::optional<std::vector<double>> half_powers;
    double half_condition = 0.0;
    /// max |half-power coefficient| / max(|c_0|, |c_1|, tiny)
    double half_power_relative = 0.0;
};

/// Coefficients c_n of E phi(q1, p1) = sum delta^n c_n at the state `s`.
WeakCoefficients one_step_weak_coefficients(Scheme scheme, const PotentialModel& model, double gamma, double sigma,
                                            const Poly& phi, int N, const PhaseState<double>& s,
                                            const ExtractionOptions& opt = {});

/// A_0 phi .. A_N phi for the split-step scheme, exact: the step is expanded
/// as a series in delta^{1/2} with the d_k and the Gaussian expectation is
/// taken termwise.
std::vector<Poly> split_step_weak_generators(const PotentialModel& model, double gamma, double sigma,
                                             const Poly& phi, int N);

enum class Provenance { identity, analytic, extracted };
std::string to_string(Provenance p);

enum class AnSource { analytic, extracted };

struct AnMatrix {
    Eigen::MatrixXd matrix;
    std::vector<Provenance> provenance;  ///< per column
    bool exact_on_basis = true;
    double truncation_mass = 0.0;
    /// extracted only: max residual of the per-column polynomial fits
    double fit_residual = 0.0;
    double condition = 0.0;
};

struct AnOptions {
    ExtractionOptions extraction{};
    /// Base points per phase coordinate for the extracted path (Chebyshev
    /// points on [-extent, extent]); 0 means degree_cap + 2.
    int points_per_axis = 0;
    double extent = 1.0;
};

/// A_n on the degree-D basis. The analytic path is for split-step only.
AnMatrix assemble_An(Scheme scheme, const PotentialModel& model, double gamma, double sigma, int n, int degree_cap,
                     AnSource source, const AnOptions& opt = {});

/// All of A_0..A_nmax in one pass (shares the one-step evaluations).
std::vector<AnMatrix> assemble_An_all(Scheme scheme, const PotentialModel& model, double gamma, double sigma,
                                      int nmax, int degree_cap, AnSource source, const AnOptions& opt = {});

/// Bernoulli numbers with B_1 = -1/2 (generating function x / (e^x - 1)).
std::vector<double> bernoulli_numbers(int n);

struct OperatorSeries {
    Scheme scheme = Scheme::split_step;
    PolyBasis basis;
    std::vector<Eigen::MatrixXd> A;  ///< A_0..A_{N+1}
    std::vector<Eigen::MatrixXd> L;  ///< L_0..L_N
    std::vector<std::vector<Provenance>> provenance;  ///< per A_n, per column
    bool exact_on_basis = true;
    /// max entrywise |A_n - reconstructed A_n|
    double round_trip_error = 0.0;
    /// max |L_n 1| over n
    double constant_annihilation = 0.0;
};

class RoundTripFailure : public std::runtime_error {
public:
    RoundTripFailure(const std::string& what, double error) : std::runtime_error(what), error_(error) {}
    double error() const { return error_; }

private:
    double error_;
};

/// L_n from the Bernoulli recursion; re-derives A_n through the exponential
/// series and throws RoundTripFailure if the mismatch exceeds `tol`.
OperatorSeries modified_operators(Scheme scheme, const PolyBasis& basis, const std::vector<Eigen::MatrixXd>& A, int N,
                                  double tol = 1e-10);

/// A_n via the exponential series from L_0..L_N (n = 0..N+1).
std::vector<Eigen::MatrixXd> reconstruct_An(const std::vector<Eigen::MatrixXd>& L, int nmax);

/// Builds A_0..A_{N+1} and L_0..L_N in one call; `tol` as in modified_operators.
OperatorSeries build_operator_series(Scheme scheme, const PotentialModel& model, double gamma, double sigma, int N,
                                     int degree_cap, AnSource source, const AnOptions& opt = {}, double tol = 1e-10);

/// How the adjoint (L_l)* of a modified operator is formed.
/// rho_gram: G^{-1} M^T G with the Gibbs Gram matrix; flip: F M F.
enum class AdjointMethod { rho_gram, flip };
std::string to_string(AdjointMethod m);

struct MeasureExpansion {
    PolyBasis basis;
    std::vector<Poly> mu;  ///< mu_0..mu_N
    std::vector<double> poisson_residual;
    std::vector<double> mean;      ///< <mu_n>_rho
    std::vector<double> rhs_mean;  ///< <G_n>_rho before each solve
    AdjointMethod adjoint = AdjointMethod::rho_gram;

    /// 1 + delta mu_1 + ... + delta^N mu_N
    Poly assembled(double delta) const;
    /// sum_n delta^n <phi mu_n>_rho
    double average(GibbsMeasure& measure, const Poly& phi, double delta) const;
};

MeasureExpansion measure_expansion(const OperatorSeries& ops, GibbsMeasure& measure, int N,
                                   AdjointMethod adjoint = AdjointMethod::rho_gram, double compat_tol = 1e-9);

enum class FlowMethod { duhamel, coupled };
std::string to_string(FlowMethod m);

struct ModifiedFlow {
    PolyBasis basis;
    std::vector<double> t_grid;
    /// v[n][i]: coefficients of v_n(t_grid[i])
    std::vector<std::vector<Eigen::VectorXd>> v;
    FlowMethod method = FlowMethod::duhamel;
    bool exact = true;

    Eigen::VectorXd assembled(std::size_t ti, double delta) const;
};

/// v_0 = exp(tL) phi and v_n(t) = int_0^t exp((t-s)L) F_n(s) ds with
/// F_n = sum_{l=1}^n L_l v_{n-l}. The Duhamel path uses composite
/// Gauss-Legendre of order quad_order on unit-length panels; the coupled path
/// exponentiates the block lower-triangular generator of (v_0..v_N).
ModifiedFlow modified_flow(const OperatorSeries& ops, const Poly& phi, int N, const std::vector<double>& t_grid,
                           int quad_order = 20, FlowMethod method = FlowMethod::duhamel);

}  // namespace lbea
