#pragma once

#include "lbea/potential.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lbea {

enum class Scheme { split_step, implicit_euler, explicit_euler };

std::string to_string(Scheme s);
/// Accepts "split-step", "implicit-euler", "explicit-euler" (underscores too).
Scheme parse_scheme(const std::string& s);

template <typename Scalar = double>
struct PhaseState {
    VectorX<Scalar> q;
    VectorX<Scalar> p;

    int dimension() const { return static_cast<int>(q.size()); }
    bool finite() const { return q.allFinite() && p.allFinite(); }

    template <typename Other>
    PhaseState<Other> cast() const
    {
        return {q.template cast<Other>(), p.template cast<Other>()};
    }
};

struct StepParams {
    double delta = 0.01;
    double gamma = 1.0;
    double sigma = std::sqrt(2.0);
    Scheme scheme = Scheme::split_step;

    void validate() const;
};

struct SolverConfig {
    enum class Method { newton, fixed_point };
    Method method = Method::newton;
    /// Residual tolerance, scaled by (1 + |q| + |p|).
    double tol = 1e-12;
    int max_iter = 100;
    /// When set, solves with delta at or above this bound are flagged as
    /// possibly non-unique.
    std::optional<double> solvability_bound;

    void validate() const;
};

/// Step-size bounds: the implicit position solve is unique below
/// `solvability`; moments stay bounded below `moment`.
struct StabilityBounds {
    double solvability = INFINITY;
    double moment = INFINITY;
};

StabilityBounds delta_max(double gamma, double theta, double beta_b2);

enum class SolveStatus { converged, max_iter_exceeded };

template <typename Scalar>
struct ImplicitSolveResult {
    VectorX<Scalar> z;
    Scalar residual = 0;
    int iterations = 0;
    SolveStatus status = SolveStatus::converged;
    bool fallback_used = false;       ///< Newton Jacobian was singular; damped fixed point used
    bool uniqueness_warning = false;  ///< delta >= solvability bound
};

class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, Eigen::VectorXd best, double residual)
        : std::runtime_error(what), best_(std::move(best)), residual_(residual)
    {
    }
    const Eigen::VectorXd& best_iterate() const { return best_; }
    double residual() const { return residual_; }

private:
    Eigen::VectorXd best_;
    double residual_;
};

/// Solves z = q + delta/(1+gamma delta) (p_eff - delta dV(z)).
///
/// Newton on F(z) = z - q - c (p_eff - delta dV(z)) with Jacobian
/// I + c delta d^2V(z), falling back to a damped fixed point iteration when
/// the Jacobian is singular. Never throws on non-convergence: the best
/// iterate and its residual are returned with status max_iter_exceeded.
template <typename Scalar>
ImplicitSolveResult<Scalar> solve_implicit_position(const PotentialModel& model, const VectorX<Scalar>& q,
                                                    const VectorX<Scalar>& p_eff, Scalar delta, Scalar gamma,
                                                    const SolverConfig& solver)
{
    using std::abs;
    using std::sqrt;
    ImplicitSolveResult<Scalar> out;
    const Scalar c = delta / (Scalar(1) + gamma * delta);
    const Scalar scale = Scalar(1) + q.norm() + p_eff.norm();
    const Scalar eps = std::numeric_limits<Scalar>::epsilon();
    const Scalar inf = std::numeric_limits<Scalar>::infinity();
    out.uniqueness_warning = solver.solvability_bound && double(delta) >= *solver.solvability_bound;

    auto residual_of = [&](const VectorX<Scalar>& z, VectorX<Scalar>& r, VectorX<Scalar>& g) {
        g = model.gradient<Scalar>(z);
        r = z - q - c * (p_eff - delta * g);
        return r.norm();
    };
    // Roundoff floor: the residual cannot be resolved below a few ulps of the
    // terms that make it up.
    auto floor_of = [&](const VectorX<Scalar>& z, const VectorX<Scalar>& g) {
        return Scalar(64) * eps * (scale + z.norm() + c * delta * g.norm());
    };

    VectorX<Scalar> z = q + c * p_eff;
    VectorX<Scalar> r, g;
    Scalar res = residual_of(z, r, g);
    VectorX<Scalar> best = z;
    Scalar best_res = res;
    bool use_fixed_point = solver.method == SolverConfig::Method::fixed_point;
    Scalar damping(1);
    const int d = static_cast<int>(q.size());

    for (int it = 0; it < solver.max_iter; ++it) {
        const Scalar tol = std::max(Scalar(solver.tol) * scale, floor_of(z, g));
        if (res < inf && res <= tol) {
            out.z = z;
            out.residual = res;
            out.iterations = it;
            return out;
        }
        if (!use_fixed_point) {
            MatrixX<Scalar> jac = MatrixX<Scalar>::Identity(d, d) + c * delta * model.hessian<Scalar>(z);
            Eigen::FullPivLU<MatrixX<Scalar>> lu(jac);
            if (!lu.isInvertible()) {
                use_fixed_point = true;
                out.fallback_used = true;
                damping = Scalar(0.5);
            } else {
                z -= lu.solve(r);
            }
        }
        if (use_fixed_point) {
            const VectorX<Scalar> target = q + c * (p_eff - delta * g);
            z = (Scalar(1) - damping) * z + damping * target;
        }
        res = residual_of(z, r, g);
        if (!(res < inf)) break;  // overflow or NaN: the floor is meaningless too
        if (res < best_res) {
            best = z;
            best_res = res;
        }
    }
    const Scalar tol = std::max(Scalar(solver.tol) * scale, floor_of(z, g));
    if (res < inf && res <= tol) {
        out.z = z;
        out.residual = res;
        out.iterations = solver.max_iter;
        return out;
    }
    out.z = best;
    out.residual = best_res;
    out.iterations = solver.max_iter;
    out.status = SolveStatus::max_iter_exceeded;
    return out;
}

/// Per-step diagnostics; accumulated by simulate.
struct StepInfo {
    int solver_iterations = 0;
    double solver_residual = 0.0;
    bool uniqueness_warning = false;
    bool fallback_used = false;
};

/// One step of the chosen scheme given the standard normal vector `eta`.
/// Deterministic in (state, eta). Throws SolverError if the implicit solve
/// does not converge.
template <typename Scalar>
PhaseState<Scalar> step(const PhaseState<Scalar>& s, const PotentialModel& model, const StepParams& params,
                        const VectorX<Scalar>& eta, const SolverConfig& solver, StepInfo* info = nullptr)
{
    using std::sqrt;
    const Scalar delta(params.delta), gamma(params.gamma), sigma(params.sigma);
    const Scalar kick = sqrt(delta) * sigma;
    if (eta.size() != s.q.size()) throw std::invalid_argument("step: noise dimension mismatch");

    if (params.scheme == Scheme::explicit_euler) {
        PhaseState<Scalar> out;
        out.q = s.q + delta * s.p;
        out.p = s.p - delta * model.gradient<Scalar>(s.q) - gamma * delta * s.p + kick * eta;
        return out;
    }

    const VectorX<Scalar> p_eff = params.scheme == Scheme::split_step ? VectorX<Scalar>(s.p)
                                                                      : VectorX<Scalar>(s.p + kick * eta);
    auto sol = solve_implicit_position<Scalar>(model, s.q, p_eff, delta, gamma, solver);
    if (info) {
        info->solver_iterations = sol.iterations;
        info->solver_residual = double(sol.residual);
        info->uniqueness_warning = sol.uniqueness_warning;
        info->fallback_used = sol.fallback_used;
    }
    if (sol.status != SolveStatus::converged)
        throw SolverError("implicit position solve did not converge", sol.z.template cast<double>(),
                          double(sol.residual));

    PhaseState<Scalar> out;
    out.q = sol.z;
    // Equal to (q1 - q)/delta for a converged solve, without the cancellation.
    const VectorX<Scalar> p_star = (p_eff - delta * model.gradient<Scalar>(sol.z)) / (Scalar(1) + gamma * delta);
    out.p = params.scheme == Scheme::split_step ? VectorX<Scalar>(p_star + kick * eta) : p_star;
    return out;
}

/// Counter-based normal stream: the variate for (seed, stream, step,
/// component) is a pure function of those four integers.
class NoiseSource {
public:
    NoiseSource(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

    double normal(std::uint64_t step, int component) const;
    Eigen::VectorXd normals(std::uint64_t step, int dim) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
};

struct Observable {
    std::string name;
    std::function<double(const PhaseState<double>&)> fn;
};

/// Builds the named observables q2, p2, H and Gamma (Lyapunov function).
std::vector<Observable> standard_observables(const std::vector<std::string>& names, const PotentialModel& model,
                                             double gamma);

struct TrajectorySummary {
    PhaseState<double> final_state;
    std::vector<long> steps;                  ///< logged step indices
    std::vector<std::vector<double>> series;  ///< [observable][log index]
    long total_solver_iterations = 0;
    int max_solver_iterations = 0;
    double max_solver_residual = 0.0;
    long uniqueness_warnings = 0;
    bool diverged = false;  ///< state became non-finite; integration stopped
};

class StepError : public std::runtime_error {
public:
    StepError(const std::string& what, long step) : std::runtime_error(what), step_(step) {}
    long step_index() const { return step_; }

private:
    long step_;
};

/// Applies `step` n_steps times with noise from `noise`; observers see
/// (k, state) every `stride` steps including k = 0 and k = n_steps.
TrajectorySummary simulate(const PhaseState<double>& state0, const PotentialModel& model, const StepParams& params,
                           long n_steps, const NoiseSource& noise, const std::vector<Observable>& observers,
                           long stride = 1, const SolverConfig& solver = {});

}  // namespace lbea
