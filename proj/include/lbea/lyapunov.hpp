#pragma once

#include "lbea/integrators.hpp"
#include "lbea/potential.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace lbea {

/// H(q, p) = |p|^2 / 2 + V(q).
template <typename Scalar>
Scalar hamiltonian(const PhaseState<Scalar>& s, const PotentialModel& model)
{
    return Scalar(0.5) * s.p.squaredNorm() + model.value<Scalar>(s.q);
}

/// Gamma = |p|^2/2 + V + (gamma/2)<q,p> + (gamma^2/4)|q|^2 + 1.
template <typename Scalar>
Scalar lyapunov_gamma(const PhaseState<Scalar>& s, const PotentialModel& model, double gamma)
{
    const Scalar g(gamma);
    return Scalar(0.5) * s.p.squaredNorm() + model.value<Scalar>(s.q) + g / 2 * s.q.dot(s.p) +
           g * g / 4 * s.q.squaredNorm() + Scalar(1);
}

/// Gamma_delta = Gamma + (gamma delta / 4)|p|^2.
template <typename Scalar>
Scalar lyapunov_gamma_delta(const PhaseState<Scalar>& s, const PotentialModel& model, double gamma, double delta)
{
    return lyapunov_gamma(s, model, gamma) + Scalar(gamma * delta / 4) * s.p.squaredNorm();
}

/// |p|^2/8 + gamma^2 |q|^2 / 12 + 1, a lower bound for Gamma when V >= 0.
double lyapunov_lower_bound(const PhaseState<double>& s, double gamma);

/// L Gamma = -(gamma/2)|p|^2 - (gamma/2)<q, dV> + d sigma^2 / 2.
double generator_of_gamma(const PhaseState<double>& s, const PotentialModel& model, double gamma, double sigma);

/// L Gamma^ell via the chain rule for a second order operator.
double generator_of_gamma_power(const PhaseState<double>& s, const PotentialModel& model, double gamma, double sigma,
                                int ell);

/// Phase-space box: positions in `q_box`, momenta in `p_box`.
struct PhaseBox {
    Box q_box;
    Box p_box;

    static PhaseBox cube(int dim, double half_width);
    int dimension() const { return q_box.dimension(); }
};

/// Calls f(state) for every node of the tensor grid on a phase box.
void for_each_phase_node(const PhaseBox& box, int resolution, const std::function<void(const PhaseState<double>&)>& f);

struct LyapunovReport {
    int ell = 1;
    double a_ell = 0.0;
    double d_ell = 0.0;
    /// max over the grid of L Gamma^ell + a_ell Gamma^ell - d_ell
    double worst_violation = 0.0;
    double slack = 0.0;
    /// max of L Gamma^ell + a_ell Gamma^ell over nodes on the box boundary
    double boundary_max = 0.0;
    PhaseState<double> worst_node;
    PhaseBox box;
    int resolution = 0;
    bool pass = false;
};

/// Evaluates the drift inequality on the grid. For ell = 1 the constants are
/// a1 = beta gamma and d1 = d sigma^2/2 + gamma (kappa + beta); for ell >= 2,
/// a_ell = a1 (ell - 1) and d_ell is the grid maximum of
/// L Gamma^ell + a_ell Gamma^ell. For ell >= 2 the report passes only when
/// that maximum is attained away from the box boundary.
/// Throws std::invalid_argument if the audit did not pass B-2.
LyapunovReport check_drift_inequality(const PotentialModel& model, double gamma, double sigma,
                                      const PotentialAudit& audit, int ell, const PhaseBox& box, int resolution);

struct MomentSweep {
    std::vector<long> steps;
    std::vector<double> mean;       ///< E Gamma_delta^ell across chains
    std::vector<double> std_error;  ///< standard error of the mean
    std::vector<double> running_sup;
    bool diverged = false;
    long divergence_step = -1;
    int chains = 0;
    long n_steps = 0;
    double delta = 0.0;
    int ell = 1;
    std::uint64_t seed = 0;
};

struct MomentSweepOptions {
    long stride = 100;
    int threads = 1;
    double divergence_factor = 1e6;
    SolverConfig solver{};
};

/// Monte Carlo estimate of E Gamma_delta^ell(q_n, p_n) over `chains`
/// independent chains started at `state0`. Chain c uses noise stream c.
/// Divergence is a flag: the running mean exceeding divergence_factor times
/// its initial value, or any chain becoming non-finite. A chain whose implicit
/// solve fails is also counted as diverged.
MomentSweep moment_sweep(const PotentialModel& model, const StepParams& params, const PhaseState<double>& state0,
                         int ell, long n_steps, int chains, std::uint64_t seed, const MomentSweepOptions& opt = {});

struct WeightedNorm {
    double norm = 0.0;           ///< ||f||_{ell,k}: sup over derivative orders 0..k
    double seminorm = 0.0;       ///< |f|_{ell,k}: derivative orders 1..k only
    double boundary_ratio = 0.0; ///< same sup restricted to the box boundary
};

/// Grid approximation of sup_{|j| <= k} sup_x |d^j f(x)| / Gamma^ell(x) over a
/// phase box. Derivatives of f are exact. `ell` is the Gamma exponent and `k`
/// the derivative order.
WeightedNorm weighted_norm(const Poly& f, int ell, int k, const PhaseBox& box, int resolution,
                           const PotentialModel& model, double gamma);

/// Grid-function variant; derivatives by centered finite differences of
/// step `h`, orders k <= 2.
WeightedNorm weighted_norm(const std::function<double(const PhaseState<double>&)>& f, int ell, int k,
                           const PhaseBox& box, int resolution, const PotentialModel& model, double gamma,
                           double h = 1e-4);

}  // namespace lbea
