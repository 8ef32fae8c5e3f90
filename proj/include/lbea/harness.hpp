#pragma once

#include "lbea/generator.hpp"
#include "lbea/integrators.hpp"
#include "lbea/potential.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lbea {

struct EstimateWithCI {
    double estimate = 0.0;
    double std_error = 0.0;
    int chains = 0;
    long effective_samples = 0;
    std::uint64_t seed = 0;

    double ci_low(double z = 1.96) const { return estimate - z * std_error; }
    double ci_high(double z = 1.96) const { return estimate + z * std_error; }
};

struct OrderFit {
    std::vector<double> deltas;
    std::vector<double> errors;
    std::vector<double> std_errors;  ///< zero for exact-recursion points
    std::vector<bool> used;          ///< false where the error fell below the floor
    double slope = 0.0;
    double slope_std_error = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  ///< rms residual of the log-log fit
    std::string method;     ///< "exact-recursion" or "monte-carlo"
    /// False when fewer than three points survive the floor; slope is NaN.
    bool valid = false;
};

class InsufficientPoints : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Least-squares fit of log|error| against log delta. Points with
/// |error| < floor_rel * floor_scale are excluded. Throws InsufficientPoints
/// for a ladder shorter than three; a fit left with fewer than three points
/// after the floor is returned with valid = false.
OrderFit fit_order(const std::vector<double>& deltas, const std::vector<double>& errors,
                   const std::vector<double>& std_errors, const std::string& method, double floor_scale = 1.0,
                   double floor_rel = 1e-12);

/// Ornstein-Uhlenbeck oracle for V = |q|^2/2. Coordinates decouple, so the
/// per-coordinate 2x2 maps act on (q_i, p_i) blocks.
struct OUReference {
    double gamma = 1.0;
    double sigma = std::sqrt(2.0);
    Scheme scheme = Scheme::split_step;
    double delta = 0.0;
    /// one step: (q1, p1) = M (q, p) + b eta
    Eigen::Matrix2d M;
    Eigen::Vector2d b;
    double spectral_radius = 0.0;
    bool has_stationary = false;
    Eigen::Matrix2d stationary_cov = Eigen::Matrix2d::Zero();
    /// continuous drift [[0, 1], [-1, -gamma]] and stationary covariance
    Eigen::Matrix2d drift;
    Eigen::Matrix2d continuous_stationary_cov;

    /// Mean and covariance of (q_i, p_i) after k steps from a point mass.
    void discrete_moments(long k, const Eigen::Vector2d& x0, Eigen::Vector2d& mean, Eigen::Matrix2d& cov) const;
    /// Mean and covariance of the continuous process at time t.
    void continuous_moments(double t, const Eigen::Vector2d& x0, Eigen::Vector2d& mean, Eigen::Matrix2d& cov) const;
};

/// Builds the oracle from the closed-form affine solve of each scheme.
OUReference exact_ou_reference(double gamma, double sigma, Scheme scheme, double delta);

/// E phi(X) for X ~ N(mean, cov) in R^{2d} with independent, identically
/// distributed (q_i, p_i) blocks given by a 2x2 mean/covariance.
double gaussian_phase_expectation(const Poly& phi, int dim, const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov);

struct McOptions {
    int chains = 64;
    std::uint64_t seed = 1;
    int threads = 1;
    SolverConfig solver{};
};

/// Across-chain mean of phi(q_k, p_k), k = T / delta, with standard error.
EstimateWithCI estimate_expectation(const PotentialModel& model, const StepParams& params, const Poly& phi, double T,
                                    const PhaseState<double>& state0, const McOptions& mc);

enum class ReferenceKind { exact, fine_step };

struct WeakErrorOptions {
    ReferenceKind reference = ReferenceKind::exact;
    /// fine-step reference uses min(ladder) / fine_factor
    double fine_factor = 64.0;
    McOptions mc{};
};

/// error(delta) = |E phi(x_{T/delta}) - reference(T)| and its log-log slope.
/// The exact reference uses the OU oracle for both the scheme and the limit
/// (V must be |q|^2/2); fine_step uses Monte Carlo at a much smaller delta.
OrderFit weak_error_order(const PotentialModel& model, const StepParams& base, const Poly& phi, double T,
                          const std::vector<double>& ladder, const PhaseState<double>& state0,
                          const WeakErrorOptions& opt = {});

enum class BiasMethod { exact, monte_carlo };

struct InvariantBiasOptions {
    BiasMethod method = BiasMethod::exact;
    long burn_in = -1;   ///< steps; negative selects 10 / lambda from a pilot fit
    long horizon = 10000;
    McOptions mc{};
    /// When set, the first-order coefficient <phi mu_1>_rho to compare with.
    std::optional<double> mu1_coefficient;
};

struct InvariantBias {
    OrderFit fit;
    std::vector<double> bias;       ///< signed <phi>_delta - <phi>_rho
    std::vector<double> bias_over_delta;
    double rho_value = 0.0;
    /// least-squares first-order coefficient from bias = c1 delta + c2 delta^2
    double first_order_coefficient = 0.0;
    /// bias / delta at the smallest delta relative to mu1_coefficient
    std::optional<double> mu1_relative_error;
    /// first_order_coefficient relative to mu1_coefficient
    std::optional<double> coefficient_relative_error;
    /// slope of |bias - delta <phi mu_1>| when mu1 is supplied
    std::optional<OrderFit> residual_fit;
    /// Monte Carlo only
    bool burn_in_insufficient = false;
    std::vector<long> burn_in_steps;
    std::vector<double> bias_std_error;
    std::vector<double> pilot_lambda;
};

InvariantBias invariant_bias(const PotentialModel& model, const StepParams& base, const Poly& phi,
                             const std::vector<double>& ladder, const InvariantBiasOptions& opt = {});

class NotCentered : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct MixingFit {
    double lambda = 0.0;
    double prefactor = 0.0;
    double residual = 0.0;
    std::vector<double> times;
    std::vector<double> deviations;  ///< |E phi - limit|
    std::vector<std::size_t> envelope;  ///< indices used in the fit
    bool spans_three_decay_lengths = false;
    std::string method;
};

/// Fits |e_i| ~ C exp(-lambda t_i) on the upper envelope: local maxima of
/// |e| when at least three exist, else all points.
MixingFit fit_decay_envelope(const std::vector<double>& times, const std::vector<double>& deviations);

enum class MixingMethod { exact, monte_carlo };

struct MixingOptions {
    MixingMethod method = MixingMethod::exact;
    McOptions mc{};
    /// Limit value; defaults to the discrete stationary value (exact) or <phi>_rho.
    std::optional<double> limit;
};

/// Decay rate of E phi(x_k) toward its limit over the step grid k_grid.
/// Throws NotCentered when phi is constant.
MixingFit mixing_rate(const PotentialModel& model, const StepParams& params, const Poly& phi,
                      const std::vector<long>& k_grid, const PhaseState<double>& state0,
                      const MixingOptions& opt = {});

/// Continuous-time counterpart for OU: E phi(X_t) from the exact propagator.
MixingFit continuous_ou_mixing_rate(double gamma, double sigma, const Poly& phi, const std::vector<double>& t_grid,
                                    const PhaseState<double>& state0);

}  // namespace lbea
