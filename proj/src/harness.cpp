#include "lbea/harness.hpp"

#include "lbea/quadrature.hpp"
#include "lbea/stats.hpp"

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>

namespace lbea {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

long steps_for(double T, double delta)
{
    const double k = T / delta;
    const long kr = std::lround(k);
    if (kr < 0 || std::abs(k - static_cast<double>(kr)) > 1e-9 * std::max(1.0, k))
        throw std::invalid_argument("T = " + std::to_string(T) + " is not an integer multiple of delta = " +
                                    std::to_string(delta));
    return kr;
}

bool is_unit_quadratic(const PotentialModel& model)
{
    return model.is_polynomial() && model.poly_form() == quadratic_potential(model.dimension()).poly_form();
}

void require_ou(const PotentialModel& model, const char* who)
{
    if (!is_unit_quadratic(model))
        throw std::invalid_argument(std::string(who) + ": exact method needs V = |q|^2/2");
}

void check_ladder(const std::vector<double>& ladder)
{
    if (ladder.size() < 3) throw InsufficientPoints("fit needs at least 3 step sizes");
    for (double d : ladder)
        if (!(d > 0.0)) throw std::invalid_argument("step sizes must be positive");
}

// Solves X = M X M^T + Q for 2x2 X via the Kronecker form.
Eigen::Matrix2d solve_stein(const Eigen::Matrix2d& m, const Eigen::Matrix2d& q)
{
    const Eigen::Matrix4d k = Eigen::Matrix4d::Identity() - Eigen::kroneckerProduct(m, m).eval();
    Eigen::Vector4d rhs = Eigen::Map<const Eigen::Vector4d>(q.data());
    Eigen::Vector4d x = k.fullPivLu().solve(rhs);
    Eigen::Matrix2d s = Eigen::Map<Eigen::Matrix2d>(x.data());
    return (s + s.transpose()) / 2;
}

// Solves A X + X A^T + Q = 0.
Eigen::Matrix2d solve_lyapunov(const Eigen::Matrix2d& a, const Eigen::Matrix2d& q)
{
    const Eigen::Matrix2d id = Eigen::Matrix2d::Identity();
    const Eigen::Matrix4d k = Eigen::kroneckerProduct(id, a).eval() + Eigen::kroneckerProduct(a, id).eval();
    Eigen::Vector4d rhs = -Eigen::Map<const Eigen::Vector4d>(q.data());
    Eigen::Vector4d x = k.fullPivLu().solve(rhs);
    Eigen::Matrix2d s = Eigen::Map<Eigen::Matrix2d>(x.data());
    return (s + s.transpose()) / 2;
}

PhaseState<double> default_state(int d, const PhaseState<double>& s)
{
    if (s.q.size() == d && s.p.size() == d) return s;
    if (s.q.size() == 0 && s.p.size() == 0) return {Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
    throw std::invalid_argument("initial state dimension does not match the potential");
}

// Per-coordinate moments must be identical for the block form; the oracle
// starts every coordinate from the same point.
Eigen::Vector2d block_start(const PhaseState<double>& s)
{
    for (int i = 1; i < s.dimension(); ++i)
        if (s.q[i] != s.q[0] || s.p[i] != s.p[0])
            throw std::invalid_argument("exact OU method needs identical initial coordinates");
    return {s.q[0], s.p[0]};
}

double gaussian_value(const Poly& phi, int d, const Eigen::Vector2d& m, const Eigen::Matrix2d& c)
{
    return gaussian_phase_expectation(phi, d, m, c);
}

}  // namespace

OrderFit fit_order(const std::vector<double>& deltas, const std::vector<double>& errors,
                   const std::vector<double>& std_errors, const std::string& method, double floor_scale,
                   double floor_rel)
{
    if (deltas.size() != errors.size()) throw std::invalid_argument("fit_order: size mismatch");
    check_ladder(deltas);
    OrderFit f;
    f.deltas = deltas;
    f.errors = errors;
    f.std_errors = std_errors.empty() ? std::vector<double>(deltas.size(), 0.0) : std_errors;
    f.method = method;
    const double floor = floor_rel * floor_scale;
    std::vector<double> x, y;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        const bool ok = std::isfinite(errors[i]) && std::abs(errors[i]) >= floor && std::abs(errors[i]) > 0.0;
        f.used.push_back(ok);
        if (ok) {
            x.push_back(std::log(deltas[i]));
            y.push_back(std::log(std::abs(errors[i])));
        }
    }
    const std::size_t n = x.size();
    if (n < 3) {
        f.slope = f.slope_std_error = f.intercept = f.residual = kNaN;
        return f;
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) mx += x[i], my += y[i];
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw std::invalid_argument("fit_order: step sizes must be distinct");
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ssr = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - f.intercept - f.slope * x[i];
        ssr += r * r;
    }
    f.residual = std::sqrt(ssr / static_cast<double>(n));
    f.slope_std_error = std::sqrt(ssr / static_cast<double>(n - 2) / sxx);
    f.valid = true;
    return f;
}

OUReference exact_ou_reference(double gamma, double sigma, Scheme scheme, double delta)
{
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be non-negative");
    if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
    OUReference r;
    r.gamma = gamma;
    r.sigma = sigma;
    r.scheme = scheme;
    r.delta = delta;
    const double kick = std::sqrt(delta) * sigma;
    switch (scheme) {
    case Scheme::explicit_euler:
        r.M << 1.0, delta, -delta, 1.0 - gamma * delta;
        r.b << 0.0, kick;
        break;
    case Scheme::split_step:
    case Scheme::implicit_euler: {
        // z (1 + g d + d^2) = (1 + g d) q + d p_eff, p1 = (p_eff - d z) / (1 + g d)
        const double den = 1.0 + gamma * delta + delta * delta;
        r.M << (1.0 + gamma * delta) / den, delta / den, -delta / den, 1.0 / den;
        if (scheme == Scheme::split_step) r.b << 0.0, kick;
        else r.b = r.M.col(1) * kick;
        break;
    }
    }
    r.spectral_radius = r.M.eigenvalues().cwiseAbs().maxCoeff();
    r.has_stationary = r.spectral_radius < 1.0;
    if (r.has_stationary) r.stationary_cov = solve_stein(r.M, r.b * r.b.transpose());

    r.drift << 0.0, 1.0, -1.0, -gamma;
    Eigen::Matrix2d q = Eigen::Matrix2d::Zero();
    q(1, 1) = sigma * sigma;
    r.continuous_stationary_cov = solve_lyapunov(r.drift, q);
    return r;
}

void OUReference::discrete_moments(long k, const Eigen::Vector2d& x0, Eigen::Vector2d& mean,
                                   Eigen::Matrix2d& cov) const
{
    if (k < 0) throw std::invalid_argument("negative step count");
    mean = x0;
    cov.setZero();
    const Eigen::Matrix2d bb = b * b.transpose();
    for (long i = 0; i < k; ++i) {
        mean = M * mean;
        cov = M * cov * M.transpose() + bb;
    }
}

void OUReference::continuous_moments(double t, const Eigen::Vector2d& x0, Eigen::Vector2d& mean,
                                     Eigen::Matrix2d& cov) const
{
    if (t < 0) throw std::invalid_argument("negative time");
    const Eigen::Matrix2d e = (drift * t).exp();
    mean = e * x0;
    // S(t) = S_inf - e^{tA} S_inf e^{tA^T} solves the covariance ODE from S(0) = 0.
    cov = continuous_stationary_cov - e * continuous_stationary_cov * e.transpose();
}

double gaussian_phase_expectation(const Poly& phi, int dim, const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov)
{
    if (phi.nvars() != 2 * dim) throw std::invalid_argument("observable must live on 2d phase variables");
    if (phi.is_zero()) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    const Eigen::Vector2d ev = es.eigenvalues().cwiseMax(0.0);
    const Eigen::Matrix2d root = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
    const auto rule = gauss_hermite<double>(phi.degree() / 2 + 1);
    const CompiledPoly f(phi);
    Eigen::VectorXd z(2 * dim);
    CompensatedSum acc;
    for_each_tensor_node(rule, 2 * dim, [&](const Eigen::VectorXd& eta, double w) {
        for (int i = 0; i < dim; ++i) {
            const Eigen::Vector2d x = mean + root * Eigen::Vector2d(eta[2 * i], eta[2 * i + 1]);
            z[i] = x[0];
            z[dim + i] = x[1];
        }
        acc.add(w * f.operator()<double>(z));
    });
    return acc.value();
}

EstimateWithCI estimate_expectation(const PotentialModel& model, const StepParams& params, const Poly& phi, double T,
                                    const PhaseState<double>& state0, const McOptions& mc)
{
    params.validate();
    if (mc.chains < 1) throw std::invalid_argument("need at least one chain");
    const int d = model.dimension();
    if (phi.nvars() != 2 * d) throw std::invalid_argument("observable must live on 2d phase variables");
    const long k = steps_for(T, params.delta);
    const PhaseState<double> x0 = default_state(d, state0);
    const CompiledPoly f(phi);
    std::vector<double> values(static_cast<std::size_t>(mc.chains));
    parallel_for(mc.chains, mc.threads, [&](int c) {
        const NoiseSource noise(mc.seed, static_cast<std::uint64_t>(c));
        PhaseState<double> x = x0;
        for (long i = 0; i < k; ++i) {
            const Eigen::VectorXd eta =
                params.sigma == 0.0 ? Eigen::VectorXd::Zero(d) : noise.normals(static_cast<std::uint64_t>(i), d);
            x = step<double>(x, model, params, eta, mc.solver);
        }
        Eigen::VectorXd z(2 * d);
        z << x.q, x.p;
        values[static_cast<std::size_t>(c)] = f.operator()<double>(z);
    });
    const auto me = mean_and_error(values);
    EstimateWithCI e;
    e.estimate = me.mean;
    e.std_error = me.std_error;
    e.chains = mc.chains;
    e.effective_samples = mc.chains;
    e.seed = mc.seed;
    return e;
}

OrderFit weak_error_order(const PotentialModel& model, const StepParams& base, const Poly& phi, double T,
                          const std::vector<double>& ladder, const PhaseState<double>& state0,
                          const WeakErrorOptions& opt)
{
    check_ladder(ladder);
    const int d = model.dimension();
    const PhaseState<double> x0 = default_state(d, state0);
    std::vector<double> err, se;
    double scale = 1.0;

    if (opt.reference == ReferenceKind::exact) {
        require_ou(model, "weak_error_order");
        const Eigen::Vector2d s0 = block_start(x0);
        Eigen::Vector2d m;
        Eigen::Matrix2d c;
        const OUReference cont = exact_ou_reference(base.gamma, base.sigma, base.scheme, ladder.front());
        cont.continuous_moments(T, s0, m, c);
        const double ref = gaussian_value(phi, d, m, c);
        scale = std::max(1.0, std::abs(ref));
        for (double delta : ladder) {
            const long k = steps_for(T, delta);
            const OUReference r = exact_ou_reference(base.gamma, base.sigma, base.scheme, delta);
            r.discrete_moments(k, s0, m, c);
            err.push_back(std::abs(gaussian_value(phi, d, m, c) - ref));
            se.push_back(0.0);
        }
        return fit_order(ladder, err, se, "exact-recursion", scale);
    }

    const double fine = *std::min_element(ladder.begin(), ladder.end()) / opt.fine_factor;
    StepParams p = base;
    p.delta = fine;
    const EstimateWithCI ref = estimate_expectation(model, p, phi, T, x0, opt.mc);
    scale = std::max(1.0, std::abs(ref.estimate));
    for (double delta : ladder) {
        p.delta = delta;
        const EstimateWithCI e = estimate_expectation(model, p, phi, T, x0, opt.mc);
        err.push_back(std::abs(e.estimate - ref.estimate));
        se.push_back(std::hypot(e.std_error, ref.std_error));
    }
    return fit_order(ladder, err, se, "monte-carlo", scale);
}

namespace {

void finish_bias(InvariantBias& out, const std::vector<double>& ladder, const InvariantBiasOptions& opt,
                 const std::string& method)
{
    const std::size_t n = ladder.size();
    std::vector<double> abs_bias(n);
    for (std::size_t i = 0; i < n; ++i) {
        abs_bias[i] = std::abs(out.bias[i]);
        out.bias_over_delta.push_back(out.bias[i] / ladder[i]);
    }
    const double scale = std::max(1.0, std::abs(out.rho_value));
    out.fit = fit_order(ladder, abs_bias, out.bias_std_error, method, scale);

    Eigen::MatrixXd a(static_cast<Eigen::Index>(n), 2);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        a(static_cast<Eigen::Index>(i), 0) = ladder[i];
        a(static_cast<Eigen::Index>(i), 1) = ladder[i] * ladder[i];
        y[static_cast<Eigen::Index>(i)] = out.bias[i];
    }
    out.first_order_coefficient = a.colPivHouseholderQr().solve(y)[0];

    if (!opt.mu1_coefficient) return;
    const double mu1 = *opt.mu1_coefficient;
    const auto it = std::min_element(ladder.begin(), ladder.end());
    const std::size_t imin = static_cast<std::size_t>(it - ladder.begin());
    const double denom = std::max(std::abs(mu1), 1e-300);
    out.mu1_relative_error = std::abs(out.bias_over_delta[imin] - mu1) / denom;
    out.coefficient_relative_error = std::abs(out.first_order_coefficient - mu1) / denom;
    std::vector<double> resid(n);
    for (std::size_t i = 0; i < n; ++i) resid[i] = std::abs(out.bias[i] - ladder[i] * mu1);
    out.residual_fit = fit_order(ladder, resid, out.bias_std_error, method, scale);
}

}  // namespace

InvariantBias invariant_bias(const PotentialModel& model, const StepParams& base, const Poly& phi,
                             const std::vector<double>& ladder, const InvariantBiasOptions& opt)
{
    check_ladder(ladder);
    const int d = model.dimension();
    if (phi.nvars() != 2 * d) throw std::invalid_argument("observable must live on 2d phase variables");
    InvariantBias out;

    if (opt.method == BiasMethod::exact) {
        require_ou(model, "invariant_bias");
        const Eigen::Vector2d zero = Eigen::Vector2d::Zero();
        for (double delta : ladder) {
            const OUReference r = exact_ou_reference(base.gamma, base.sigma, base.scheme, delta);
            if (!r.has_stationary)
                throw std::domain_error("no stationary covariance at delta = " + std::to_string(delta) +
                                        " (spectral radius " + std::to_string(r.spectral_radius) + ")");
            out.rho_value = gaussian_value(phi, d, zero, r.continuous_stationary_cov);
            out.bias.push_back(gaussian_value(phi, d, zero, r.stationary_cov) - out.rho_value);
            out.bias_std_error.push_back(0.0);
        }
        finish_bias(out, ladder, opt, "exact-recursion");
        return out;
    }

    GibbsMeasure measure(model, base.gamma, base.sigma);
    out.rho_value = rho_average(measure, phi);
    const PhaseState<double> x0{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
    Eigen::VectorXd z0(2 * d);
    z0.setZero();
    const CompiledPoly f(phi);
    const double start_gap = std::abs(f.operator()<double>(z0) - out.rho_value);

    for (double delta : ladder) {
        StepParams p = base;
        p.delta = delta;
        p.validate();
        // Pilot: decay of E phi from the origin toward <phi>_rho.
        double lambda = kNaN;
        if (phi.degree() > 0) {
            // Pilot window: 20 time units or the horizon, whichever is shorter.
            std::vector<long> grid;
            const long kmax = std::max<long>(std::min<long>(opt.horizon, std::lround(20.0 / delta)), 8);
            for (long k = 0; k <= kmax; k += std::max<long>(1, kmax / 64)) grid.push_back(k);
            MixingOptions mo;
            mo.method = MixingMethod::monte_carlo;
            mo.mc = opt.mc;
            mo.limit = out.rho_value;
            try {
                lambda = mixing_rate(model, p, phi, grid, x0, mo).lambda;
            } catch (const std::invalid_argument&) {
                lambda = kNaN;
            }
        }
        out.pilot_lambda.push_back(lambda);
        long burn = opt.burn_in;
        if (burn < 0)
            burn = (std::isfinite(lambda) && lambda > 0) ? static_cast<long>(std::ceil(10.0 / (lambda * delta)))
                                                         : opt.horizon;
        out.burn_in_steps.push_back(burn);

        std::vector<double> chain_means(static_cast<std::size_t>(opt.mc.chains));
        parallel_for(opt.mc.chains, opt.mc.threads, [&](int c) {
            const NoiseSource noise(opt.mc.seed, static_cast<std::uint64_t>(c));
            PhaseState<double> x = x0;
            CompensatedSum acc;
            Eigen::VectorXd z(2 * d);
            for (long i = 0; i < burn + opt.horizon; ++i) {
                x = step<double>(x, model, p, noise.normals(static_cast<std::uint64_t>(i), d), opt.mc.solver);
                if (i >= burn) {
                    z << x.q, x.p;
                    acc.add(f.operator()<double>(z));
                }
            }
            chain_means[static_cast<std::size_t>(c)] = acc.value() / static_cast<double>(opt.horizon);
        });
        const auto me = mean_and_error(chain_means);
        out.bias.push_back(me.mean - out.rho_value);
        out.bias_std_error.push_back(me.std_error);
        if (std::isfinite(lambda) && lambda > 0) {
            const double residual = std::exp(-lambda * static_cast<double>(burn) * delta) * start_gap;
            if (residual > std::abs(me.mean - out.rho_value)) out.burn_in_insufficient = true;
        } else if (phi.degree() > 0) {
            out.burn_in_insufficient = true;
        }
    }
    finish_bias(out, ladder, opt, "monte-carlo");
    return out;
}

MixingFit fit_decay_envelope(const std::vector<double>& times, const std::vector<double>& deviations)
{
    if (times.size() != deviations.size()) throw std::invalid_argument("fit_decay_envelope: size mismatch");
    MixingFit out;
    out.times = times;
    out.deviations = deviations;
    const std::size_t n = times.size();
    double top = 0.0;
    for (double e : deviations) top = std::max(top, std::abs(e));
    const double floor = 1e-12 * top;
    auto usable = [&](std::size_t i) { return std::isfinite(deviations[i]) && std::abs(deviations[i]) > floor; };

    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double a = std::abs(deviations[i - 1]), b = std::abs(deviations[i]), c = std::abs(deviations[i + 1]);
        if (usable(i) && b > a && b >= c) out.envelope.push_back(i);
    }
    if (out.envelope.size() < 3) {
        out.envelope.clear();
        for (std::size_t i = 0; i < n; ++i)
            if (usable(i)) out.envelope.push_back(i);
    }
    if (out.envelope.size() < 2) throw std::invalid_argument("decay fit needs at least two nonzero deviations");

    const std::size_t m = out.envelope.size();
    double mx = 0, my = 0;
    for (std::size_t j : out.envelope) mx += times[j], my += std::log(std::abs(deviations[j]));
    mx /= static_cast<double>(m);
    my /= static_cast<double>(m);
    double sxx = 0, sxy = 0;
    for (std::size_t j : out.envelope) {
        sxx += (times[j] - mx) * (times[j] - mx);
        sxy += (times[j] - mx) * (std::log(std::abs(deviations[j])) - my);
    }
    if (!(sxx > 0.0)) throw std::invalid_argument("decay fit needs distinct times");
    const double slope = sxy / sxx;
    out.lambda = -slope;
    out.prefactor = std::exp(my - slope * mx);
    double ssr = 0;
    for (std::size_t j : out.envelope) {
        const double r = std::log(std::abs(deviations[j])) - (my + slope * (times[j] - mx));
        ssr += r * r;
    }
    out.residual = std::sqrt(ssr / static_cast<double>(m));
    const auto [lo, hi] = std::minmax_element(times.begin(), times.end());
    out.spans_three_decay_lengths = out.lambda * (*hi - *lo) >= 3.0;
    return out;
}

MixingFit mixing_rate(const PotentialModel& model, const StepParams& params, const Poly& phi,
                      const std::vector<long>& k_grid, const PhaseState<double>& state0, const MixingOptions& opt)
{
    params.validate();
    const int d = model.dimension();
    if (phi.nvars() != 2 * d) throw std::invalid_argument("observable must live on 2d phase variables");
    if (phi.degree() <= 0) throw NotCentered("observable is constant; decay rate is undefined");
    if (k_grid.size() < 3) throw std::invalid_argument("k grid needs at least 3 points");
    if (!std::is_sorted(k_grid.begin(), k_grid.end()) || k_grid.front() < 0)
        throw std::invalid_argument("k grid must be sorted and non-negative");
    const PhaseState<double> x0 = default_state(d, state0);
    std::vector<double> times, values;
    for (long k : k_grid) times.push_back(static_cast<double>(k) * params.delta);
    std::string method;
    double limit = 0.0;

    if (opt.method == MixingMethod::exact) {
        require_ou(model, "mixing_rate");
        const Eigen::Vector2d s0 = block_start(x0);
        const OUReference r = exact_ou_reference(params.gamma, params.sigma, params.scheme, params.delta);
        if (opt.limit) limit = *opt.limit;
        else if (r.has_stationary) limit = gaussian_value(phi, d, Eigen::Vector2d::Zero(), r.stationary_cov);
        else throw std::domain_error("no stationary law for the discrete map");
        Eigen::Vector2d m = s0;
        Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
        const Eigen::Matrix2d bb = r.b * r.b.transpose();
        long at = 0;
        for (long k : k_grid) {
            for (; at < k; ++at) {
                m = r.M * m;
                c = r.M * c * r.M.transpose() + bb;
            }
            values.push_back(gaussian_value(phi, d, m, c));
        }
        method = "exact-recursion";
    } else {
        if (opt.limit) limit = *opt.limit;
        else {
            GibbsMeasure measure(model, params.gamma, params.sigma);
            limit = rho_average(measure, phi);
        }
        const CompiledPoly f(phi);
        const std::size_t ng = k_grid.size();
        std::vector<std::vector<double>> per_chain(static_cast<std::size_t>(opt.mc.chains),
                                                   std::vector<double>(ng));
        parallel_for(opt.mc.chains, opt.mc.threads, [&](int ch) {
            const NoiseSource noise(opt.mc.seed, static_cast<std::uint64_t>(ch));
            PhaseState<double> x = x0;
            Eigen::VectorXd z(2 * d);
            long at = 0;
            auto& row = per_chain[static_cast<std::size_t>(ch)];
            for (std::size_t g = 0; g < ng; ++g) {
                for (; at < k_grid[g]; ++at)
                    x = step<double>(x, model, params, noise.normals(static_cast<std::uint64_t>(at), d),
                                     opt.mc.solver);
                z << x.q, x.p;
                row[g] = f.operator()<double>(z);
            }
        });
        std::vector<double> se;
        for (std::size_t g = 0; g < ng; ++g) {
            std::vector<double> col(static_cast<std::size_t>(opt.mc.chains));
            for (std::size_t ch = 0; ch < col.size(); ++ch) col[ch] = per_chain[ch][g];
            const auto me = mean_and_error(col);
            values.push_back(me.mean);
            se.push_back(me.std_error);
        }
        // Past the first point lost in sampling noise the envelope tracks noise.
        std::size_t keep = ng;
        for (std::size_t g = 3; g < ng; ++g)
            if (std::abs(values[g] - limit) < 2.0 * se[g]) {
                keep = g;
                break;
            }
        times.resize(keep);
        values.resize(keep);
        method = "monte-carlo";
    }
    std::vector<double> dev;
    for (double v : values) dev.push_back(std::abs(v - limit));
    MixingFit fit = fit_decay_envelope(times, dev);
    fit.method = method;
    return fit;
}

MixingFit continuous_ou_mixing_rate(double gamma, double sigma, const Poly& phi, const std::vector<double>& t_grid,
                                    const PhaseState<double>& state0)
{
    const int d = state0.dimension();
    if (d < 1) throw std::invalid_argument("initial state required");
    if (phi.nvars() != 2 * d) throw std::invalid_argument("observable must live on 2d phase variables");
    if (phi.degree() <= 0) throw NotCentered("observable is constant; decay rate is undefined");
    const Eigen::Vector2d s0 = block_start(state0);
    // delta is irrelevant to the continuous propagator.
    const OUReference r = exact_ou_reference(gamma, sigma, Scheme::split_step, 1.0);
    const double limit = gaussian_value(phi, d, Eigen::Vector2d::Zero(), r.continuous_stationary_cov);
    std::vector<double> dev;
    for (double t : t_grid) {
        Eigen::Vector2d m;
        Eigen::Matrix2d c;
        r.continuous_moments(t, s0, m, c);
        dev.push_back(std::abs(gaussian_value(phi, d, m, c) - limit));
    }
    MixingFit fit = fit_decay_envelope(t_grid, dev);
    fit.method = "exact-propagator";
    return fit;
}

}  // namespace lbea
