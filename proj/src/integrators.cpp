#include "lbea/integrators.hpp"

#include "lbea/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lbea {

std::string to_string(Scheme s)
{
    switch (s) {
    case Scheme::split_step: return "split-step";
    case Scheme::implicit_euler: return "implicit-euler";
    case Scheme::explicit_euler: return "explicit-euler";
    }
    return "unknown";
}

Scheme parse_scheme(const std::string& s)
{
    std::string t = s;
    std::replace(t.begin(), t.end(), '_', '-');
    if (t == "split-step") return Scheme::split_step;
    if (t == "implicit-euler") return Scheme::implicit_euler;
    if (t == "explicit-euler") return Scheme::explicit_euler;
    throw std::invalid_argument("unknown scheme '" + s + "' (expected split-step, implicit-euler, explicit-euler)");
}

void StepParams::validate() const
{
    if (!(delta > 0.0) || !std::isfinite(delta)) throw std::invalid_argument("step size delta must be positive");
    if (!(gamma > 0.0)) throw std::invalid_argument("friction gamma must be positive");
    if (!(sigma >= 0.0)) throw std::invalid_argument("noise amplitude sigma must be non-negative");
}

void SolverConfig::validate() const
{
    if (!(tol > 0.0)) throw std::invalid_argument("solver tolerance must be positive");
    if (max_iter < 1) throw std::invalid_argument("solver max_iter must be at least 1");
}

StabilityBounds delta_max(double gamma, double theta, double beta_b2)
{
    if (!(gamma > 0.0)) throw std::invalid_argument("delta_max: gamma must be positive");
    if (!(theta >= 0.0)) throw std::invalid_argument("delta_max: theta must be non-negative");
    if (!(beta_b2 > 0.0 && beta_b2 < 1.0)) throw std::invalid_argument("delta_max: beta must lie in (0,1)");
    StabilityBounds b;
    if (theta == 0.0) {
        b.solvability = INFINITY;
        b.moment = 1.0 / gamma;
    } else {
        b.solvability = (gamma + std::sqrt(gamma * gamma + 4.0 * theta)) / (2.0 * theta);
        b.moment = std::min(1.0 / gamma, gamma * beta_b2 / (4.0 * theta));
    }
    return b;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double uniform_open(std::uint64_t h)
{
    // (0, 1]
    return (static_cast<double>(h >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace

double NoiseSource::normal(std::uint64_t step, int component) const
{
    std::uint64_t key = splitmix64(seed_);
    key = splitmix64(key ^ stream_);
    key = splitmix64(key ^ step);
    const std::uint64_t k1 = splitmix64(key ^ (2ULL * static_cast<std::uint64_t>(component)));
    const std::uint64_t k2 = splitmix64(key ^ (2ULL * static_cast<std::uint64_t>(component) + 1ULL));
    const double u1 = uniform_open(k1);
    const double u2 = uniform_open(k2);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Eigen::VectorXd NoiseSource::normals(std::uint64_t step, int dim) const
{
    Eigen::VectorXd out(dim);
    for (int i = 0; i < dim; ++i) out[i] = normal(step, i);
    return out;
}

std::vector<Observable> standard_observables(const std::vector<std::string>& names, const PotentialModel& model,
                                             double gamma)
{
    std::vector<Observable> out;
    for (const auto& n : names) {
        if (n == "q2") {
            out.push_back({n, [](const PhaseState<double>& s) { return s.q.squaredNorm(); }});
        } else if (n == "p2") {
            out.push_back({n, [](const PhaseState<double>& s) { return s.p.squaredNorm(); }});
        } else if (n == "H") {
            out.push_back({n, [&model](const PhaseState<double>& s) { return hamiltonian(s, model); }});
        } else if (n == "Gamma") {
            out.push_back({n, [&model, gamma](const PhaseState<double>& s) { return lyapunov_gamma(s, model, gamma); }});
        } else {
            throw std::invalid_argument("unknown observable '" + n + "' (expected q2, p2, H, Gamma)");
        }
    }
    return out;
}

TrajectorySummary simulate(const PhaseState<double>& state0, const PotentialModel& model, const StepParams& params,
                           long n_steps, const NoiseSource& noise, const std::vector<Observable>& observers,
                           long stride, const SolverConfig& solver)
{
    if (n_steps < 0) throw std::invalid_argument("simulate: n_steps must be non-negative");
    if (stride < 1) throw std::invalid_argument("simulate: stride must be positive");
    params.validate();
    solver.validate();

    TrajectorySummary sum;
    sum.series.resize(observers.size());
    auto record = [&](long k, const PhaseState<double>& s) {
        sum.steps.push_back(k);
        for (std::size_t i = 0; i < observers.size(); ++i) sum.series[i].push_back(observers[i].fn(s));
    };

    PhaseState<double> s = state0;
    record(0, s);
    const int d = s.dimension();
    for (long k = 0; k < n_steps; ++k) {
        StepInfo info;
        try {
            s = step<double>(s, model, params, noise.normals(static_cast<std::uint64_t>(k), d), solver, &info);
        } catch (const std::exception& e) {
            throw StepError(std::string("step ") + std::to_string(k) + ": " + e.what(), k);
        }
        sum.total_solver_iterations += info.solver_iterations;
        sum.max_solver_iterations = std::max(sum.max_solver_iterations, info.solver_iterations);
        sum.max_solver_residual = std::max(sum.max_solver_residual, info.solver_residual);
        if (info.uniqueness_warning) ++sum.uniqueness_warnings;
        if (!s.finite()) {
            sum.diverged = true;
            record(k + 1, s);
            break;
        }
        if ((k + 1) % stride == 0 || k + 1 == n_steps) record(k + 1, s);
    }
    sum.final_state = s;
    return sum;
}

}  // namespace lbea
