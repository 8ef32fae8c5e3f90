#include "lbea/lyapunov.hpp"

#include "lbea/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lbea {

double lyapunov_lower_bound(const PhaseState<double>& s, double gamma)
{
    return s.p.squaredNorm() / 8.0 + gamma * gamma * s.q.squaredNorm() / 12.0 + 1.0;
}

double generator_of_gamma(const PhaseState<double>& s, const PotentialModel& model, double gamma, double sigma)
{
    const double d = s.dimension();
    return -0.5 * gamma * s.p.squaredNorm() - 0.5 * gamma * s.q.dot(model.gradient<double>(s.q)) +
           0.5 * d * sigma * sigma;
}

double generator_of_gamma_power(const PhaseState<double>& s, const PotentialModel& model, double gamma, double sigma,
                                int ell)
{
    if (ell < 1) throw std::invalid_argument("generator_of_gamma_power: ell must be >= 1");
    const double g = lyapunov_gamma(s, model, gamma);
    const double lg = generator_of_gamma(s, model, gamma, sigma);
    if (ell == 1) return lg;
    // |d_p Gamma|^2 = |p + gamma q / 2|^2
    const double grad_p2 = (s.p + 0.5 * gamma * s.q).squaredNorm();
    return ell * std::pow(g, ell - 1) * lg + 0.5 * ell * (ell - 1) * sigma * sigma * std::pow(g, ell - 2) * grad_p2;
}

PhaseBox PhaseBox::cube(int dim, double half_width)
{
    return {Box::cube(dim, half_width), Box::cube(dim, half_width)};
}

void for_each_phase_node(const PhaseBox& box, int resolution, const std::function<void(const PhaseState<double>&)>& f)
{
    const int d = box.dimension();
    Box joint{Eigen::VectorXd(2 * d), Eigen::VectorXd(2 * d)};
    joint.lower << box.q_box.lower, box.p_box.lower;
    joint.upper << box.q_box.upper, box.p_box.upper;
    PhaseState<double> s{Eigen::VectorXd(d), Eigen::VectorXd(d)};
    for_each_grid_node(joint, resolution, [&](const Eigen::VectorXd& x) {
        s.q = x.head(d);
        s.p = x.tail(d);
        f(s);
    });
}

namespace {

bool on_phase_boundary(const PhaseBox& box, const PhaseState<double>& s)
{
    for (int i = 0; i < s.dimension(); ++i) {
        if (s.q[i] == box.q_box.lower[i] || s.q[i] == box.q_box.upper[i]) return true;
        if (s.p[i] == box.p_box.lower[i] || s.p[i] == box.p_box.upper[i]) return true;
    }
    return false;
}

}  // namespace

LyapunovReport check_drift_inequality(const PotentialModel& model, double gamma, double sigma,
                                      const PotentialAudit& audit, int ell, const PhaseBox& box, int resolution)
{
    if (ell < 1) throw std::invalid_argument("drift check: ell must be >= 1");
    if (!audit.b2_pass || !(audit.beta_b2 > 0.0))
        throw std::invalid_argument("drift check: audit has no passing B-2 constants (beta, kappa)");
    if (box.dimension() != model.dimension()) throw std::invalid_argument("drift check: box dimension mismatch");

    LyapunovReport r;
    r.ell = ell;
    r.box = box;
    r.resolution = resolution;
    const double d = model.dimension();
    const double a1 = audit.beta_b2 * gamma;
    const double d1 = 0.5 * d * sigma * sigma + gamma * (audit.kappa + audit.beta_b2);
    r.a_ell = ell == 1 ? a1 : a1 * (ell - 1);

    double worst = -INFINITY;
    double boundary = -INFINITY;
    double scale = 1.0;
    PhaseState<double> worst_node;
    // excess = L Gamma^ell + a_ell Gamma^ell; compared against d_ell
    for_each_phase_node(box, resolution, [&](const PhaseState<double>& s) {
        const double g = std::pow(lyapunov_gamma(s, model, gamma), ell);
        const double lhs = generator_of_gamma_power(s, model, gamma, sigma, ell);
        const double excess = lhs + r.a_ell * g;
        scale = std::max({scale, std::abs(lhs), r.a_ell * g});
        if (on_phase_boundary(box, s)) boundary = std::max(boundary, excess);
        if (excess > worst) {
            worst = excess;
            worst_node = s;
        }
    });
    r.d_ell = ell == 1 ? d1 : std::max(0.0, worst);
    r.worst_violation = worst - r.d_ell;
    r.worst_node = worst_node;
    r.slack = 1e-9 * scale;
    r.boundary_max = boundary;
    r.pass = r.worst_violation <= r.slack;
    // A grid maximum on the box edge means d_ell depends on where the box was cut.
    if (ell >= 2) r.pass = r.pass && boundary < r.d_ell;
    return r;
}

MomentSweep moment_sweep(const PotentialModel& model, const StepParams& params, const PhaseState<double>& state0,
                         int ell, long n_steps, int chains, std::uint64_t seed, const MomentSweepOptions& opt)
{
    if (ell < 1) throw std::invalid_argument("moment_sweep: ell must be >= 1");
    if (chains < 1) throw std::invalid_argument("moment_sweep: chains must be >= 1");
    if (n_steps < 0) throw std::invalid_argument("moment_sweep: n_steps must be >= 0");
    if (opt.stride < 1) throw std::invalid_argument("moment_sweep: stride must be >= 1");
    params.validate();

    MomentSweep out;
    out.chains = chains;
    out.n_steps = n_steps;
    out.delta = params.delta;
    out.ell = ell;
    out.seed = seed;
    for (long k = 0; k <= n_steps; k += opt.stride) out.steps.push_back(k);
    if (out.steps.back() != n_steps) out.steps.push_back(n_steps);
    const std::size_t n_log = out.steps.size();

    auto observe = [&](const PhaseState<double>& s) {
        return std::pow(lyapunov_gamma_delta(s, model, params.gamma, params.delta), ell);
    };

    // values[chain][log index]; a chain that fails is filled with +inf from then on.
    std::vector<std::vector<double>> values(static_cast<std::size_t>(chains), std::vector<double>(n_log, INFINITY));
    const int d = state0.dimension();
    parallel_for(chains, opt.threads, [&](int c) {
        NoiseSource noise(seed, static_cast<std::uint64_t>(c));
        PhaseState<double> s = state0;
        auto& row = values[static_cast<std::size_t>(c)];
        std::size_t li = 0;
        for (long k = 0; k <= n_steps; ++k) {
            if (li < n_log && out.steps[li] == k) row[li++] = observe(s);
            if (k == n_steps) break;
            try {
                s = step<double>(s, model, params, noise.normals(static_cast<std::uint64_t>(k), d), opt.solver);
            } catch (const SolverError&) {
                return;
            }
            if (!s.finite()) return;
        }
    });

    std::vector<double> column(static_cast<std::size_t>(chains));
    double sup = -INFINITY;
    double initial = 0.0;
    for (std::size_t li = 0; li < n_log; ++li) {
        for (int c = 0; c < chains; ++c) column[c] = values[c][li];
        const MeanAndError me = mean_and_error(column);
        const bool finite = std::isfinite(me.mean);
        if (li == 0) initial = me.mean;
        out.mean.push_back(me.mean);
        out.std_error.push_back(finite ? me.std_error : INFINITY);
        sup = std::max(sup, finite ? me.mean : INFINITY);
        out.running_sup.push_back(sup);
        if (!out.diverged && (!finite || me.mean > opt.divergence_factor * initial)) {
            out.diverged = true;
            out.divergence_step = out.steps[li];
        }
    }
    return out;
}

namespace {

// All derivative multi-indices (as variable lists) of order exactly `order`
// in `nvars` variables, non-decreasing so each mixed partial appears once.
void derivative_tuples(int nvars, int order, std::vector<std::vector<int>>& out)
{
    std::vector<int> cur;
    std::function<void(int)> rec = [&](int start) {
        if (static_cast<int>(cur.size()) == order) {
            out.push_back(cur);
            return;
        }
        for (int v = start; v < nvars; ++v) {
            cur.push_back(v);
            rec(v);
            cur.pop_back();
        }
    };
    rec(0);
}

}  // namespace

WeightedNorm weighted_norm(const Poly& f, int ell, int k, const PhaseBox& box, int resolution,
                           const PotentialModel& model, double gamma)
{
    if (ell < 0 || k < 0) throw std::invalid_argument("weighted_norm: ell and k must be >= 0");
    const int d = box.dimension();
    if (f.nvars() != 2 * d) throw std::invalid_argument("weighted_norm: polynomial must be over (q, p)");
    std::vector<std::vector<Poly>> derivs(static_cast<std::size_t>(k + 1));
    for (int j = 0; j <= k; ++j) {
        std::vector<std::vector<int>> tuples;
        derivative_tuples(2 * d, j, tuples);
        for (const auto& t : tuples) derivs[j].push_back(f.derivative(t));
    }
    WeightedNorm out;
    Eigen::VectorXd x(2 * d);
    for_each_phase_node(box, resolution, [&](const PhaseState<double>& s) {
        x << s.q, s.p;
        const double w = std::pow(lyapunov_gamma(s, model, gamma), ell);
        const bool bnd = on_phase_boundary(box, s);
        for (int j = 0; j <= k; ++j)
            for (const auto& dp : derivs[j]) {
                const double r = std::abs(dp(x)) / w;
                out.norm = std::max(out.norm, r);
                if (j >= 1) out.seminorm = std::max(out.seminorm, r);
                if (bnd) out.boundary_ratio = std::max(out.boundary_ratio, r);
            }
    });
    return out;
}

WeightedNorm weighted_norm(const std::function<double(const PhaseState<double>&)>& f, int ell, int k,
                           const PhaseBox& box, int resolution, const PotentialModel& model, double gamma, double h)
{
    if (ell < 0 || k < 0) throw std::invalid_argument("weighted_norm: ell and k must be >= 0");
    if (k > 2) throw std::invalid_argument("weighted_norm: finite differences support k <= 2");
    const int d = box.dimension();
    auto shifted = [&](const PhaseState<double>& s, int var, double by) {
        PhaseState<double> t = s;
        if (var < d) t.q[var] += by;
        else t.p[var - d] += by;
        return t;
    };
    WeightedNorm out;
    for_each_phase_node(box, resolution, [&](const PhaseState<double>& s) {
        const double w = std::pow(lyapunov_gamma(s, model, gamma), ell);
        const bool bnd = on_phase_boundary(box, s);
        auto take = [&](double v, int order) {
            const double r = std::abs(v) / w;
            out.norm = std::max(out.norm, r);
            if (order >= 1) out.seminorm = std::max(out.seminorm, r);
            if (bnd) out.boundary_ratio = std::max(out.boundary_ratio, r);
        };
        const double f0 = f(s);
        take(f0, 0);
        if (k >= 1)
            for (int i = 0; i < 2 * d; ++i) take((f(shifted(s, i, h)) - f(shifted(s, i, -h))) / (2 * h), 1);
        if (k >= 2)
            for (int i = 0; i < 2 * d; ++i)
                for (int j = i; j < 2 * d; ++j) {
                    double v;
                    if (i == j) {
                        v = (f(shifted(s, i, h)) - 2 * f0 + f(shifted(s, i, -h))) / (h * h);
                    } else {
                        v = (f(shifted(shifted(s, i, h), j, h)) - f(shifted(shifted(s, i, h), j, -h)) -
                             f(shifted(shifted(s, i, -h), j, h)) + f(shifted(shifted(s, i, -h), j, -h))) /
                            (4 * h * h);
                    }
                    take(v, 2);
                }
    });
    return out;
}

}  // namespace lbea
