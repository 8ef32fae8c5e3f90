#include "lbea/expansion.hpp"

#include "lbea/stats.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

namespace lbea {

namespace {

// All ordered tuples of `parts` non-negative integers summing to `total`.
void compositions(int total, int parts, const std::function<void(const std::vector<int>&)>& f)
{
    std::vector<int> cur(static_cast<std::size_t>(parts), 0);
    std::function<void(int, int)> rec = [&](int i, int left) {
        if (i == parts - 1) {
            cur[i] = left;
            f(cur);
            return;
        }
        for (int v = 0; v <= left; ++v) {
            cur[i] = v;
            rec(i + 1, left - v);
        }
    };
    if (parts == 0) {
        if (total == 0) f(cur);
        return;
    }
    rec(0, total);
}

// Component i of d^{n+1}V(x)(e_i, h_1, ..., h_n) as a polynomial over (x, y).
Poly derivative_contraction(const Poly& v, int i, const std::vector<const std::vector<Poly>*>& h, int nvars)
{
    const int d = v.nvars();
    Poly acc(nvars);
    std::function<void(std::size_t, const Poly&, const Poly&)> rec = [&](std::size_t r, const Poly& dv,
                                                                          const Poly& prod) {
        if (dv.is_zero() || prod.is_zero()) return;
        if (r == h.size()) {
            acc += dv.extended(nvars) * prod;
            return;
        }
        for (int j = 0; j < d; ++j) {
            const Poly& hj = (*h[r])[j];
            if (hj.is_zero()) continue;
            rec(r + 1, dv.derivative(j), prod * hj);
        }
    };
    rec(0, v.derivative(i), Poly::constant(nvars, 1.0));
    return acc;
}

}  // namespace

Eigen::VectorXd DriftExpansion::evaluate(int k, const PhaseState<double>& s) const
{
    Eigen::VectorXd x(2 * dimension);
    x << s.q, s.p;
    const auto& dk = (*this)[k];
    Eigen::VectorXd out(dimension);
    for (int i = 0; i < dimension; ++i) out[i] = dk[i](x);
    return out;
}

DriftExpansion drift_coefficients(const PotentialModel& model, double gamma, int K)
{
    if (K < 1) throw std::invalid_argument("drift_coefficients: K must be >= 1");
    const Poly& v = model.poly_form();
    const int d = model.dimension();
    const int nv = 2 * d;
    DriftExpansion out;
    out.dimension = d;
    out.gamma = gamma;

    // gamma y + dV(x)
    std::vector<Poly> base(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) base[i] = gamma * Poly::variable(nv, d + i) + v.derivative(i).extended(nv);

    for (int k = 1; k <= K; ++k) {
        std::vector<Poly> dk(static_cast<std::size_t>(d), Poly(nv));
        if (k == 1) {
            for (int i = 0; i < d; ++i) dk[i] = Poly::variable(nv, d + i);
            out.terms.push_back(std::move(dk));
            continue;
        }
        const double lead = ((k - 1) % 2 ? -1.0 : 1.0) * std::pow(gamma, k - 2);
        for (int i = 0; i < d; ++i) dk[i] = lead * base[i];
        for (int j = 2; j <= k - 1; ++j) {
            const double cj = ((j - 1) % 2 ? -1.0 : 1.0) * std::pow(gamma, j - 2);
            for (int n = 1; n <= k - j; ++n) {
                double nfact = 1.0;
                for (int t = 2; t <= n; ++t) nfact *= t;
                compositions(k - j - n, n, [&](const std::vector<int>& ks) {
                    std::vector<const std::vector<Poly>*> args;
                    for (int kk : ks) args.push_back(&out.terms[static_cast<std::size_t>(kk)]);  // d_{kk+1}
                    for (int i = 0; i < d; ++i) dk[i] += (cj / nfact) * derivative_contraction(v, i, args, nv);
                });
            }
        }
        out.terms.push_back(std::move(dk));
    }
    return out;
}

std::vector<double> chebyshev_ladder(double radius, int points)
{
    if (points < 2 || !(radius > 0.0)) throw std::invalid_argument("chebyshev_ladder: need radius > 0 and >= 2 points");
    std::vector<double> out;
    for (int k = 0; k < points; ++k) out.push_back(radius * std::cos(std::numbers::pi * (2 * k + 1) / (2.0 * points)));
    return out;
}

std::vector<double> geometric_ladder(double delta0, int points, double lo_div, double hi_div)
{
    if (points < 2) throw std::invalid_argument("geometric_ladder: need at least two points");
    if (!(delta0 > 0.0) || !(lo_div > hi_div) || !(hi_div > 0.0))
        throw std::invalid_argument("geometric_ladder: need delta0 > 0 and lo_div > hi_div > 0");
    std::vector<double> out;
    const double lo = delta0 / lo_div, hi = delta0 / hi_div;
    for (int i = 0; i < points; ++i) out.push_back(lo * std::pow(hi / lo, double(i) / (points - 1)));
    return out;
}

PowerFit fit_power_series(const std::vector<long double>& x, const std::vector<long double>& y,
                          const std::vector<double>& powers)
{
    using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
    const int m = static_cast<int>(x.size()), n = static_cast<int>(powers.size());
    if (static_cast<int>(y.size()) != m) throw std::invalid_argument("fit_power_series: size mismatch");
    if (m < n) throw std::invalid_argument("fit_power_series: fewer samples than unknowns");
    long double xmax = 0;
    for (long double v : x) xmax = std::max(xmax, std::abs(v));
    MatL a(m, n);
    VecL b(m);
    for (int i = 0; i < m; ++i) {
        b[i] = y[i];
        for (int j = 0; j < n; ++j) a(i, j) = std::pow(x[i] / xmax, static_cast<long double>(powers[j]));
    }
    Eigen::JacobiSVD<MatL> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VecL c = svd.solve(b);
    PowerFit out;
    const auto& sv = svd.singularValues();
    out.condition = static_cast<double>(sv[0] / sv[sv.size() - 1]);
    for (int j = 0; j < n; ++j) out.coeffs.push_back(c[j] / std::pow(xmax, static_cast<long double>(powers[j])));
    return out;
}

namespace {

SolverConfig tight_solver()
{
    SolverConfig s;
    s.tol = 1e-30;  // the round-off floor of the scalar type governs
    s.max_iter = 200;
    return s;
}

std::vector<double> integer_powers(int n)
{
    std::vector<double> p;
    for (int i = 0; i < n; ++i) p.push_back(i);
    return p;
}

}  // namespace

std::vector<Eigen::VectorXd> fixed_point_taylor(const PotentialModel& model, double gamma,
                                                const PhaseState<double>& s, int K,
                                                const std::vector<double>& ladder)
{
    const int d = s.dimension();
    const int m = static_cast<int>(ladder.size());
    if (m < K) throw std::invalid_argument("fixed_point_taylor: ladder shorter than K");
    std::vector<long double> xs(ladder.begin(), ladder.end());
    std::vector<std::vector<long double>> ys(static_cast<std::size_t>(d));
    const VectorX<long double> q = s.q.cast<long double>(), p = s.p.cast<long double>();
    for (double delta : ladder) {
        auto sol = solve_implicit_position<long double>(model, q, p, delta, gamma, tight_solver());
        if (sol.status != SolveStatus::converged) throw SolverError("fixed_point_taylor: solve failed", {}, 0.0);
        for (int i = 0; i < d; ++i) ys[i].push_back(sol.z[i] - q[i]);
    }
    std::vector<double> powers;
    for (int k = 1; k <= m; ++k) powers.push_back(k);
    std::vector<Eigen::VectorXd> out(static_cast<std::size_t>(K), Eigen::VectorXd(d));
    for (int i = 0; i < d; ++i) {
        const PowerFit f = fit_power_series(xs, ys[i], powers);
        for (int k = 0; k < K; ++k) out[k][i] = static_cast<double>(f.coeffs[k]);
    }
    return out;
}

namespace {

struct LadderValues {
    std::vector<long double> deltas;
    std::vector<std::vector<long double>> values;  // [phi][delta]
};

LadderValues ladder_expectations(Scheme scheme, const PotentialModel& model, double gamma, double sigma,
                                 const std::vector<CompiledPoly>& phis, const PhaseState<double>& s,
                                 const std::vector<double>& ladder, const QuadratureRule<long double>& rule)
{
    LadderValues lv;
    lv.values.assign(phis.size(), {});
    for (double delta : ladder) {
        StepParams params;
        params.delta = delta;
        params.gamma = gamma;
        params.sigma = sigma;
        params.scheme = scheme;
        const auto e = one_step_expectations<long double>(model, params, s, phis, rule, tight_solver());
        lv.deltas.push_back(delta);
        for (std::size_t i = 0; i < phis.size(); ++i) lv.values[i].push_back(e[i]);
    }
    return lv;
}

std::vector<double> resolve_ladder(const std::vector<double>& given, double delta0, int points, double lo, double hi)
{
    return given.empty() ? geometric_ladder(delta0, points, lo, hi) : given;
}

}  // namespace

WeakCoefficients one_step_weak_coefficients(Scheme scheme, const PotentialModel& model, double gamma, double sigma,
                                            const Poly& phi, int N, const PhaseState<double>& s,
                                            const ExtractionOptions& opt)
{
    if (N < 0) throw std::invalid_argument("one_step_weak_coefficients: N must be >= 0");
    if (opt.gh_nodes < N + 1) throw std::invalid_argument("one_step_weak_coefficients: gh_nodes must be >= N + 1");
    const auto ladder = resolve_ladder(opt.ladder, opt.delta0, 12, 512, 8);
    const int terms = opt.fit_terms > 0 ? opt.fit_terms : static_cast<int>(ladder.size());
    if (terms < N + 1) throw std::invalid_argument("one_step_weak_coefficients: fit has fewer than N + 1 terms");
    const auto rule = gauss_hermite<long double>(opt.gh_nodes);
    const std::vector<CompiledPoly> phis{CompiledPoly(phi)};

    WeakCoefficients out;
    const LadderValues lv = ladder_expectations(scheme, model, gamma, sigma, phis, s, ladder, rule);
    const PowerFit fit = fit_power_series(lv.deltas, lv.values[0], integer_powers(terms));
    out.condition = fit.condition;
    if (fit.condition > opt.max_condition)
        throw ExtractionError("one_step_weak_coefficients: ill-conditioned ladder", fit.condition);
    for (int n = 0; n <= N; ++n) out.c.push_back(static_cast<double>(fit.coeffs[n]));

    if (opt.check_half_powers) {
        // Fit in s = delta^{1/2} on symmetric nodes; s < 0 means the noise
        // kick has amplitude s sigma. Odd powers of s are the half powers of delta.
        const auto nodes = chebyshev_ladder(opt.half_radius > 0.0 ? opt.half_radius : std::sqrt(opt.delta0 / 64.0),
                                            opt.half_points);
        QuadratureRule<long double> flipped = rule;
        for (auto& x : flipped.nodes) x = -x;
        std::vector<long double> ss, es;
        for (double sv : nodes) {
            StepParams params;
            params.delta = sv * sv;
            params.gamma = gamma;
            params.sigma = sigma;
            params.scheme = scheme;
            ss.push_back(sv);
            es.push_back(one_step_expectations<long double>(model, params, s, phis, sv < 0 ? flipped : rule,
                                                            tight_solver())[0]);
        }
        const PowerFit hf = fit_power_series(ss, es, integer_powers(opt.half_points));
        out.half_condition = hf.condition;
        out.half_powers = std::vector<double>{static_cast<double>(hf.coeffs[1]), static_cast<double>(hf.coeffs[3])};
        const double scale = std::max({std::abs(static_cast<double>(hf.coeffs[0])),
                                       std::abs(static_cast<double>(hf.coeffs[2])), 1e-300});
        out.half_power_relative = std::max(std::abs((*out.half_powers)[0]), std::abs((*out.half_powers)[1])) / scale;
    }
    return out;
}

namespace {

// Truncated power series in s = delta^{1/2} with polynomial coefficients.
using Series = std::vector<Poly>;

Series series_mul(const Series& a, const Series& b, int order, int nvars)
{
    Series out(static_cast<std::size_t>(order + 1), Poly(nvars));
    for (int i = 0; i <= order && i < static_cast<int>(a.size()); ++i) {
        if (a[i].is_zero()) continue;
        for (int j = 0; i + j <= order && j < static_cast<int>(b.size()); ++j) {
            if (b[j].is_zero()) continue;
            out[i + j] += a[i] * b[j];
        }
    }
    return out;
}

// E over the trailing d noise variables of a polynomial in (q, p, eta).
Poly gaussian_expectation(const Poly& f, int d)
{
    Poly out(2 * d);
    for (const auto& [m, c] : f.terms()) {
        double w = 1.0;
        for (int i = 2 * d; i < 3 * d; ++i) {
            if (m[i] % 2) {
                w = 0.0;
                break;
            }
            for (int j = m[i] - 1; j > 1; j -= 2) w *= j;
        }
        if (w == 0.0) continue;
        out.add_term(Monomial(m.begin(), m.begin() + 2 * d), c * w);
    }
    return out;
}

class SplitStepSeries {
public:
    SplitStepSeries(const PotentialModel& model, double gamma, double sigma, int N)
        : d_(model.dimension()), nv_(3 * model.dimension()), order_(2 * N)
    {
        const DriftExpansion dk = drift_coefficients(model, gamma, N + 1);
        for (int i = 0; i < d_; ++i) {
            Series q(static_cast<std::size_t>(order_ + 1), Poly(nv_));
            Series p(static_cast<std::size_t>(order_ + 1), Poly(nv_));
            q[0] = Poly::variable(nv_, i);
            p[0] = Poly::variable(nv_, d_ + i);
            if (order_ >= 1) p[1] = sigma * Poly::variable(nv_, 2 * d_ + i);
            for (int k = 1; 2 * k <= order_; ++k) {
                q[2 * k] = dk[k][i].extended(nv_);
                p[2 * k] = dk[k + 1][i].extended(nv_);
            }
            vars_.push_back(q);
            vars_.push_back(p);
        }
        // reorder to (q_1..q_d, p_1..p_d)
        std::vector<Series> ordered;
        for (int i = 0; i < d_; ++i) ordered.push_back(vars_[2 * i]);
        for (int i = 0; i < d_; ++i) ordered.push_back(vars_[2 * i + 1]);
        vars_ = std::move(ordered);
        powers_.resize(vars_.size());
    }

    std::vector<Poly> expand(const Poly& phi)
    {
        Series total(static_cast<std::size_t>(order_ + 1), Poly(nv_));
        for (const auto& [m, c] : phi.terms()) {
            Series t{Poly::constant(nv_, c)};
            for (int v = 0; v < 2 * d_; ++v)
                if (m[v] > 0) t = series_mul(t, power(v, m[v]), order_, nv_);
            for (int k = 0; k <= order_ && k < static_cast<int>(t.size()); ++k) total[k] += t[k];
        }
        std::vector<Poly> out;
        for (int n = 0; 2 * n <= order_; ++n) out.push_back(gaussian_expectation(total[2 * n], d_));
        return out;
    }

private:
    const Series& power(int v, int e)
    {
        auto& pw = powers_[v];
        if (pw.empty()) pw.push_back(Series{Poly::constant(nv_, 1.0)});
        while (static_cast<int>(pw.size()) <= e) pw.push_back(series_mul(pw.back(), vars_[v], order_, nv_));
        return pw[e];
    }

    int d_, nv_, order_;
    std::vector<Series> vars_;
    std::vector<std::vector<Series>> powers_;
};

}  // namespace

std::vector<Poly> split_step_weak_generators(const PotentialModel& model, double gamma, double sigma,
                                             const Poly& phi, int N)
{
    if (N < 0) throw std::invalid_argument("split_step_weak_generators: N must be >= 0");
    SplitStepSeries series(model, gamma, sigma, N);
    return series.expand(phi);
}

std::string to_string(Provenance p)
{
    switch (p) {
    case Provenance::identity: return "identity";
    case Provenance::analytic: return "analytic";
    case Provenance::extracted: return "extracted";
    }
    return "unknown";
}

std::vector<AnMatrix> assemble_An_all(Scheme scheme, const PotentialModel& model, double gamma, double sigma,
                                      int nmax, int degree_cap, AnSource source, const AnOptions& opt)
{
    if (nmax < 0) throw std::invalid_argument("assemble_An: n must be >= 0");
    const PolyBasis basis(model.dimension(), degree_cap);
    const int nb = basis.size();
    std::vector<AnMatrix> out(static_cast<std::size_t>(nmax + 1));
    for (auto& a : out) {
        a.matrix = Eigen::MatrixXd::Zero(nb, nb);
        a.provenance.assign(static_cast<std::size_t>(nb), Provenance::analytic);
    }

    if (source == AnSource::analytic) {
        if (scheme != Scheme::split_step)
            throw std::invalid_argument("assemble_An: the analytic path covers the split-step scheme only");
        SplitStepSeries series(model, gamma, sigma, nmax);
        for (int j = 0; j < nb; ++j) {
            const auto an = series.expand(Poly::monomial(basis[j]));
            for (int n = 0; n <= nmax; ++n) {
                double mass = 0.0;
                out[n].matrix.col(j) = basis.coefficients(an[n], &mass);
                out[n].truncation_mass += mass;
            }
        }
        for (auto& a : out) a.exact_on_basis = a.truncation_mass == 0.0;
        return out;
    }

    // Extracted: fit c_n(x) at Chebyshev base points, then project onto the basis.
    const int d = model.dimension();
    const int m = opt.points_per_axis > 0 ? opt.points_per_axis : degree_cap + 2;
    std::vector<double> cheb;
    for (int k = 0; k < m; ++k) cheb.push_back(opt.extent * std::cos(std::numbers::pi * (2 * k + 1) / (2.0 * m)));
    std::vector<Eigen::VectorXd> points;
    {
        std::vector<int> idx(static_cast<std::size_t>(2 * d), 0);
        while (true) {
            Eigen::VectorXd x(2 * d);
            for (int i = 0; i < 2 * d; ++i) x[i] = cheb[idx[i]];
            points.push_back(x);
            int j = 0;
            while (j < 2 * d && ++idx[j] == m) idx[j++] = 0;
            if (j == 2 * d) break;
        }
    }
    const int np = static_cast<int>(points.size());
    const auto& eo = opt.extraction;
    const auto ladder = resolve_ladder(eo.ladder, eo.delta0, 12, 512, 8);
    const int terms = eo.fit_terms > 0 ? eo.fit_terms : static_cast<int>(ladder.size());
    if (terms < nmax + 1) throw std::invalid_argument("assemble_An: fit has fewer than n + 1 terms");
    const auto rule = gauss_hermite<long double>(eo.gh_nodes);
    std::vector<CompiledPoly> phis;
    for (int j = 0; j < nb; ++j) phis.emplace_back(Poly::monomial(basis[j]));

    // cvals[n](point, column)
    std::vector<Eigen::MatrixXd> cvals(static_cast<std::size_t>(nmax + 1), Eigen::MatrixXd(np, nb));
    double worst_cond = 0.0;
    // A_0 = I is known, so only the increment E phi(x_1) - phi(x) is fitted;
    // its size, not |phi|, then sets the rounding floor of c_1, c_2, ...
    std::vector<double> powers = integer_powers(terms + 1);
    powers.erase(powers.begin());
    for (int k = 0; k < np; ++k) {
        const PhaseState<double> s{points[k].head(d), points[k].tail(d)};
        const LadderValues lv = ladder_expectations(scheme, model, gamma, sigma, phis, s, ladder, rule);
        const VectorX<long double> xl = points[k].cast<long double>();
        for (int j = 0; j < nb; ++j) {
            const long double c0 = phis[j].operator()<long double>(xl);
            std::vector<long double> inc = lv.values[j];
            for (auto& v : inc) v -= c0;
            const PowerFit f = fit_power_series(lv.deltas, inc, powers);
            worst_cond = std::max(worst_cond, f.condition);
            cvals[0](k, j) = static_cast<double>(c0);
            for (int n = 1; n <= nmax; ++n) cvals[n](k, j) = static_cast<double>(f.coeffs[n - 1]);
        }
    }
    if (worst_cond > eo.max_condition) throw ExtractionError("assemble_An: ill-conditioned ladder", worst_cond);

    Eigen::MatrixXd design(np, nb);
    for (int k = 0; k < np; ++k)
        for (int j = 0; j < nb; ++j) design(k, j) = Poly::monomial(basis[j])(points[k]);
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    for (int n = 0; n <= nmax; ++n) {
        auto& a = out[n];
        a.matrix = qr.solve(cvals[n]);
        a.fit_residual = (design * a.matrix - cvals[n]).cwiseAbs().maxCoeff();
        a.condition = worst_cond;
        a.provenance.assign(static_cast<std::size_t>(nb), Provenance::extracted);
        a.exact_on_basis = model.is_quadratic();
    }
    return out;
}

AnMatrix assemble_An(Scheme scheme, const PotentialModel& model, double gamma, double sigma, int n, int degree_cap,
                     AnSource source, const AnOptions& opt)
{
    auto all = assemble_An_all(scheme, model, gamma, sigma, n, degree_cap, source, opt);
    return std::move(all.back());
}

std::vector<double> bernoulli_numbers(int n)
{
    std::vector<double> b(static_cast<std::size_t>(n + 1), 0.0);
    b[0] = 1.0;
    for (int m = 1; m <= n; ++m) {
        // sum_{k=0}^{m} C(m+1, k) B_k = 0
        double s = 0.0, binom = 1.0;  // C(m+1, 0)
        for (int k = 0; k < m; ++k) {
            s += binom * b[k];
            binom = binom * (m + 1 - k) / (k + 1);
        }
        b[m] = -s / binom;
    }
    return b;
}

std::vector<Eigen::MatrixXd> reconstruct_An(const std::vector<Eigen::MatrixXd>& L, int nmax)
{
    const int sz = static_cast<int>(L.at(0).rows());
    std::vector<Eigen::MatrixXd> A(static_cast<std::size_t>(nmax + 1), Eigen::MatrixXd::Zero(sz, sz));
    A[0] = Eigen::MatrixXd::Identity(sz, sz);
    for (int n = 1; n <= nmax; ++n) {
        double fact = 1.0;
        for (int l = 1; l <= n; ++l) {
            fact *= l;
            compositions(n - l, l, [&](const std::vector<int>& ns) {
                for (int ni : ns)
                    if (ni >= static_cast<int>(L.size())) throw std::invalid_argument("reconstruct_An: L list too short");
                Eigen::MatrixXd prod = L[ns[0]];
                for (std::size_t t = 1; t < ns.size(); ++t) prod = prod * L[ns[t]];
                A[n] += prod / fact;
            });
        }
    }
    return A;
}

OperatorSeries modified_operators(Scheme scheme, const PolyBasis& basis, const std::vector<Eigen::MatrixXd>& A, int N,
                                  double tol)
{
    if (static_cast<int>(A.size()) < N + 2) throw std::invalid_argument("modified_operators: need A_0..A_{N+1}");
    const auto bern = bernoulli_numbers(N);
    OperatorSeries s;
    s.scheme = scheme;
    s.basis = basis;
    s.A.assign(A.begin(), A.begin() + N + 2);
    for (int n = 0; n <= N; ++n) {
        Eigen::MatrixXd ln = A[n + 1];
        double fact = 1.0;
        for (int l = 1; l <= n; ++l) {
            fact *= l;
            if (bern[l] == 0.0) continue;
            compositions(n - l, l + 1, [&](const std::vector<int>& ns) {
                Eigen::MatrixXd prod = s.L[ns[0]];
                for (int t = 1; t < l; ++t) prod = prod * s.L[ns[t]];
                prod = prod * A[ns[l] + 1];
                ln += (bern[l] / fact) * prod;
            });
        }
        s.L.push_back(std::move(ln));
    }
    const auto rec = reconstruct_An(s.L, N + 1);
    double scale = 1.0;
    for (int n = 0; n <= N + 1; ++n) scale = std::max(scale, A[n].cwiseAbs().maxCoeff());
    for (int n = 0; n <= N + 1; ++n)
        s.round_trip_error = std::max(s.round_trip_error, (rec[n] - A[n]).cwiseAbs().maxCoeff());
    const int one = basis.index_of(Monomial(static_cast<std::size_t>(2 * basis.dimension()), 0));
    for (const auto& l : s.L) s.constant_annihilation = std::max(s.constant_annihilation, l.col(one).cwiseAbs().maxCoeff());
    if (s.round_trip_error > tol * scale)
        throw RoundTripFailure("modified_operators: A_n round trip mismatch", s.round_trip_error);
    return s;
}

OperatorSeries build_operator_series(Scheme scheme, const PotentialModel& model, double gamma, double sigma, int N,
                                     int degree_cap, AnSource source, const AnOptions& opt, double tol)
{
    auto an = assemble_An_all(scheme, model, gamma, sigma, N + 1, degree_cap, source, opt);
    std::vector<Eigen::MatrixXd> A;
    bool exact = true;
    for (const auto& a : an) {
        A.push_back(a.matrix);
        exact = exact && a.exact_on_basis;
    }
    OperatorSeries s = modified_operators(scheme, PolyBasis(model.dimension(), degree_cap), A, N, tol);
    s.exact_on_basis = exact;
    for (auto& a : an) s.provenance.push_back(a.provenance);
    s.provenance[0].assign(s.provenance[0].size(), Provenance::identity);
    return s;
}

std::string to_string(AdjointMethod m) { return m == AdjointMethod::flip ? "flip" : "rho-gram"; }
std::string to_string(FlowMethod m) { return m == FlowMethod::coupled ? "coupled" : "duhamel"; }

Poly MeasureExpansion::assembled(double delta) const
{
    Poly out = mu.at(0);
    double f = 1.0;
    for (std::size_t n = 1; n < mu.size(); ++n) {
        f *= delta;
        out += f * mu[n];
    }
    return out;
}

double MeasureExpansion::average(GibbsMeasure& measure, const Poly& phi, double delta) const
{
    double out = 0.0, f = 1.0;
    for (std::size_t n = 0; n < mu.size(); ++n) {
        out += f * rho_average(measure, phi * mu[n]);
        f *= delta;
    }
    return out;
}

MeasureExpansion measure_expansion(const OperatorSeries& ops, GibbsMeasure& measure, int N, AdjointMethod adjoint,
                                   double compat_tol)
{
    if (static_cast<int>(ops.L.size()) < N + 1) throw std::invalid_argument("measure_expansion: need L_0..L_N");
    const PolyBasis& basis = ops.basis;
    const int nb = basis.size();
    MeasureExpansion out;
    out.basis = basis;
    out.adjoint = adjoint;
    const Eigen::MatrixXd lstar = flip_conjugate(basis, ops.L[0]);
    const Eigen::MatrixXd gram = adjoint == AdjointMethod::rho_gram ? gram_matrix(measure, basis) : Eigen::MatrixXd();
    const Eigen::VectorXd r = basis_averages(measure, basis);
    std::vector<Eigen::MatrixXd> adj;
    for (int l = 0; l <= N; ++l)
        adj.push_back(adjoint == AdjointMethod::rho_gram ? rho_adjoint(ops.L[l], gram) : flip_conjugate(basis, ops.L[l]));

    std::vector<Eigen::VectorXd> mu;
    mu.push_back(Eigen::VectorXd::Zero(nb));
    mu[0][basis.index_of(Monomial(static_cast<std::size_t>(2 * basis.dimension()), 0))] = 1.0;
    out.mu.push_back(basis.to_poly(mu[0]));
    out.poisson_residual.push_back(0.0);
    out.mean.push_back(r.dot(mu[0]));
    out.rhs_mean.push_back(0.0);
    for (int n = 1; n <= N; ++n) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(nb);
        for (int l = 1; l <= n; ++l) g -= adj[l] * mu[n - l];
        out.rhs_mean.push_back(r.dot(g));
        const PoissonSolution sol = solve_poisson(lstar, basis, measure, basis.to_poly(g), compat_tol);
        mu.push_back(sol.coeffs);
        out.mu.push_back(sol.mu);
        out.poisson_residual.push_back(sol.residual);
        out.mean.push_back(sol.mean);
    }
    return out;
}

Eigen::VectorXd ModifiedFlow::assembled(std::size_t ti, double delta) const
{
    Eigen::VectorXd out = v.at(0).at(ti);
    double f = 1.0;
    for (std::size_t n = 1; n < v.size(); ++n) {
        f *= delta;
        out += f * v[n][ti];
    }
    return out;
}

ModifiedFlow modified_flow(const OperatorSeries& ops, const Poly& phi, int N, const std::vector<double>& t_grid,
                           int quad_order, FlowMethod method)
{
    if (static_cast<int>(ops.L.size()) < N + 1) throw std::invalid_argument("modified_flow: need L_0..L_N");
    for (std::size_t i = 0; i < t_grid.size(); ++i)
        if (t_grid[i] < 0.0 || (i > 0 && t_grid[i] < t_grid[i - 1]))
            throw std::invalid_argument("modified_flow: t_grid must be non-negative and increasing");
    const PolyBasis& basis = ops.basis;
    const int nb = basis.size();
    double outside = 0.0;
    const Eigen::VectorXd phi0 = basis.coefficients(phi, &outside);
    if (outside > 0.0) throw std::invalid_argument("modified_flow: phi exceeds the degree cap");

    ModifiedFlow out;
    out.basis = basis;
    out.t_grid = t_grid;
    out.method = method;
    out.exact = ops.exact_on_basis;
    out.v.assign(static_cast<std::size_t>(N + 1), {});
    const Eigen::MatrixXd& l0 = ops.L[0];

    if (method == FlowMethod::coupled) {
        const int big = (N + 1) * nb;
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(big, big);
        for (int n = 0; n <= N; ++n)
            for (int l = 0; l <= n; ++l) m.block(n * nb, (n - l) * nb, nb, nb) = ops.L[l];
        Eigen::VectorXd x0 = Eigen::VectorXd::Zero(big);
        x0.head(nb) = phi0;
        for (double t : t_grid) {
            const Eigen::VectorXd x = (t * m).exp() * x0;
            for (int n = 0; n <= N; ++n) out.v[n].push_back(x.segment(n * nb, nb));
        }
        return out;
    }

    const auto gl = gauss_legendre<double>(quad_order);
    std::function<Eigen::VectorXd(int, double)> flow = [&](int n, double t) -> Eigen::VectorXd {
        if (n == 0) return (t * l0).exp() * phi0;
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(nb);
        if (t == 0.0) return acc;
        const int panels = std::max(1, static_cast<int>(std::ceil(t)));
        const double h = t / panels;
        for (int k = 0; k < panels; ++k) {
            const double mid = (k + 0.5) * h;
            for (int i = 0; i < gl.size(); ++i) {
                const double s = mid + 0.5 * h * gl.nodes[i];
                Eigen::VectorXd f = Eigen::VectorXd::Zero(nb);
                for (int l = 1; l <= n; ++l) f += ops.L[l] * flow(n - l, s);
                acc += (0.5 * h * gl.weights[i]) * ((t - s) * l0).exp() * f;
            }
        }
        return acc;
    };
    for (int n = 0; n <= N; ++n)
        for (double t : t_grid) out.v[n].push_back(flow(n, t));
    return out;
}

}  // namespace lbea
