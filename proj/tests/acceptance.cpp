// Acceptance checks 1-11. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. `--only N` runs a single criterion.

#include "lbea/expansion.hpp"
#include "lbea/generator.hpp"
#include "lbea/harness.hpp"
#include "lbea/integrators.hpp"
#include "lbea/lyapunov.hpp"
#include "lbea/potential.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace lbea;

namespace {

const double kGamma = 1.0;
const double kSigma = std::sqrt(2.0);

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

PhaseState<double> state1(double q, double p)
{
    return {Eigen::VectorXd::Constant(1, q), Eigen::VectorXd::Constant(1, p)};
}

Eigen::VectorXd joined(const PhaseState<double>& s)
{
    Eigen::VectorXd z(s.q.size() + s.p.size());
    z << s.q, s.p;
    return z;
}

// Sum of |term| at x: the size of the quantity an evaluation rounds against.
double term_scale(const Poly& f, const Eigen::VectorXd& x)
{
    double s = 0.0;
    for (const auto& [m, c] : f.terms()) {
        double t = std::abs(c);
        for (int i = 0; i < x.size(); ++i) t *= std::pow(std::abs(x[i]), m[i]);
        s += t;
    }
    return s;
}

Poly random_poly(std::mt19937_64& rng, int nvars, int max_degree)
{
    const auto monos = monomial_basis(nvars, max_degree);
    std::uniform_int_distribution<std::size_t> pick(0, monos.size() - 1);
    std::uniform_int_distribution<int> coef(-3, 3);
    std::uniform_int_distribution<int> count(1, 6);
    Poly p(nvars);
    for (int i = count(rng); i > 0; --i) {
        int c = 0;
        while (c == 0) c = coef(rng);
        p.add_term(monos[pick(rng)], c);
    }
    return p;
}

const std::vector<std::string> kShipped{"quadratic", "quartic", "double-well"};

// 1. product rule defect and <L phi>_rho = 0
Outcome criterion1()
{
    Outcome o;
    std::mt19937_64 rng(11);
    int nonzero = 0;
    double worst_coef = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto& name = kShipped[static_cast<std::size_t>(i) % kShipped.size()];
        const PotentialModel m = make_potential(name, 1);
        const Poly a = random_poly(rng, 2, 4), b = random_poly(rng, 2, 4);
        const Poly defect = product_rule_defect(m, a, b, kGamma, kSigma);
        if (defect.max_abs_coefficient() > 1e-12) ++nonzero;  // sigma^2 = 2 only up to roundoff
        worst_coef = std::max(worst_coef, defect.max_abs_coefficient());
    }
    double worst_avg = 0.0;
    for (const char* name : {"quadratic", "quartic"}) {
        const PotentialModel m = make_potential(name, 1);
        GibbsMeasure measure(m, kGamma, kSigma);
        for (const auto& mono : monomial_basis(2, 6)) {
            const Poly lphi = apply_operator(OperatorKind::L, m, Poly::monomial(mono), kGamma, kSigma);
            worst_avg = std::max(worst_avg, std::abs(rho_average(measure, lphi)));
        }
    }
    o.pass = nonzero == 0 && worst_avg <= 1e-10;
    o.detail = "defects above 1e-12: " + std::to_string(nonzero) + "/100 (max coef " + fmt(worst_coef) +
               "), max |<L phi>_rho| " + fmt(worst_avg);
    return o;
}

// 2. Lyapunov drift inequality on [-5, 5]^2
Outcome criterion2()
{
    Outcome o;
    std::ostringstream d;
    for (const char* name : {"quadratic", "quartic"}) {
        const PotentialModel m = make_potential(name, 1);
        const PotentialAudit audit = audit_assumptions(m, Box::cube(1, 5.0), 41, kGamma, 0.5);
        for (int ell : {1, 2, 3}) {
            const LyapunovReport r = check_drift_inequality(m, kGamma, kSigma, audit, ell, PhaseBox::cube(1, 5.0), 41);
            o.pass = o.pass && r.pass;
            d << name << " l=" << ell << " viol " << fmt(std::max(0.0, r.worst_violation)) << (r.pass ? "" : "!")
              << "; ";
        }
    }
    o.detail = d.str();
    return o;
}

// 3. zero-noise split-step equals implicit Euler per step
Outcome criterion3()
{
    Outcome o;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2.0, 2.0), ud(0.001, 0.2);
    double worst = 0.0;
    for (const auto& name : kShipped) {
        for (int dim : {1, 2}) {
            const PotentialModel m = make_potential(name, dim);
            for (int i = 0; i < 10000 / 6 + 1; ++i) {
                PhaseState<double> s{Eigen::VectorXd(dim), Eigen::VectorXd(dim)};
                for (int j = 0; j < dim; ++j) s.q[j] = u(rng), s.p[j] = u(rng);
                StepParams p;
                p.delta = ud(rng);
                p.sigma = 0.0;
                p.scheme = Scheme::split_step;
                const auto a = step<double>(s, m, p, Eigen::VectorXd::Zero(dim), SolverConfig{});
                p.scheme = Scheme::implicit_euler;
                const auto b = step<double>(s, m, p, Eigen::VectorXd::Zero(dim), SolverConfig{});
                worst = std::max({worst, (a.q - b.q).cwiseAbs().maxCoeff(), (a.p - b.p).cwiseAbs().maxCoeff()});
            }
        }
    }
    o.pass = worst <= 1e-10;
    o.detail = "max |difference| " + fmt(worst) + " over 10002 states";
    return o;
}

// 4. moment boundedness at 0.9 x the moment bound; explicit Euler diverges
Outcome criterion4()
{
    Outcome o;
    const PotentialModel m = quartic_potential(1);
    const PotentialAudit audit = audit_assumptions(m, Box::cube(1, 5.0), 41, kGamma, 0.5);
    const StabilityBounds b = delta_max(kGamma, audit.theta, audit.beta_b2);
    StepParams p;
    p.delta = 0.9 * b.moment;
    MomentSweepOptions opt;
    opt.stride = 1000;
    opt.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::ostringstream d;
    d << "delta " << fmt(p.delta) << "; ";
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const MomentSweep s = moment_sweep(m, p, state1(0, 0), 1, 100000, 64, seed, opt);
        const std::size_t half = s.running_sup.size() / 2;
        const double sup_end = s.running_sup.back(), sup_half = s.running_sup[half];
        const bool bounded = std::isfinite(sup_end) && sup_end <= 2.0 * sup_half;
        o.pass = o.pass && !s.diverged && bounded;
        d << "seed " << seed << " sup " << fmt(sup_end) << (s.diverged ? " DIVERGED" : "") << "; ";
    }
    p.scheme = Scheme::explicit_euler;
    const MomentSweep e = moment_sweep(m, p, state1(0, 0), 1, 100000, 64, 1, opt);
    o.pass = o.pass && e.diverged;
    d << "explicit Euler flag " << (e.diverged ? "raised at step " + std::to_string(e.divergence_step) : "NOT raised");
    o.detail = d.str();
    return o;
}

// 5. d_k recursion vs Taylor fit of the solved position map
Outcome criterion5()
{
    Outcome o;
    double worst = 0.0;
    for (const auto& name : kShipped) {
        const PotentialModel m = make_potential(name, 1);
        const DriftExpansion dk = drift_coefficients(m, kGamma, 4);
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int t = 0; t < 50; ++t) {
            const PhaseState<double> s = state1(u(rng), u(rng));
            const auto taylor = fixed_point_taylor(m, kGamma, s, 4, chebyshev_ladder(0.05, 16));
            for (int k = 1; k <= 4; ++k) {
                const double a = dk.evaluate(k, s)[0], b = taylor[static_cast<std::size_t>(k - 1)][0];
                const double denom = std::max(std::abs(a), term_scale(dk[k][0], joined(s)));
                worst = std::max(worst, std::abs(a - b) / denom);
            }
        }
    }
    o.pass = worst <= 1e-7;
    o.detail = "max relative error " + fmt(worst) + " (k <= 4, 50 points x 3 potentials)";
    return o;
}

// 6. one-step coefficients, half powers, analytic vs extracted A_2
Outcome criterion6()
{
    Outcome o;
    double c0 = 0.0, c1 = 0.0, half = 0.0;
    const std::vector<std::string> phis{"q^2", "p^2", "q*p", "q^4 + p^3", "q^2*p + p^3"};
    for (const auto& name : kShipped) {
        const PotentialModel m = make_potential(name, 1);
        std::mt19937_64 rng(6);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int t = 0; t < 6; ++t) {
            const PhaseState<double> s = state1(u(rng), u(rng));
            const Eigen::VectorXd x = joined(s);
            for (const auto& text : phis) {
                const Poly phi = parse_poly(text, 1);
                const Poly lphi = apply_operator(OperatorKind::L, m, phi, kGamma, kSigma);
                for (Scheme sc : {Scheme::split_step, Scheme::implicit_euler}) {
                    ExtractionOptions eo;
                    eo.check_half_powers = sc == Scheme::implicit_euler;
                    const auto wc = one_step_weak_coefficients(sc, m, kGamma, kSigma, phi, 2, s, eo);
                    c0 = std::max(c0, std::abs(wc.c[0] - phi(x)) / std::max(std::abs(phi(x)), term_scale(phi, x)));
                    c1 = std::max(c1, std::abs(wc.c[1] - lphi(x)) / std::max(std::abs(lphi(x)), term_scale(lphi, x)));
                    if (eo.check_half_powers) half = std::max(half, wc.half_power_relative);
                }
            }
        }
    }
    const PotentialModel ou = quadratic_potential(1);
    const AnMatrix an = assemble_An(Scheme::split_step, ou, kGamma, kSigma, 2, 4, AnSource::analytic);
    const AnMatrix ex = assemble_An(Scheme::split_step, ou, kGamma, kSigma, 2, 4, AnSource::extracted);
    const double a2 = (an.matrix - ex.matrix).cwiseAbs().maxCoeff();
    o.pass = c0 <= 1e-8 && c1 <= 1e-8 && half <= 1e-8 && a2 <= 1e-6;
    o.detail = "c0 " + fmt(c0) + ", c1 " + fmt(c1) + ", half powers " + fmt(half) + ", A2 analytic-extracted " +
               fmt(a2);
    return o;
}

// 7. Bernoulli round trip and L_n 1 = 0
Outcome criterion7()
{
    Outcome o;
    double rt = 0.0, ones = 0.0;
    struct Case {
        Scheme scheme;
        const char* potential;
        AnSource source;
    };
    for (const Case& c : {Case{Scheme::split_step, "quadratic", AnSource::analytic},
                          Case{Scheme::split_step, "quartic", AnSource::analytic},
                          Case{Scheme::implicit_euler, "quadratic", AnSource::extracted}}) {
        const PotentialModel m = make_potential(c.potential, 1);
        const OperatorSeries s = build_operator_series(c.scheme, m, kGamma, kSigma, 1, 4, c.source, {}, 1.0);
        const auto rec = reconstruct_An(s.L, 2);
        for (int n = 0; n <= 2; ++n) rt = std::max(rt, (rec[n] - s.A[n]).cwiseAbs().maxCoeff());
        ones = std::max(ones, s.constant_annihilation);
    }
    o.pass = rt <= 1e-10 && ones <= 1e-12;
    o.detail = "round trip " + fmt(rt) + ", max |L_n 1| " + fmt(ones);
    return o;
}

// 8. one-step consistency of the modified flow
Outcome criterion8()
{
    Outcome o;
    const PotentialModel m = quadratic_potential(1);
    const auto rule = gauss_hermite<double>(10);
    const std::vector<double> deltas{1.0 / 8, 1.0 / 16, 1.0 / 32};
    std::ostringstream d;
    for (Scheme sc : {Scheme::split_step, Scheme::implicit_euler}) {
        const AnSource src = sc == Scheme::split_step ? AnSource::analytic : AnSource::extracted;
        for (int N : {0, 1}) {
            const OperatorSeries ops = build_operator_series(sc, m, kGamma, kSigma, N, 4, src);
            std::vector<double> r1, r2;
            for (double delta : deltas) {
                double worst = 0.0;
                for (const char* text : {"q^2", "q*p"}) {
                    const Poly phi = parse_poly(text, 1);
                    const ModifiedFlow flow = modified_flow(ops, phi, N, {delta});
                    const Poly v = ops.basis.to_poly(flow.assembled(0, delta));
                    for (double q : {-1.0, -0.5, 0.0, 0.5, 1.0})
                        for (double p : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
                            StepParams sp;
                            sp.delta = delta;
                            sp.scheme = sc;
                            const PhaseState<double> x = state1(q, p);
                            const double e =
                                one_step_expectations<double>(m, sp, x, {CompiledPoly(phi)}, rule, SolverConfig{})[0];
                            worst = std::max(worst, std::abs(e - v(joined(x))));
                        }
                }
                r1.push_back(worst / std::pow(delta, N + 1));
                r2.push_back(worst / std::pow(delta, N + 2));
            }
            auto spread = [](const std::vector<double>& r) {
                return *std::max_element(r.begin(), r.end()) / *std::min_element(r.begin(), r.end());
            };
            o.pass = o.pass && spread(r1) < 2.0;
            d << to_string(sc) << " N=" << N << ": err/d^(N+1) spread " << fmt(spread(r1)) << " (err/d^(N+2) spread "
              << fmt(spread(r2)) << "); ";
        }
    }
    o.detail = d.str();
    return o;
}

// 9. modified measure and invariant bias
Outcome criterion9()
{
    Outcome o;
    const PotentialModel m = quadratic_potential(1);
    const Poly q2 = parse_poly("q^2", 1);
    const OperatorSeries ops = build_operator_series(Scheme::split_step, m, kGamma, kSigma, 1, 4, AnSource::analytic);
    GibbsMeasure measure(m, kGamma, kSigma);
    const MeasureExpansion me = measure_expansion(ops, measure, 1);
    const double mu1_q2 = rho_average(measure, q2 * me.mu[1]);
    StepParams p;
    InvariantBiasOptions bo;
    bo.mu1_coefficient = mu1_q2;
    const InvariantBias b = invariant_bias(m, p, q2, {0.1, 0.05, 0.025, 0.0125}, bo);
    const double res = me.poisson_residual[1], mean = std::abs(me.mean[1]);
    const double slope = b.fit.slope, resid_slope = b.residual_fit->slope;
    const double rel = *b.mu1_relative_error;
    o.pass = res <= 1e-10 && mean <= 1e-12 && slope >= 0.9 && slope <= 1.1 && rel <= 0.05 && resid_slope >= 1.8 &&
             resid_slope <= 2.2;
    o.detail = "Poisson residual " + fmt(res) + ", <mu1> " + fmt(mean) + ", int q^2 mu1 " + fmt(mu1_q2) +
               ", bias slope " + fmt(slope) + ", bias/delta rel err " + fmt(rel) + ", residual slope " +
               fmt(resid_slope);
    return o;
}

// 10. mixing rate of E q
Outcome criterion10()
{
    Outcome o;
    const PotentialModel m = quadratic_potential(1);
    const Poly q = parse_poly("q", 1);
    std::vector<long> grid;
    for (long k = 0; k <= 4000; ++k) grid.push_back(k);
    std::ostringstream d;
    for (Scheme sc : {Scheme::split_step, Scheme::implicit_euler}) {
        StepParams p;
        p.delta = 0.01;
        p.scheme = sc;
        const MixingFit f = mixing_rate(m, p, q, grid, state1(1, 0));
        const OUReference r = exact_ou_reference(kGamma, kSigma, sc, p.delta);
        const double ref = -std::log(r.spectral_radius) / p.delta;
        const double rel = std::abs(f.lambda - ref) / ref;
        o.pass = o.pass && f.lambda > 0 && rel <= 0.10;
        d << to_string(sc) << " lambda " << fmt(f.lambda) << " vs " << fmt(ref) << "; ";
    }
    std::vector<double> t;
    for (int i = 0; i <= 4000; ++i) t.push_back(0.01 * i);
    const MixingFit c = continuous_ou_mixing_rate(kGamma, kSigma, q, t, state1(1, 0));
    const double rel = std::abs(c.lambda - 0.5) / 0.5;
    o.pass = o.pass && rel <= 0.05;
    d << "continuous " << fmt(c.lambda);
    o.detail = d.str();
    return o;
}

// 11. weak order of both implicit schemes
Outcome criterion11()
{
    Outcome o;
    const PotentialModel m = quadratic_potential(1);
    std::ostringstream d;
    for (Scheme sc : {Scheme::implicit_euler, Scheme::split_step}) {
        StepParams p;
        p.scheme = sc;
        const OrderFit f = weak_error_order(m, p, parse_poly("q^2", 1), 1.0, {0.2, 0.1, 0.05, 0.025}, state1(1, 0));
        o.pass = o.pass && f.valid && f.slope >= 0.9 && f.slope <= 1.1;
        d << to_string(sc) << " slope " << fmt(f.slope) << " +- " << fmt(f.slope_std_error) << "; ";
    }
    o.detail = d.str();
    return o;
}

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"operator identities", criterion1}, {"Lyapunov drift", criterion2},   {"scheme coincidence", criterion3},
        {"moment boundedness", criterion4},  {"d_k recursion", criterion5},    {"one-step expansion", criterion6},
        {"Bernoulli round trip", criterion7}, {"modified flow", criterion8},   {"modified measure", criterion9},
        {"mixing", criterion10},             {"weak order", criterion11}};
    int only = 0;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::strcmp(argv[i], "--only") == 0) only = std::atoi(argv[i + 1]);

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (only && id != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %2d %-22s %s  [%.1fs]  %s\n", id, criteria[i].first, o.pass ? "PASS" : "FAIL", secs,
                    o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
