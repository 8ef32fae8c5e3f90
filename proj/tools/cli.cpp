#include "cli.hpp"

#include "lbea/expansion.hpp"
#include "lbea/generator.hpp"
#include "lbea/harness.hpp"
#include "lbea/integrators.hpp"
#include "lbea/lyapunov.hpp"
#include "lbea/potential.hpp"
#include "lbea/stats.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unistd.h>

namespace lbea::cli {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_atomic(const std::string& path, const std::string& content)
{
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        f << content;
        f.flush();
        if (!f) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

namespace {

/// Thrown for configuration problems detected after parsing.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when a run completed but its pass condition did not hold.
class CheckFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Global {
    std::uint64_t seed = 1;
    int threads = 1;
    std::string out_dir = ".";
};

struct ModelOpts {
    std::string potential;
    int dim = 1;
    double shift = 0.0;
    std::vector<std::string> terms;
    std::string scheme = "split-step";
    double delta = 0.01;
    double gamma = 1.0;
    double sigma = std::sqrt(2.0);
    double q0 = 0.0;
    double p0 = 0.0;
};

void add_model(CLI::App* sub, ModelOpts& m, bool need_scheme, bool need_delta, bool need_state)
{
    sub->add_option("--potential", m.potential,
                    "quadratic | quartic | double-well | custom | polynomial in q (e.g. \"q^4 - q^2\")")
        ->required();
    sub->add_option("--dim", m.dim, "Spatial dimension d")->check(CLI::PositiveNumber);
    sub->add_option("--shift", m.shift, "Constant added to the double-well potential");
    sub->add_option("--potential-term", m.terms, "Custom term \"e1,...,ed:coefficient\" (repeatable)");
    if (need_scheme) sub->add_option("--scheme", m.scheme, "split-step | implicit-euler | explicit-euler");
    if (need_delta) sub->add_option("--delta", m.delta, "Step size")->check(CLI::PositiveNumber);
    sub->add_option("--gamma", m.gamma, "Friction")->check(CLI::PositiveNumber);
    sub->add_option("--sigma", m.sigma, "Noise amplitude")->check(CLI::NonNegativeNumber);
    if (need_state) {
        sub->add_option("--q0", m.q0, "Initial position (every coordinate)");
        sub->add_option("--p0", m.p0, "Initial momentum (every coordinate)");
    }
}

std::pair<Monomial, double> parse_term(const std::string& text, int dim)
{
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw UsageError("potential term \"" + text + "\" needs \"exponents:coefficient\"");
    Monomial m;
    std::stringstream ss(text.substr(0, colon));
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            m.push_back(std::stoi(part));
        } catch (const std::exception&) {
            throw UsageError("bad exponent \"" + part + "\" in potential term \"" + text + "\"");
        }
    }
    if (static_cast<int>(m.size()) != dim)
        throw UsageError("potential term \"" + text + "\" has " + std::to_string(m.size()) + " exponents, dim is " +
                         std::to_string(dim));
    double c = 0.0;
    try {
        c = std::stod(text.substr(colon + 1));
    } catch (const std::exception&) {
        throw UsageError("bad coefficient in potential term \"" + text + "\"");
    }
    return {m, c};
}

PotentialModel build_model(const ModelOpts& m)
{
    try {
        if (m.potential == "custom") {
            if (m.terms.empty()) throw UsageError("--potential custom needs at least one --potential-term");
            std::vector<std::pair<Monomial, double>> terms;
            for (const auto& t : m.terms) terms.push_back(parse_term(t, m.dim));
            return custom_potential(m.dim, terms);
        }
        if (m.potential == "double-well" || m.potential == "double_well") return double_well_potential(m.dim, m.shift);
        if (m.potential == "quadratic" || m.potential == "quartic") return make_potential(m.potential, m.dim);
        return PotentialModel::polynomial("expression", parse_poly(m.potential, m.dim, true));
    } catch (const UsageError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("potential: ") + e.what());
    }
}

StepParams build_params(const ModelOpts& m)
{
    StepParams p;
    try {
        p.scheme = parse_scheme(m.scheme);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    p.delta = m.delta;
    p.gamma = m.gamma;
    p.sigma = m.sigma;
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return p;
}

PhaseState<double> build_state(const ModelOpts& m)
{
    return {Eigen::VectorXd::Constant(m.dim, m.q0), Eigen::VectorXd::Constant(m.dim, m.p0)};
}

Poly build_observable(const std::string& text, int dim)
{
    try {
        return parse_poly(text, dim);
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("observable: ") + e.what());
    }
}

Json num(double x)
{
    if (std::isfinite(x)) return x;
    return format_double(x);
}

Json to_json(const Eigen::MatrixXd& m)
{
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(num(m(i, j)));
        rows.push_back(row);
    }
    return rows;
}

Json to_json(const Eigen::VectorXd& v)
{
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
    return a;
}

Json to_json(const Poly& p)
{
    Json terms = Json::array();
    for (const auto& [m, c] : p.terms()) terms.push_back({{"multi_index", m}, {"coefficient", num(c)}});
    return {{"expression", p.to_string()}, {"terms", terms}};
}

Json basis_json(const PolyBasis& b)
{
    Json a = Json::array();
    for (const auto& m : b.monomials()) a.push_back({{"multi_index", m}, {"name", Poly::monomial(m).to_string()}});
    return a;
}

Json fit_json(const OrderFit& f)
{
    std::vector<bool> used(f.used.begin(), f.used.end());
    return {{"method", f.method},
            {"valid", f.valid},
            {"slope", num(f.slope)},
            {"slope_std_error", num(f.slope_std_error)},
            {"slope_ci95", {num(f.slope - 1.96 * f.slope_std_error), num(f.slope + 1.96 * f.slope_std_error)}},
            {"intercept", num(f.intercept)},
            {"residual", num(f.residual)},
            {"used", used}};
}

Json model_json(const PotentialModel& model, const StepParams* p)
{
    Json j = {{"potential", model.name()}, {"dimension", model.dimension()}};
    if (model.is_polynomial()) j["V"] = to_json(model.poly_form());
    if (p) {
        j["scheme"] = to_string(p->scheme);
        j["delta"] = p->delta;
        j["gamma"] = p->gamma;
        j["sigma"] = p->sigma;
    }
    return j;
}

std::string csv_row(const std::vector<std::string>& cells)
{
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) s += ',';
        s += cells[i];
    }
    return s + '\n';
}

class Output {
public:
    Output(const Global& g, std::string command, std::ostream& log) : g_(g), command_(std::move(command)), log_(log) {}

    std::string path(const std::string& name) const { return (fs::path(g_.out_dir) / name).string(); }

    void file(const std::string& name, const std::string& content)
    {
        write_atomic(path(name), content);
        files_.push_back(name);
        log_ << "wrote " << path(name) << '\n';
    }
    void json(const std::string& name, const Json& j) { file(name, j.dump(2) + "\n"); }

    void manifest(const std::string& resolved_config, const std::vector<std::string>& argv, int exit_code)
    {
        Json m = {{"command", command_},
                  {"argv", argv},
                  {"exit_code", exit_code},
                  {"rerun", "lbea " + command_ + " --config " + command_ + ".config.toml"},
                  {"outputs", files_}};
        write_atomic(path(command_ + ".config.toml"), resolved_config);
        write_atomic(path(command_ + ".manifest.json"), m.dump(2) + "\n");
    }

private:
    const Global& g_;
    std::string command_;
    std::ostream& log_;
    std::vector<std::string> files_;
};

// ---------------------------------------------------------------- simulate

struct SimulateOpts {
    ModelOpts m;
    long steps = 1000;
    int chains = 1;
    long stride = 1;
    std::string observe = "q2,p2,H,Gamma";
    std::string out = "simulate.csv";
};

int run_simulate(const Global& g, const SimulateOpts& o, Output& out, std::ostream& log)
{
    const PotentialModel model = build_model(o.m);
    const StepParams p = build_params(o.m);
    if (o.steps < 0 || o.chains < 1 || o.stride < 1) throw UsageError("steps >= 0, chains >= 1, stride >= 1 required");
    std::vector<std::string> names;
    {
        std::stringstream ss(o.observe);
        std::string s;
        while (std::getline(ss, s, ',')) names.push_back(s);
    }
    std::vector<Observable> obs;
    try {
        obs = standard_observables(names, model, p.gamma);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const PhaseState<double> x0 = build_state(o.m);
    std::vector<TrajectorySummary> runs(static_cast<std::size_t>(o.chains));
    std::vector<std::string> failures(static_cast<std::size_t>(o.chains));
    parallel_for(o.chains, g.threads, [&](int c) {
        try {
            runs[static_cast<std::size_t>(c)] =
                simulate(x0, model, p, o.steps, NoiseSource(g.seed, static_cast<std::uint64_t>(c)), obs, o.stride);
        } catch (const StepError& e) {
            failures[static_cast<std::size_t>(c)] = std::string(e.what()) + " at step " + std::to_string(e.step_index());
        }
    });

    std::string csv;
    std::vector<std::string> header{"chain", "step", "time"};
    for (const auto& n : names) header.push_back(n);
    csv += csv_row(header);
    Json chains = Json::array();
    bool failed = false;
    for (int c = 0; c < o.chains; ++c) {
        const auto& r = runs[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < r.steps.size(); ++i) {
            std::vector<std::string> row{std::to_string(c), std::to_string(r.steps[i]),
                                         format_double(static_cast<double>(r.steps[i]) * p.delta)};
            for (const auto& s : r.series) row.push_back(format_double(s[i]));
            csv += csv_row(row);
        }
        const auto& why = failures[static_cast<std::size_t>(c)];
        failed = failed || r.diverged || !why.empty();
        chains.push_back({{"chain", c},
                          {"diverged", r.diverged},
                          {"error", why},
                          {"solver_iterations", r.total_solver_iterations},
                          {"max_solver_iterations", r.max_solver_iterations},
                          {"max_solver_residual", num(r.max_solver_residual)},
                          {"uniqueness_warnings", r.uniqueness_warnings}});
    }
    out.file(o.out, csv);
    out.json("simulate.json", {{"model", model_json(model, &p)},
                               {"steps", o.steps},
                               {"chains", o.chains},
                               {"seed", g.seed},
                               {"pass", !failed},
                               {"per_chain", chains}});
    log << (failed ? "divergence or solver failure in at least one chain\n" : "all chains finished\n");
    return failed ? check_failed : ok;
}

// --------------------------------------------------------- audit-potential

struct AuditOpts {
    ModelOpts m;
    double box = 5.0;
    int resolution = 41;
    double beta = 0.5;
    double kappa1 = 1.0;
};

Json audit_json(const PotentialAudit& a)
{
    return {{"theta", num(a.theta)},
            {"beta", num(a.beta_b2)},
            {"kappa", num(a.kappa)},
            {"beta1", num(a.beta1)},
            {"kappa_dissipativity", num(a.kappa_dissip)},
            {"kappa1", num(a.kappa1)},
            {"kappa2", num(a.kappa2)},
            {"gamma", num(a.gamma)},
            {"semiconvex_pass", a.semiconvex_pass},
            {"b2_pass", a.b2_pass},
            {"dissipativity_pass", a.dissipativity_pass},
            {"lower_bound_pass", a.b4_pass},
            {"box", {to_json(a.box.lower), to_json(a.box.upper)}},
            {"resolution", a.resolution}};
}

PotentialAudit run_audit(const AuditOpts& o, const PotentialModel& model)
{
    if (!(o.box > 0) || o.resolution < 2) throw UsageError("box > 0 and resolution >= 2 required");
    if (!(o.beta > 0 && o.beta < 1)) throw UsageError("--beta must lie in (0, 1)");
    return audit_assumptions(model, Box::cube(model.dimension(), o.box), o.resolution, o.m.gamma, o.beta, o.kappa1);
}

int run_audit_potential(const AuditOpts& o, Output& out, std::ostream& log)
{
    const PotentialModel model = build_model(o.m);
    const PotentialAudit a = run_audit(o, model);
    const StabilityBounds b = delta_max(o.m.gamma, a.theta, a.beta_b2);
    out.json("audit-potential.json", {{"model", model_json(model, nullptr)},
                                      {"audit", audit_json(a)},
                                      {"delta_max", {{"solvability", num(b.solvability)}, {"moment", num(b.moment)}}},
                                      {"pass", a.all_pass()}});
    log << "audit " << (a.all_pass() ? "passed" : "failed") << '\n';
    return a.all_pass() ? ok : check_failed;
}

// --------------------------------------------------------- audit-lyapunov

struct LyapOpts {
    AuditOpts a;
    std::vector<int> ell{1, 2, 3};
};

int run_audit_lyapunov(const LyapOpts& o, Output& out, std::ostream& log)
{
    const PotentialModel model = build_model(o.a.m);
    const PotentialAudit a = run_audit(o.a, model);
    Json reports = Json::array();
    bool pass = a.b2_pass;
    if (a.b2_pass) {
        const PhaseBox box = PhaseBox::cube(model.dimension(), o.a.box);
        for (int ell : o.ell) {
            if (ell < 1) throw UsageError("--ell values must be >= 1");
            const LyapunovReport r = check_drift_inequality(model, o.a.m.gamma, o.a.m.sigma, a, ell, box, o.a.resolution);
            pass = pass && r.pass;
            reports.push_back({{"ell", r.ell},
                               {"a_ell", num(r.a_ell)},
                               {"d_ell", num(r.d_ell)},
                               {"worst_violation", num(r.worst_violation)},
                               {"slack", num(r.slack)},
                               {"boundary_max", num(r.boundary_max)},
                               {"worst_node", {{"q", to_json(r.worst_node.q)}, {"p", to_json(r.worst_node.p)}}},
                               {"pass", r.pass}});
        }
    }
    out.json("audit-lyapunov.json",
             {{"model", model_json(model, nullptr)},
              {"sigma", o.a.m.sigma},
              {"audit", audit_json(a)},
              {"grid", {{"half_width", o.a.box}, {"resolution", o.a.resolution}, {"dimension", 2 * model.dimension()}}},
              {"reports", reports},
              {"pass", pass}});
    log << "drift inequality " << (pass ? "holds on the grid" : "violated or audit failed") << '\n';
    return pass ? ok : check_failed;
}

// ------------------------------------------------------------ moment-sweep

struct SweepOpts {
    AuditOpts a;
    int ell = 1;
    long steps = 100000;
    int chains = 64;
    long stride = 100;
    double delta_factor = 0.0;
    double divergence_factor = 1e6;
};

int run_moment_sweep(const Global& g, const SweepOpts& o, Output& out, std::ostream& log)
{
    const PotentialModel model = build_model(o.a.m);
    StepParams p = build_params(o.a.m);
    Json bounds = nullptr;
    if (o.delta_factor > 0) {
        const PotentialAudit a = run_audit(o.a, model);
        const StabilityBounds b = delta_max(p.gamma, a.theta, a.beta_b2);
        if (!std::isfinite(b.moment)) throw UsageError("moment bound is infinite; pass --delta instead");
        p.delta = o.delta_factor * b.moment;
        bounds = {{"solvability", num(b.solvability)}, {"moment", num(b.moment)}, {"factor", o.delta_factor}};
    }
    if (o.ell < 1 || o.steps < 1 || o.chains < 1 || o.stride < 1) throw UsageError("ell, steps, chains, stride >= 1");
    MomentSweepOptions mo;
    mo.stride = o.stride;
    mo.threads = g.threads;
    mo.divergence_factor = o.divergence_factor;
    const MomentSweep s = moment_sweep(model, p, build_state(o.a.m), o.ell, o.steps, o.chains, g.seed, mo);
    std::string csv = csv_row({"step", "time", "mean", "std_error", "running_sup"});
    for (std::size_t i = 0; i < s.steps.size(); ++i)
        csv += csv_row({std::to_string(s.steps[i]), format_double(static_cast<double>(s.steps[i]) * p.delta),
                        format_double(s.mean[i]), format_double(s.std_error[i]), format_double(s.running_sup[i])});
    out.file("moment-sweep.csv", csv);
    out.json("moment-sweep.json", {{"model", model_json(model, &p)},
                                   {"ell", o.ell},
                                   {"steps", o.steps},
                                   {"chains", o.chains},
                                   {"seed", g.seed},
                                   {"delta_bounds", bounds},
                                   {"diverged", s.diverged},
                                   {"divergence_step", s.divergence_step},
                                   {"final_mean", s.mean.empty() ? Json(nullptr) : num(s.mean.back())},
                                   {"running_sup", s.running_sup.empty() ? Json(nullptr) : num(s.running_sup.back())},
                                   {"pass", !s.diverged}});
    log << (s.diverged ? "divergence flagged at step " + std::to_string(s.divergence_step) + "\n"
                       : "moments bounded\n");
    return s.diverged ? check_failed : ok;
}

// ----------------------------------------------------------- poisson-solve

struct PoissonOpts {
    ModelOpts m;
    std::string op = "L";
    std::string g;
    int degree = 4;
    double compat_tol = 1e-9;
};

int run_poisson(const PoissonOpts& o, Output& out, std::ostream& log)
{
    const PotentialModel model = build_model(o.m);
    if (!model.is_polynomial()) throw UsageError("poisson-solve needs a polynomial potential");
    OperatorKind kind;
    try {
        kind = parse_operator_kind(o.op);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (kind == OperatorKind::L_transpose) throw UsageError("--operator must be L or Lstar");
    if (o.degree < 1) throw UsageError("--degree must be >= 1");
    const Poly g = build_observable(o.g, model.dimension());
    GibbsMeasure measure(model, o.m.gamma, o.m.sigma);
    Json j = {{"model", model_json(model, nullptr)},
              {"gamma", o.m.gamma},
              {"sigma", o.m.sigma},
              {"operator", to_string(kind)},
              {"degree", o.degree},
              {"g", to_json(g)}};
    try {
        const PoissonSolution s = solve_poisson(kind, model, o.m.gamma, o.m.sigma, g, o.degree, measure, o.compat_tol);
        j["mu"] = to_json(s.mu);
        j["residual"] = num(s.residual);
        j["mean"] = num(s.mean);
        j["rank"] = s.rank;
        j["rank_deficient"] = s.rank_deficient;
        j["pass"] = true;
        out.json("poisson-solve.json", j);
        log << "residual " << format_double(s.residual) << '\n';
        return ok;
    } catch (const IncompatibleRHS& e) {
        j["error"] = e.what();
        j["g_mean"] = num(e.mean());
        j["pass"] = false;
        out.json("poisson-solve.json", j);
        log << e.what() << '\n';
        return check_failed;
    }
}

// --------------------------------------------------------------- expansion

struct ExpansionOpts {
    ModelOpts m;
    int order = 1;
    int degree = 4;
    std::string source = "auto";
    std::string adjoint = "rho-gram";
    bool no_measure = false;
    double tol = 1e-10;
};

int run_expansion(const ExpansionOpts& o, Output& out, std::ostream& log)
{
    const PotentialModel model = build_model(o.m);
    const StepParams p = build_params(o.m);
    if (!model.is_polynomial()) throw UsageError("expansion needs a polynomial potential");
    if (o.order < 0 || o.degree < 1) throw UsageError("--order >= 0 and --degree >= 1 required");
    AnSource source;
    if (o.source == "auto") source = p.scheme == Scheme::split_step ? AnSource::analytic : AnSource::extracted;
    else if (o.source == "analytic") source = AnSource::analytic;
    else if (o.source == "extracted") source = AnSource::extracted;
    else throw UsageError("--source must be auto, analytic or extracted");
    if (source == AnSource::analytic && p.scheme != Scheme::split_step)
        throw UsageError("analytic A_n is available for split-step only");
    AdjointMethod adj;
    if (o.adjoint == "rho-gram") adj = AdjointMethod::rho_gram;
    else if (o.adjoint == "flip") adj = AdjointMethod::flip;
    else throw UsageError("--adjoint must be rho-gram or flip");

    Json j = {{"model", model_json(model, &p)},
              {"order", o.order},
              {"degree", o.degree},
              {"source", source == AnSource::analytic ? "analytic" : "extracted"}};
    OperatorSeries ops;
    try {
        ops = build_operator_series(p.scheme, model, p.gamma, p.sigma, o.order, o.degree, source, {}, o.tol);
    } catch (const RoundTripFailure& e) {
        j["error"] = e.what();
        j["round_trip_error"] = num(e.error());
        j["pass"] = false;
        out.json("expansion.json", j);
        log << e.what() << '\n';
        return check_failed;
    } catch (const ExtractionError& e) {
        j["error"] = e.what();
        j["condition"] = num(e.condition());
        j["pass"] = false;
        out.json("expansion.json", j);
        log << e.what() << '\n';
        return check_failed;
    }
    j["basis"] = basis_json(ops.basis);
    Json a = Json::array(), l = Json::array();
    for (std::size_t n = 0; n < ops.A.size(); ++n) {
        Json prov = Json::array();
        for (auto pv : ops.provenance[n]) prov.push_back(to_string(pv));
        a.push_back({{"n", n}, {"provenance", prov}, {"matrix", to_json(ops.A[n])}});
    }
    for (std::size_t n = 0; n < ops.L.size(); ++n) l.push_back({{"n", n}, {"matrix", to_json(ops.L[n])}});
    j["A"] = a;
    j["L"] = l;
    j["report"] = {{"round_trip_error", num(ops.round_trip_error)},
                   {"round_trip_tolerance", o.tol},
                   {"constant_annihilation", num(ops.constant_annihilation)},
                   {"exact_on_basis", ops.exact_on_basis}};
    bool pass = true;
    if (!o.no_measure && o.order >= 1) {
        try {
            GibbsMeasure measure(model, p.gamma, p.sigma);
            const MeasureExpansion me = measure_expansion(ops, measure, o.order, adj);
            Json mu = Json::array();
            for (std::size_t n = 0; n < me.mu.size(); ++n) {
                Json e = {{"n", n}, {"mu", to_json(me.mu[n])}, {"mean", num(me.mean[n])}};
                if (n >= 1) {
                    e["poisson_residual"] = num(me.poisson_residual[n]);
                    e["rhs_mean"] = num(me.rhs_mean[n]);
                }
                mu.push_back(e);
            }
            j["measure"] = {{"adjoint", to_string(adj)}, {"mu", mu}};
        } catch (const IncompatibleRHS& e) {
            j["measure"] = {{"adjoint", to_string(adj)}, {"error", e.what()}, {"rhs_mean", num(e.mean())}};
            pass = false;
        } catch (const QuadratureError& e) {
            j["measure"] = {{"adjoint", to_string(adj)}, {"error", e.what()}, {"trace", e.trace()}};
            pass = false;
        }
    }
    j["pass"] = pass;
    out.json("expansion.json", j);
    log << "round trip error " << format_double(ops.round_trip_error) << '\n';
    return pass ? ok : check_failed;
}

// -------------------------------------------------------------- weak-error

struct WeakOpts {
    ModelOpts m;
    std::vector<double> ladder{0.2, 0.1, 0.05, 0.025};
    double T = 1.0;
    std::string phi = "q^2";
    std::string reference = "auto";
    int chains = 1000;
    double fine_factor = 64.0;
    double expect_order = 0.0;
    double order_tol = 0.1;
};

int run_weak(const Global& g, const WeakOpts& o, Output& out, std::ostream& log)
{
    const PotentialModel model = build_model(o.m);
    const StepParams p = build_params(o.m);
    const Poly phi = build_observable(o.phi, model.dimension());
    WeakErrorOptions wo;
    const bool ou = model.is_polynomial() && model.poly_form() == quadratic_potential(model.dimension()).poly_form();
    if (o.reference == "auto") wo.reference = ou ? ReferenceKind::exact : ReferenceKind::fine_step;
    else if (o.reference == "exact") wo.reference = ReferenceKind::exact;
    else if (o.reference == "fine-step") wo.reference = ReferenceKind::fine_step;
    else throw UsageError("--reference must be auto, exact or fine-step");
    if (wo.reference == ReferenceKind::exact && !ou) throw UsageError("exact reference needs --potential quadratic");
    wo.fine_factor = o.fine_factor;
    wo.mc.chains = o.chains;
    wo.mc.seed = g.seed;
    wo.mc.threads = g.threads;
    OrderFit f;
    try {
        f = weak_error_order(model, p, phi, o.T, o.ladder, build_state(o.m), wo);
    } catch (const InsufficientPoints& e) {
        throw UsageError(e.what());
    }
    std::string csv = csv_row({"delta", "error", "stderr"});
    for (std::size_t i = 0; i < f.deltas.size(); ++i)
        csv += csv_row({format_double(f.deltas[i]), format_double(f.errors[i]), format_double(f.std_errors[i])});
    out.file("weak-error.csv", csv);
    bool pass = f.valid;
    if (o.expect_order > 0) pass = pass && std::abs(f.slope - o.expect_order) <= o.order_tol;
    out.json("weak-error.json", {{"model", model_json(model, &p)},
                                 {"phi", to_json(phi)},
                                 {"T", o.T},
                                 {"seed", g.seed},
                                 {"fit", fit_json(f)},
                                 {"expected_order", o.expect_order > 0 ? Json(o.expect_order) : Json(nullptr)},
                                 {"pass", pass}});
    log << "weak order slope " << format_double(f.slope) << " +- " << format_double(f.slope_std_error) << '\n';
    return pass ? ok : check_failed;
}

// ---------------------------------------------------------- invariant-bias

struct BiasOpts {
    ModelOpts m;
    std::vector<double> ladder{0.1, 0.05, 0.025, 0.0125};
    std::string phi = "q^2";
    std::string method = "auto";
    long burn_in = -1;
    long horizon = 100000;
    int chains = 64;
    bool no_mu1 = false;
    int mu1_degree = 4;
    double expect_slope = 0.0;
    double slope_tol = 0.1;
};

int run_bias(const Global& g, const BiasOpts& o, Output& out, std::ostream& log)
{
    const PotentialModel model = build_model(o.m);
    const StepParams p = build_params(o.m);
    const Poly phi = build_observable(o.phi, model.dimension());
    const bool ou = model.is_polynomial() && model.poly_form() == quadratic_potential(model.dimension()).poly_form();
    InvariantBiasOptions bo;
    if (o.method == "auto") bo.method = ou ? BiasMethod::exact : BiasMethod::monte_carlo;
    else if (o.method == "exact") bo.method = BiasMethod::exact;
    else if (o.method == "mc") bo.method = BiasMethod::monte_carlo;
    else throw UsageError("--method must be auto, exact or mc");
    if (bo.method == BiasMethod::exact && !ou) throw UsageError("exact method needs --potential quadratic");
    if (!model.is_polynomial()) throw UsageError("invariant-bias needs a polynomial potential");
    bo.burn_in = o.burn_in;
    bo.horizon = o.horizon;
    bo.mc.chains = o.chains;
    bo.mc.seed = g.seed;
    bo.mc.threads = g.threads;

    Json mu1 = nullptr;
    if (!o.no_mu1 && p.scheme != Scheme::explicit_euler) {
        const AnSource src = p.scheme == Scheme::split_step ? AnSource::analytic : AnSource::extracted;
        const OperatorSeries ops = build_operator_series(p.scheme, model, p.gamma, p.sigma, 1, o.mu1_degree, src);
        GibbsMeasure measure(model, p.gamma, p.sigma);
        const MeasureExpansion me = measure_expansion(ops, measure, 1);
        const double c = rho_average(measure, phi * me.mu[1]);
        bo.mu1_coefficient = c;
        mu1 = {{"mu1", to_json(me.mu[1])}, {"phi_mu1_average", num(c)}, {"degree", o.mu1_degree}};
    }
    InvariantBias b;
    try {
        b = invariant_bias(model, p, phi, o.ladder, bo);
    } catch (const InsufficientPoints& e) {
        throw UsageError(e.what());
    }
    std::string csv = csv_row({"delta", "bias", "stderr", "bias_over_delta"});
    for (std::size_t i = 0; i < o.ladder.size(); ++i)
        csv += csv_row({format_double(o.ladder[i]), format_double(b.bias[i]), format_double(b.bias_std_error[i]),
                        format_double(b.bias_over_delta[i])});
    out.file("invariant-bias.csv", csv);
    bool pass = !b.burn_in_insufficient;
    if (o.expect_slope > 0) pass = pass && b.fit.valid && std::abs(b.fit.slope - o.expect_slope) <= o.slope_tol;
    Json j = {{"model", model_json(model, &p)},
              {"phi", to_json(phi)},
              {"seed", g.seed},
              {"rho_value", num(b.rho_value)},
              {"fit", fit_json(b.fit)},
              {"first_order_coefficient", num(b.first_order_coefficient)},
              {"mu1", mu1}};
    if (b.mu1_relative_error) j["bias_over_delta_relative_error"] = num(*b.mu1_relative_error);
    if (b.coefficient_relative_error) j["coefficient_relative_error"] = num(*b.coefficient_relative_error);
    if (b.residual_fit) j["residual_fit"] = fit_json(*b.residual_fit);
    if (bo.method == BiasMethod::monte_carlo) {
        Json pl = Json::array();
        for (double x : b.pilot_lambda) pl.push_back(num(x));
        j["burn_in_steps"] = b.burn_in_steps;
        j["pilot_lambda"] = pl;
        j["burn_in_insufficient"] = b.burn_in_insufficient;
    }
    j["pass"] = pass;
    out.json("invariant-bias.json", j);
    log << "bias slope " << format_double(b.fit.slope) << '\n';
    return pass ? ok : check_failed;
}

// ------------------------------------------------------------------ mixing

struct MixingOpts {
    ModelOpts m;
    std::string phi = "q";
    std::string method = "auto";
    long k_max = 0;
    long k_stride = 1;
    int chains = 1000;
    bool continuous = false;
};

int run_mixing(const Global& g, const MixingOpts& o, Output& out, std::ostream& log)
{
    const PotentialModel model = build_model(o.m);
    const StepParams p = build_params(o.m);
    const Poly phi = build_observable(o.phi, model.dimension());
    const bool ou = model.is_polynomial() && model.poly_form() == quadratic_potential(model.dimension()).poly_form();
    const long k_max = o.k_max > 0 ? o.k_max : std::lround(40.0 / p.delta);
    if (o.k_stride < 1) throw UsageError("--k-stride must be >= 1");
    Json j = {{"model", model_json(model, &p)}, {"phi", to_json(phi)}, {"seed", g.seed}};
    MixingFit f;
    try {
        if (o.continuous) {
            if (!ou) throw UsageError("--continuous needs --potential quadratic");
            std::vector<double> t;
            for (long k = 0; k <= k_max; k += o.k_stride) t.push_back(static_cast<double>(k) * p.delta);
            f = continuous_ou_mixing_rate(p.gamma, p.sigma, phi, t, build_state(o.m));
        } else {
            MixingOptions mo;
            if (o.method == "auto") mo.method = ou ? MixingMethod::exact : MixingMethod::monte_carlo;
            else if (o.method == "exact") mo.method = MixingMethod::exact;
            else if (o.method == "mc") mo.method = MixingMethod::monte_carlo;
            else throw UsageError("--method must be auto, exact or mc");
            if (mo.method == MixingMethod::exact && !ou) throw UsageError("exact method needs --potential quadratic");
            mo.mc.chains = o.chains;
            mo.mc.seed = g.seed;
            mo.mc.threads = g.threads;
            std::vector<long> grid;
            for (long k = 0; k <= k_max; k += o.k_stride) grid.push_back(k);
            f = mixing_rate(model, p, phi, grid, build_state(o.m), mo);
            if (ou) {
                const OUReference r = exact_ou_reference(p.gamma, p.sigma, p.scheme, p.delta);
                j["spectral_radius"] = num(r.spectral_radius);
                j["spectral_rate"] = num(-std::log(r.spectral_radius) / p.delta);
            }
        }
    } catch (const NotCentered& e) {
        throw UsageError(e.what());
    }
    std::string csv = csv_row({"time", "deviation", "envelope"});
    std::vector<bool> env(f.times.size(), false);
    for (auto i : f.envelope) env[i] = true;
    for (std::size_t i = 0; i < f.times.size(); ++i)
        csv += csv_row({format_double(f.times[i]), format_double(f.deviations[i]), env[i] ? "1" : "0"});
    out.file("mixing.csv", csv);
    const bool pass = f.lambda > 0;
    j["method"] = f.method;
    j["lambda"] = num(f.lambda);
    j["prefactor"] = num(f.prefactor);
    j["residual"] = num(f.residual);
    j["envelope_points"] = f.envelope.size();
    j["spans_three_decay_lengths"] = f.spans_three_decay_lengths;
    j["pass"] = pass;
    out.json("mixing.json", j);
    log << "lambda " << format_double(f.lambda) << '\n';
    return pass ? ok : check_failed;
}

std::string toml_value(const CLI::Option* opt, const std::vector<std::string>& vals)
{
    auto quote = [](const std::string& v) {
        std::string q = "\"";
        for (char c : v) {
            if (c == '"' || c == '\\') q += '\\';
            q += c;
        }
        return q + "\"";
    };
    if (opt->get_expected_max() > 1 || vals.size() > 1) {
        std::string a = "[";
        for (std::size_t i = 0; i < vals.size(); ++i) a += (i ? "," : "") + quote(vals[i]);
        return a + "]";
    }
    return vals.empty() ? std::string("true") : quote(vals.front());
}

// Explicitly given values are written verbatim so that a rerun parses the
// same strings; defaults are listed as comments only.
void append_options(std::string& out, const CLI::App* app)
{
    for (const CLI::Option* opt : app->get_options()) {
        const std::string name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "help-all" || name == "config") continue;
        if (opt->count() > 0) {
            out += name + "=" + toml_value(opt, opt->results()) + "\n";
        } else {
            std::string def = opt->get_default_str();
            out += "# " + name + "=" + (def.empty() ? "(unset)" : def) + "  (default)\n";
        }
    }
}

std::string resolved_config(const CLI::App& app, const CLI::App* sub)
{
    std::string out = "# lbea " + sub->get_name() + " resolved configuration\n";
    append_options(out, &app);
    out += "\n[" + sub->get_name() + "]\n";
    append_options(out, sub);
    return out;
}

void print_usage(const CLI::App& app, std::ostream& err)
{
    for (const CLI::App* sub : app.get_subcommands()) {
        err << sub->help();
        return;
    }
    err << app.help();
}

}  // namespace

int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Implicit Langevin schemes and weak backward error analysis", "lbea"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML/INI file; command-line flags override it");
    app.option_defaults()->always_capture_default();

    Global g;
    app.add_option("--seed", g.seed, "Base seed of the counter-based noise streams");
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out-dir", g.out_dir, "Directory for artifacts");

    SimulateOpts sim;
    auto* s_sim = app.add_subcommand("simulate", "Integrate trajectories and log observables");
    add_model(s_sim, sim.m, true, true, true);
    s_sim->add_option("--steps", sim.steps, "Number of steps");
    s_sim->add_option("--chains", sim.chains, "Independent chains");
    s_sim->add_option("--stride", sim.stride, "Log every stride steps");
    s_sim->add_option("--observe", sim.observe, "Comma-separated subset of q2,p2,H,Gamma");
    s_sim->add_option("--out", sim.out, "CSV file name inside --out-dir");

    AuditOpts aud;
    auto* s_aud = app.add_subcommand("audit-potential", "Grid audit of the assumptions on V");
    add_model(s_aud, aud.m, false, false, false);
    auto add_audit = [](CLI::App* s, AuditOpts& a) {
        s->add_option("--box", a.box, "Half-width of the audit cube");
        s->add_option("--resolution", a.resolution, "Grid points per axis");
        s->add_option("--beta", a.beta, "Candidate exponent in (0, 1)");
        s->add_option("--kappa1", a.kappa1, "Cap for the quadratic lower-bound coefficient");
    };
    add_audit(s_aud, aud);

    LyapOpts lyap;
    auto* s_lyap = app.add_subcommand("audit-lyapunov", "Check the Lyapunov drift inequality on a grid");
    add_model(s_lyap, lyap.a.m, false, false, false);
    add_audit(s_lyap, lyap.a);
    s_lyap->add_option("--ell", lyap.ell, "Powers of Gamma to check")->delimiter(',');

    SweepOpts sweep;
    auto* s_sweep = app.add_subcommand("moment-sweep", "Monte Carlo E Gamma_delta^ell over time");
    add_model(s_sweep, sweep.a.m, true, true, true);
    add_audit(s_sweep, sweep.a);
    s_sweep->add_option("--ell", sweep.ell, "Power of Gamma_delta");
    s_sweep->add_option("--steps", sweep.steps, "Number of steps");
    s_sweep->add_option("--chains", sweep.chains, "Independent chains");
    s_sweep->add_option("--stride", sweep.stride, "Record every stride steps");
    s_sweep->add_option("--delta-factor", sweep.delta_factor, "If positive, delta = factor * moment bound");
    s_sweep->add_option("--divergence-factor", sweep.divergence_factor, "Divergence threshold factor");

    PoissonOpts poi;
    auto* s_poi = app.add_subcommand("poisson-solve", "Solve K mu = g with <mu>_rho = 0");
    add_model(s_poi, poi.m, false, false, false);
    s_poi->add_option("--operator", poi.op, "L | Lstar");
    s_poi->add_option("--g", poi.g, "Right-hand side polynomial")->required();
    s_poi->add_option("--degree", poi.degree, "Degree cap D of the basis");
    s_poi->add_option("--compat-tol", poi.compat_tol, "Tolerance on <g>_rho");

    ExpansionOpts exp;
    auto* s_exp = app.add_subcommand("expansion", "A_n, L_n and mu_n on a polynomial basis");
    add_model(s_exp, exp.m, true, false, false);
    s_exp->add_option("--order", exp.order, "Expansion order N");
    s_exp->add_option("--degree", exp.degree, "Degree cap D of the basis");
    s_exp->add_option("--source", exp.source, "auto | analytic | extracted");
    s_exp->add_option("--adjoint", exp.adjoint, "rho-gram | flip");
    s_exp->add_option("--tol", exp.tol, "Round-trip tolerance");
    s_exp->add_flag("--no-measure", exp.no_measure, "Skip the mu_n solves");

    WeakOpts weak;
    auto* s_weak = app.add_subcommand("weak-error", "Weak error against a reference and its order");
    weak.m.q0 = 1.0;
    add_model(s_weak, weak.m, true, false, true);
    s_weak->add_option("--ladder", weak.ladder, "Step sizes")->delimiter(',');
    s_weak->add_option("--T", weak.T, "Final time");
    s_weak->add_option("--phi", weak.phi, "Observable");
    s_weak->add_option("--reference", weak.reference, "auto | exact | fine-step");
    s_weak->add_option("--chains", weak.chains, "Monte Carlo chains");
    s_weak->add_option("--fine-factor", weak.fine_factor, "Fine reference uses min(ladder)/factor");
    s_weak->add_option("--expect-order", weak.expect_order, "If positive, exit 2 unless |slope - value| <= tol");
    s_weak->add_option("--order-tol", weak.order_tol, "Tolerance for --expect-order");

    BiasOpts bias;
    auto* s_bias = app.add_subcommand("invariant-bias", "Stationary bias of <phi> against rho");
    add_model(s_bias, bias.m, true, false, false);
    s_bias->add_option("--ladder", bias.ladder, "Step sizes")->delimiter(',');
    s_bias->add_option("--phi", bias.phi, "Observable");
    s_bias->add_option("--method", bias.method, "auto | exact | mc");
    s_bias->add_option("--burn-in", bias.burn_in, "Steps; negative uses 10/lambda from a pilot fit");
    s_bias->add_option("--horizon", bias.horizon, "Averaging steps per chain");
    s_bias->add_option("--chains", bias.chains, "Monte Carlo chains");
    s_bias->add_flag("--no-mu1", bias.no_mu1, "Skip the mu_1 comparison");
    s_bias->add_option("--mu1-degree", bias.mu1_degree, "Basis degree for mu_1");
    s_bias->add_option("--expect-slope", bias.expect_slope, "If positive, exit 2 unless |slope - value| <= tol");
    s_bias->add_option("--slope-tol", bias.slope_tol, "Tolerance for --expect-slope");

    MixingOpts mix;
    auto* s_mix = app.add_subcommand("mixing", "Exponential decay rate of E phi toward its limit");
    mix.m.q0 = 1.0;
    add_model(s_mix, mix.m, true, true, true);
    s_mix->add_option("--phi", mix.phi, "Observable");
    s_mix->add_option("--method", mix.method, "auto | exact | mc");
    s_mix->add_option("--k-max", mix.k_max, "Last step index; 0 means 40/delta");
    s_mix->add_option("--k-stride", mix.k_stride, "Grid spacing in steps");
    s_mix->add_option("--chains", mix.chains, "Monte Carlo chains");
    s_mix->add_flag("--continuous", mix.continuous, "Use the continuous OU propagator");

    std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        print_usage(app, out);
        return ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        print_usage(app, err);
        return usage_error;
    }

    const CLI::App* chosen = app.get_subcommands().front();
    const std::string cmd = chosen->get_name();
    Output output(g, cmd, out);
    int code = ok;
    try {
        if (chosen == s_sim) code = run_simulate(g, sim, output, out);
        else if (chosen == s_aud) code = run_audit_potential(aud, output, out);
        else if (chosen == s_lyap) code = run_audit_lyapunov(lyap, output, out);
        else if (chosen == s_sweep) code = run_moment_sweep(g, sweep, output, out);
        else if (chosen == s_poi) code = run_poisson(poi, output, out);
        else if (chosen == s_exp) code = run_expansion(exp, output, out);
        else if (chosen == s_weak) code = run_weak(g, weak, output, out);
        else if (chosen == s_bias) code = run_bias(g, bias, output, out);
        else if (chosen == s_mix) code = run_mixing(g, mix, output, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n\n";
        err << chosen->help();
        return usage_error;
    } catch (const std::exception& e) {
        err << cmd << " failed: " << e.what() << '\n';
        code = check_failed;
    }
    try {
        output.manifest(resolved_config(app, chosen), argv, code);
    } catch (const std::exception& e) {
        err << "manifest: " << e.what() << '\n';
        return check_failed;
    }
    return code;
}

}  // namespace lbea::cli
