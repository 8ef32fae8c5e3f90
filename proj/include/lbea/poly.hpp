#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lbea {

/// Exponent vector of a monomial. For phase-space polynomials the layout is
/// (q_1..q_d, p_1..p_d).
using Monomial = std::vector<int>;

/// Sparse multivariate polynomial with real coefficients.
///
/// Zero coefficients are never stored. Terms are kept in lexicographic
/// exponent order so iteration (and therefore every serialized output) is
/// deterministic.
class Poly {
public:
    using Terms = std::map<Monomial, double>;

    Poly() = default;
    explicit Poly(int nvars) : nvars_(nvars) {}

    static Poly constant(int nvars, double c);
    static Poly variable(int nvars, int index);
    static Poly monomial(Monomial exponents, double c = 1.0);

    int nvars() const { return nvars_; }
    const Terms& terms() const { return terms_; }
    bool is_zero() const { return terms_.empty(); }
    int degree() const;
    std::size_t size() const { return terms_.size(); }

    double coefficient(const Monomial& m) const;
    void add_term(const Monomial& m, double c);

    Poly& operator+=(const Poly& rhs);
    Poly& operator-=(const Poly& rhs);
    Poly& operator*=(double s);
    friend Poly operator+(Poly a, const Poly& b) { return a += b; }
    friend Poly operator-(Poly a, const Poly& b) { return a -= b; }
    friend Poly operator*(Poly a, double s) { return a *= s; }
    friend Poly operator*(double s, Poly a) { return a *= s; }
    friend Poly operator-(Poly a) { return a *= -1.0; }
    friend Poly operator*(const Poly& a, const Poly& b);

    Poly derivative(int var) const;
    Poly derivative(std::span<const int> vars) const;
    Poly pow(int k) const;

    /// Multiplies every term by (-1)^{exponent of var} for each var in `vars`.
    Poly flip_sign(std::span<const int> vars) const;
    /// Drops terms of total degree above `max_degree`.
    Poly truncated(int max_degree) const;
    /// Sum of |c| over terms of total degree above `max_degree`.
    double truncation_mass(int max_degree) const;
    /// Removes coefficients with |c| <= tol.
    Poly pruned(double tol) const;
    double max_abs_coefficient() const;

    /// Reinterprets the polynomial in a ring with more variables; the new
    /// variables are appended after the existing ones.
    Poly extended(int new_nvars) const;

    template <typename Scalar>
    Scalar evaluate(std::span<const Scalar> x) const
    {
        Scalar acc(0);
        for (const auto& [m, c] : terms_) {
            Scalar t(c);
            for (int i = 0; i < nvars_; ++i)
                for (int e = 0; e < m[i]; ++e) t *= x[i];
            acc += t;
        }
        return acc;
    }

    double operator()(const Eigen::VectorXd& x) const
    {
        return evaluate<double>(std::span<const double>(x.data(), x.size()));
    }

    /// Human-readable form using q_i/p_i names when nvars is even, x_i otherwise.
    std::string to_string() const;

    friend bool operator==(const Poly& a, const Poly& b) = default;

private:
    int nvars_ = 0;
    Terms terms_;
};

/// Name of variable `i` in a phase-space ring with `nvars` variables.
std::string variable_name(int nvars, int i);

/// Parses sums of `c * q1^a * p1^b` terms over (q_1..q_d, p_1..p_d). With
/// `position_only` the ring is (q_1..q_d) and momentum variables are
/// rejected. For d = 1 the bare names `q` and `p` are accepted.
/// Throws std::invalid_argument with the offending position on bad input.
Poly parse_poly(const std::string& text, int dim, bool position_only = false);

/// All monomials of total degree <= max_degree in `nvars` variables, in
/// graded lexicographic order (degree first, then descending exponents).
std::vector<Monomial> monomial_basis(int nvars, int max_degree);

/// Flat, allocation-free evaluator for a fixed polynomial. Used in the hot
/// loops of the steppers.
class CompiledPoly {
public:
    CompiledPoly() = default;
    explicit CompiledPoly(const Poly& p);

    template <typename Scalar, typename Vec>
    Scalar operator()(const Vec& x) const
    {
        Scalar acc(0);
        std::size_t k = 0;
        for (std::size_t t = 0; t < coefs_.size(); ++t) {
            Scalar v(coefs_[t]);
            for (int i = 0; i < nvars_; ++i, ++k)
                for (int e = 0; e < exps_[k]; ++e) v *= Scalar(x[i]);
            acc += v;
        }
        return acc;
    }

private:
    int nvars_ = 0;
    std::vector<double> coefs_;
    std::vector<int> exps_;
};

}  // namespace lbea
