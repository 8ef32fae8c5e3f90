#include "lbea/poly.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

namespace lbea {

Poly Poly::constant(int nvars, double c)
{
    Poly p(nvars);
    p.add_term(Monomial(nvars, 0), c);
    return p;
}

Poly Poly::variable(int nvars, int index)
{
    if (index < 0 || index >= nvars) throw std::out_of_range("Poly::variable: index out of range");
    Monomial m(nvars, 0);
    m[index] = 1;
    Poly p(nvars);
    p.add_term(m, 1.0);
    return p;
}

Poly Poly::monomial(Monomial exponents, double c)
{
    Poly p(static_cast<int>(exponents.size()));
    p.add_term(exponents, c);
    return p;
}

int Poly::degree() const
{
    int deg = 0;
    bool any = false;
    for (const auto& [m, c] : terms_) {
        deg = std::max(deg, std::accumulate(m.begin(), m.end(), 0));
        any = true;
    }
    return any ? deg : 0;
}

double Poly::coefficient(const Monomial& m) const
{
    auto it = terms_.find(m);
    return it == terms_.end() ? 0.0 : it->second;
}

void Poly::add_term(const Monomial& m, double c)
{
    if (static_cast<int>(m.size()) != nvars_)
        throw std::invalid_argument("Poly::add_term: monomial has wrong number of variables");
    if (c == 0.0) return;
    auto [it, inserted] = terms_.try_emplace(m, c);
    if (!inserted) {
        it->second += c;
        if (it->second == 0.0) terms_.erase(it);
    }
}

Poly& Poly::operator+=(const Poly& rhs)
{
    if (nvars_ == 0 && terms_.empty()) nvars_ = rhs.nvars_;
    if (rhs.nvars_ != nvars_ && !rhs.terms_.empty())
        throw std::invalid_argument("Poly: variable count mismatch");
    for (const auto& [m, c] : rhs.terms_) add_term(m, c);
    return *this;
}

Poly& Poly::operator-=(const Poly& rhs)
{
    if (nvars_ == 0 && terms_.empty()) nvars_ = rhs.nvars_;
    if (rhs.nvars_ != nvars_ && !rhs.terms_.empty())
        throw std::invalid_argument("Poly: variable count mismatch");
    for (const auto& [m, c] : rhs.terms_) add_term(m, -c);
    return *this;
}

Poly& Poly::operator*=(double s)
{
    if (s == 0.0) {
        terms_.clear();
        return *this;
    }
    for (auto& [m, c] : terms_) c *= s;
    return *this;
}

Poly operator*(const Poly& a, const Poly& b)
{
    if (a.nvars_ != b.nvars_ && !a.is_zero() && !b.is_zero())
        throw std::invalid_argument("Poly: variable count mismatch");
    Poly out(std::max(a.nvars_, b.nvars_));
    Monomial m(out.nvars_);
    for (const auto& [ma, ca] : a.terms_)
        for (const auto& [mb, cb] : b.terms_) {
            for (int i = 0; i < out.nvars_; ++i) m[i] = ma[i] + mb[i];
            out.add_term(m, ca * cb);
        }
    return out;
}

Poly Poly::derivative(int var) const
{
    Poly out(nvars_);
    for (const auto& [m, c] : terms_) {
        if (m[var] == 0) continue;
        Monomial mm = m;
        mm[var] -= 1;
        out.add_term(mm, c * m[var]);
    }
    return out;
}

Poly Poly::derivative(std::span<const int> vars) const
{
    Poly out = *this;
    for (int v : vars) out = out.derivative(v);
    return out;
}

Poly Poly::pow(int k) const
{
    if (k < 0) throw std::invalid_argument("Poly::pow: negative exponent");
    Poly out = constant(nvars_, 1.0);
    Poly base = *this;
    while (k > 0) {
        if (k & 1) out = out * base;
        k >>= 1;
        if (k) base = base * base;
    }
    return out;
}

Poly Poly::flip_sign(std::span<const int> vars) const
{
    Poly out(nvars_);
    for (const auto& [m, c] : terms_) {
        int parity = 0;
        for (int v : vars) parity += m[v];
        out.terms_.emplace(m, (parity % 2) ? -c : c);
    }
    return out;
}

Poly Poly::truncated(int max_degree) const
{
    Poly out(nvars_);
    for (const auto& [m, c] : terms_)
        if (std::accumulate(m.begin(), m.end(), 0) <= max_degree) out.terms_.emplace(m, c);
    return out;
}

double Poly::truncation_mass(int max_degree) const
{
    double mass = 0.0;
    for (const auto& [m, c] : terms_)
        if (std::accumulate(m.begin(), m.end(), 0) > max_degree) mass += std::abs(c);
    return mass;
}

Poly Poly::pruned(double tol) const
{
    Poly out(nvars_);
    for (const auto& [m, c] : terms_)
        if (std::abs(c) > tol) out.terms_.emplace(m, c);
    return out;
}

double Poly::max_abs_coefficient() const
{
    double mx = 0.0;
    for (const auto& [m, c] : terms_) mx = std::max(mx, std::abs(c));
    return mx;
}

Poly Poly::extended(int new_nvars) const
{
    if (new_nvars < nvars_) throw std::invalid_argument("Poly::extended: cannot shrink");
    Poly out(new_nvars);
    for (const auto& [m, c] : terms_) {
        Monomial mm(new_nvars, 0);
        std::copy(m.begin(), m.end(), mm.begin());
        out.terms_.emplace(std::move(mm), c);
    }
    return out;
}

std::string variable_name(int nvars, int i)
{
    if (nvars % 2 == 0 && nvars > 0) {
        const int d = nvars / 2;
        return (i < d ? "q" : "p") + std::to_string(i % d + 1);
    }
    return "x" + std::to_string(i + 1);
}

std::string Poly::to_string() const
{
    if (terms_.empty()) return "0";
    std::ostringstream os;
    os.precision(17);
    bool first = true;
    for (const auto& [m, c] : terms_) {
        if (!first) os << (c < 0 ? " - " : " + ");
        else if (c < 0) os << "-";
        first = false;
        os << std::abs(c);
        for (int i = 0; i < nvars_; ++i) {
            if (m[i] == 0) continue;
            os << " * " << variable_name(nvars_, i);
            if (m[i] > 1) os << "^" << m[i];
        }
    }
    return os.str();
}

namespace {

class PolyParser {
public:
    PolyParser(const std::string& text, int dim, bool position_only)
        : s_(text), dim_(dim), position_only_(position_only),
          nvars_(position_only ? dim : 2 * dim)
    {
    }

    Poly parse()
    {
        Poly out(nvars_);
        skip_ws();
        if (pos_ >= s_.size()) fail("empty expression");
        double sign = 1.0;
        if (peek() == '+' || peek() == '-') {
            sign = (get() == '-') ? -1.0 : 1.0;
        }
        out += term() * sign;
        while (true) {
            skip_ws();
            if (pos_ >= s_.size()) break;
            char op = get();
            if (op != '+' && op != '-') fail("expected '+' or '-'");
            out += term() * (op == '-' ? -1.0 : 1.0);
        }
        return out;
    }

private:
    Poly term()
    {
        Poly t = factor();
        while (true) {
            skip_ws();
            if (pos_ < s_.size() && peek() == '*') {
                ++pos_;
                t = t * factor();
            } else {
                break;
            }
        }
        return t;
    }

    Poly factor()
    {
        skip_ws();
        if (pos_ >= s_.size()) fail("unexpected end of input");
        char c = peek();
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return Poly::constant(nvars_, number());
        if (c == '(') {
            ++pos_;
            Poly inner = PolyParser(sub_expression(), dim_, position_only_).parse();
            return maybe_power(inner);
        }
        if (c == 'q' || c == 'p') return maybe_power(variable());
        fail(std::string("unexpected character '") + c + "'");
        return {};
    }

    std::string sub_expression()
    {
        int depth = 1;
        std::size_t start = pos_;
        while (pos_ < s_.size() && depth > 0) {
            if (s_[pos_] == '(') ++depth;
            if (s_[pos_] == ')') --depth;
            ++pos_;
        }
        if (depth != 0) fail("unbalanced parenthesis");
        return s_.substr(start, pos_ - start - 1);
    }

    Poly maybe_power(const Poly& base)
    {
        skip_ws();
        if (pos_ < s_.size() && peek() == '^') {
            ++pos_;
            skip_ws();
            std::size_t start = pos_;
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
            if (start == pos_) fail("expected integer exponent");
            return base.pow(std::stoi(s_.substr(start, pos_ - start)));
        }
        return base;
    }

    Poly variable()
    {
        char kind = get();
        if (kind == 'p' && position_only_) fail("momentum variable in a position-only polynomial");
        std::size_t start = pos_;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
        int index = 1;
        if (start == pos_) {
            if (dim_ != 1) fail("variable index required when d > 1");
        } else {
            index = std::stoi(s_.substr(start, pos_ - start));
        }
        if (index < 1 || index > dim_) fail("variable index out of range");
        int var = (kind == 'q' ? 0 : dim_) + index - 1;
        return Poly::variable(nvars_, var);
    }

    double number()
    {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s_.substr(pos_), &used);
        } catch (const std::exception&) {
            fail("malformed number");
        }
        pos_ += used;
        return v;
    }

    void skip_ws()
    {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    char peek() const { return s_[pos_]; }
    char get() { return s_[pos_++]; }

    [[noreturn]] void fail(const std::string& what) const
    {
        throw std::invalid_argument("polynomial parse error at position " + std::to_string(pos_) + ": " + what);
    }

    const std::string s_;
    int dim_;
    bool position_only_;
    int nvars_;
    std::size_t pos_ = 0;
};

}  // namespace

Poly parse_poly(const std::string& text, int dim, bool position_only)
{
    if (dim < 1) throw std::invalid_argument("parse_poly: dimension must be positive");
    return PolyParser(text, dim, position_only).parse();
}

std::vector<Monomial> monomial_basis(int nvars, int max_degree)
{
    std::vector<Monomial> out;
    Monomial cur(nvars, 0);
    std::function<void(int, int)> rec = [&](int var, int remaining) {
        if (var == nvars - 1) {
            cur[var] = remaining;
            out.push_back(cur);
            return;
        }
        for (int e = remaining; e >= 0; --e) {
            cur[var] = e;
            rec(var + 1, remaining - e);
        }
        cur[var] = 0;
    };
    for (int deg = 0; deg <= max_degree; ++deg) {
        if (nvars == 0) {
            if (deg == 0) out.push_back({});
            continue;
        }
        rec(0, deg);
    }
    return out;
}

CompiledPoly::CompiledPoly(const Poly& p) : nvars_(p.nvars())
{
    for (const auto& [m, c] : p.terms()) {
        coefs_.push_back(c);
        exps_.insert(exps_.end(), m.begin(), m.end());
    }
}

}  // namespace lbea
