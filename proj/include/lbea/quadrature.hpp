#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace lbea {

template <typename Scalar>
struct QuadratureRule {
    std::vector<Scalar> nodes;
    std::vector<Scalar> weights;
    int size() const { return static_cast<int>(nodes.size()); }
};

namespace detail {

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights the
// squared first eigenvector components times the zeroth moment.
template <typename Scalar>
QuadratureRule<Scalar> golub_welsch(const std::vector<Scalar>& offdiag, Scalar mu0)
{
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const int n = static_cast<int>(offdiag.size()) + 1;
    Mat j = Mat::Zero(n, n);
    for (int i = 0; i + 1 < n; ++i) j(i, i + 1) = j(i + 1, i) = offdiag[i];
    Eigen::SelfAdjointEigenSolver<Mat> es(j);
    QuadratureRule<Scalar> r;
    for (int i = 0; i < n; ++i) {
        r.nodes.push_back(es.eigenvalues()[i]);
        const Scalar v = es.eigenvectors()(0, i);
        r.weights.push_back(mu0 * v * v);
    }
    return r;
}

}  // namespace detail

/// Gauss-Hermite rule for the standard normal weight: sum w_i f(x_i)
/// approximates E f(eta), eta ~ N(0,1); exact for polynomials of degree <= 2n-1.
template <typename Scalar = double>
QuadratureRule<Scalar> gauss_hermite(int n)
{
    if (n < 1) throw std::invalid_argument("gauss_hermite: need at least one node");
    if (n == 1) return {{Scalar(0)}, {Scalar(1)}};
    std::vector<Scalar> off;
    for (int k = 1; k < n; ++k) off.push_back(std::sqrt(Scalar(k)));
    auto r = detail::golub_welsch<Scalar>(off, Scalar(1));
    // Symmetrize to remove eigen-solver asymmetry.
    for (int i = 0; i < n / 2; ++i) {
        const Scalar x = (r.nodes[n - 1 - i] - r.nodes[i]) / 2;
        const Scalar w = (r.weights[n - 1 - i] + r.weights[i]) / 2;
        r.nodes[i] = -x;
        r.nodes[n - 1 - i] = x;
        r.weights[i] = r.weights[n - 1 - i] = w;
    }
    if (n % 2) r.nodes[n / 2] = Scalar(0);
    return r;
}

/// Gauss-Legendre rule on [-1, 1].
template <typename Scalar = double>
QuadratureRule<Scalar> gauss_legendre(int n)
{
    if (n < 1) throw std::invalid_argument("gauss_legendre: need at least one node");
    if (n == 1) return {{Scalar(0)}, {Scalar(2)}};
    std::vector<Scalar> off;
    for (int k = 1; k < n; ++k) off.push_back(Scalar(k) / std::sqrt(Scalar(4 * k * k - 1)));
    auto r = detail::golub_welsch<Scalar>(off, Scalar(2));
    for (int i = 0; i < n / 2; ++i) {
        const Scalar x = (r.nodes[n - 1 - i] - r.nodes[i]) / 2;
        const Scalar w = (r.weights[n - 1 - i] + r.weights[i]) / 2;
        r.nodes[i] = -x;
        r.nodes[n - 1 - i] = x;
        r.weights[i] = r.weights[n - 1 - i] = w;
    }
    if (n % 2) r.nodes[n / 2] = Scalar(0);
    return r;
}

/// Tensor product of a 1-D rule in `dim` dimensions; calls f(point, weight).
template <typename Scalar, typename F>
void for_each_tensor_node(const QuadratureRule<Scalar>& rule, int dim, F&& f)
{
    const int n = rule.size();
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x(dim);
    while (true) {
        Scalar w(1);
        for (int i = 0; i < dim; ++i) {
            x[i] = rule.nodes[idx[i]];
            w *= rule.weights[idx[i]];
        }
        f(x, w);
        int j = 0;
        while (j < dim && ++idx[j] == n) idx[j++] = 0;
        if (j == dim) break;
    }
}

}  // namespace lbea
