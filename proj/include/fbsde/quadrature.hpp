#pragma once

#include <vector>

namespace fbsde {

// Gauss-Legendre rule on [-1,1]; nodes ascending.
struct QuadRule {
    std::vector<double> x;
    std::vector<double> w;

    int order() const { return static_cast<int>(x.size()); }

    // Affine map of the rule onto [a,b].
    QuadRule scaled(double a, double b) const;
};

// Nodes/weights by Newton iteration on the Legendre polynomial.
// Exact (to ~1e-15) for polynomials up to degree 2n-1.
QuadRule gauss_legendre(int n);

template <class F>
double integrate(const QuadRule& rule, F&& f) {
    double acc = 0.0;
    for (int i = 0; i < rule.order(); ++i) acc += rule.w[i] * f(rule.x[i]);
    return acc;
}

}  // namespace fbsde
