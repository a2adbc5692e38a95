#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace fbsde {

// Scalar-state regression basis on a clipped range. Polynomial means
// Chebyshev polynomials of the mapped coordinate (well conditioned);
// piecewise_linear means hat functions on uniform knots.
struct RegressionBasis {
    enum class Kind : std::uint8_t { polynomial, piecewise_linear } kind = Kind::polynomial;
    int degree = 4;  // polynomial degree, or knot intervals for piecewise_linear
    double lo = -4.0;
    double hi = 4.0;

    int dim() const { return degree + 1; }
    Eigen::VectorXd eval(double x) const;
    void validate() const;
};

struct IllConditionedError : std::runtime_error {
    double condition;
    explicit IllConditionedError(double cond)
        : std::runtime_error("regression normal matrix ill-conditioned (cond ~ " +
                             std::to_string(cond) + ")"),
          condition(cond) {}
};

// Least-squares fit of E[Y | X = x]; evaluable as a function of x. When
// value bounds are set, evaluations are clamped to them; a conditional mean
// always lies in the hull of the observed targets, so clamping to the data
// range removes polynomial edge overshoot without bias.
struct RegressionFit {
    RegressionBasis basis;
    Eigen::VectorXd coef;
    double condition = 0.0;
    double value_lo = -std::numeric_limits<double>::infinity();
    double value_hi = std::numeric_limits<double>::infinity();

    double operator()(double x) const {
        return std::clamp(basis.eval(x).dot(coef), value_lo, value_hi);
    }

    void bound_values(const Eigen::VectorXd& targets) {
        value_lo = targets.minCoeff();
        value_hi = targets.maxCoeff();
    }
};

// Empirical projection by normal equations with ridge eps*I. Requires at
// least 10x more samples than basis functions; throws IllConditionedError
// past cond ~ 1e14.
RegressionFit condexp_regress(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                              const RegressionBasis& basis, double ridge = 1e-8);

// Z projection: regression of y_next * dW / dt on x, one fit per Brownian
// component.
std::vector<RegressionFit> project_z(const Eigen::VectorXd& x, const Eigen::VectorXd& y_next,
                                     const Eigen::MatrixXd& dW, double dt,
                                     const RegressionBasis& basis, double ridge = 1e-8);

// Gamma projection: regression of y_next * m_gamma / dt on x, where
// m_gamma[i] is the realized compensated jump weight
// sum_k gamma(e_k) - dt * integral gamma lambda(de) of sample i.
RegressionFit project_gamma(const Eigen::VectorXd& x, const Eigen::VectorXd& y_next,
                            const Eigen::VectorXd& m_gamma, double dt,
                            const RegressionBasis& basis, double ridge = 1e-8);

}  // namespace fbsde
