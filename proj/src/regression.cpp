#include "fbsde/regression.hpp"

#include <algorithm>
#include <cmath>

namespace fbsde {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void RegressionBasis::validate() const {
    if (degree < 0) throw std::invalid_argument("RegressionBasis: degree must be >= 0");
    if (!(hi > lo)) throw std::invalid_argument("RegressionBasis: need hi > lo");
}

Eigen::VectorXd RegressionBasis::eval(double x) const {
    const double s = std::clamp((2.0 * x - (hi + lo)) / (hi - lo), -1.0, 1.0);
    VectorXd phi(dim());
    if (kind == Kind::polynomial) {
        // Chebyshev recurrence on the mapped coordinate.
        phi(0) = 1.0;
        if (degree >= 1) phi(1) = s;
        for (int k = 2; k <= degree; ++k) phi(k) = 2.0 * s * phi(k - 1) - phi(k - 2);
    } else {
        phi.setZero();
        const double u = 0.5 * (s + 1.0) * degree;  // knot coordinate in [0, degree]
        const int j = std::min(degree - 1, std::max(0, static_cast<int>(std::floor(u))));
        const double w = u - j;
        phi(j) = 1.0 - w;
        phi(j + 1) = w;
    }
    return phi;
}

RegressionFit condexp_regress(const VectorXd& x, const VectorXd& y, const RegressionBasis& basis,
                              double ridge) {
    basis.validate();
    if (x.size() != y.size()) throw std::invalid_argument("condexp_regress: size mismatch");
    const int B = basis.dim();
    if (x.size() < 10 * B)
        throw std::invalid_argument("condexp_regress: need at least 10x samples per basis fn");

    RegressionFit fit;
    fit.basis = basis;

    // Degenerate regressor (e.g. the deterministic initial state): the only
    // identifiable quantity is the plain mean.
    const double x_mean = x.mean();
    const double x_spread = (x.array() - x_mean).abs().maxCoeff();
    if (x_spread <= 1e-12 * (1.0 + std::abs(x_mean))) {
        const double m = y.mean();
        fit.coef = VectorXd::Zero(B);
        if (basis.kind == RegressionBasis::Kind::polynomial)
            fit.coef(0) = m;
        else
            fit.coef.setConstant(m);  // hat functions sum to one
        fit.condition = 1.0;
        return fit;
    }

    // Fit on the clipped domain only; tail samples would otherwise pile up
    // on the boundary features and distort the edges.
    MatrixXd gram = MatrixXd::Zero(B, B);
    VectorXd rhs = VectorXd::Zero(B);
    Eigen::Index used = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x(i) < basis.lo || x(i) > basis.hi) continue;
        const VectorXd phi = basis.eval(x(i));
        gram.selfadjointView<Eigen::Lower>().rankUpdate(phi);
        rhs += y(i) * phi;
        ++used;
    }
    if (used < 10 * B)
        throw std::invalid_argument("condexp_regress: too few samples inside the clip range");
    MatrixXd full = gram.selfadjointView<Eigen::Lower>();
    full.diagonal().array() += ridge;

    Eigen::SelfAdjointEigenSolver<MatrixXd> es(full);
    const double lmin = es.eigenvalues().minCoeff();
    const double lmax = es.eigenvalues().maxCoeff();
    const double cond = lmax / std::max(lmin, 1e-300);
    if (!(cond < 1e14)) throw IllConditionedError(cond);

    fit.coef = full.ldlt().solve(rhs);
    fit.condition = cond;
    if (!fit.coef.allFinite()) throw IllConditionedError(cond);
    return fit;
}

std::vector<RegressionFit> project_z(const VectorXd& x, const VectorXd& y_next,
                                     const MatrixXd& dW, double dt, const RegressionBasis& basis,
                                     double ridge) {
    if (x.size() != y_next.size() || x.size() != dW.rows())
        throw std::invalid_argument("project_z: size mismatch");
    std::vector<RegressionFit> fits;
    fits.reserve(dW.cols());
    for (Eigen::Index j = 0; j < dW.cols(); ++j) {
        const VectorXd target = y_next.cwiseProduct(dW.col(j)) / dt;
        fits.push_back(condexp_regress(x, target, basis, ridge));
    }
    return fits;
}

RegressionFit project_gamma(const VectorXd& x, const VectorXd& y_next, const VectorXd& m_gamma,
                            double dt, const RegressionBasis& basis, double ridge) {
    if (x.size() != y_next.size() || x.size() != m_gamma.size())
        throw std::invalid_argument("project_gamma: size mismatch");
    const VectorXd target = y_next.cwiseProduct(m_gamma) / dt;
    return condexp_regress(x, target, basis, ridge);
}

}  // namespace fbsde
