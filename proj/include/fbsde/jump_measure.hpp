#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "fbsde/quadrature.hpp"

namespace fbsde {

// Finite-activity jump measure on the mark interval [-delta, delta]:
//   lambda(de) = total_intensity * density(e) de,
// with density a probability density on the support and gamma the kernel
// weight entering the nonlocal operator. Marks are scalar; the forward
// coefficient beta decides how a mark acts on the d-dimensional state.
class JumpMeasureSpec {
  public:
    JumpMeasureSpec();  // uniform marks on [-1,1]
    JumpMeasureSpec(double delta, std::function<double(double)> density, double total_intensity,
                    std::function<double(double)> gamma, double gamma_bound, int quad_order = 32);

    // lambda(de) = 1_{[-delta,delta]}(e) de, i.e. uniform marks with
    // intensity 2*delta, as in the benchmark problems; gamma == 1.
    static JumpMeasureSpec uniform(double delta, int quad_order = 32);

    double delta() const { return delta_; }
    double total_intensity() const { return total_intensity_; }
    double gamma_bound() const { return gamma_bound_; }
    int quad_order() const { return quad_order_; }
    bool uniform_marks() const { return uniform_; }
    double density(double e) const { return density_(e); }
    double gamma(double e) const { return gamma_(e); }
    bool gamma_constant(double* value = nullptr) const;

    // Quadrature nodes on the support and the matching lambda(de) weights,
    // so that integral g(e) lambda(de) ~= sum_q lambda_w[q] * g(node[q]).
    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<double>& lambda_weights() const { return lambda_w_; }
    const std::vector<double>& gamma_weights() const { return gamma_w_; }

    // Inverse CDF of the mark density; exact for uniform marks, tabulated
    // otherwise. u in (0,1].
    double sample_mark(double u) const;

  private:
    void validate_and_tabulate();

    double delta_;
    std::function<double(double)> density_;
    double total_intensity_;
    std::function<double(double)> gamma_;
    double gamma_bound_;
    int quad_order_;
    bool uniform_;

    std::vector<double> nodes_;
    std::vector<double> lambda_w_;
    std::vector<double> gamma_w_;
    std::vector<double> cdf_grid_;  // inverse-CDF table for non-uniform marks
};

// integral g(e) lambda(de) over the mark space by Gauss-Legendre quadrature.
double levy_integral(const std::function<double(double)>& g, const JumpMeasureSpec& measure);

// integral beta(e) lambda(de) componentwise: the per-unit-time drift removed
// when interval jump sums stand in for integrals against the compensated
// measure.
Eigen::VectorXd compensator_drift(const std::function<Eigen::VectorXd(double)>& beta_at,
                                  const JumpMeasureSpec& measure);

}  // namespace fbsde
