#include "fbsde/jump_measure.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fbsde {

JumpMeasureSpec::JumpMeasureSpec(double delta, std::function<double(double)> density,
                                 double total_intensity, std::function<double(double)> gamma,
                                 double gamma_bound, int quad_order)
    : delta_(delta),
      density_(std::move(density)),
      total_intensity_(total_intensity),
      gamma_(std::move(gamma)),
      gamma_bound_(gamma_bound),
      quad_order_(quad_order),
      uniform_(false) {
    if (!(delta_ > 0.0)) throw std::invalid_argument("JumpMeasureSpec: delta must be positive");
    if (total_intensity_ < 0.0)
        throw std::invalid_argument("JumpMeasureSpec: total_intensity must be >= 0");
    if (gamma_bound_ < 0.0) throw std::invalid_argument("JumpMeasureSpec: gamma_bound must be >= 0");
    if (quad_order_ < 1) throw std::invalid_argument("JumpMeasureSpec: quad_order must be >= 1");
    validate_and_tabulate();
}

JumpMeasureSpec::JumpMeasureSpec() : JumpMeasureSpec(uniform(1.0)) {}

JumpMeasureSpec JumpMeasureSpec::uniform(double delta, int quad_order) {
    const double dens = 1.0 / (2.0 * delta);
    JumpMeasureSpec m(
        delta, [dens](double) { return dens; }, 2.0 * delta, [](double) { return 1.0; }, 1.0,
        quad_order);
    m.uniform_ = true;
    return m;
}

bool JumpMeasureSpec::gamma_constant(double* value) const {
    const double g0 = gamma_(0.0);
    for (double e : nodes_)
        if (std::abs(gamma_(e) - g0) > 1e-14 * (1.0 + std::abs(g0))) return false;
    if (value) *value = g0;
    return true;
}

void JumpMeasureSpec::validate_and_tabulate() {
    const QuadRule rule = gauss_legendre(quad_order_).scaled(-delta_, delta_);
    nodes_ = rule.x;
    lambda_w_.resize(nodes_.size());
    gamma_w_.resize(nodes_.size());
    double mass = 0.0;
    for (std::size_t q = 0; q < nodes_.size(); ++q) {
        const double rho = density_(nodes_[q]);
        if (!std::isfinite(rho) || rho < 0.0)
            throw std::invalid_argument("JumpMeasureSpec: density must be finite and nonnegative");
        mass += rule.w[q] * rho;
        lambda_w_[q] = rule.w[q] * total_intensity_ * rho;
        const double g = gamma_(nodes_[q]);
        if (!std::isfinite(g)) throw std::invalid_argument("JumpMeasureSpec: gamma not finite");
        if (std::abs(g) > gamma_bound_ + 1e-12)
            throw std::invalid_argument("JumpMeasureSpec: |gamma| exceeds gamma_bound on support");
        gamma_w_[q] = lambda_w_[q] * g;
    }
    if (std::abs(mass - 1.0) > 1e-10)
        throw std::invalid_argument("JumpMeasureSpec: density does not integrate to 1");

    // Inverse-CDF table for mark sampling (skipped for uniform marks, which
    // invert exactly).
    if (!uniform_) {
        constexpr int kTable = 4096;
        cdf_grid_.assign(kTable + 1, 0.0);
        const QuadRule cell = gauss_legendre(8);
        double acc = 0.0;
        for (int i = 0; i < kTable; ++i) {
            const double a = -delta_ + 2.0 * delta_ * i / kTable;
            const double b = -delta_ + 2.0 * delta_ * (i + 1) / kTable;
            const QuadRule sc = cell.scaled(a, b);
            for (int q = 0; q < sc.order(); ++q) acc += sc.w[q] * density_(sc.x[q]);
            cdf_grid_[i + 1] = acc;
        }
        for (auto& c : cdf_grid_) c /= acc;  // renormalize tiny quadrature drift
    }
}

double JumpMeasureSpec::sample_mark(double u) const {
    if (uniform_ || cdf_grid_.empty()) return delta_ * (2.0 * u - 1.0);
    const auto it = std::lower_bound(cdf_grid_.begin(), cdf_grid_.end(), u);
    std::size_t hi = std::min<std::size_t>(cdf_grid_.size() - 1,
                                           std::max<std::size_t>(1, it - cdf_grid_.begin()));
    const double c0 = cdf_grid_[hi - 1], c1 = cdf_grid_[hi];
    const double frac = (c1 > c0) ? (u - c0) / (c1 - c0) : 0.5;
    const int cells = static_cast<int>(cdf_grid_.size()) - 1;
    const double a = -delta_ + 2.0 * delta_ * (hi - 1) / cells;
    return a + frac * 2.0 * delta_ / cells;
}

double levy_integral(const std::function<double(double)>& g, const JumpMeasureSpec& measure) {
    double acc = 0.0;
    const auto& nodes = measure.nodes();
    const auto& w = measure.lambda_weights();
    for (std::size_t q = 0; q < nodes.size(); ++q) {
        const double v = g(nodes[q]);
        if (!std::isfinite(v)) throw std::runtime_error("levy_integral: integrand not finite");
        acc += w[q] * v;
    }
    return acc;
}

Eigen::VectorXd compensator_drift(const std::function<Eigen::VectorXd(double)>& beta_at,
                                  const JumpMeasureSpec& measure) {
    const auto& nodes = measure.nodes();
    const auto& w = measure.lambda_weights();
    Eigen::VectorXd acc;
    for (std::size_t q = 0; q < nodes.size(); ++q) {
        Eigen::VectorXd v = beta_at(nodes[q]);
        if (!v.allFinite()) throw std::runtime_error("compensator_drift: integrand not finite");
        if (acc.size() == 0)
            acc = w[q] * v;
        else
            acc += w[q] * v;
    }
    return acc;
}

}  // namespace fbsde
