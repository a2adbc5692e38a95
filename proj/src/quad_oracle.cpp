#include "fbsde/quad_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

#include "fbsde/quadrature.hpp"

namespace fbsde {

using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// CubicSpline

CubicSpline::CubicSpline(double lo, double hi, std::vector<double> values)
    : lo_(lo), hi_(hi), y_(std::move(values)) {
    const int n = static_cast<int>(y_.size());
    if (n < 3 || !(hi > lo)) throw std::invalid_argument("CubicSpline: bad grid");
    h_ = (hi_ - lo_) / (n - 1);
    // Natural spline: tridiagonal solve for second derivatives.
    std::vector<double> a(n, 0.0), b(n, 2.0), c(n, 0.0), r(n, 0.0);
    for (int i = 1; i + 1 < n; ++i) {
        a[i] = 0.5;
        c[i] = 0.5;
        r[i] = 3.0 * (y_[i + 1] - 2.0 * y_[i] + y_[i - 1]) / (h_ * h_);
    }
    m_.assign(n, 0.0);
    for (int i = 1; i < n; ++i) {
        const double w = a[i] / b[i - 1];
        b[i] -= w * c[i - 1];
        r[i] -= w * r[i - 1];
    }
    m_[n - 1] = r[n - 1] / b[n - 1];
    for (int i = n - 2; i >= 0; --i) m_[i] = (r[i] - c[i] * m_[i + 1]) / b[i];
}

double CubicSpline::operator()(double x) const {
    const int n = static_cast<int>(y_.size());
    if (x <= lo_) {
        const double slope = (y_[1] - y_[0]) / h_ - h_ * (2.0 * m_[0] + m_[1]) / 6.0;
        return y_[0] + slope * (x - lo_);
    }
    if (x >= hi_) {
        const double slope = (y_[n - 1] - y_[n - 2]) / h_ + h_ * (m_[n - 2] + 2.0 * m_[n - 1]) / 6.0;
        return y_[n - 1] + slope * (x - hi_);
    }
    const int i = std::min(n - 2, static_cast<int>((x - lo_) / h_));
    const double xl = lo_ + i * h_;
    const double t = x - xl;
    const double s = h_ - t;
    return (m_[i] * s * s * s + m_[i + 1] * t * t * t) / (6.0 * h_) +
           (y_[i] / h_ - m_[i] * h_ / 6.0) * s + (y_[i + 1] / h_ - m_[i + 1] * h_ / 6.0) * t;
}

// ---------------------------------------------------------------------------
// IncrementKernel

namespace {

double gaussian_pdf(double x, double s) {
    static const double inv_sqrt_2pi = 0.3989422804014326779399461;
    const double z = x / s;
    return inv_sqrt_2pi / s * std::exp(-0.5 * z * z);
}

// Density of the sum of k independent U(0,1) at v.
double irwin_hall_pdf(int k, double v) {
    if (v <= 0.0 || v >= k) return 0.0;
    double acc = 0.0;
    double binom = 1.0;  // C(k, j)
    for (int j = 0; j <= static_cast<int>(v); ++j) {
        const double term = binom * std::pow(v - j, k - 1);
        acc += (j % 2 == 0) ? term : -term;
        binom *= static_cast<double>(k - j) / (j + 1);
    }
    double fact = 1.0;
    for (int i = 2; i < k; ++i) fact *= i;
    return acc / fact;
}

int poisson_truncation(double mean, double tol, bool* ok) {
    // Smallest K with P(count > K) < tol.
    *ok = true;
    if (mean <= 0.0) return 0;
    double p = std::exp(-mean);
    double cdf = p;
    for (int k = 0; k < 40; ++k) {
        if (1.0 - cdf < tol) return k;
        p *= mean / (k + 1);
        cdf += p;
    }
    *ok = false;
    return 40;
}

// Quadrature representation of the mark-sum density of k marks: nodes s_j
// with weights q_k(s_j) * w_j, piecewise Gauss-Legendre between the
// convolution knots.
struct MarkSumQuad {
    std::vector<double> s;
    std::vector<double> qw;
};

MarkSumQuad mark_sum_quadrature(const JumpMeasureSpec& measure, int k, double piece_target) {
    const double delta = measure.delta();
    MarkSumQuad out;

    // Non-uniform mark densities are tabulated by iterated convolution.
    std::vector<std::vector<double>> conv;
    const int cells = 256;
    const double hs = delta / cells;
    if (!measure.uniform_marks()) {
        std::vector<double> rho(2 * cells + 1);
        for (int i = 0; i <= 2 * cells; ++i) rho[i] = measure.density(-delta + i * hs);
        conv.push_back(rho);
        for (int kk = 2; kk <= k; ++kk) {
            const auto& prev = conv.back();
            const int np = static_cast<int>(prev.size());
            std::vector<double> next(np + 2 * cells, 0.0);
            for (int i = 0; i < static_cast<int>(next.size()); ++i) {
                double acc = 0.0;
                const int j0 = std::max(0, i - np + 1);
                const int j1 = std::min(2 * cells, i);
                for (int j = j0; j <= j1; ++j) acc += rho[j] * prev[i - j];
                next[i] = acc * hs;
            }
            conv.push_back(std::move(next));
        }
    }
    auto density = [&](double s) {
        if (measure.uniform_marks())
            return irwin_hall_pdf(k, 0.5 * (s / delta + k)) / (2.0 * delta);
        const auto& q = conv[k - 1];
        const double pos = (s + k * delta) / hs;
        if (pos <= 0.0 || pos >= static_cast<double>(q.size() - 1)) return 0.0;
        const int i = static_cast<int>(pos);
        const double w = pos - i;
        return (1.0 - w) * q[i] + w * q[i + 1];
    };

    const QuadRule gl = gauss_legendre(12);
    for (int knot = 0; knot < 2 * k; ++knot) {
        const double a = -k * delta + knot * delta;
        const double b = a + delta;
        const int pieces = std::max(1, static_cast<int>(std::ceil(delta / piece_target)));
        for (int p = 0; p < pieces; ++p) {
            const double pa = a + (b - a) * p / pieces;
            const double pb = a + (b - a) * (p + 1) / pieces;
            const QuadRule sc = gl.scaled(pa, pb);
            for (int q = 0; q < sc.order(); ++q) {
                out.s.push_back(sc.x[q]);
                out.qw.push_back(sc.w[q] * density(sc.x[q]));
            }
        }
    }
    return out;
}

}  // namespace

IncrementKernel::IncrementKernel(const JumpMeasureSpec& measure, double sigma, double mark_scale,
                                 double dt)
    : dt_(dt) {
    if (!(sigma > 0.0)) throw std::invalid_argument("IncrementKernel: sigma must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("IncrementKernel: dt must be positive");

    const double s0 = sigma * std::sqrt(dt);
    const double lam = measure.total_intensity() * dt;
    const double delta = measure.delta();
    const double c = mark_scale;
    const int kmax = poisson_truncation(lam, 1e-12, &tail_ok_);

    double gamma0 = 0.0;
    const bool gamma_const = measure.gamma_constant(&gamma0);

    // Poisson weights.
    std::vector<double> pk(kmax + 1);
    pk[0] = std::exp(-lam);
    for (int k = 1; k <= kmax; ++k) pk[k] = pk[k - 1] * lam / k;

    const double mark_mean = levy_integral([](double e) { return e; }, measure);
    const double shift = c * mark_mean * dt;  // compensator of the scaled jump sum

    // Quadrature grid in w, resolved at the Gaussian scale.
    const double range = 8.0 * s0 + kmax * delta * std::abs(c) + std::abs(shift);
    const double piece = 0.5 * s0;
    const int pieces = std::max(2, static_cast<int>(std::ceil(2.0 * range / piece)));
    const QuadRule gl8 = gauss_legendre(8);
    node_.reserve(pieces * 8);
    wgt_.reserve(pieces * 8);
    for (int p = 0; p < pieces; ++p) {
        const double a = -range + 2.0 * range * p / pieces;
        const double b = -range + 2.0 * range * (p + 1) / pieces;
        const QuadRule sc = gl8.scaled(a, b);
        node_.insert(node_.end(), sc.x.begin(), sc.x.end());
        wgt_.insert(wgt_.end(), sc.w.begin(), sc.w.end());
    }

    // Mark-sum quadratures per jump count.
    std::vector<MarkSumQuad> sums(kmax + 1);
    const double piece_target =
        (std::abs(c) > 0.0) ? std::max(s0 / std::abs(c), delta / 64.0) : delta;
    for (int k = 1; k <= kmax; ++k) sums[k] = mark_sum_quadrature(measure, k, piece_target);

    const std::size_t M = node_.size();
    k0_.assign(M, 0.0);
    kz_.assign(M, 0.0);
    kg_.assign(gamma_const ? M : 0, 0.0);

    for (std::size_t i = 0; i < M; ++i) {
        const double w = node_[i];
        double v0 = 0.0, vz = 0.0, vg = 0.0;
        for (int k = 0; k <= kmax; ++k) {
            double gk = 0.0, hk = 0.0;
            if (k == 0 || c == 0.0) {
                const double d = w;
                const double phi = gaussian_pdf(d, s0);
                gk = phi;
                hk = d / (sigma * dt) * phi;
            } else {
                for (std::size_t j = 0; j < sums[k].s.size(); ++j) {
                    const double d = w - c * sums[k].s[j];
                    const double phi = gaussian_pdf(d, s0);
                    gk += sums[k].qw[j] * phi;
                    hk += sums[k].qw[j] * d / (sigma * dt) * phi;
                }
            }
            v0 += pk[k] * gk;
            vz += pk[k] * hk;
            if (gamma_const) vg += pk[k] * gamma0 * (k - lam) / dt * gk;
        }
        k0_[i] = v0;
        kz_[i] = vz;
        if (gamma_const) kg_[i] = vg;
    }

    // Kill residual truncation drift: the density kernel must integrate to 1.
    double mass = 0.0;
    for (std::size_t i = 0; i < M; ++i) mass += wgt_[i] * k0_[i];
    for (std::size_t i = 0; i < M; ++i) k0_[i] /= mass;

    // Fold the compensator shift into the node positions.
    for (std::size_t i = 0; i < M; ++i) node_[i] -= shift;
}

double IncrementKernel::weighted(const std::function<double(double)>& f, double x0,
                                 const std::vector<double>& kernel) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < node_.size(); ++i)
        acc += wgt_[i] * kernel[i] * f(x0 + node_[i]);
    return acc;
}

double IncrementKernel::expect(const std::function<double(double)>& f, double x0) const {
    return weighted(f, x0, k0_);
}

double IncrementKernel::expect_zw(const std::function<double(double)>& f, double x0) const {
    return weighted(f, x0, kz_);
}

double IncrementKernel::expect_gw(const std::function<double(double)>& f, double x0) const {
    if (kg_.empty())
        throw std::runtime_error("IncrementKernel: gamma-weighted kernel needs constant gamma");
    return weighted(f, x0, kg_);
}

std::shared_ptr<const IncrementKernel> IncrementKernel::cached(const JumpMeasureSpec& measure,
                                                               double sigma, double mark_scale,
                                                               double dt) {
    using Key = std::tuple<double, double, int, bool, double, double, double>;
    static std::map<Key, std::shared_ptr<const IncrementKernel>> cache;
    static std::mutex mutex;
    const Key key{measure.delta(), measure.total_intensity(), measure.quad_order(),
                  measure.uniform_marks(), sigma, mark_scale, dt};
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto kernel = std::make_shared<const IncrementKernel>(measure, sigma, mark_scale, dt);
    cache.emplace(key, kernel);
    return kernel;
}

// ---------------------------------------------------------------------------
// condexp_quadrature_1d

namespace {

// Mark-linearity check: beta(t,x,y,e) = e * c for some scalar c.
double mark_scale_of(const ProblemSpec& spec, double t, const VectorXd& x, double y) {
    const double c = spec.jump_coeff(t, x, y, 1.0)(0);
    for (double e : spec.measure.nodes()) {
        const double b = spec.jump_coeff(t, x, y, e)(0);
        if (std::abs(b - e * c) > 1e-12 * (1.0 + std::abs(e * c)))
            throw std::invalid_argument(
                "condexp_quadrature_1d: jump coefficient is not linear in the mark");
    }
    return c;
}

}  // namespace

double condexp_quadrature_1d(const ProblemSpec& spec, const std::function<double(double)>& y_next,
                             double t, double x, double dt) {
    if (spec.d != 1) throw std::invalid_argument("condexp_quadrature_1d: d must be 1");
    if (!(dt >= 0.0)) throw std::invalid_argument("condexp_quadrature_1d: dt must be >= 0");
    if (dt < 1e-14) return y_next(x);  // degenerate step

    const VectorXd xv = VectorXd::Constant(1, x);
    const double y0 = y_next(x);
    const double sigma = spec.diffusion(t, xv, y0)(0, 0);
    const double b = spec.drift(t, xv, y0)(0);
    const double c = mark_scale_of(spec, t, xv, y0);

    const auto kernel = IncrementKernel::cached(spec.measure, sigma, c, dt);
    if (!kernel->tail_ok())
        std::fprintf(stderr,
                     "condexp_quadrature_1d: warning: Poisson tail bound 1e-12 not met at "
                     "truncation, intensity*dt too large\n");
    return kernel->expect(y_next, x + b * dt);
}

// ---------------------------------------------------------------------------
// quadrature_backward_solve

double QuadratureSolution::eval_u(const ProblemSpec& spec, int n, double x) const {
    if (n >= static_cast<int>(u.size()))
        return spec.terminal(VectorXd::Constant(1, x));
    return u[n](x);
}

QuadratureSolution quadrature_backward_solve(const ProblemSpec& spec, const TimeGrid& grid,
                                             double x_lo, double x_hi, int points) {
    if (spec.d != 1) throw std::invalid_argument("quadrature_backward_solve: d must be 1");
    if (spec.y_coupled_forward)
        throw std::invalid_argument(
            "quadrature_backward_solve: Y-coupled forward dynamics unsupported");
    const int N = grid.steps();

    QuadratureSolution sol;
    sol.grid = grid;
    sol.u.resize(N);
    sol.z.resize(N);
    sol.gamma.resize(N);

    // Stabilization box for the value iterate: terminal hull over the grid,
    // widened; keeps spline extrapolation from feeding superlinear drivers.
    double g_lo = 1e300, g_hi = -1e300;
    for (int j = 0; j < points; ++j) {
        const double g = spec.terminal(
            Eigen::VectorXd::Constant(1, x_lo + (x_hi - x_lo) * j / (points - 1)));
        g_lo = std::min(g_lo, g);
        g_hi = std::max(g_hi, g);
    }
    const double margin = std::max(g_hi - g_lo, 1.0);
    const double box_lo = g_lo - margin, box_hi = g_hi + margin;

    for (int n = N - 1; n >= 0; --n) {
        const double t = grid.t(n);
        const double dt = grid.dt(n);

        std::function<double(double)> u_next;
        if (n + 1 == N)
            u_next = [&spec](double xx) { return spec.terminal(VectorXd::Constant(1, xx)); };
        else {
            const CubicSpline& sp = sol.u[n + 1];
            u_next = [&sp, box_lo, box_hi](double xx) {
                return std::clamp(sp(xx), box_lo, box_hi);
            };
        }

        std::vector<double> uv(points), zv(points), gv(points);
        for (int j = 0; j < points; ++j) {
            const double x = x_lo + (x_hi - x_lo) * j / (points - 1);
            const VectorXd xv = VectorXd::Constant(1, x);
            const double yref = u_next(x);
            const double sigma = spec.diffusion(t, xv, yref)(0, 0);
            const double b = spec.drift(t, xv, yref)(0);
            const double c = mark_scale_of(spec, t, xv, yref);
            const auto kernel = IncrementKernel::cached(spec.measure, sigma, c, dt);

            const double x0 = x + b * dt;
            const double z = kernel->expect_zw(u_next, x0);
            const double g = kernel->expect_gw(u_next, x0);
            const VectorXd zvec = VectorXd::Constant(1, z);
            const double y = kernel->expect(
                [&](double xx) {
                    const double yn = u_next(xx);
                    return yn + dt * spec.driver(t, xv, yn, zvec, g);
                },
                x0);
            uv[j] = std::clamp(y, box_lo, box_hi);
            zv[j] = z;
            gv[j] = g;
        }
        sol.u[n] = CubicSpline(x_lo, x_hi, std::move(uv));
        sol.z[n] = CubicSpline(x_lo, x_hi, std::move(zv));
        sol.gamma[n] = CubicSpline(x_lo, x_hi, std::move(gv));
    }
    return sol;
}

}  // namespace fbsde
