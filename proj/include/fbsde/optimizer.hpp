#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbsde/net.hpp"

namespace fbsde {

struct OptimizerConfig {
    enum class Kind : std::uint8_t { adam, sgd } kind = Kind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Per-block rates: lr * mult for the Y0 head, the Z nets and the U
    // kernel nets respectively.
    double y0_lr_mult = 1.0;
    double z_lr_mult = 1.0;
    double u_lr_mult = 1.0;
    // Global-norm gradient clip; 0 disables. Rare minibatches can produce
    // huge gradients through the driver's exponential term.
    double grad_clip = 100.0;
};

inline void clip_gradient(std::vector<double>& grad, double threshold) {
    if (threshold <= 0.0) return;
    double norm_sq = 0.0;
    for (double g : grad) norm_sq += g * g;
    const double norm = std::sqrt(norm_sq);
    if (norm <= threshold) return;
    const double scale = threshold / norm;
    for (double& g : grad) g *= scale;
}

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;

    void reset(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
};

// One optimizer step in place. Standard Adam with bias correction, or plain
// SGD when configured; the Y0 head, Z block and U block can run at scaled
// rates.
inline void optimizer_step(ParamSet& ps, const std::vector<double>& grad, OptimizerState& state,
                           const OptimizerConfig& cfg) {
    if (grad.size() != ps.flat.size())
        throw std::invalid_argument("optimizer_step: gradient size mismatch");
    if (state.m.size() != grad.size()) state.reset(grad.size());
    ++state.t;
    const std::size_t u_begin = static_cast<std::size_t>(ps.net_offset(true, 0));
    auto rate = [&](std::size_t i) {
        if (i == 0) return cfg.lr * cfg.y0_lr_mult;
        if (i < u_begin) return cfg.lr * cfg.z_lr_mult;
        return cfg.lr * cfg.u_lr_mult;
    };
    if (cfg.kind == OptimizerConfig::Kind::sgd) {
        for (std::size_t i = 0; i < grad.size(); ++i) ps.flat[i] -= rate(i) * grad[i];
        return;
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        ps.flat[i] -= rate(i) * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

}  // namespace fbsde
