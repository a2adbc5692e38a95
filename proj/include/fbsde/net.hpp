#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fbsde/tape.hpp"

namespace fbsde {

enum class Activation : std::uint8_t { relu, tanh };

struct MLPShape {
    int input_dim = 0;
    std::vector<int> hidden;
    int output_dim = 0;
    Activation activation = Activation::relu;

    int layers() const { return static_cast<int>(hidden.size()) + 1; }
    std::vector<std::pair<int, int>> layer_dims() const;
    std::int64_t param_count() const;
    void validate() const;
};

// All trainable state of the deep scheme: the scalar Y0 head plus one
// Z-network (input (x,y), output R^d) and one U-kernel network (input
// (x,y,e), output R) per time step. Parameters live in one flat vector;
// the layout is per net, per layer: column-major W then bias row.
struct ParamSet {
    int dim = 0;
    int steps = 0;
    MLPShape z_shape;
    MLPShape u_shape;
    std::uint64_t seed = 0;
    // Trust region for the policies: rollout saturates net outputs through
    // s*tanh(v/s) when s > 0. Near-identity on the solution scale, bounds
    // the quadratic y*z feedback that can otherwise overflow rare paths.
    double policy_clamp = 0.0;
    std::vector<double> flat;

    double y0() const { return flat[0]; }
    double& y0() { return flat[0]; }

    std::int64_t size() const { return static_cast<std::int64_t>(flat.size()); }
    std::int64_t net_offset(bool u_net, int step) const;

    Eigen::Map<const Eigen::MatrixXd> weight(bool u_net, int step, int layer) const;
    Eigen::Map<const Eigen::MatrixXd> bias(bool u_net, int step, int layer) const;
    Eigen::Map<Eigen::MatrixXd> weight(bool u_net, int step, int layer);
    Eigen::Map<Eigen::MatrixXd> bias(bool u_net, int step, int layer);

    void validate() const;
};

struct NetConfig {
    int hidden_layers = 2;
    int hidden_width_offset = 10;  // width = d + offset
    Activation activation = Activation::relu;
    // Init scale of the output layer (1 = standard). Small values start the
    // policies near zero and let them grow smoothly during training.
    double z_final_init_scale = 1.0;
    double u_final_init_scale = 1.0;
};

// He-style initialization (variance 2/fan_in) on hidden layers, 1/fan_in on
// the affine output layer, zero biases; deterministic under seed.
ParamSet init_params(const NetConfig& cfg, int d, int steps, std::uint64_t seed, double y0 = 0.0);

// Straight-line forward for a single input vector; no tape.
Eigen::VectorXd mlp_eval(const ParamSet& ps, bool u_net, int step, const Eigen::VectorXd& input);

// Node ids of every parameter tensor registered on one tape.
struct TapeBinding {
    int y0 = -1;
    std::vector<std::array<int, 2>> z_nodes;  // [step*layers + layer] -> {W, b}
    std::vector<std::array<int, 2>> u_nodes;
};

TapeBinding bind_params(Tape& tape, const ParamSet& ps);

// Batched forward through the step-n Z net; input node is [batch x (d+1)].
int z_net_forward(Tape& tape, const ParamSet& ps, const TapeBinding& bind, int step, int input);

// The U net's first layer split so the (x,y) part is computed once and the
// mark coordinate enters as a rank-one row update.
struct UNetFirstLayer {
    int h1_xy = -1;   // [batch x width], pre-activation without the mark term
    int e_row = -1;   // [1 x width] slice of W1 acting on the mark input
};
UNetFirstLayer u_net_first_layer(Tape& tape, const ParamSet& ps, const TapeBinding& bind, int step,
                                 int xy_input);

// U net over quadrature levels: output [(Q*batch) x 1], block q holding the
// net evaluated at mark levels[q] for every sample.
int u_net_over_levels(Tape& tape, const ParamSet& ps, const TapeBinding& bind, int step,
                      const UNetFirstLayer& first, const std::vector<double>& levels);

// U net at realized jump marks: row r is the net at (x_{idx[r]}, y_{idx[r]},
// marks[r]); output [k x 1].
int u_net_at_marks(Tape& tape, const ParamSet& ps, const TapeBinding& bind, int step,
                   const UNetFirstLayer& first, std::vector<std::int32_t> idx,
                   std::vector<double> marks);

// Reverse-mode gradient of a scalar node over the whole ParamSet, flattened
// in the ParamSet layout. Call after tape.backward(loss).
std::vector<double> collect_grad(const Tape& tape, const TapeBinding& bind, const ParamSet& ps);

// Checkpoint I/O: text header (version, shapes, seed) + raw little-endian
// doubles. Format documented in the README.
void save_params(const ParamSet& ps, const std::string& path);
ParamSet load_params(const std::string& path);

}  // namespace fbsde
