#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbsde/analysis.hpp"
#include "fbsde/markovian.hpp"
#include "fbsde/problem.hpp"
#include "fbsde/train.hpp"

namespace fbsde {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Fully resolved run description. Files use flat dotted keys, one
// `key = value` per line, `#` comments; unknown and duplicate keys are
// rejected. Command-line flags override file values.
struct RunConfig {
    std::string subcommand;  // train | markovian | rate | verify | errors

    std::string problem = "example1";
    int d = 100;  // dimension for example_highdim
    double terminal_time = 1.0;
    double delta = 1.0;
    std::string mark_mode = "aggregate";  // aggregate | per_coordinate
    int quad_order = 32;

    int grid_n = 20;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    int runs = 1;
    std::string determinism = "strict";  // strict | fast

    // train
    int train_batch = 256;
    int train_iterations = 4000;
    int train_eval_batch = 256;
    int train_checkpoint_every = 250;
    std::string train_optimizer = "adam";
    double train_lr = 4e-4;
    double train_beta1 = 0.9;
    double train_beta2 = 0.999;
    double train_eps = 1e-8;
    double train_y0_lr_mult = 5.0;
    double train_z_lr_mult = 1.0;
    double train_u_lr_mult = 5.0;
    double train_grad_clip = 100.0;
    double train_policy_clamp = 20.0;
    std::string train_y0_init = "zero";  // zero | g_at_xi
    int train_hidden_layers = 2;
    int train_hidden_width_offset = 10;
    std::string train_activation = "relu";
    double train_z_final_init_scale = 0.0;
    double train_u_final_init_scale = 1.0;

    // markovian
    int markovian_samples = 20000;
    int markovian_sweeps = 20;
    double markovian_tol = 1e-3;
    std::string markovian_basis = "polynomial";
    int markovian_degree = 4;
    double markovian_clip_lo = -4.0;
    double markovian_clip_hi = 4.0;
    int markovian_eval_points = 41;
    bool markovian_resample = false;
    double markovian_value_margin = 1.0;

    // rate
    std::vector<int> rate_n_list = {10, 20, 40, 80};
    int rate_samples = 100000;
    std::string rate_mode = "oracle";  // oracle | markovian_quadrature

    // errors
    int errors_samples = 100000;
    std::string errors_source = "oracle";  // oracle | params
    std::string errors_params_path;

    void apply_key(const std::string& key, const std::string& value);
    void validate() const;

    ProblemSpec make_problem() const;
    TrainConfig make_train_config() const;
    MarkovianConfig make_markovian_config() const;
    RateMode make_rate_mode() const;

    // Flat dotted-key rendering; parse(render()) round-trips.
    std::string render() const;
};

// Parse a config file into cfg. Lines are `key = value`; `#` starts a
// comment. Duplicate keys are an error naming the key and line.
void parse_config_file(RunConfig& cfg, const std::string& path);

}  // namespace fbsde
