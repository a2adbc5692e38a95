#include "fbsde/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace fbsde {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(static_cast<int>(to_int(key, tok)));
    }
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

void check_choice(const std::string& key, const std::string& v,
                  std::initializer_list<const char*> allowed) {
    for (const char* a : allowed)
        if (v == a) return;
    std::string msg = "config key '" + key + "': '" + v + "' not one of {";
    bool first = true;
    for (const char* a : allowed) {
        if (!first) msg += ", ";
        msg += a;
        first = false;
    }
    throw ConfigError(msg + "}");
}

}  // namespace

void RunConfig::apply_key(const std::string& key, const std::string& value) {
    if (key == "problem") {
        check_choice(key, value, {"example1", "example_highdim"});
        problem = value;
    } else if (key == "problem.d") {
        d = static_cast<int>(to_int(key, value));
    } else if (key == "problem.T") {
        terminal_time = to_double(key, value);
    } else if (key == "problem.delta") {
        delta = to_double(key, value);
    } else if (key == "problem.mark_mode") {
        check_choice(key, value, {"aggregate", "per_coordinate"});
        mark_mode = value;
    } else if (key == "quad_order") {
        quad_order = static_cast<int>(to_int(key, value));
    } else if (key == "grid.n") {
        grid_n = static_cast<int>(to_int(key, value));
    } else if (key == "seed") {
        seed = static_cast<std::uint64_t>(to_int(key, value));
    } else if (key == "output_dir") {
        output_dir = value;
    } else if (key == "runs") {
        runs = static_cast<int>(to_int(key, value));
    } else if (key == "determinism") {
        check_choice(key, value, {"strict", "fast"});
        determinism = value;
    } else if (key == "train.batch") {
        train_batch = static_cast<int>(to_int(key, value));
    } else if (key == "train.iterations") {
        train_iterations = static_cast<int>(to_int(key, value));
    } else if (key == "train.eval_batch") {
        train_eval_batch = static_cast<int>(to_int(key, value));
    } else if (key == "train.checkpoint_every") {
        train_checkpoint_every = static_cast<int>(to_int(key, value));
    } else if (key == "train.optimizer") {
        check_choice(key, value, {"adam", "sgd"});
        train_optimizer = value;
    } else if (key == "train.lr") {
        train_lr = to_double(key, value);
    } else if (key == "train.beta1") {
        train_beta1 = to_double(key, value);
    } else if (key == "train.beta2") {
        train_beta2 = to_double(key, value);
    } else if (key == "train.eps") {
        train_eps = to_double(key, value);
    } else if (key == "train.y0_lr_mult") {
        train_y0_lr_mult = to_double(key, value);
    } else if (key == "train.z_lr_mult") {
        train_z_lr_mult = to_double(key, value);
    } else if (key == "train.u_lr_mult") {
        train_u_lr_mult = to_double(key, value);
    } else if (key == "train.grad_clip") {
        train_grad_clip = to_double(key, value);
    } else if (key == "train.policy_clamp") {
        train_policy_clamp = to_double(key, value);
    } else if (key == "train.y0_init") {
        check_choice(key, value, {"zero", "g_at_xi"});
        train_y0_init = value;
    } else if (key == "train.hidden_layers") {
        train_hidden_layers = static_cast<int>(to_int(key, value));
    } else if (key == "train.hidden_width_offset") {
        train_hidden_width_offset = static_cast<int>(to_int(key, value));
    } else if (key == "train.activation") {
        check_choice(key, value, {"relu", "tanh"});
        train_activation = value;
    } else if (key == "train.z_final_init_scale") {
        train_z_final_init_scale = to_double(key, value);
    } else if (key == "train.u_final_init_scale") {
        train_u_final_init_scale = to_double(key, value);
    } else if (key == "markovian.samples") {
        markovian_samples = static_cast<int>(to_int(key, value));
    } else if (key == "markovian.sweeps") {
        markovian_sweeps = static_cast<int>(to_int(key, value));
    } else if (key == "markovian.tol") {
        markovian_tol = to_double(key, value);
    } else if (key == "markovian.basis") {
        check_choice(key, value, {"polynomial", "piecewise_linear"});
        markovian_basis = value;
    } else if (key == "markovian.degree") {
        markovian_degree = static_cast<int>(to_int(key, value));
    } else if (key == "markovian.clip_lo") {
        markovian_clip_lo = to_double(key, value);
    } else if (key == "markovian.clip_hi") {
        markovian_clip_hi = to_double(key, value);
    } else if (key == "markovian.eval_points") {
        markovian_eval_points = static_cast<int>(to_int(key, value));
    } else if (key == "markovian.resample") {
        markovian_resample = to_bool(key, value);
    } else if (key == "markovian.value_margin") {
        markovian_value_margin = to_double(key, value);
    } else if (key == "rate.n_list") {
        rate_n_list = to_int_list(key, value);
    } else if (key == "rate.samples") {
        rate_samples = static_cast<int>(to_int(key, value));
    } else if (key == "rate.mode") {
        check_choice(key, value, {"oracle", "markovian_quadrature"});
        rate_mode = value;
    } else if (key == "errors.samples") {
        errors_samples = static_cast<int>(to_int(key, value));
    } else if (key == "errors.source") {
        check_choice(key, value, {"oracle", "params"});
        errors_source = value;
    } else if (key == "errors.params_path") {
        errors_params_path = value;
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

void RunConfig::validate() const {
    if (d < 1) throw ConfigError("problem.d must be >= 1");
    if (!(terminal_time > 0.0)) throw ConfigError("problem.T must be positive");
    if (!(delta > 0.0)) throw ConfigError("problem.delta must be positive");
    if (grid_n < 1) throw ConfigError("grid.n must be >= 1");
    if (runs < 1) throw ConfigError("runs must be >= 1");
    if (quad_order < 1) throw ConfigError("quad_order must be >= 1");
    if (train_batch < 2) throw ConfigError("train.batch must be >= 2");
    if (train_iterations < 0) throw ConfigError("train.iterations must be >= 0");
    if (markovian_samples < 1) throw ConfigError("markovian.samples must be >= 1");
    if (!(markovian_clip_hi > markovian_clip_lo))
        throw ConfigError("markovian.clip_hi must exceed markovian.clip_lo");
    if (rate_n_list.size() < 3) throw ConfigError("rate.n_list needs at least 3 levels");
    if (errors_source == "params" && errors_params_path.empty())
        throw ConfigError("errors.params_path required when errors.source = params");
}

ProblemSpec RunConfig::make_problem() const {
    if (problem == "example1") {
        ProblemSpec p = example_1d(terminal_time, quad_order);
        if (delta != 1.0) {
            p.measure = JumpMeasureSpec::uniform(delta, quad_order);
        }
        return p;
    }
    ProblemSpec p = example_highdim(
        d, terminal_time,
        mark_mode == "aggregate" ? MarkMode::aggregate_shift : MarkMode::per_coordinate,
        quad_order);
    if (delta != 1.0) p.measure = JumpMeasureSpec::uniform(delta, quad_order);
    return p;
}

TrainConfig RunConfig::make_train_config() const {
    TrainConfig cfg;
    cfg.steps = grid_n;
    cfg.batch = train_batch;
    cfg.iterations = train_iterations;
    cfg.eval_batch = train_eval_batch;
    cfg.checkpoint_every = train_checkpoint_every;
    cfg.seed = seed;
    cfg.y0_init = train_y0_init == "g_at_xi" ? TrainConfig::Y0Init::g_at_xi
                                             : TrainConfig::Y0Init::zero;
    cfg.opt.kind = train_optimizer == "sgd" ? OptimizerConfig::Kind::sgd
                                            : OptimizerConfig::Kind::adam;
    cfg.opt.lr = train_lr;
    cfg.opt.beta1 = train_beta1;
    cfg.opt.beta2 = train_beta2;
    cfg.opt.eps = train_eps;
    cfg.opt.y0_lr_mult = train_y0_lr_mult;
    cfg.opt.z_lr_mult = train_z_lr_mult;
    cfg.opt.u_lr_mult = train_u_lr_mult;
    cfg.opt.grad_clip = train_grad_clip;
    cfg.policy_clamp = train_policy_clamp;
    cfg.net.hidden_layers = train_hidden_layers;
    cfg.net.hidden_width_offset = train_hidden_width_offset;
    cfg.net.activation = train_activation == "tanh" ? Activation::tanh : Activation::relu;
    cfg.net.z_final_init_scale = train_z_final_init_scale;
    cfg.net.u_final_init_scale = train_u_final_init_scale;
    return cfg;
}

MarkovianConfig RunConfig::make_markovian_config() const {
    MarkovianConfig cfg;
    cfg.samples = markovian_samples;
    cfg.max_sweeps = markovian_sweeps;
    cfg.tol = markovian_tol;
    cfg.basis.kind = markovian_basis == "piecewise_linear"
                         ? RegressionBasis::Kind::piecewise_linear
                         : RegressionBasis::Kind::polynomial;
    cfg.basis.degree = markovian_degree;
    cfg.basis.lo = markovian_clip_lo;
    cfg.basis.hi = markovian_clip_hi;
    cfg.seed = seed;
    cfg.eval_points = markovian_eval_points;
    cfg.resample_per_sweep = markovian_resample;
    cfg.value_margin = markovian_value_margin;
    return cfg;
}

RateMode RunConfig::make_rate_mode() const {
    return rate_mode == "oracle" ? RateMode::oracle_policy : RateMode::markovian_quadrature;
}

std::string RunConfig::render() const {
    std::ostringstream os;
    os.precision(17);
    os << "problem = " << problem << "\n";
    os << "problem.d = " << d << "\n";
    os << "problem.T = " << terminal_time << "\n";
    os << "problem.delta = " << delta << "\n";
    os << "problem.mark_mode = " << mark_mode << "\n";
    os << "quad_order = " << quad_order << "\n";
    os << "grid.n = " << grid_n << "\n";
    os << "seed = " << seed << "\n";
    os << "output_dir = " << output_dir << "\n";
    os << "runs = " << runs << "\n";
    os << "determinism = " << determinism << "\n";
    os << "train.batch = " << train_batch << "\n";
    os << "train.iterations = " << train_iterations << "\n";
    os << "train.eval_batch = " << train_eval_batch << "\n";
    os << "train.checkpoint_every = " << train_checkpoint_every << "\n";
    os << "train.optimizer = " << train_optimizer << "\n";
    os << "train.lr = " << train_lr << "\n";
    os << "train.beta1 = " << train_beta1 << "\n";
    os << "train.beta2 = " << train_beta2 << "\n";
    os << "train.eps = " << train_eps << "\n";
    os << "train.y0_lr_mult = " << train_y0_lr_mult << "\n";
    os << "train.z_lr_mult = " << train_z_lr_mult << "\n";
    os << "train.u_lr_mult = " << train_u_lr_mult << "\n";
    os << "train.grad_clip = " << train_grad_clip << "\n";
    os << "train.policy_clamp = " << train_policy_clamp << "\n";
    os << "train.y0_init = " << train_y0_init << "\n";
    os << "train.hidden_layers = " << train_hidden_layers << "\n";
    os << "train.hidden_width_offset = " << train_hidden_width_offset << "\n";
    os << "train.activation = " << train_activation << "\n";
    os << "train.z_final_init_scale = " << train_z_final_init_scale << "\n";
    os << "train.u_final_init_scale = " << train_u_final_init_scale << "\n";
    os << "markovian.samples = " << markovian_samples << "\n";
    os << "markovian.sweeps = " << markovian_sweeps << "\n";
    os << "markovian.tol = " << markovian_tol << "\n";
    os << "markovian.basis = " << markovian_basis << "\n";
    os << "markovian.degree = " << markovian_degree << "\n";
    os << "markovian.clip_lo = " << markovian_clip_lo << "\n";
    os << "markovian.clip_hi = " << markovian_clip_hi << "\n";
    os << "markovian.eval_points = " << markovian_eval_points << "\n";
    os << "markovian.resample = " << (markovian_resample ? "true" : "false") << "\n";
    os << "markovian.value_margin = " << markovian_value_margin << "\n";
    os << "rate.n_list = ";
    for (std::size_t i = 0; i < rate_n_list.size(); ++i)
        os << (i ? "," : "") << rate_n_list[i];
    os << "\n";
    os << "rate.samples = " << rate_samples << "\n";
    os << "rate.mode = " << rate_mode << "\n";
    os << "errors.samples = " << errors_samples << "\n";
    os << "errors.source = " << errors_source << "\n";
    os << "errors.params_path = " << errors_params_path << "\n";
    return os.str();
}

void parse_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (!seen.insert(key).second)
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
        try {
            cfg.apply_key(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

}  // namespace fbsde
