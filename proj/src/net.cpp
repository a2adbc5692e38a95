#include "fbsde/net.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fbsde/rng.hpp"

namespace fbsde {

std::vector<std::pair<int, int>> MLPShape::layer_dims() const {
    std::vector<std::pair<int, int>> dims;
    int in = input_dim;
    for (int h : hidden) {
        dims.emplace_back(in, h);
        in = h;
    }
    dims.emplace_back(in, output_dim);
    return dims;
}

std::int64_t MLPShape::param_count() const {
    std::int64_t n = 0;
    for (auto [in, out] : layer_dims()) n += static_cast<std::int64_t>(in) * out + out;
    return n;
}

void MLPShape::validate() const {
    if (input_dim < 1 || output_dim < 1)
        throw std::invalid_argument("MLPShape: dims must be positive");
    if (hidden.empty()) throw std::invalid_argument("MLPShape: need at least one hidden layer");
    for (int h : hidden)
        if (h < 1) throw std::invalid_argument("MLPShape: hidden dims must be positive");
}

std::int64_t ParamSet::net_offset(bool u_net, int step) const {
    const std::int64_t z_count = z_shape.param_count();
    const std::int64_t u_count = u_shape.param_count();
    std::int64_t off = 1;  // y0 head
    if (!u_net) return off + step * z_count;
    return off + steps * z_count + step * u_count;
}

namespace {

std::int64_t layer_offset(const MLPShape& shape, int layer) {
    std::int64_t off = 0;
    const auto dims = shape.layer_dims();
    for (int l = 0; l < layer; ++l)
        off += static_cast<std::int64_t>(dims[l].first) * dims[l].second + dims[l].second;
    return off;
}

}  // namespace

Eigen::Map<const Eigen::MatrixXd> ParamSet::weight(bool u_net, int step, int layer) const {
    const MLPShape& shape = u_net ? u_shape : z_shape;
    const auto dims = shape.layer_dims();
    const double* p = flat.data() + net_offset(u_net, step) + layer_offset(shape, layer);
    return {p, dims[layer].first, dims[layer].second};
}

Eigen::Map<const Eigen::MatrixXd> ParamSet::bias(bool u_net, int step, int layer) const {
    const MLPShape& shape = u_net ? u_shape : z_shape;
    const auto dims = shape.layer_dims();
    const double* p = flat.data() + net_offset(u_net, step) + layer_offset(shape, layer) +
                      static_cast<std::int64_t>(dims[layer].first) * dims[layer].second;
    return {p, 1, dims[layer].second};
}

Eigen::Map<Eigen::MatrixXd> ParamSet::weight(bool u_net, int step, int layer) {
    const MLPShape& shape = u_net ? u_shape : z_shape;
    const auto dims = shape.layer_dims();
    double* p = flat.data() + net_offset(u_net, step) + layer_offset(shape, layer);
    return {p, dims[layer].first, dims[layer].second};
}

Eigen::Map<Eigen::MatrixXd> ParamSet::bias(bool u_net, int step, int layer) {
    const MLPShape& shape = u_net ? u_shape : z_shape;
    const auto dims = shape.layer_dims();
    double* p = flat.data() + net_offset(u_net, step) + layer_offset(shape, layer) +
                static_cast<std::int64_t>(dims[layer].first) * dims[layer].second;
    return {p, 1, dims[layer].second};
}

void ParamSet::validate() const {
    z_shape.validate();
    u_shape.validate();
    const std::int64_t want = 1 + steps * (z_shape.param_count() + u_shape.param_count());
    if (size() != want) throw std::invalid_argument("ParamSet: flat size inconsistent with shapes");
    for (double v : flat)
        if (!std::isfinite(v)) throw std::invalid_argument("ParamSet: non-finite entry");
}

ParamSet init_params(const NetConfig& cfg, int d, int steps, std::uint64_t seed, double y0) {
    if (d < 1 || steps < 1) throw std::invalid_argument("init_params: d and steps must be >= 1");
    const int width = d + cfg.hidden_width_offset;
    ParamSet ps;
    ps.dim = d;
    ps.steps = steps;
    ps.seed = seed;
    ps.z_shape = {d + 1, std::vector<int>(cfg.hidden_layers, width), d, cfg.activation};
    ps.u_shape = {d + 2, std::vector<int>(cfg.hidden_layers, width), 1, cfg.activation};
    ps.z_shape.validate();
    ps.u_shape.validate();
    ps.flat.assign(1 + steps * (ps.z_shape.param_count() + ps.u_shape.param_count()), 0.0);
    ps.y0() = y0;

    for (int u = 0; u < 2; ++u) {
        const MLPShape& shape = u ? ps.u_shape : ps.z_shape;
        const auto dims = shape.layer_dims();
        for (int n = 0; n < steps; ++n) {
            for (int l = 0; l < shape.layers(); ++l) {
                CounterRng rng(seed, CounterRng::kStreamInit,
                               (static_cast<std::uint64_t>(u) << 32) | static_cast<std::uint32_t>(n),
                               static_cast<std::uint64_t>(l));
                const bool last = (l == shape.layers() - 1);
                const double fan_in = dims[l].first;
                double std_dev;
                if (last)
                    std_dev = std::sqrt(1.0 / fan_in) *
                              (u ? cfg.u_final_init_scale : cfg.z_final_init_scale);
                else if (shape.activation == Activation::relu)
                    std_dev = std::sqrt(2.0 / fan_in);
                else
                    std_dev = std::sqrt(1.0 / fan_in);
                auto W = ps.weight(u, n, l);
                for (Eigen::Index j = 0; j < W.cols(); ++j)
                    for (Eigen::Index i = 0; i < W.rows(); ++i) W(i, j) = std_dev * rng.normal();
                // biases stay zero
            }
        }
    }
    return ps;
}

Eigen::VectorXd mlp_eval(const ParamSet& ps, bool u_net, int step, const Eigen::VectorXd& input) {
    const MLPShape& shape = u_net ? ps.u_shape : ps.z_shape;
    if (input.size() != shape.input_dim)
        throw std::invalid_argument("mlp_eval: input dimension mismatch");
    Eigen::VectorXd h = input;
    for (int l = 0; l < shape.layers(); ++l) {
        Eigen::VectorXd a =
            ps.weight(u_net, step, l).transpose() * h + ps.bias(u_net, step, l).transpose();
        if (l + 1 < shape.layers()) {
            if (shape.activation == Activation::relu)
                a = a.cwiseMax(0.0);
            else
                a = a.array().tanh().matrix();
        }
        h = std::move(a);
    }
    return h;
}

TapeBinding bind_params(Tape& tape, const ParamSet& ps) {
    TapeBinding bind;
    bind.y0 = tape.param(Eigen::MatrixXd::Constant(1, 1, ps.y0()));
    bind.z_nodes.resize(ps.steps * ps.z_shape.layers());
    bind.u_nodes.resize(ps.steps * ps.u_shape.layers());
    for (int n = 0; n < ps.steps; ++n) {
        for (int l = 0; l < ps.z_shape.layers(); ++l)
            bind.z_nodes[n * ps.z_shape.layers() + l] = {tape.param(ps.weight(false, n, l)),
                                                         tape.param(ps.bias(false, n, l))};
        for (int l = 0; l < ps.u_shape.layers(); ++l)
            bind.u_nodes[n * ps.u_shape.layers() + l] = {tape.param(ps.weight(true, n, l)),
                                                         tape.param(ps.bias(true, n, l))};
    }
    return bind;
}

namespace {

int apply_hidden_activation(Tape& tape, Activation act, int pre) {
    return act == Activation::relu ? tape.relu(pre) : tape.tanh_(pre);
}

int dense_hidden(Tape& tape, Activation act, int x, int W, int b) {
    return act == Activation::relu ? tape.dense_relu(x, W, b) : tape.dense_tanh(x, W, b);
}

}  // namespace

int z_net_forward(Tape& tape, const ParamSet& ps, const TapeBinding& bind, int step, int input) {
    const int L = ps.z_shape.layers();
    int h = input;
    for (int l = 0; l < L; ++l) {
        const auto [W, b] = bind.z_nodes[step * L + l];
        h = (l + 1 < L) ? dense_hidden(tape, ps.z_shape.activation, h, W, b) : tape.dense(h, W, b);
    }
    return h;
}

UNetFirstLayer u_net_first_layer(Tape& tape, const ParamSet& ps, const TapeBinding& bind, int step,
                                 int xy_input) {
    const auto [W1, b1] = bind.u_nodes[step * ps.u_shape.layers()];
    const int in = ps.u_shape.input_dim;
    UNetFirstLayer first;
    first.h1_xy = tape.dense(xy_input, tape.slice_rows(W1, 0, in - 1), b1);
    first.e_row = tape.slice_rows(W1, in - 1, in);
    return first;
}

namespace {

int u_net_tail(Tape& tape, const ParamSet& ps, const TapeBinding& bind, int step, int pre1) {
    const int L = ps.u_shape.layers();
    int h = apply_hidden_activation(tape, ps.u_shape.activation, pre1);
    for (int l = 1; l < L; ++l) {
        const auto [W, b] = bind.u_nodes[step * L + l];
        h = (l + 1 < L) ? dense_hidden(tape, ps.u_shape.activation, h, W, b) : tape.dense(h, W, b);
    }
    return h;
}

}  // namespace

int u_net_over_levels(Tape& tape, const ParamSet& ps, const TapeBinding& bind, int step,
                      const UNetFirstLayer& first, const std::vector<double>& levels) {
    const int pre = tape.replicate_add_scaled_row(first.h1_xy, first.e_row, levels);
    return u_net_tail(tape, ps, bind, step, pre);
}

int u_net_at_marks(Tape& tape, const ParamSet& ps, const TapeBinding& bind, int step,
                   const UNetFirstLayer& first, std::vector<std::int32_t> idx,
                   std::vector<double> marks) {
    const int pre =
        tape.gather_rows_add_scaled_row(first.h1_xy, first.e_row, std::move(idx), std::move(marks));
    return u_net_tail(tape, ps, bind, step, pre);
}

std::vector<double> collect_grad(const Tape& tape, const TapeBinding& bind, const ParamSet& ps) {
    std::vector<double> grad(ps.flat.size(), 0.0);
    auto pull = [&](int node, double* dst, std::int64_t count) {
        const Eigen::MatrixXd& g = tape.grad(node);
        if (g.size() == 0) return;  // parameter unused by the loss
        if (g.size() != count) throw std::logic_error("collect_grad: size mismatch");
        Eigen::Map<Eigen::MatrixXd>(dst, g.rows(), g.cols()) = g;
    };
    pull(bind.y0, grad.data(), 1);
    for (int n = 0; n < ps.steps; ++n) {
        for (int l = 0; l < ps.z_shape.layers(); ++l) {
            const auto dims = ps.z_shape.layer_dims()[l];
            const auto [W, b] = bind.z_nodes[n * ps.z_shape.layers() + l];
            const std::int64_t off = ps.net_offset(false, n) + layer_offset(ps.z_shape, l);
            pull(W, grad.data() + off, static_cast<std::int64_t>(dims.first) * dims.second);
            pull(b, grad.data() + off + static_cast<std::int64_t>(dims.first) * dims.second,
                 dims.second);
        }
        for (int l = 0; l < ps.u_shape.layers(); ++l) {
            const auto dims = ps.u_shape.layer_dims()[l];
            const auto [W, b] = bind.u_nodes[n * ps.u_shape.layers() + l];
            const std::int64_t off = ps.net_offset(true, n) + layer_offset(ps.u_shape, l);
            pull(W, grad.data() + off, static_cast<std::int64_t>(dims.first) * dims.second);
            pull(b, grad.data() + off + static_cast<std::int64_t>(dims.first) * dims.second,
                 dims.second);
        }
    }
    return grad;
}

void save_params(const ParamSet& ps, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_params: cannot open " + path);
    auto shape_line = [](const MLPShape& s) {
        std::ostringstream os;
        os << s.input_dim;
        for (int h : s.hidden) os << ' ' << h;
        os << ' ' << s.output_dim << ' ' << (s.activation == Activation::relu ? "relu" : "tanh");
        return os.str();
    };
    out << "FBSDE-PARAMS 1\n";
    out << "d " << ps.dim << " steps " << ps.steps << " seed " << ps.seed << " clamp "
        << ps.policy_clamp << "\n";
    out << "z " << shape_line(ps.z_shape) << "\n";
    out << "u " << shape_line(ps.u_shape) << "\n";
    out << "count " << ps.flat.size() << "\n";
    out.write(reinterpret_cast<const char*>(ps.flat.data()),
              static_cast<std::streamsize>(ps.flat.size() * sizeof(double)));
    if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

namespace {

MLPShape parse_shape_line(std::istringstream& is) {
    std::vector<int> dims;
    std::string tok;
    std::string act;
    while (is >> tok) {
        if (tok == "relu" || tok == "tanh") {
            act = tok;
            break;
        }
        dims.push_back(std::stoi(tok));
    }
    if (dims.size() < 3 || act.empty())
        throw std::runtime_error("load_params: malformed shape line");
    MLPShape s;
    s.input_dim = dims.front();
    s.output_dim = dims.back();
    s.hidden.assign(dims.begin() + 1, dims.end() - 1);
    s.activation = act == "relu" ? Activation::relu : Activation::tanh;
    return s;
}

}  // namespace

ParamSet load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_params: cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line != "FBSDE-PARAMS 1") throw std::runtime_error("load_params: bad magic in " + path);
    ParamSet ps;
    std::string key;
    std::getline(in, line);
    {
        std::istringstream is(line);
        is >> key >> ps.dim >> key >> ps.steps >> key >> ps.seed;
        if (is >> key >> ps.policy_clamp) {
        }
    }
    std::getline(in, line);
    {
        std::istringstream is(line);
        is >> key;
        ps.z_shape = parse_shape_line(is);
    }
    std::getline(in, line);
    {
        std::istringstream is(line);
        is >> key;
        ps.u_shape = parse_shape_line(is);
    }
    std::getline(in, line);
    std::size_t count = 0;
    {
        std::istringstream is(line);
        is >> key >> count;
    }
    ps.flat.resize(count);
    in.read(reinterpret_cast<char*>(ps.flat.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error("load_params: truncated file " + path);
    ps.validate();
    return ps;
}

}  // namespace fbsde
