#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "fbsde/net.hpp"
#include "fbsde/optimizer.hpp"
#include "fbsde/rng.hpp"

using namespace fbsde;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("init_params builds the published layer sizes") {
    NetConfig cfg;

    SUBCASE("d=1: z nets are [2 -> 11 -> 11 -> 1]") {
        const ParamSet ps = init_params(cfg, 1, 20, 1);
        const auto dims = ps.z_shape.layer_dims();
        REQUIRE(dims.size() == 3);
        CHECK(dims[0] == std::pair<int, int>{2, 11});
        CHECK(dims[1] == std::pair<int, int>{11, 11});
        CHECK(dims[2] == std::pair<int, int>{11, 1});
        CHECK(ps.u_shape.input_dim == 3);  // (x, y, e)
        CHECK(ps.u_shape.output_dim == 1);
    }
    SUBCASE("d=100: hidden width 110") {
        const ParamSet ps = init_params(cfg, 100, 2, 1);
        CHECK(ps.z_shape.hidden == std::vector<int>{110, 110});
        CHECK(ps.z_shape.input_dim == 101);
        CHECK(ps.z_shape.output_dim == 100);
        CHECK(ps.u_shape.input_dim == 102);
    }
    SUBCASE("fixed seed reproduces the ParamSet") {
        const ParamSet a = init_params(cfg, 3, 4, 99);
        const ParamSet b = init_params(cfg, 3, 4, 99);
        CHECK(a.flat == b.flat);
        const ParamSet c = init_params(cfg, 3, 4, 100);
        CHECK(a.flat != c.flat);
    }
}

TEST_CASE("mlp_eval basics") {
    NetConfig cfg;
    SUBCASE("all weights zero -> output zero") {
        ParamSet ps = init_params(cfg, 2, 1, 5);
        std::fill(ps.flat.begin(), ps.flat.end(), 0.0);
        const VectorXd out = mlp_eval(ps, false, 0, VectorXd::Constant(3, 1.7));
        CHECK(out.norm() == 0.0);
    }
    SUBCASE("relu gates a negative pre-activation") {
        NetConfig narrow;
        narrow.hidden_width_offset = 0;  // width = d = 1
        ParamSet ps = init_params(narrow, 1, 1, 5);
        std::fill(ps.flat.begin(), ps.flat.end(), 0.0);
        ps.weight(false, 0, 0)(0, 0) = 1.0;  // x -> hidden
        ps.weight(false, 0, 1)(0, 0) = 1.0;
        ps.weight(false, 0, 2)(0, 0) = 1.0;
        VectorXd in(2);
        in << -1.0, 0.0;
        CHECK(mlp_eval(ps, false, 0, in)(0) == 0.0);
        in << 2.0, 0.0;
        CHECK(mlp_eval(ps, false, 0, in)(0) == doctest::Approx(2.0));
    }
    SUBCASE("input dimension is checked") {
        const ParamSet ps = init_params(cfg, 2, 1, 5);
        CHECK_THROWS_AS(mlp_eval(ps, false, 0, VectorXd::Zero(5)), std::invalid_argument);
    }
}

TEST_CASE("forward value agrees with an independent straight-line evaluation") {
    NetConfig cfg;
    cfg.activation = Activation::tanh;
    const ParamSet ps = init_params(cfg, 3, 2, 2024);
    CounterRng rng(5, 17);
    for (int rep = 0; rep < 20; ++rep) {
        VectorXd in(4);
        for (int i = 0; i < 4; ++i) in(i) = rng.normal();

        // Second implementation: explicit loops over entries.
        std::vector<double> h(in.data(), in.data() + in.size());
        for (int l = 0; l < ps.z_shape.layers(); ++l) {
            const auto W = ps.weight(false, 1, l);
            const auto b = ps.bias(false, 1, l);
            std::vector<double> nxt(W.cols(), 0.0);
            for (int j = 0; j < W.cols(); ++j) {
                double acc = b(0, j);
                for (int i = 0; i < W.rows(); ++i) acc += h[i] * W(i, j);
                nxt[j] = (l + 1 < ps.z_shape.layers()) ? std::tanh(acc) : acc;
            }
            h = std::move(nxt);
        }

        const VectorXd got = mlp_eval(ps, false, 1, in);
        REQUIRE(got.size() == static_cast<int>(h.size()));
        for (int j = 0; j < got.size(); ++j) CHECK(got(j) == doctest::Approx(h[j]).epsilon(1e-12));

        // Batched tape forward matches too.
        Tape tape;
        const TapeBinding bind = bind_params(tape, ps);
        const int out = z_net_forward(tape, ps, bind, 1, tape.input(in.transpose()));
        for (int j = 0; j < got.size(); ++j)
            CHECK(tape.val(out)(0, j) == doctest::Approx(got(j)).epsilon(1e-12));
    }
}

TEST_CASE("u-net split first layer equals the plain forward") {
    NetConfig cfg;
    const ParamSet ps = init_params(cfg, 2, 1, 77);
    CounterRng rng(3, 1);
    MatrixXd xy(5, 3);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) xy(i, j) = rng.normal();
    const std::vector<double> levels{-0.9, -0.2, 0.4, 0.8};

    Tape tape;
    const TapeBinding bind = bind_params(tape, ps);
    const UNetFirstLayer first = u_net_first_layer(tape, ps, bind, 0, tape.input(xy));
    const int out = u_net_over_levels(tape, ps, bind, 0, first, levels);
    REQUIRE(tape.val(out).rows() == 20);

    for (std::size_t q = 0; q < levels.size(); ++q)
        for (int i = 0; i < 5; ++i) {
            VectorXd in(4);
            in << xy(i, 0), xy(i, 1), xy(i, 2), levels[q];
            const double want = mlp_eval(ps, true, 0, in)(0);
            CHECK(tape.val(out)(q * 5 + i, 0) == doctest::Approx(want).epsilon(1e-12));
        }

    const int marks_out = u_net_at_marks(tape, ps, bind, 0, first, {3, 0}, {0.11, -0.77});
    VectorXd in(4);
    in << xy(3, 0), xy(3, 1), xy(3, 2), 0.11;
    CHECK(tape.val(marks_out)(0, 0) == doctest::Approx(mlp_eval(ps, true, 0, in)(0)));
    in << xy(0, 0), xy(0, 1), xy(0, 2), -0.77;
    CHECK(tape.val(marks_out)(1, 0) == doctest::Approx(mlp_eval(ps, true, 0, in)(0)));
}

TEST_CASE("reverse-mode gradient matches central finite differences on random nets") {
    // Smooth (tanh) networks for the strict 1e-5 relative check.
    NetConfig cfg;
    cfg.activation = Activation::tanh;
    int draws = 0;
    double max_rel = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const ParamSet base = init_params(cfg, 2, 1, 1000 + rep);
        CounterRng rng(900, rep);
        MatrixXd input(3, 3);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) input(i, j) = rng.normal();

        ParamSet ps = base;
        Tape tape;
        const TapeBinding bind = bind_params(tape, ps);
        const int out = z_net_forward(tape, ps, bind, 0, tape.input(input));
        const int loss = tape.mean_all(tape.square(out));
        tape.backward(loss);
        const auto grad = collect_grad(tape, bind, ps);

        auto loss_at = [&](ParamSet& p) {
            Tape t2;
            const TapeBinding b2 = bind_params(t2, p);
            const int o2 = z_net_forward(t2, p, b2, 0, t2.input(input));
            return t2.scalar(t2.mean_all(t2.square(o2)));
        };
        // Spot-check a handful of coordinates per draw.
        for (std::size_t k = 1; k < ps.flat.size(); k += 17) {
            const double h = 1e-6;
            const double orig = ps.flat[k];
            ps.flat[k] = orig + h;
            const double up = loss_at(ps);
            ps.flat[k] = orig - h;
            const double dn = loss_at(ps);
            ps.flat[k] = orig;
            const double fd = (up - dn) / (2.0 * h);
            const double denom = std::max({1e-6, std::abs(fd), std::abs(grad[k])});
            max_rel = std::max(max_rel, std::abs(fd - grad[k]) / denom);
            ++draws;
        }
    }
    REQUIRE(draws >= 100);
    CHECK(max_rel < 1e-5);
}

TEST_CASE("output is affine in the last layer") {
    NetConfig cfg;
    ParamSet ps = init_params(cfg, 2, 1, 41);
    const int last = ps.z_shape.layers() - 1;
    VectorXd in = VectorXd::Constant(3, 0.6);
    const VectorXd base = mlp_eval(ps, false, 0, in);
    ps.weight(false, 0, last) *= 2.0;  // bias is zero from init
    const VectorXd doubled = mlp_eval(ps, false, 0, in);
    CHECK((doubled - 2.0 * base).norm() < 1e-12);
}

TEST_CASE("gradient blocks of unused nets are exactly zero") {
    NetConfig cfg;
    const ParamSet ps = init_params(cfg, 1, 3, 7);
    Tape tape;
    const TapeBinding bind = bind_params(tape, ps);
    // Loss touches only z net of step 0.
    const int out = z_net_forward(tape, ps, bind, 0, tape.input(MatrixXd::Constant(2, 2, 0.3)));
    const int loss = tape.mean_all(tape.square(out));
    tape.backward(loss);
    const auto grad = collect_grad(tape, bind, ps);
    CHECK(grad[0] == 0.0);  // y0 head untouched
    const auto uoff = ps.net_offset(true, 0);
    for (std::size_t k = uoff; k < grad.size(); ++k) CHECK(grad[k] == 0.0);
    double znorm = 0.0;
    for (std::int64_t k = ps.net_offset(false, 0); k < ps.net_offset(false, 1); ++k)
        znorm += grad[k] * grad[k];
    CHECK(znorm > 0.0);
}

TEST_CASE("optimizer steps") {
    NetConfig cfg;
    OptimizerConfig opt;

    SUBCASE("zero gradient leaves parameters unchanged") {
        ParamSet ps = init_params(cfg, 1, 1, 3);
        const auto before = ps.flat;
        OptimizerState state;
        optimizer_step(ps, std::vector<double>(ps.flat.size(), 0.0), state, opt);
        CHECK(ps.flat == before);
    }
    SUBCASE("first Adam step is -lr * g / (|g| + eps)") {
        ParamSet ps = init_params(cfg, 1, 1, 3);
        opt.y0_lr_mult = 1.0;
        const auto before = ps.flat;
        std::vector<double> grad(ps.flat.size());
        CounterRng rng(1, 2);
        for (auto& g : grad) g = rng.normal();
        OptimizerState state;
        optimizer_step(ps, grad, state, opt);
        for (std::size_t i = 0; i < grad.size(); ++i) {
            const double want = -opt.lr * grad[i] / (std::abs(grad[i]) + opt.eps);
            CHECK(ps.flat[i] - before[i] == doctest::Approx(want).epsilon(1e-9));
        }
    }
    SUBCASE("same gradients give identical trajectories") {
        ParamSet a = init_params(cfg, 1, 1, 3);
        ParamSet b = a;
        OptimizerState sa, sb;
        CounterRng rng(4, 4);
        for (int step = 0; step < 5; ++step) {
            std::vector<double> grad(a.flat.size());
            for (auto& g : grad) g = rng.normal();
            optimizer_step(a, grad, sa, opt);
            optimizer_step(b, grad, sb, opt);
        }
        CHECK(a.flat == b.flat);
    }
    SUBCASE("sgd mode") {
        ParamSet ps = init_params(cfg, 1, 1, 3);
        opt.kind = OptimizerConfig::Kind::sgd;
        opt.y0_lr_mult = 1.0;
        const auto before = ps.flat;
        std::vector<double> grad(ps.flat.size(), 2.0);
        OptimizerState state;
        optimizer_step(ps, grad, state, opt);
        for (std::size_t i = 0; i < grad.size(); ++i)
            CHECK(ps.flat[i] - before[i] == doctest::Approx(-opt.lr * 2.0));
    }
}

TEST_CASE("checkpoint serialization round-trips") {
    NetConfig cfg;
    const ParamSet ps = init_params(cfg, 3, 4, 12345, 1.75);
    const std::string path = "params_roundtrip_test.bin";
    save_params(ps, path);
    const ParamSet back = load_params(path);
    std::remove(path.c_str());
    CHECK(back.dim == ps.dim);
    CHECK(back.steps == ps.steps);
    CHECK(back.seed == ps.seed);
    CHECK(back.y0() == 1.75);
    CHECK(back.flat == ps.flat);
    CHECK(back.z_shape.hidden == ps.z_shape.hidden);
}
