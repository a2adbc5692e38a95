#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "fbsde/rng.hpp"
#include "fbsde/tape.hpp"

using namespace fbsde;
using Eigen::MatrixXd;

namespace {

MatrixXd random_matrix(int rows, int cols, CounterRng& rng, double scale = 1.0) {
    MatrixXd m(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
    return m;
}

using GraphBuilder = std::function<int(Tape&, const std::vector<int>&)>;

double eval_graph(const GraphBuilder& build, const std::vector<MatrixXd>& params) {
    Tape tape;
    std::vector<int> ids;
    for (const auto& p : params) ids.push_back(tape.param(p));
    return tape.scalar(build(tape, ids));
}

// Central finite differences on every parameter entry.
void check_gradients(const GraphBuilder& build, std::vector<MatrixXd> params, double tol = 1e-6) {
    Tape tape;
    std::vector<int> ids;
    for (const auto& p : params) ids.push_back(tape.param(p));
    const int loss = build(tape, ids);
    tape.backward(loss);
    std::vector<MatrixXd> grads;
    grads.reserve(ids.size());
    for (int id : ids) {
        const MatrixXd& g = tape.grad(id);
        grads.push_back(g.size() ? g : MatrixXd::Zero(tape.val(id).rows(), tape.val(id).cols()));
    }

    const double h = 1e-6;
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (int c = 0; c < params[p].cols(); ++c)
            for (int r = 0; r < params[p].rows(); ++r) {
                const double orig = params[p](r, c);
                params[p](r, c) = orig + h;
                const double up = eval_graph(build, params);
                params[p](r, c) = orig - h;
                const double dn = eval_graph(build, params);
                params[p](r, c) = orig;
                const double fd = (up - dn) / (2.0 * h);
                const double ad = grads[p](r, c);
                const double denom = std::max({1.0, std::abs(fd), std::abs(ad)});
                CHECK(std::abs(fd - ad) / denom < tol);
            }
    }
}

}  // namespace

TEST_CASE("scalar chain rule: d/dy0 of y0^2 at 3 is 6") {
    Tape tape;
    const int y0 = tape.param(MatrixXd::Constant(1, 1, 3.0));
    const int loss = tape.mean_all(tape.square(y0));
    tape.backward(loss);
    CHECK(tape.grad(y0)(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("elementwise and reduction ops match finite differences") {
    CounterRng rng(7, 3);

    SUBCASE("add/sub/mul/div/exp/sin/cos/square") {
        check_gradients(
            [](Tape& t, const std::vector<int>& p) {
                const int a = p[0], b = p[1];
                const int u = t.mul(t.add(a, b), t.sub(a, b));
                const int v = t.div(t.sin_(a), t.add_scalar(t.square(t.cos_(b)), 1.5));
                const int w = t.exp_(t.scale(b, 0.3));
                return t.mean_all(t.add(t.mul(u, w), v));
            },
            {random_matrix(3, 4, rng), random_matrix(3, 4, rng)});
    }
    SUBCASE("row_sum / row_dot / mul_col_broadcast") {
        check_gradients(
            [](Tape& t, const std::vector<int>& p) {
                const int rd = t.row_dot(p[0], p[1]);          // [m x 1]
                const int rs = t.row_sum(p[0]);                // [m x 1]
                const int mc = t.mul_col_broadcast(p[1], rs);  // [m x n]
                return t.mean_all(t.add(t.row_sum(mc), t.square(rd)));
            },
            {random_matrix(4, 3, rng), random_matrix(4, 3, rng)});
    }
    SUBCASE("matmul / dense / concat / slice") {
        check_gradients(
            [](Tape& t, const std::vector<int>& p) {
                const int x = t.concat_cols(p[0], p[1]);  // [4 x 5]
                const int W = t.slice_rows(p[2], 0, 5);
                const int h = t.dense_tanh(x, W, p[3]);
                const int out = t.matmul(h, t.slice_rows(p[2], 5, 7));  // reuse rows as weights
                return t.mean_all(t.square(out));
            },
            {random_matrix(4, 2, rng), random_matrix(4, 3, rng), random_matrix(7, 2, rng),
             random_matrix(1, 2, rng)});
    }
    SUBCASE("replicate_add_scaled_row / block_weighted_sum") {
        check_gradients(
            [](Tape& t, const std::vector<int>& p) {
                const int rep = t.replicate_add_scaled_row(p[0], p[1], {-0.7, 0.1, 0.9});
                const int act = t.tanh_(rep);
                const int col = t.row_sum(act);
                return t.mean_all(t.square(t.block_weighted_sum(col, {0.2, 0.5, 0.3}, 3)));
            },
            {random_matrix(3, 4, rng), random_matrix(1, 4, rng)});
    }
    SUBCASE("gather_rows_add_scaled_row / scatter_sum_rows") {
        check_gradients(
            [](Tape& t, const std::vector<int>& p) {
                const int g =
                    t.gather_rows_add_scaled_row(p[0], p[1], {2, 0, 2, 1}, {0.3, -1.1, 0.4, 0.0});
                const int col = t.row_sum(t.tanh_(g));
                return t.mean_all(t.square(t.scatter_sum_rows(col, {1, 0, 1, 2}, 3)));
            },
            {random_matrix(3, 4, rng), random_matrix(1, 4, rng)});
    }
    SUBCASE("dense_relu away from kinks") {
        check_gradients(
            [](Tape& t, const std::vector<int>& p) {
                const int h = t.dense_relu(p[0], p[1], p[2]);
                return t.mean_all(t.square(h));
            },
            {random_matrix(5, 3, rng), random_matrix(3, 4, rng),
             MatrixXd::Constant(1, 4, 0.37)});
    }
}

TEST_CASE("relu subgradient at zero is zero") {
    Tape tape;
    const int x = tape.param(MatrixXd::Zero(1, 1));
    const int loss = tape.mean_all(tape.relu(x));
    tape.backward(loss);
    CHECK(tape.grad(x)(0, 0) == 0.0);
}

TEST_CASE("shape mismatches are rejected") {
    Tape tape;
    const int a = tape.input(MatrixXd::Zero(2, 3));
    const int b = tape.input(MatrixXd::Zero(3, 2));
    CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(tape.matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS(tape.row_dot(a, b), std::invalid_argument);
    CHECK_THROWS_AS(tape.slice_rows(a, 1, 5), std::invalid_argument);
}

TEST_CASE("backward requires a scalar loss") {
    Tape tape;
    const int a = tape.param(MatrixXd::Zero(2, 2));
    CHECK_THROWS_AS(tape.backward(a), std::invalid_argument);
}

TEST_CASE("non-finite adjoints are reported with the op kind") {
    Tape tape;
    const int a = tape.param(MatrixXd::Zero(1, 1));
    const int e = tape.exp_(a);
    const int loss = tape.mean_all(tape.div(e, a));  // d(loss)/d(e) = 1/0
    CHECK_THROWS_WITH_AS(tape.backward(loss), doctest::Contains("Exp"), Tape::AutodiffError);
}

TEST_CASE("identical graphs give identical gradients") {
    CounterRng rng(11, 5);
    const MatrixXd A = random_matrix(4, 4, rng);
    const MatrixXd B = random_matrix(4, 4, rng);
    auto run = [&]() {
        Tape tape;
        const int a = tape.param(A);
        const int b = tape.param(B);
        const int loss = tape.mean_all(tape.square(tape.tanh_(tape.matmul(a, b))));
        tape.backward(loss);
        return std::make_pair(MatrixXd(tape.grad(a)), MatrixXd(tape.grad(b)));
    };
    const auto g1 = run();
    const auto g2 = run();
    CHECK(g1.first == g2.first);
    CHECK(g1.second == g2.second);
}

TEST_CASE("unused parameters get no gradient buffer") {
    Tape tape;
    const int used = tape.param(MatrixXd::Constant(1, 1, 2.0));
    const int unused = tape.param(MatrixXd::Constant(1, 1, 5.0));
    const int loss = tape.mean_all(tape.square(used));
    tape.backward(loss);
    CHECK(tape.grad(unused).size() == 0);
    CHECK(tape.grad(used)(0, 0) == doctest::Approx(4.0));
}
