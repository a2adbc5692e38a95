#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbsde {

// Reverse-mode autodiff over batched matrices. Nodes are appended in
// evaluation order, so the node list is already a topological order and the
// backward sweep visits each node exactly once. Values are [rows x cols]
// matrices; a "column" node is [batch x 1].
//
// Throws AutodiffError when an adjoint goes non-finite (reported with the
// offending op kind) and std::invalid_argument on shape mismatches.
class Tape {
  public:
    using Matrix = Eigen::MatrixXd;

    enum class Op : std::uint8_t {
        Leaf,
        MatMul,
        Dense,
        DenseRelu,
        DenseTanh,
        Add,
        Sub,
        Mul,
        Div,
        Scale,
        AddScalar,
        Relu,
        Tanh,
        Exp,
        Sin,
        Cos,
        Square,
        MulColBroadcast,
        RowSum,
        RowDot,
        ConcatCols,
        SliceRows,
        ReplicateAddScaledRow,
        GatherRowsAddScaledRow,
        BlockWeightedSum,
        ScatterSumRows,
        MeanAll,
    };

    struct Node {
        Op op;
        int a = -1, b = -1, c = -1;
        double s = 0.0;
        std::vector<double> coef;      // levels / marks / block weights
        std::vector<std::int32_t> idx; // gather/scatter rows
        Matrix val;
        Matrix g;
        bool needs_grad = false;
    };

    struct AutodiffError : std::runtime_error {
        explicit AutodiffError(const std::string& what) : std::runtime_error(what) {}
    };

    bool check_finite = true;

    int size() const { return static_cast<int>(nodes_.size()); }
    const Matrix& val(int id) const { return nodes_[id].val; }
    const Matrix& grad(int id) const { return nodes_[id].g; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    double scalar(int id) const { return nodes_[id].val(0, 0); }

    int input(Matrix v) { return push(Op::Leaf, std::move(v), -1, -1, -1, false); }
    int param(Matrix v) { return push(Op::Leaf, std::move(v), -1, -1, -1, true); }
    int constant(double v) { return input(Matrix::Constant(1, 1, v)); }

    int matmul(int a, int b);
    // x*W + bias, bias broadcast over rows; activation fused where named.
    int dense(int x, int W, int bias);
    int dense_relu(int x, int W, int bias);
    int dense_tanh(int x, int W, int bias);

    int add(int a, int b) { return binary(Op::Add, a, b); }
    int sub(int a, int b) { return binary(Op::Sub, a, b); }
    int mul(int a, int b) { return binary(Op::Mul, a, b); }
    int div(int a, int b) { return binary(Op::Div, a, b); }
    int scale(int a, double s);
    int add_scalar(int a, double s);
    int relu(int a) { return unary(Op::Relu, a); }
    int tanh_(int a) { return unary(Op::Tanh, a); }
    int exp_(int a) { return unary(Op::Exp, a); }
    int sin_(int a) { return unary(Op::Sin, a); }
    int cos_(int a) { return unary(Op::Cos, a); }
    int square(int a) { return unary(Op::Square, a); }

    // a [m x n] scaled per row by column b [m x 1].
    int mul_col_broadcast(int a, int b);
    int row_sum(int a);
    int row_dot(int a, int b);
    int concat_cols(int a, int b);
    int slice_rows(int a, int r0, int r1);

    // Output [(Q*m) x n]: block q equals a + levels[q] * w, with w a [1 x n]
    // node. Used to fan one hidden state out over quadrature nodes.
    int replicate_add_scaled_row(int a, int w, std::vector<double> levels);

    // Output [k x n]: row r equals a.row(idx[r]) + scales[r] * w.
    int gather_rows_add_scaled_row(int a, int w, std::vector<std::int32_t> idx,
                                   std::vector<double> scales);

    // a is [(Q*m) x 1]; output [m x 1] with out = sum_q weights[q] * block_q.
    int block_weighted_sum(int a, std::vector<double> weights, int blocks);

    // a is [k x 1]; output [rows x 1] with out[idx[r]] += a[r].
    int scatter_sum_rows(int a, std::vector<std::int32_t> idx, int rows);

    int mean_all(int a);

    // Reverse sweep from a scalar node; adjoints of params accumulate in g.
    void backward(int loss_id);

    void clear() { nodes_.clear(); }

  private:
    int push(Op op, Matrix v, int a, int b, int c, bool needs_grad);
    int unary(Op op, int a);
    int binary(Op op, int a, int b);
    Matrix& grad_buf(int id, Eigen::Index rows, Eigen::Index cols);
    static const char* op_name(Op op);

    std::vector<Node> nodes_;
};

}  // namespace fbsde
