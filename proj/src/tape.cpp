#include "fbsde/tape.hpp"

#include <cmath>

namespace fbsde {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("Tape: ") + what);
}

}  // namespace

int Tape::push(Op op, Matrix v, int a, int b, int c, bool needs_grad) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::unary(Op op, int a) {
    const Matrix& A = nodes_[a].val;
    Matrix v;
    switch (op) {
        case Op::Relu: v = A.cwiseMax(0.0); break;
        case Op::Tanh: v = A.array().tanh().matrix(); break;
        case Op::Exp: v = A.array().exp().matrix(); break;
        case Op::Sin: v = A.array().sin().matrix(); break;
        case Op::Cos: v = A.array().cos().matrix(); break;
        case Op::Square: v = A.array().square().matrix(); break;
        default: require(false, "bad unary op");
    }
    return push(op, std::move(v), a, -1, -1, nodes_[a].needs_grad);
}

int Tape::binary(Op op, int a, int b) {
    const Matrix& A = nodes_[a].val;
    const Matrix& B = nodes_[b].val;
    require(A.rows() == B.rows() && A.cols() == B.cols(), "elementwise shape mismatch");
    Matrix v;
    switch (op) {
        case Op::Add: v = A + B; break;
        case Op::Sub: v = A - B; break;
        case Op::Mul: v = A.cwiseProduct(B); break;
        case Op::Div: v = A.cwiseQuotient(B); break;
        default: require(false, "bad binary op");
    }
    return push(op, std::move(v), a, b, -1, nodes_[a].needs_grad || nodes_[b].needs_grad);
}

int Tape::matmul(int a, int b) {
    const Matrix& A = nodes_[a].val;
    const Matrix& B = nodes_[b].val;
    require(A.cols() == B.rows(), "matmul shape mismatch");
    return push(Op::MatMul, A * B, a, b, -1, nodes_[a].needs_grad || nodes_[b].needs_grad);
}

int Tape::dense(int x, int W, int bias) {
    const Matrix& X = nodes_[x].val;
    const Matrix& Wv = nodes_[W].val;
    const Matrix& Bv = nodes_[bias].val;
    require(X.cols() == Wv.rows(), "dense shape mismatch");
    require(Bv.rows() == 1 && Bv.cols() == Wv.cols(), "dense bias shape mismatch");
    Matrix v = X * Wv;
    v.rowwise() += Bv.row(0);
    const bool ng = nodes_[x].needs_grad || nodes_[W].needs_grad || nodes_[bias].needs_grad;
    return push(Op::Dense, std::move(v), x, W, bias, ng);
}

int Tape::dense_relu(int x, int W, int bias) {
    const int id = dense(x, W, bias);
    nodes_[id].op = Op::DenseRelu;
    nodes_[id].val = nodes_[id].val.cwiseMax(0.0);
    return id;
}

int Tape::dense_tanh(int x, int W, int bias) {
    const int id = dense(x, W, bias);
    nodes_[id].op = Op::DenseTanh;
    nodes_[id].val = nodes_[id].val.array().tanh().matrix();
    return id;
}

int Tape::scale(int a, double s) {
    Matrix v = s * nodes_[a].val;
    int id = push(Op::Scale, std::move(v), a, -1, -1, nodes_[a].needs_grad);
    nodes_[id].s = s;
    return id;
}

int Tape::add_scalar(int a, double s) {
    Matrix v = nodes_[a].val.array() + s;
    int id = push(Op::AddScalar, std::move(v), a, -1, -1, nodes_[a].needs_grad);
    nodes_[id].s = s;
    return id;
}

int Tape::mul_col_broadcast(int a, int b) {
    const Matrix& A = nodes_[a].val;
    const Matrix& B = nodes_[b].val;
    require(B.cols() == 1 && B.rows() == A.rows(), "mul_col_broadcast shape mismatch");
    Matrix v = A.array().colwise() * B.col(0).array();
    return push(Op::MulColBroadcast, std::move(v), a, b, -1,
                nodes_[a].needs_grad || nodes_[b].needs_grad);
}

int Tape::row_sum(int a) {
    Matrix v = nodes_[a].val.rowwise().sum();
    return push(Op::RowSum, std::move(v), a, -1, -1, nodes_[a].needs_grad);
}

int Tape::row_dot(int a, int b) {
    const Matrix& A = nodes_[a].val;
    const Matrix& B = nodes_[b].val;
    require(A.rows() == B.rows() && A.cols() == B.cols(), "row_dot shape mismatch");
    Matrix v = A.cwiseProduct(B).rowwise().sum();
    return push(Op::RowDot, std::move(v), a, b, -1, nodes_[a].needs_grad || nodes_[b].needs_grad);
}

int Tape::concat_cols(int a, int b) {
    const Matrix& A = nodes_[a].val;
    const Matrix& B = nodes_[b].val;
    require(A.rows() == B.rows(), "concat_cols row mismatch");
    Matrix v(A.rows(), A.cols() + B.cols());
    v.leftCols(A.cols()) = A;
    v.rightCols(B.cols()) = B;
    return push(Op::ConcatCols, std::move(v), a, b, -1,
                nodes_[a].needs_grad || nodes_[b].needs_grad);
}

int Tape::slice_rows(int a, int r0, int r1) {
    const Matrix& A = nodes_[a].val;
    require(0 <= r0 && r0 < r1 && r1 <= A.rows(), "slice_rows range");
    Matrix v = A.middleRows(r0, r1 - r0);
    int id = push(Op::SliceRows, std::move(v), a, -1, -1, nodes_[a].needs_grad);
    nodes_[id].idx = {r0, r1};
    return id;
}

int Tape::replicate_add_scaled_row(int a, int w, std::vector<double> levels) {
    const Matrix& A = nodes_[a].val;
    const Matrix& W = nodes_[w].val;
    require(W.rows() == 1 && W.cols() == A.cols(), "replicate_add_scaled_row shape");
    require(!levels.empty(), "replicate_add_scaled_row: empty levels");
    const Eigen::Index m = A.rows(), n = A.cols();
    const int Q = static_cast<int>(levels.size());
    Matrix v(Q * m, n);
    for (int q = 0; q < Q; ++q) {
        v.middleRows(q * m, m) = A;
        v.middleRows(q * m, m).rowwise() += (levels[q] * W.row(0));
    }
    int id = push(Op::ReplicateAddScaledRow, std::move(v), a, w, -1,
                  nodes_[a].needs_grad || nodes_[w].needs_grad);
    nodes_[id].coef = std::move(levels);
    return id;
}

int Tape::gather_rows_add_scaled_row(int a, int w, std::vector<std::int32_t> idx,
                                     std::vector<double> scales) {
    const Matrix& A = nodes_[a].val;
    const Matrix& W = nodes_[w].val;
    require(W.rows() == 1 && W.cols() == A.cols(), "gather_rows_add_scaled_row shape");
    require(idx.size() == scales.size(), "gather_rows_add_scaled_row size mismatch");
    Matrix v(static_cast<Eigen::Index>(idx.size()), A.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        require(idx[r] >= 0 && idx[r] < A.rows(), "gather_rows_add_scaled_row index");
        v.row(r) = A.row(idx[r]) + scales[r] * W.row(0);
    }
    int id = push(Op::GatherRowsAddScaledRow, std::move(v), a, w, -1,
                  nodes_[a].needs_grad || nodes_[w].needs_grad);
    nodes_[id].idx = std::move(idx);
    nodes_[id].coef = std::move(scales);
    return id;
}

int Tape::block_weighted_sum(int a, std::vector<double> weights, int blocks) {
    const Matrix& A = nodes_[a].val;
    require(A.cols() == 1, "block_weighted_sum wants a column");
    require(blocks >= 1 && A.rows() % blocks == 0, "block_weighted_sum block count");
    const Eigen::Index m = A.rows() / blocks;
    require(static_cast<int>(weights.size()) == blocks, "block_weighted_sum weights");
    Matrix v = Matrix::Zero(m, 1);
    for (int q = 0; q < blocks; ++q) v += weights[q] * A.middleRows(q * m, m);
    int id = push(Op::BlockWeightedSum, std::move(v), a, -1, -1, nodes_[a].needs_grad);
    nodes_[id].coef = std::move(weights);
    return id;
}

int Tape::scatter_sum_rows(int a, std::vector<std::int32_t> idx, int rows) {
    const Matrix& A = nodes_[a].val;
    require(A.cols() == 1, "scatter_sum_rows wants a column");
    require(static_cast<Eigen::Index>(idx.size()) == A.rows(), "scatter_sum_rows size");
    Matrix v = Matrix::Zero(rows, 1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        require(idx[r] >= 0 && idx[r] < rows, "scatter_sum_rows index");
        v(idx[r], 0) += A(r, 0);
    }
    int id = push(Op::ScatterSumRows, std::move(v), a, -1, -1, nodes_[a].needs_grad);
    nodes_[id].idx = std::move(idx);
    return id;
}

int Tape::mean_all(int a) {
    const Matrix& A = nodes_[a].val;
    Matrix v = Matrix::Constant(1, 1, A.mean());
    return push(Op::MeanAll, std::move(v), a, -1, -1, nodes_[a].needs_grad);
}

Tape::Matrix& Tape::grad_buf(int id, Eigen::Index rows, Eigen::Index cols) {
    Matrix& g = nodes_[id].g;
    if (g.size() == 0) g = Matrix::Zero(rows, cols);
    return g;
}

void Tape::backward(int loss_id) {
    require(loss_id >= 0 && loss_id < size(), "backward: bad node id");
    require(nodes_[loss_id].val.size() == 1, "backward: loss must be scalar");
    nodes_[loss_id].g = Matrix::Constant(1, 1, 1.0);

    for (int id = loss_id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.g.size() == 0) continue;
        if (check_finite && !n.g.allFinite())
            throw AutodiffError(std::string("non-finite adjoint at op ") + op_name(n.op));
        const Matrix& G = n.g;
        switch (n.op) {
            case Op::Leaf: break;
            case Op::MatMul: {
                const Matrix& A = nodes_[n.a].val;
                const Matrix& B = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad) grad_buf(n.a, A.rows(), A.cols()).noalias() += G * B.transpose();
                if (nodes_[n.b].needs_grad) grad_buf(n.b, B.rows(), B.cols()).noalias() += A.transpose() * G;
                break;
            }
            case Op::Dense:
            case Op::DenseRelu:
            case Op::DenseTanh: {
                const Matrix& X = nodes_[n.a].val;
                const Matrix& W = nodes_[n.b].val;
                Matrix Gm;
                if (n.op == Op::DenseRelu)
                    Gm = (n.val.array() > 0.0).select(G, 0.0);
                else if (n.op == Op::DenseTanh)
                    Gm = G.cwiseProduct((1.0 - n.val.array().square()).matrix());
                else
                    Gm = G;
                if (nodes_[n.a].needs_grad) grad_buf(n.a, X.rows(), X.cols()).noalias() += Gm * W.transpose();
                if (nodes_[n.b].needs_grad) grad_buf(n.b, W.rows(), W.cols()).noalias() += X.transpose() * Gm;
                if (nodes_[n.c].needs_grad) grad_buf(n.c, 1, W.cols()).noalias() += Gm.colwise().sum();
                break;
            }
            case Op::Add:
                if (nodes_[n.a].needs_grad) grad_buf(n.a, G.rows(), G.cols()) += G;
                if (nodes_[n.b].needs_grad) grad_buf(n.b, G.rows(), G.cols()) += G;
                break;
            case Op::Sub:
                if (nodes_[n.a].needs_grad) grad_buf(n.a, G.rows(), G.cols()) += G;
                if (nodes_[n.b].needs_grad) grad_buf(n.b, G.rows(), G.cols()) -= G;
                break;
            case Op::Mul:
                if (nodes_[n.a].needs_grad)
                    grad_buf(n.a, G.rows(), G.cols()) += G.cwiseProduct(nodes_[n.b].val);
                if (nodes_[n.b].needs_grad)
                    grad_buf(n.b, G.rows(), G.cols()) += G.cwiseProduct(nodes_[n.a].val);
                break;
            case Op::Div: {
                const Matrix& B = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad)
                    grad_buf(n.a, G.rows(), G.cols()) += G.cwiseQuotient(B);
                if (nodes_[n.b].needs_grad)
                    grad_buf(n.b, G.rows(), G.cols()) -= G.cwiseProduct(n.val).cwiseQuotient(B);
                break;
            }
            case Op::Scale:
                if (nodes_[n.a].needs_grad) grad_buf(n.a, G.rows(), G.cols()) += n.s * G;
                break;
            case Op::AddScalar:
                if (nodes_[n.a].needs_grad) grad_buf(n.a, G.rows(), G.cols()) += G;
                break;
            case Op::Relu:
                grad_buf(n.a, G.rows(), G.cols()) += (n.val.array() > 0.0).select(G, 0.0);
                break;
            case Op::Tanh:
                grad_buf(n.a, G.rows(), G.cols()) +=
                    G.cwiseProduct((1.0 - n.val.array().square()).matrix());
                break;
            case Op::Exp:
                grad_buf(n.a, G.rows(), G.cols()) += G.cwiseProduct(n.val);
                break;
            case Op::Sin:
                grad_buf(n.a, G.rows(), G.cols()) +=
                    G.cwiseProduct(nodes_[n.a].val.array().cos().matrix());
                break;
            case Op::Cos:
                grad_buf(n.a, G.rows(), G.cols()) -=
                    G.cwiseProduct(nodes_[n.a].val.array().sin().matrix());
                break;
            case Op::Square:
                grad_buf(n.a, G.rows(), G.cols()) += 2.0 * G.cwiseProduct(nodes_[n.a].val);
                break;
            case Op::MulColBroadcast: {
                const Matrix& A = nodes_[n.a].val;
                const Matrix& B = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad)
                    grad_buf(n.a, A.rows(), A.cols()) +=
                        (G.array().colwise() * B.col(0).array()).matrix();
                if (nodes_[n.b].needs_grad)
                    grad_buf(n.b, B.rows(), 1) += G.cwiseProduct(A).rowwise().sum();
                break;
            }
            case Op::RowSum: {
                const Matrix& A = nodes_[n.a].val;
                grad_buf(n.a, A.rows(), A.cols()).colwise() += G.col(0);
                break;
            }
            case Op::RowDot: {
                const Matrix& A = nodes_[n.a].val;
                const Matrix& B = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad)
                    grad_buf(n.a, A.rows(), A.cols()) +=
                        (B.array().colwise() * G.col(0).array()).matrix();
                if (nodes_[n.b].needs_grad)
                    grad_buf(n.b, B.rows(), B.cols()) +=
                        (A.array().colwise() * G.col(0).array()).matrix();
                break;
            }
            case Op::ConcatCols: {
                const Matrix& A = nodes_[n.a].val;
                const Matrix& B = nodes_[n.b].val;
                if (nodes_[n.a].needs_grad)
                    grad_buf(n.a, A.rows(), A.cols()) += G.leftCols(A.cols());
                if (nodes_[n.b].needs_grad)
                    grad_buf(n.b, B.rows(), B.cols()) += G.rightCols(B.cols());
                break;
            }
            case Op::SliceRows: {
                const Matrix& A = nodes_[n.a].val;
                const int r0 = n.idx[0], r1 = n.idx[1];
                grad_buf(n.a, A.rows(), A.cols()).middleRows(r0, r1 - r0) += G;
                break;
            }
            case Op::ReplicateAddScaledRow: {
                const Matrix& A = nodes_[n.a].val;
                const Eigen::Index m = A.rows();
                const int Q = static_cast<int>(n.coef.size());
                if (nodes_[n.a].needs_grad) {
                    Matrix& ga = grad_buf(n.a, m, A.cols());
                    for (int q = 0; q < Q; ++q) ga += G.middleRows(q * m, m);
                }
                if (nodes_[n.b].needs_grad) {
                    Matrix& gw = grad_buf(n.b, 1, A.cols());
                    for (int q = 0; q < Q; ++q)
                        gw.row(0) += n.coef[q] * G.middleRows(q * m, m).colwise().sum();
                }
                break;
            }
            case Op::GatherRowsAddScaledRow: {
                const Matrix& A = nodes_[n.a].val;
                if (nodes_[n.a].needs_grad) {
                    Matrix& ga = grad_buf(n.a, A.rows(), A.cols());
                    for (std::size_t r = 0; r < n.idx.size(); ++r) ga.row(n.idx[r]) += G.row(r);
                }
                if (nodes_[n.b].needs_grad) {
                    Matrix& gw = grad_buf(n.b, 1, A.cols());
                    for (std::size_t r = 0; r < n.idx.size(); ++r)
                        gw.row(0) += n.coef[r] * G.row(r);
                }
                break;
            }
            case Op::BlockWeightedSum: {
                const Matrix& A = nodes_[n.a].val;
                const Eigen::Index m = n.val.rows();
                Matrix& ga = grad_buf(n.a, A.rows(), 1);
                for (std::size_t q = 0; q < n.coef.size(); ++q)
                    ga.middleRows(q * m, m) += n.coef[q] * G;
                break;
            }
            case Op::ScatterSumRows: {
                Matrix& ga = grad_buf(n.a, static_cast<Eigen::Index>(n.idx.size()), 1);
                for (std::size_t r = 0; r < n.idx.size(); ++r) ga(r, 0) += G(n.idx[r], 0);
                break;
            }
            case Op::MeanAll: {
                const Matrix& A = nodes_[n.a].val;
                grad_buf(n.a, A.rows(), A.cols()).array() += G(0, 0) / static_cast<double>(A.size());
                break;
            }
        }
    }
}

const char* Tape::op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "Leaf";
        case Op::MatMul: return "MatMul";
        case Op::Dense: return "Dense";
        case Op::DenseRelu: return "DenseRelu";
        case Op::DenseTanh: return "DenseTanh";
        case Op::Add: return "Add";
        case Op::Sub: return "Sub";
        case Op::Mul: return "Mul";
        case Op::Div: return "Div";
        case Op::Scale: return "Scale";
        case Op::AddScalar: return "AddScalar";
        case Op::Relu: return "Relu";
        case Op::Tanh: return "Tanh";
        case Op::Exp: return "Exp";
        case Op::Sin: return "Sin";
        case Op::Cos: return "Cos";
        case Op::Square: return "Square";
        case Op::MulColBroadcast: return "MulColBroadcast";
        case Op::RowSum: return "RowSum";
        case Op::RowDot: return "RowDot";
        case Op::ConcatCols: return "ConcatCols";
        case Op::SliceRows: return "SliceRows";
        case Op::ReplicateAddScaledRow: return "ReplicateAddScaledRow";
        case Op::GatherRowsAddScaledRow: return "GatherRowsAddScaledRow";
        case Op::BlockWeightedSum: return "BlockWeightedSum";
        case Op::ScatterSumRows: return "ScatterSumRows";
        case Op::MeanAll: return "MeanAll";
    }
    return "?";
}

}  // namespace fbsde
