// Reverse-mode gradient tape over Array2D for the fixed op set the models
// need: matmul, add, tanh, embedding gather, row pooling/concat, target
// log-prob sums (softmax cross-entropy up to sign), squared error and
// log-sigmoid. Forward values reuse the same free functions as the
// tape-free evaluation path, so a frozen clone reproduces bit-identical
// numbers.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "prefalign/array.hpp"
#include "prefalign/optim.hpp"

namespace prefalign {

class Tape {
  public:
    int input(Array2D v) { return push(Op::Leaf, {}, std::move(v)); }

    int param(ParamStore& store, const std::string& name) {
        const int id = push(Op::Leaf, {}, store.value(name));
        nodes_[id].store = &store;
        nodes_[id].pname = name;
        return id;
    }

    int matmul(int a, int b) {
        Array2D v = prefalign::matmul(val(a), val(b));
        return push(Op::Matmul, {a, b}, std::move(v));
    }

    int add(int a, int b) {
        require_same_shape(a, b, "add");
        Array2D v = val(a);
        for (size_t i = 0; i < v.size(); ++i) {
            v.data[i] += val(b).data[i];
        }
        return push(Op::Add, {a, b}, std::move(v));
    }

    // Broadcast a 1 x C row over every row of a.
    int add_row(int a, int row) {
        const Array2D& r = val(row);
        if (r.rows != 1 || r.cols != val(a).cols) {
            throw std::invalid_argument("Tape::add_row: row must be 1 x cols(a)");
        }
        Array2D v = val(a);
        for (int i = 0; i < v.rows; ++i) {
            double* p = v.row_ptr(i);
            for (int j = 0; j < v.cols; ++j) {
                p[j] += r.data[j];
            }
        }
        return push(Op::AddRow, {a, row}, std::move(v));
    }

    int sub(int a, int b) {
        require_same_shape(a, b, "sub");
        Array2D v = val(a);
        for (size_t i = 0; i < v.size(); ++i) {
            v.data[i] -= val(b).data[i];
        }
        return push(Op::Sub, {a, b}, std::move(v));
    }

    int scale(int a, double c) {
        Array2D v = val(a);
        for (double& x : v.data) {
            x *= c;
        }
        const int id = push(Op::Scale, {a}, std::move(v));
        nodes_[id].c = c;
        return id;
    }

    int tanh_op(int a) {
        Array2D v = val(a);
        for (double& x : v.data) {
            x = std::tanh(x);
        }
        return push(Op::Tanh, {a}, std::move(v));
    }

    // Rows of `table` selected by id; gradient scatter-adds back.
    int gather_rows(int table, std::vector<int> ids) {
        const Array2D& t = val(table);
        Array2D v(static_cast<int>(ids.size()), t.cols);
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= t.rows) {
                throw std::invalid_argument("Tape::gather_rows: id out of range");
            }
            std::copy(t.row_ptr(ids[i]), t.row_ptr(ids[i]) + t.cols, v.row_ptr(static_cast<int>(i)));
        }
        const int id = push(Op::Gather, {table}, std::move(v));
        nodes_[id].ids = std::move(ids);
        return id;
    }

    // Row-major reinterpretation: (r, c) -> (new_rows, r*c/new_rows).
    int reshape_rows(int a, int new_rows) {
        const Array2D& x = val(a);
        if (new_rows <= 0 || x.size() % static_cast<size_t>(new_rows) != 0) {
            throw std::invalid_argument("Tape::reshape_rows: incompatible shape");
        }
        Array2D v = x;
        v.rows = new_rows;
        v.cols = static_cast<int>(x.size()) / new_rows;
        return push(Op::Reshape, {a}, std::move(v));
    }

    int mean_rows(int a) {
        const Array2D& x = val(a);
        Array2D v(1, x.cols);
        for (int i = 0; i < x.rows; ++i) {
            for (int j = 0; j < x.cols; ++j) {
                v.data[j] += x.at(i, j);
            }
        }
        for (double& e : v.data) {
            e /= x.rows;
        }
        return push(Op::MeanRows, {a}, std::move(v));
    }

    int repeat_row(int a, int n) {
        const Array2D& x = val(a);
        if (x.rows != 1) {
            throw std::invalid_argument("Tape::repeat_row: input must have one row");
        }
        Array2D v(n, x.cols);
        for (int i = 0; i < n; ++i) {
            std::copy(x.data.begin(), x.data.end(), v.row_ptr(i));
        }
        return push(Op::RepeatRow, {a}, std::move(v));
    }

    int concat_cols(int a, int b) {
        const Array2D& x = val(a);
        const Array2D& y = val(b);
        if (x.rows != y.rows) {
            throw std::invalid_argument("Tape::concat_cols: row counts disagree");
        }
        Array2D v(x.rows, x.cols + y.cols);
        for (int i = 0; i < x.rows; ++i) {
            std::copy(x.row_ptr(i), x.row_ptr(i) + x.cols, v.row_ptr(i));
            std::copy(y.row_ptr(i), y.row_ptr(i) + y.cols, v.row_ptr(i) + x.cols);
        }
        return push(Op::ConcatCols, {a, b}, std::move(v));
    }

    // Weighted sum of per-row target log-probabilities:
    //   sum_i w_i * log softmax(logits_i)[targets_i]
    // With w = 1 this is minus the softmax cross-entropy summed over rows.
    int logprob_sum(int logits, std::vector<int> targets, std::vector<double> weights) {
        const Array2D& l = val(logits);
        if (static_cast<int>(targets.size()) != l.rows || weights.size() != targets.size()) {
            throw std::invalid_argument("Tape::logprob_sum: one target and weight per row required");
        }
        Array2D lp = l;
        log_softmax_rows(lp);
        double total = 0.0;
        for (int i = 0; i < l.rows; ++i) {
            if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= l.cols) {
                throw std::invalid_argument("Tape::logprob_sum: target out of range");
            }
            total += weights[static_cast<size_t>(i)] * lp.at(i, targets[static_cast<size_t>(i)]);
        }
        const int id = push(Op::LogprobSum, {logits}, Array2D(1, 1, total));
        nodes_[id].ids = std::move(targets);
        nodes_[id].weights = std::move(weights);
        nodes_[id].cache = std::move(lp);
        return id;
    }

    // Sum of squared differences. a and b may be the same node.
    int sse(int a, int b) {
        require_same_shape(a, b, "sse");
        double total = 0.0;
        for (size_t i = 0; i < val(a).size(); ++i) {
            const double d = val(a).data[i] - val(b).data[i];
            total += d * d;
        }
        return push(Op::Sse, {a, b}, Array2D(1, 1, total));
    }

    int log_sigmoid_op(int a) {
        if (val(a).size() != 1) {
            throw std::invalid_argument("Tape::log_sigmoid_op: scalar input required");
        }
        return push(Op::LogSigmoid, {a}, Array2D(1, 1, prefalign::log_sigmoid(val(a).data[0])));
    }

    const Array2D& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }
    double scalar(int id) const {
        if (val(id).size() != 1) {
            throw std::invalid_argument("Tape::scalar: node is not 1x1");
        }
        return val(id).data[0];
    }

    // Reverse sweep from a scalar loss. Gradients of param leaves accumulate
    // (+=) into their ParamStore buffers, so batches can sum across tapes.
    void backward(int root) {
        if (val(root).size() != 1) {
            throw std::invalid_argument("Tape::backward: loss root must be a 1x1 scalar");
        }
        for (auto& n : nodes_) {
            n.grad = Array2D(n.val.rows, n.val.cols, 0.0);
        }
        nodes_[static_cast<size_t>(root)].grad.data[0] = 1.0;
        for (int id = root; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            const Array2D& g = n.grad;
            switch (n.op) {
                case Op::Leaf:
                    break;
                case Op::Matmul: {
                    Array2D& ga = grad(n.parents[0]);
                    Array2D& gb = grad(n.parents[1]);
                    const Array2D& a = val(n.parents[0]);
                    const Array2D& b = val(n.parents[1]);
                    // dA += G * B^T ; dB += A^T * G
                    for (int i = 0; i < a.rows; ++i) {
                        for (int k = 0; k < a.cols; ++k) {
                            double s = 0.0;
                            for (int j = 0; j < b.cols; ++j) {
                                s += g.at(i, j) * b.at(k, j);
                            }
                            ga.at(i, k) += s;
                        }
                    }
                    for (int k = 0; k < a.cols; ++k) {
                        for (int j = 0; j < b.cols; ++j) {
                            double s = 0.0;
                            for (int i = 0; i < a.rows; ++i) {
                                s += a.at(i, k) * g.at(i, j);
                            }
                            gb.at(k, j) += s;
                        }
                    }
                    break;
                }
                case Op::Add: {
                    accumulate(n.parents[0], g);
                    accumulate(n.parents[1], g);
                    break;
                }
                case Op::AddRow: {
                    accumulate(n.parents[0], g);
                    Array2D& gr = grad(n.parents[1]);
                    for (int i = 0; i < g.rows; ++i) {
                        for (int j = 0; j < g.cols; ++j) {
                            gr.data[static_cast<size_t>(j)] += g.at(i, j);
                        }
                    }
                    break;
                }
                case Op::Sub: {
                    accumulate(n.parents[0], g);
                    Array2D& gb = grad(n.parents[1]);
                    for (size_t i = 0; i < g.size(); ++i) {
                        gb.data[i] -= g.data[i];
                    }
                    break;
                }
                case Op::Scale: {
                    Array2D& ga = grad(n.parents[0]);
                    for (size_t i = 0; i < g.size(); ++i) {
                        ga.data[i] += n.c * g.data[i];
                    }
                    break;
                }
                case Op::Tanh: {
                    Array2D& ga = grad(n.parents[0]);
                    for (size_t i = 0; i < g.size(); ++i) {
                        ga.data[i] += g.data[i] * (1.0 - n.val.data[i] * n.val.data[i]);
                    }
                    break;
                }
                case Op::Gather: {
                    Array2D& gt = grad(n.parents[0]);
                    for (size_t i = 0; i < n.ids.size(); ++i) {
                        double* dst = gt.row_ptr(n.ids[i]);
                        const double* src = g.row_ptr(static_cast<int>(i));
                        for (int j = 0; j < g.cols; ++j) {
                            dst[j] += src[j];
                        }
                    }
                    break;
                }
                case Op::Reshape: {
                    Array2D& ga = grad(n.parents[0]);
                    for (size_t i = 0; i < g.size(); ++i) {
                        ga.data[i] += g.data[i];
                    }
                    break;
                }
                case Op::MeanRows: {
                    Array2D& ga = grad(n.parents[0]);
                    const double inv = 1.0 / ga.rows;
                    for (int i = 0; i < ga.rows; ++i) {
                        for (int j = 0; j < ga.cols; ++j) {
                            ga.at(i, j) += g.data[static_cast<size_t>(j)] * inv;
                        }
                    }
                    break;
                }
                case Op::RepeatRow: {
                    Array2D& ga = grad(n.parents[0]);
                    for (int i = 0; i < g.rows; ++i) {
                        for (int j = 0; j < g.cols; ++j) {
                            ga.data[static_cast<size_t>(j)] += g.at(i, j);
                        }
                    }
                    break;
                }
                case Op::ConcatCols: {
                    Array2D& ga = grad(n.parents[0]);
                    Array2D& gb = grad(n.parents[1]);
                    for (int i = 0; i < g.rows; ++i) {
                        for (int j = 0; j < ga.cols; ++j) {
                            ga.at(i, j) += g.at(i, j);
                        }
                        for (int j = 0; j < gb.cols; ++j) {
                            gb.at(i, j) += g.at(i, ga.cols + j);
                        }
                    }
                    break;
                }
                case Op::LogprobSum: {
                    // d/dlogits_i = w_i * (onehot(t_i) - softmax(logits_i)) * g
                    Array2D& gl = grad(n.parents[0]);
                    const double gs = g.data[0];
                    for (int i = 0; i < gl.rows; ++i) {
                        const double w = n.weights[static_cast<size_t>(i)] * gs;
                        if (w == 0.0) {
                            continue;
                        }
                        for (int j = 0; j < gl.cols; ++j) {
                            const double p = std::exp(n.cache.at(i, j));
                            gl.at(i, j) += w * (((j == n.ids[static_cast<size_t>(i)]) ? 1.0 : 0.0) - p);
                        }
                    }
                    break;
                }
                case Op::Sse: {
                    Array2D& ga = grad(n.parents[0]);
                    Array2D& gb = grad(n.parents[1]);
                    const double gs = g.data[0];
                    const Array2D& a = val(n.parents[0]);
                    const Array2D& b = val(n.parents[1]);
                    for (size_t i = 0; i < a.size(); ++i) {
                        const double d = 2.0 * (a.data[i] - b.data[i]) * gs;
                        ga.data[i] += d;
                        gb.data[i] -= d;
                    }
                    break;
                }
                case Op::LogSigmoid: {
                    const double z = val(n.parents[0]).data[0];
                    grad(n.parents[0]).data[0] += sigmoid(-z) * g.data[0];
                    break;
                }
            }
        }
        for (auto& n : nodes_) {
            if (n.store != nullptr) {
                Array2D& dst = n.store->grad(n.pname);
                for (size_t i = 0; i < dst.size(); ++i) {
                    dst.data[i] += n.grad.data[i];
                }
            }
        }
    }

  private:
    enum class Op {
        Leaf,
        Matmul,
        Add,
        AddRow,
        Sub,
        Scale,
        Tanh,
        Gather,
        Reshape,
        MeanRows,
        RepeatRow,
        ConcatCols,
        LogprobSum,
        Sse,
        LogSigmoid
    };

    struct Node {
        Op op{Op::Leaf};
        std::vector<int> parents;
        Array2D val;
        Array2D grad;
        double c{0.0};
        std::vector<int> ids;
        std::vector<double> weights;
        Array2D cache;
        ParamStore* store{nullptr};
        std::string pname;
    };

    int push(Op op, std::vector<int> parents, Array2D v) {
        Node n;
        n.op = op;
        n.parents = std::move(parents);
        n.val = std::move(v);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Array2D& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }

    void accumulate(int id, const Array2D& g) {
        Array2D& dst = grad(id);
        for (size_t i = 0; i < dst.size(); ++i) {
            dst.data[i] += g.data[i];
        }
    }

    void require_same_shape(int a, int b, const char* what) const {
        if (!val(a).same_shape(val(b))) {
            throw std::invalid_argument(std::string("Tape::") + what + ": shapes disagree");
        }
    }

    std::vector<Node> nodes_;
};

}  // namespace prefalign
