#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "prefalign/rng.hpp"
#include "prefalign/tape.hpp"

using namespace prefalign;

namespace {

Array2D random_array(Rng& rng, int r, int c, double scale = 1.0) {
    Array2D out(r, c);
    for (double& v : out.data) {
        v = scale * rng.normal();
    }
    return out;
}

// Central finite difference of a loss functional w.r.t. every entry of every
// parameter in the store.
double finite_diff(ParamStore& store, const std::string& name, size_t idx,
                   const std::function<double()>& loss, double h = 1e-4) {
    double& w = store.value(name).data[idx];
    const double orig = w;
    w = orig + h;
    const double up = loss();
    w = orig - h;
    const double down = loss();
    w = orig;
    return (up - down) / (2.0 * h);
}

void expect_grads_match(ParamStore& store, const std::function<double()>& loss_value,
                        const std::function<void()>& backprop, double rel_tol = 1e-4) {
    store.zero_grad();
    backprop();
    for (const auto& name : store.names()) {
        const Array2D& g = store.grad(name);
        for (size_t i = 0; i < g.size(); ++i) {
            const double fd = finite_diff(store, name, i, loss_value);
            const double an = g.data[i];
            const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
            EXPECT_LT(std::fabs(fd - an) / denom, rel_tol)
                << name << "[" << i << "] analytic=" << an << " fd=" << fd;
        }
    }
}

}  // namespace

TEST(Tape, MseOfValueAgainstItselfHasZeroGradient) {
    Rng rng(3);
    for (int rep = 0; rep < 5; ++rep) {
        ParamStore store;
        store.add("x", random_array(rng, 2, 3));
        Tape tape;
        const int x = tape.param(store, "x");
        const int loss = tape.sse(x, x);
        EXPECT_DOUBLE_EQ(tape.scalar(loss), 0.0);
        store.zero_grad();
        tape.backward(loss);
        for (double g : store.grad("x").data) {
            EXPECT_DOUBLE_EQ(g, 0.0);
        }
    }
}

TEST(Tape, LogSigmoidDerivativeAtZeroIsHalf) {
    ParamStore store;
    store.add("z", Array2D(1, 1, 0.0));
    Tape tape;
    const int z = tape.param(store, "z");
    const int loss = tape.log_sigmoid_op(z);
    store.zero_grad();
    tape.backward(loss);
    EXPECT_NEAR(store.grad("z").data[0], 0.5, 1e-12);
}

TEST(Tape, NonScalarLossRootThrows) {
    ParamStore store;
    store.add("x", Array2D(2, 2, 1.0));
    Tape tape;
    const int x = tape.param(store, "x");
    EXPECT_THROW(tape.backward(x), std::invalid_argument);
}

TEST(Tape, TwoLayerNetGradientsMatchFiniteDifferences) {
    Rng rng(17);
    ParamStore store;
    store.add("w1", random_array(rng, 5, 7, 0.5));
    store.add("b1", random_array(rng, 1, 7, 0.1));
    store.add("w2", random_array(rng, 7, 3, 0.5));
    store.add("b2", random_array(rng, 1, 3, 0.1));
    const Array2D x = random_array(rng, 4, 5);
    const Array2D target = random_array(rng, 4, 3);

    auto loss_value = [&]() {
        Array2D h = matmul(x, store.value("w1"));
        for (int i = 0; i < h.rows; ++i) {
            for (int j = 0; j < h.cols; ++j) {
                h.at(i, j) = std::tanh(h.at(i, j) + store.value("b1").data[static_cast<size_t>(j)]);
            }
        }
        Array2D y = matmul(h, store.value("w2"));
        double total = 0.0;
        for (int i = 0; i < y.rows; ++i) {
            for (int j = 0; j < y.cols; ++j) {
                const double d = y.at(i, j) + store.value("b2").data[static_cast<size_t>(j)] - target.at(i, j);
                total += d * d;
            }
        }
        return total;
    };
    auto backprop = [&]() {
        Tape tape;
        const int xin = tape.input(x);
        const int h = tape.tanh_op(tape.add_row(tape.matmul(xin, tape.param(store, "w1")), tape.param(store, "b1")));
        const int y = tape.add_row(tape.matmul(h, tape.param(store, "w2")), tape.param(store, "b2"));
        const int loss = tape.sse(y, tape.input(target));
        EXPECT_NEAR(tape.scalar(loss), loss_value(), 1e-9);
        tape.backward(loss);
    };
    expect_grads_match(store, loss_value, backprop);
}

TEST(Tape, SoftmaxCrossEntropyGradientsMatchFiniteDifferences) {
    Rng rng(23);
    ParamStore store;
    store.add("w", random_array(rng, 6, 5, 0.5));
    const Array2D x = random_array(rng, 3, 6);
    const std::vector<int> targets{2, 0, 4};
    const std::vector<double> weights{1.0, 0.0, 1.0};

    auto loss_value = [&]() {
        Array2D logits = matmul(x, store.value("w"));
        log_softmax_rows(logits);
        double lp = 0.0;
        for (int i = 0; i < logits.rows; ++i) {
            lp += weights[static_cast<size_t>(i)] * logits.at(i, targets[static_cast<size_t>(i)]);
        }
        return -lp;  // cross-entropy
    };
    auto backprop = [&]() {
        Tape tape;
        const int logits = tape.matmul(tape.input(x), tape.param(store, "w"));
        const int lp = tape.logprob_sum(logits, targets, weights);
        const int loss = tape.scale(lp, -1.0);
        EXPECT_NEAR(tape.scalar(loss), loss_value(), 1e-9);
        tape.backward(loss);
    };
    expect_grads_match(store, loss_value, backprop);
}

TEST(Tape, GatherMeanRepeatConcatGradientsMatchFiniteDifferences) {
    Rng rng(31);
    ParamStore store;
    store.add("emb", random_array(rng, 9, 4, 0.5));
    store.add("w", random_array(rng, 12, 2, 0.5));
    const std::vector<int> ids{3, 1, 3, 8, 0};
    const Array2D target = random_array(rng, 5, 2);

    auto build = [&](Tape& tape) {
        const int e = tape.gather_rows(tape.param(store, "emb"), ids);
        const int ctx = tape.repeat_row(tape.mean_rows(e), static_cast<int>(ids.size()));
        const int feats = tape.concat_cols(tape.concat_cols(e, ctx), e);
        const int y = tape.matmul(feats, tape.param(store, "w"));
        return tape.sse(y, tape.input(target));
    };
    auto loss_value = [&]() {
        Tape tape;
        return tape.scalar(build(tape));
    };
    auto backprop = [&]() {
        Tape tape;
        tape.backward(build(tape));
    };
    expect_grads_match(store, loss_value, backprop);
}

TEST(Tape, ReshapeAndScaleGradientsMatchFiniteDifferences) {
    Rng rng(41);
    ParamStore store;
    store.add("a", random_array(rng, 6, 2, 0.7));
    const Array2D target = random_array(rng, 3, 4);

    auto build = [&](Tape& tape) {
        const int a = tape.param(store, "a");
        const int r = tape.reshape_rows(a, 3);
        const int s = tape.scale(r, 1.7);
        return tape.sse(s, tape.input(target));
    };
    auto loss_value = [&]() {
        Tape tape;
        return tape.scalar(build(tape));
    };
    auto backprop = [&]() {
        Tape tape;
        tape.backward(build(tape));
    };
    expect_grads_match(store, loss_value, backprop);
}

// Spec-level fuzz: analytic gradients match central finite differences on
// randomized inputs across the supported op set.
TEST(Tape, FuzzRandomCompositeGraphsMatchFiniteDifferences) {
    Rng rng(59);
    int checked = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const int in_dim = 2 + rng.uniform_int(4);
        const int hid = 2 + rng.uniform_int(5);
        const int out_dim = 1 + rng.uniform_int(3);
        const int rows = 1 + rng.uniform_int(4);
        ParamStore store;
        store.add("w1", random_array(rng, in_dim, hid, 0.6));
        store.add("b1", random_array(rng, 1, hid, 0.2));
        store.add("w2", random_array(rng, hid, out_dim, 0.6));
        const Array2D x = random_array(rng, rows, in_dim);
        const Array2D target = random_array(rng, rows, out_dim);
        const bool use_logsig = rep % 2 == 0;

        auto build = [&](Tape& tape) {
            const int h = tape.tanh_op(tape.add_row(tape.matmul(tape.input(x), tape.param(store, "w1")),
                                                    tape.param(store, "b1")));
            const int y = tape.matmul(h, tape.param(store, "w2"));
            const int e = tape.sse(y, tape.input(target));
            if (use_logsig) {
                return tape.scale(tape.log_sigmoid_op(tape.scale(e, -0.3)), -1.0);
            }
            return e;
        };
        auto loss_value = [&]() {
            Tape tape;
            return tape.scalar(build(tape));
        };
        // Check a couple of randomly chosen coordinates per graph to keep the
        // fuzz pass fast while covering >= 100 cases overall.
        Tape tape;
        store.zero_grad();
        tape.backward(build(tape));
        for (int probe = 0; probe < 3; ++probe) {
            const auto& names = store.names();
            const std::string name = names[static_cast<size_t>(rng.uniform_int(static_cast<int>(names.size())))];
            const size_t idx = static_cast<size_t>(rng.uniform_int(static_cast<int>(store.value(name).size())));
            const double fd = finite_diff(store, name, idx, loss_value);
            const double an = store.grad(name).data[idx];
            const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
            EXPECT_LT(std::fabs(fd - an) / denom, 1e-4) << "rep=" << rep << " " << name << "[" << idx << "]";
            ++checked;
        }
    }
    EXPECT_GE(checked, 100);
}
