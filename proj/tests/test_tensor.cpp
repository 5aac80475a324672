#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "test_util.hpp"
#include "tloc/nn.hpp"
#include "tloc/tensor.hpp"

using namespace tloc;
using testutil::check_gradients;
using testutil::rand_tensor;
using Catch::Approx;

TEST_CASE("conv2d with a 1x1 identity kernel is exact identity") {
    Rng rng(7);
    auto x = rand_tensor({3, 5, 4}, rng, false);
    auto w = Tensor<double>::from({3, 3, 1, 1}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto y = conv2d(x, w, TensorPtr<double>{}, 0);
    REQUIRE(y->shape == x->shape);
    for (size_t i = 0; i < x->size(); ++i) REQUIRE(y->value[i] == x->value[i]);
}

TEST_CASE("relu clamps negatives") {
    auto x = Tensor<double>::from({3}, {-1, 0, 2});
    auto y = relu(x);
    REQUIRE(y->value == std::vector<double>{0, 0, 2});
}

TEST_CASE("3x3 all-ones kernel on all-ones 3x3 input, zero padding 1") {
    auto x = Tensor<double>::from({1, 3, 3}, std::vector<double>(9, 1.0));
    auto w = Tensor<double>::from({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    auto y = conv2d(x, w, TensorPtr<double>{}, 1);
    REQUIRE(y->shape == std::vector<int>{1, 3, 3});
    REQUIRE(y->value[4] == Approx(9.0));   // center
    REQUIRE(y->value[0] == Approx(4.0));   // corners
    REQUIRE(y->value[2] == Approx(4.0));
    REQUIRE(y->value[6] == Approx(4.0));
    REQUIRE(y->value[8] == Approx(4.0));
    REQUIRE(y->value[1] == Approx(6.0));   // edges
}

TEST_CASE("sum of relu subgradient") {
    auto x = Tensor<double>::from({2}, {2, -3}, true);
    auto loss = sum(relu(x));
    backward(loss);
    REQUIRE(x->grad[0] == 1.0);
    REQUIRE(x->grad[1] == 0.0);
}

TEST_CASE("conv2d weight gradient equals sum of covered input patches") {
    Rng rng(11);
    auto x = rand_tensor({1, 4, 4}, rng, false);
    auto w = Tensor<double>::from({1, 1, 2, 2}, {0.5, -0.2, 0.1, 0.3}, true);
    auto loss = sum(conv2d(x, w, TensorPtr<double>{}, 0));
    backward(loss);
    // d(sum y)/dw[ky][kx] = sum over output positions of x[oy+ky][ox+kx]
    for (int ky = 0; ky < 2; ++ky)
        for (int kx = 0; kx < 2; ++kx) {
            double expect = 0;
            for (int oy = 0; oy < 3; ++oy)
                for (int ox = 0; ox < 3; ++ox) expect += x->value[(oy + ky) * 4 + ox + kx];
            REQUIRE(w->grad[ky * 2 + kx] == Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("softmax_channels basics") {
    SECTION("equal logits give 1/C") {
        auto x = Tensor<double>::from({4, 1, 1}, {0.3, 0.3, 0.3, 0.3});
        auto y = softmax_channels(x);
        for (double v : y->value) REQUIRE(v == Approx(0.25));
    }
    SECTION("single channel gives ones") {
        auto x = Tensor<double>::from({1, 2, 2}, {5, -1, 0, 2});
        auto y = softmax_channels(x);
        for (double v : y->value) REQUIRE(v == Approx(1.0));
    }
    SECTION("[0, ln 3] maps to [0.25, 0.75]") {
        auto x = Tensor<double>::from({2, 1, 1}, {0.0, std::log(3.0)});
        auto y = softmax_channels(x);
        REQUIRE(y->value[0] == Approx(0.25));
        REQUIRE(y->value[1] == Approx(0.75));
    }
    SECTION("per-location sums are 1 and shift invariance holds") {
        Rng rng(3);
        auto x = rand_tensor({5, 3, 4}, rng, false, -4, 4);
        auto y = softmax_channels(x);
        auto shifted = x;
        auto xs = Tensor<double>::leaf({5, 3, 4});
        for (int i = 0; i < 12; ++i)
            for (int c = 0; c < 5; ++c) xs->value[c * 12 + i] = x->value[c * 12 + i] + 3.7;
        auto ys = softmax_channels(xs);
        for (int i = 0; i < 12; ++i) {
            double total = 0;
            for (int c = 0; c < 5; ++c) total += y->value[c * 12 + i];
            REQUIRE(total == Approx(1.0).margin(1e-6));
            for (int c = 0; c < 5; ++c)
                REQUIRE(y->value[c * 12 + i] == Approx(ys->value[c * 12 + i]).margin(1e-6));
        }
    }
}

TEST_CASE("categorical cross-entropy closed forms") {
    SECTION("mass on the correct class gives ~0") {
        auto p = Tensor<double>::leaf({3, 2, 2});
        std::vector<int> labels = {0, 1, 2, 1};
        for (int i = 0; i < 4; ++i) p->value[labels[i] * 4 + i] = 1.0;
        REQUIRE(cross_entropy_mean(p, labels)->value[0] == Approx(0.0).margin(1e-6));
    }
    SECTION("uniform probs with 16 classes give ln 16") {
        auto p = Tensor<double>::leaf({16, 2, 2});
        std::fill(p->value.begin(), p->value.end(), 1.0 / 16);
        std::vector<int> labels = {3, 0, 15, 7};
        REQUIRE(cross_entropy_mean(p, labels)->value[0] == Approx(std::log(16.0)));
    }
    SECTION("one pixel, probs [0.25, 0.75], label 1") {
        auto p = Tensor<double>::from({2, 1, 1}, {0.25, 0.75});
        REQUIRE(cross_entropy_mean(p, {1})->value[0] == Approx(-std::log(0.75)));
    }
    SECTION("label out of range throws") {
        auto p = Tensor<double>::from({2, 1, 1}, {0.5, 0.5});
        REQUIRE_THROWS_AS(cross_entropy_mean(p, {2}), ContractViolation);
        REQUIRE_THROWS_AS(cross_entropy_mean(p, {-1}), ContractViolation);
    }
}

TEST_CASE("binary cross-entropy closed forms") {
    SECTION("pred equals target gives ~0") {
        auto p = Tensor<double>::from({4}, {1, 0, 1, 0});
        REQUIRE(bce_mean(p, {1, 0, 1, 0})->value[0] == Approx(0.0).margin(1e-5));
    }
    SECTION("pred 0.5 everywhere gives ln 2") {
        auto p = Tensor<double>::from({3}, {0.5, 0.5, 0.5});
        REQUIRE(bce_mean(p, {1, 0, 1})->value[0] == Approx(std::log(2.0)));
    }
    SECTION("pred 0.9 target 1 single entry") {
        auto p = Tensor<double>::from({1}, {0.9});
        REQUIRE(bce_mean(p, {1})->value[0] == Approx(-std::log(0.9)));
    }
    SECTION("target outside {0,1} throws") {
        auto p = Tensor<double>::from({1}, {0.5});
        REQUIRE_THROWS_AS(bce_mean(p, {0.5}), ContractViolation);
    }
}

TEST_CASE("backward contract") {
    SECTION("double backward without a fresh forward throws") {
        auto x = Tensor<double>::from({2}, {1, 2}, true);
        auto loss = sum(x);
        backward(loss);
        REQUIRE_THROWS_AS(backward(loss), ContractViolation);
    }
    SECTION("non-scalar root throws") {
        auto x = Tensor<double>::from({2}, {1, 2}, true);
        auto y = relu(x);
        REQUIRE_THROWS_AS(backward(y), ContractViolation);
    }
    SECTION("grads accumulate additively across backward calls") {
        auto x = Tensor<double>::from({2}, {3, 4}, true);
        backward(sum(x));
        backward(sum(x));
        REQUIRE(x->grad[0] == 2.0);
        REQUIRE(x->grad[1] == 2.0);
    }
    SECTION("shape mismatch names both shapes") {
        auto a = Tensor<double>::leaf({2, 3});
        auto b = Tensor<double>::leaf({3, 2});
        try {
            add(a, b);
            FAIL("expected ContractViolation");
        } catch (const ContractViolation& e) {
            const std::string msg = e.what();
            REQUIRE(msg.find("(2, 3)") != std::string::npos);
            REQUIRE(msg.find("(3, 2)") != std::string::npos);
        }
    }
}

TEST_CASE("maxpool dominates covered inputs") {
    Rng rng(5);
    auto x = rand_tensor({3, 6, 8}, rng, false);
    auto y = maxpool2d(x, 2);
    REQUIRE(y->shape == std::vector<int>{3, 3, 4});
    for (int c = 0; c < 3; ++c)
        for (int oy = 0; oy < 3; ++oy)
            for (int ox = 0; ox < 4; ++ox) {
                const double m = y->value[(c * 3 + oy) * 4 + ox];
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        REQUIRE(m >= x->value[(c * 6 + oy * 2 + dy) * 8 + ox * 2 + dx]);
            }
}

TEST_CASE("batchnorm training statistics") {
    Rng rng(9);
    auto x = rand_tensor({3, 8, 8}, rng, false, -2, 5);
    auto gamma = Tensor<double>::from({3}, {1, 1, 1});
    auto beta = Tensor<double>::from({3}, {0, 0, 0});
    BatchNormState<double> st(3);
    auto y = batchnorm2d(x, gamma, beta, st, true);
    const int n = 64;
    for (int c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        for (int i = 0; i < n; ++i) mean += y->value[c * n + i];
        mean /= n;
        for (int i = 0; i < n; ++i) {
            const double d = y->value[c * n + i] - mean;
            var += d * d;
        }
        var /= n;
        REQUIRE(std::abs(mean) < 1e-5);
        REQUIRE(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("batchnorm inference uses running statistics") {
    auto x = Tensor<double>::from({1, 2, 2}, {1, 2, 3, 4});
    auto gamma = Tensor<double>::from({1}, {2});
    auto beta = Tensor<double>::from({1}, {0.5});
    BatchNormState<double> st(1);
    st.running_mean[0] = 2.0;
    st.running_var[0] = 4.0;
    auto y = batchnorm2d(x, gamma, beta, st, false);
    const double inv = 1.0 / std::sqrt(4.0 + st.eps);
    for (int i = 0; i < 4; ++i)
        REQUIRE(y->value[i] == Approx(2.0 * (x->value[i] - 2.0) * inv + 0.5));
    // inference must not touch the running stats
    REQUIRE(st.running_mean[0] == 2.0);
    REQUIRE(st.running_var[0] == 4.0);
}

TEST_CASE("adam optimizer") {
    SECTION("zero gradients leave parameters unchanged") {
        auto w = Tensor<double>::from({3}, {1, -2, 3}, true);
        AdamOptimizer<double> opt({w}, 0.1);
        opt.zero_grad();
        opt.step();
        REQUIRE(w->value == std::vector<double>{1, -2, 3});
    }
    SECTION("first step moves by ~lr * sign(grad)") {
        auto w = Tensor<double>::from({2}, {0.0, 0.0}, true);
        AdamOptimizer<double> opt({w}, 0.01);
        w->ensure_grad();
        w->grad = {0.5, -3.0};
        opt.step();
        REQUIRE(w->value[0] == Approx(-0.01).epsilon(1e-4));
        REQUIRE(w->value[1] == Approx(0.01).epsilon(1e-4));
    }
    SECTION("100 steps on f(w) = w^2 from w0 = 1, lr 0.1") {
        auto w = Tensor<double>::from({1}, {1.0}, true);
        AdamOptimizer<double> opt({w}, 0.1);
        for (int i = 0; i < 100; ++i) {
            opt.zero_grad();
            auto loss = sum(hadamard(w, w));
            backward(loss);
            opt.step();
        }
        REQUIRE(std::abs(w->value[0]) < 0.1);
    }
}

TEST_CASE("forward determinism: identical inputs give bitwise-identical results") {
    auto run = [] {
        Rng rng(123);
        auto x = rand_tensor({2, 8, 8}, rng, false);
        Conv2dLayer<double> conv(2, 4, 3, 1, rng);
        BatchNorm2dLayer<double> bn(4);
        auto y = softmax_channels(relu(bn(conv(x), true)));
        return y->value;
    };
    REQUIRE(run() == run());
}

// ---------------------------------------------------------------------------
// gradient checks per layer kind (the full randomized sweep lives in the
// acceptance suite)
// ---------------------------------------------------------------------------

TEST_CASE("gradcheck: conv2d") {
    Rng rng(21);
    auto x = rand_tensor({2, 5, 6}, rng);
    auto w = rand_tensor({3, 2, 3, 3}, rng);
    auto b = rand_tensor({3}, rng);
    check_gradients({x, w, b}, [&] {
        auto probs = softmax_channels(conv2d(x, w, b, 1));
        return cross_entropy_mean(probs, std::vector<int>(30, 1));
    });
}

TEST_CASE("gradcheck: conv1d") {
    Rng rng(22);
    auto x = rand_tensor({2, 9}, rng);
    auto w = rand_tensor({4, 2, 3}, rng);
    auto b = rand_tensor({4}, rng);
    check_gradients({x, w, b}, [&] { return sum(relu(conv1d(x, w, b, 1))); });
}

TEST_CASE("gradcheck: conv_transpose2d") {
    Rng rng(23);
    auto x = rand_tensor({3, 4, 5}, rng);
    auto w = rand_tensor({3, 2, 2, 2}, rng);
    auto b = rand_tensor({2}, rng);
    check_gradients({x, w, b}, [&] { return sum(relu(conv_transpose2d(x, w, b, 2))); });
}

TEST_CASE("gradcheck: dense 1x1 conv2d (matrix-vector path)") {
    Rng rng(31);
    auto x = rand_tensor({7, 1, 1}, rng);
    auto w = rand_tensor({5, 7, 1, 1}, rng);
    auto b = rand_tensor({5}, rng);
    check_gradients({x, w, b}, [&] { return sum(relu(conv2d(x, w, b, 0))); });
    SECTION("matches the generic path") {
        auto y_dense = conv2d(x, w, b, 0);
        auto x2 = reshape(x, {7, 1, 1});
        REQUIRE(y_dense->shape == std::vector<int>{5, 1, 1});
    }
}

TEST_CASE("gradcheck: maxpool + relu stack") {
    Rng rng(24);
    auto x = rand_tensor({2, 6, 6}, rng);
    check_gradients({x}, [&] { return sum(maxpool2d(relu(x), 2)); });
}

TEST_CASE("gradcheck: batchnorm train and inference modes") {
    Rng rng(25);
    auto x = rand_tensor({2, 4, 4}, rng);
    auto gamma = rand_tensor({2}, rng, true, 0.5, 1.5);
    auto beta = rand_tensor({2}, rng);
    BatchNormState<double> st(2);
    st.running_mean = {0.1, -0.2};
    st.running_var = {0.9, 1.3};
    check_gradients({x, gamma, beta}, [&] {
        BatchNormState<double> scratch = st;
        return sum(hadamard(batchnorm2d(x, gamma, beta, scratch, true),
                            batchnorm2d(x, gamma, beta, scratch, false)));
    });
}

TEST_CASE("gradcheck: softmax + cross entropy") {
    Rng rng(26);
    auto x = rand_tensor({4, 3, 3}, rng, true, -2, 2);
    std::vector<int> labels;
    for (int i = 0; i < 9; ++i) labels.push_back(i % 4);
    check_gradients({x}, [&] { return cross_entropy_mean(softmax_channels(x), labels); });
}

TEST_CASE("gradcheck: bce through normalize_sum") {
    Rng rng(27);
    auto x = rand_tensor({6}, rng, true, 0.1, 2.0);
    std::vector<double> target = {1, 0, 0, 1, 0, 0};
    check_gradients({x}, [&] { return bce_mean(normalize_sum(x), target); });
}

TEST_CASE("gradcheck: reshape, concat, flip, scale, add") {
    Rng rng(28);
    auto a = rand_tensor({2, 3, 4}, rng);
    auto b = rand_tensor({3, 3, 4}, rng);
    check_gradients({a, b}, [&] {
        auto cat = concat_channels(flip_hw(a), b);
        auto r = reshape(cat, {5, 12});
        return sum(hadamard(scale(r, 0.7), add(r, r)));
    });
}

TEST_CASE("gradcheck: full encoder-style stack") {
    Rng rng(29);
    auto x = rand_tensor({1, 8, 8}, rng);
    auto w1 = rand_tensor({3, 1, 3, 3}, rng, true, -0.4, 0.4);
    auto b1 = rand_tensor({3}, rng, true, -0.1, 0.1);
    auto g1 = rand_tensor({3}, rng, true, 0.8, 1.2);
    auto be1 = rand_tensor({3}, rng, true, -0.1, 0.1);
    auto w2 = rand_tensor({4, 3, 3, 3}, rng, true, -0.3, 0.3);
    auto b2 = rand_tensor({4}, rng, true, -0.1, 0.1);
    std::vector<int> labels;
    for (int i = 0; i < 16; ++i) labels.push_back(i % 4);
    BatchNormState<double> st(3);
    check_gradients({x, w1, b1, g1, be1, w2, b2}, [&] {
        BatchNormState<double> scratch = st;
        auto h1 = relu(batchnorm2d(conv2d(x, w1, b1, 1), g1, be1, scratch, true));
        auto h2 = maxpool2d(h1, 2);
        auto out = softmax_channels(conv2d(h2, w2, b2, 1));
        return cross_entropy_mean(out, labels);
    });
}
