#pragma once

#include <unistd.h>

#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tloc/rng.hpp"
#include "tloc/tensor.hpp"

namespace testutil {

inline tloc::TensorPtr<double> rand_tensor(std::vector<int> shape, tloc::Rng& rng,
                                           bool needs_grad = true, double lo = -1.0,
                                           double hi = 1.0) {
    auto t = tloc::Tensor<double>::leaf(std::move(shape), needs_grad);
    for (auto& v : t->value) v = rng.uniform(lo, hi);
    return t;
}

// Central finite differences against reverse-mode gradients. `make_loss`
// must rebuild the graph from the leaves' current values and return a scalar.
inline void check_gradients(const std::vector<tloc::TensorPtr<double>>& leaves,
                            const std::function<tloc::TensorPtr<double>()>& make_loss,
                            double tol = 1e-4, double h = 1e-5) {
    for (auto& l : leaves) {
        l->ensure_grad();
        l->zero_grad();
    }
    auto loss = make_loss();
    tloc::backward(loss);
    for (auto& leaf : leaves) {
        for (size_t i = 0; i < leaf->size(); ++i) {
            const double saved = leaf->value[i];
            leaf->value[i] = saved + h;
            const double lp = make_loss()->value[0];
            leaf->value[i] = saved - h;
            const double lm = make_loss()->value[0];
            leaf->value[i] = saved;
            const double numeric = (lp - lm) / (2 * h);
            const double analytic = leaf->grad[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
            INFO("leaf entry " << i << ": analytic " << analytic << " numeric " << numeric);
            REQUIRE(std::abs(numeric - analytic) / denom <= tol);
        }
    }
}

// Scratch directory wiped on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("tloc_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace testutil
