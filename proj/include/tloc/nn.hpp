#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "tloc/rng.hpp"
#include "tloc/tensor.hpp"

namespace tloc {

// Weights drawn uniform in +/- sqrt(1/fan_in), biases zero.
template <class S>
void init_uniform_fan_in(Tensor<S>& w, int fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / fan_in);
    for (auto& v : w.value) v = static_cast<S>(rng.uniform(-bound, bound));
}

template <class S>
struct Conv2dLayer {
    int in_c = 1, out_c = 1, k = 3, pad = 1;
    TensorPtr<S> w, b;

    Conv2dLayer() = default;
    Conv2dLayer(int in_c, int out_c, int k, int pad, Rng& rng)
        : in_c(in_c), out_c(out_c), k(k), pad(pad) {
        w = Tensor<S>::leaf({out_c, in_c, k, k}, true);
        b = Tensor<S>::leaf({out_c}, true);
        init_uniform_fan_in(*w, in_c * k * k, rng);
    }
    TensorPtr<S> operator()(const TensorPtr<S>& x) const { return conv2d(x, w, b, pad); }
};

template <class S>
struct Conv1dLayer {
    int in_c = 1, out_c = 1, k = 3, pad = 1;
    TensorPtr<S> w, b;

    Conv1dLayer() = default;
    Conv1dLayer(int in_c, int out_c, int k, int pad, Rng& rng)
        : in_c(in_c), out_c(out_c), k(k), pad(pad) {
        w = Tensor<S>::leaf({out_c, in_c, k}, true);
        b = Tensor<S>::leaf({out_c}, true);
        init_uniform_fan_in(*w, in_c * k, rng);
    }
    TensorPtr<S> operator()(const TensorPtr<S>& x) const { return conv1d(x, w, b, pad); }
};

template <class S>
struct ConvTranspose2dLayer {
    int in_c = 1, out_c = 1, k = 2, stride = 2;
    TensorPtr<S> w, b;

    ConvTranspose2dLayer() = default;
    ConvTranspose2dLayer(int in_c, int out_c, int k, int stride, Rng& rng)
        : in_c(in_c), out_c(out_c), k(k), stride(stride) {
        w = Tensor<S>::leaf({in_c, out_c, k, k}, true);
        b = Tensor<S>::leaf({out_c}, true);
        init_uniform_fan_in(*w, in_c * k * k, rng);
    }
    TensorPtr<S> operator()(const TensorPtr<S>& x) const {
        return conv_transpose2d(x, w, b, stride);
    }
};

template <class S>
struct BatchNorm2dLayer {
    int c = 1;
    TensorPtr<S> gamma, beta;
    mutable BatchNormState<S> state;

    BatchNorm2dLayer() = default;
    explicit BatchNorm2dLayer(int c) : c(c), state(c) {
        gamma = Tensor<S>::leaf({c}, true);
        std::fill(gamma->value.begin(), gamma->value.end(), S(1));
        beta = Tensor<S>::leaf({c}, true);
    }
    TensorPtr<S> operator()(const TensorPtr<S>& x, bool training) const {
        return batchnorm2d(x, gamma, beta, state, training);
    }
};

template <class S>
struct MaxPool2dLayer {
    int k = 2;
    TensorPtr<S> operator()(const TensorPtr<S>& x) const { return maxpool2d(x, k); }
};

template <class S>
struct ReluLayer {
    TensorPtr<S> operator()(const TensorPtr<S>& x) const { return relu(x); }
};

template <class S>
struct SoftmaxChannelsLayer {
    TensorPtr<S> operator()(const TensorPtr<S>& x) const { return softmax_channels(x); }
};

template <class S>
struct ReshapeLayer {
    std::vector<int> to;
    TensorPtr<S> operator()(const TensorPtr<S>& x) const { return reshape(x, to); }
};

// Kind-tagged layer for generic stacks (gradient checks, serialization-free
// experiments). The models compose the typed structs directly.
template <class S>
using Layer = std::variant<Conv2dLayer<S>, Conv1dLayer<S>, ConvTranspose2dLayer<S>,
                           BatchNorm2dLayer<S>, MaxPool2dLayer<S>, ReluLayer<S>,
                           SoftmaxChannelsLayer<S>, ReshapeLayer<S>>;

template <class S>
TensorPtr<S> forward(const Layer<S>& layer, const TensorPtr<S>& x, bool training = true) {
    return std::visit(
        [&](const auto& l) -> TensorPtr<S> {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, BatchNorm2dLayer<S>>)
                return l(x, training);
            else
                return l(x);
        },
        layer);
}

template <class S>
std::vector<TensorPtr<S>> layer_params(const Layer<S>& layer) {
    std::vector<TensorPtr<S>> out;
    std::visit(
        [&](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, Conv2dLayer<S>> || std::is_same_v<L, Conv1dLayer<S>> ||
                          std::is_same_v<L, ConvTranspose2dLayer<S>>) {
                out = {l.w, l.b};
            } else if constexpr (std::is_same_v<L, BatchNorm2dLayer<S>>) {
                out = {l.gamma, l.beta};
            }
        },
        layer);
    return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

// Standard Adam with bias correction. Moment arrays mirror each registered
// parameter; gradients are left untouched by step() and cleared by zero_grad().
template <class S>
struct AdamOptimizer {
    S lr;
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
    long long step_count = 0;
    std::vector<TensorPtr<S>> params;
    std::vector<std::vector<S>> m, v;

    AdamOptimizer(std::vector<TensorPtr<S>> parameters, S lr) : lr(lr), params(std::move(parameters)) {
        for (const auto& p : params) {
            m.emplace_back(p->size(), S(0));
            v.emplace_back(p->size(), S(0));
        }
    }

    void step() {
        ++step_count;
        const S bc1 = S(1) - std::pow(beta1, static_cast<S>(step_count));
        const S bc2 = S(1) - std::pow(beta2, static_cast<S>(step_count));
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = *params[pi];
            p.ensure_grad();
            for (size_t i = 0; i < p.size(); ++i) {
                const S g = p.grad[i];
                m[pi][i] = beta1 * m[pi][i] + (S(1) - beta1) * g;
                v[pi][i] = beta2 * v[pi][i] + (S(1) - beta2) * g * g;
                const S mhat = m[pi][i] / bc1;
                const S vhat = v[pi][i] / bc2;
                p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params) {
            p->ensure_grad();
            p->zero_grad();
        }
    }
};

}  // namespace tloc
