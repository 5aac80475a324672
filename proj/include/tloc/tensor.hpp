#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace tloc {

// Thrown when an operation's preconditions are violated (shape mismatches,
// out-of-range labels, double backward, ...).
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ")";
    return os.str();
}

inline size_t shape_numel(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ContractViolation("non-positive dimension in shape " + shape_str(s));
        n *= static_cast<size_t>(d);
    }
    return n;
}

// Reverse-mode autodiff node. Values and (when the node participates in
// training) gradients are dense row-major arrays. Ops are free functions
// below; each sets a backprop closure that scatters the node's grad into its
// parents' grads. Scalar type is float or double.
template <class S>
struct Tensor : std::enable_shared_from_this<Tensor<S>> {
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty unless needs_grad
    bool needs_grad = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<Tensor<S>>> parents;
    std::function<void(Tensor<S>&)> backprop;

    size_t size() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }

    void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }

    static std::shared_ptr<Tensor<S>> leaf(std::vector<int> shape, bool needs_grad = false) {
        auto t = std::make_shared<Tensor<S>>();
        const size_t n = shape_numel(shape);
        t->shape = std::move(shape);
        t->value.assign(n, S(0));
        t->needs_grad = needs_grad;
        if (needs_grad) t->grad.assign(n, S(0));
        return t;
    }

    static std::shared_ptr<Tensor<S>> from(std::vector<int> shape, std::vector<S> vals,
                                           bool needs_grad = false) {
        if (shape_numel(shape) != vals.size())
            throw ContractViolation("value count does not match shape " + shape_str(shape));
        auto t = leaf(std::move(shape), needs_grad);
        t->value = std::move(vals);
        return t;
    }

    static std::shared_ptr<Tensor<S>> scalar(S v) { return from({1}, {v}); }
};

template <class S>
using TensorPtr = std::shared_ptr<Tensor<S>>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

template <class S>
TensorPtr<S> make_node(std::vector<int> shape, std::initializer_list<TensorPtr<S>> parents) {
    auto t = std::make_shared<Tensor<S>>();
    const size_t n = shape_numel(shape);
    t->shape = std::move(shape);
    t->value.assign(n, S(0));
    for (const auto& p : parents)
        if (p && p->needs_grad) t->needs_grad = true;
    if (t->needs_grad) {
        t->grad.assign(n, S(0));
        for (const auto& p : parents)
            if (p) t->parents.push_back(p);
    }
    return t;
}

template <class S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape != b.shape)
        throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

template <class S>
TensorPtr<S> add(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    detail::check_same_shape("add", *a, *b);
    auto out = detail::make_node<S>(a->shape, {a, b});
    for (size_t i = 0; i < out->size(); ++i) out->value[i] = a->value[i] + b->value[i];
    if (out->needs_grad)
        out->backprop = [](Tensor<S>& self) {
            for (auto& p : self.parents) {
                if (!p->needs_grad) continue;
                p->ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) p->grad[i] += self.grad[i];
            }
        };
    return out;
}

template <class S>
TensorPtr<S> add_n(const std::vector<TensorPtr<S>>& xs) {
    if (xs.empty()) throw ContractViolation("add_n: empty input list");
    auto out = std::make_shared<Tensor<S>>();
    out->shape = xs[0]->shape;
    out->value.assign(xs[0]->size(), S(0));
    for (const auto& x : xs) {
        detail::check_same_shape("add_n", *xs[0], *x);
        if (x->needs_grad) out->needs_grad = true;
        for (size_t i = 0; i < out->size(); ++i) out->value[i] += x->value[i];
    }
    if (out->needs_grad) {
        out->grad.assign(out->size(), S(0));
        out->parents.assign(xs.begin(), xs.end());
        out->backprop = [](Tensor<S>& self) {
            for (auto& p : self.parents) {
                if (!p->needs_grad) continue;
                p->ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) p->grad[i] += self.grad[i];
            }
        };
    }
    return out;
}

template <class S>
TensorPtr<S> scale(const TensorPtr<S>& x, S c) {
    auto out = detail::make_node<S>(x->shape, {x});
    for (size_t i = 0; i < out->size(); ++i) out->value[i] = c * x->value[i];
    if (out->needs_grad)
        out->backprop = [c](Tensor<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) p.grad[i] += c * self.grad[i];
        };
    return out;
}

template <class S>
TensorPtr<S> hadamard(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    detail::check_same_shape("hadamard", *a, *b);
    auto out = detail::make_node<S>(a->shape, {a, b});
    for (size_t i = 0; i < out->size(); ++i) out->value[i] = a->value[i] * b->value[i];
    if (out->needs_grad)
        out->backprop = [](Tensor<S>& self) {
            auto& a = *self.parents[0];
            auto& b = *self.parents[1];
            if (a.needs_grad) {
                a.ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) a.grad[i] += self.grad[i] * b.value[i];
            }
            if (b.needs_grad) {
                b.ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) b.grad[i] += self.grad[i] * a.value[i];
            }
        };
    return out;
}

template <class S>
TensorPtr<S> relu(const TensorPtr<S>& x) {
    auto out = detail::make_node<S>(x->shape, {x});
    for (size_t i = 0; i < out->size(); ++i) out->value[i] = x->value[i] > S(0) ? x->value[i] : S(0);
    if (out->needs_grad)
        out->backprop = [](Tensor<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < self.size(); ++i)
                if (p.value[i] > S(0)) p.grad[i] += self.grad[i];
        };
    return out;
}

template <class S>
TensorPtr<S> sum(const TensorPtr<S>& x) {
    auto out = detail::make_node<S>({1}, {x});
    S acc = 0;
    for (size_t i = 0; i < x->size(); ++i) acc += x->value[i];
    out->value[0] = acc;
    if (out->needs_grad)
        out->backprop = [](Tensor<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            const S g = self.grad[0];
            for (size_t i = 0; i < p.size(); ++i) p.grad[i] += g;
        };
    return out;
}

template <class S>
TensorPtr<S> reshape(const TensorPtr<S>& x, std::vector<int> new_shape) {
    if (shape_numel(new_shape) != x->size())
        throw ContractViolation("reshape: element count mismatch " + shape_str(x->shape) +
                                " vs " + shape_str(new_shape));
    auto out = detail::make_node<S>(std::move(new_shape), {x});
    out->value = x->value;
    if (out->needs_grad)
        out->backprop = [](Tensor<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) p.grad[i] += self.grad[i];
        };
    return out;
}

// concatenates two [C,H,W] maps along the channel dimension
template <class S>
TensorPtr<S> concat_channels(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->shape.size() != 3 || b->shape.size() != 3)
        throw ContractViolation("concat_channels: expected rank-3 inputs, got " +
                                shape_str(a->shape) + " and " + shape_str(b->shape));
    if (a->shape[1] != b->shape[1] || a->shape[2] != b->shape[2])
        throw ContractViolation("concat_channels: spatial dims differ " + shape_str(a->shape) +
                                " vs " + shape_str(b->shape));
    const int ca = a->shape[0], cb = b->shape[0];
    auto out = detail::make_node<S>({ca + cb, a->shape[1], a->shape[2]}, {a, b});
    std::copy(a->value.begin(), a->value.end(), out->value.begin());
    std::copy(b->value.begin(), b->value.end(), out->value.begin() + a->size());
    if (out->needs_grad)
        out->backprop = [](Tensor<S>& self) {
            auto& a = *self.parents[0];
            auto& b = *self.parents[1];
            if (a.needs_grad) {
                a.ensure_grad();
                for (size_t i = 0; i < a.size(); ++i) a.grad[i] += self.grad[i];
            }
            if (b.needs_grad) {
                b.ensure_grad();
                const size_t off = a.size();
                for (size_t i = 0; i < b.size(); ++i) b.grad[i] += self.grad[off + i];
            }
        };
    return out;
}

// Stacks same-shape [C,H_i,W] maps vertically into [C, sum H_i, W]. Used to
// pool batch samples into one tensor so batchnorm sees minibatch statistics;
// convolutions stay per-sample to keep zero-padding semantics.
template <class S>
TensorPtr<S> concat_rows(const std::vector<TensorPtr<S>>& xs) {
    if (xs.empty()) throw ContractViolation("concat_rows: empty input list");
    const int c = xs[0]->shape.size() == 3 ? xs[0]->shape[0] : -1;
    const int w = xs[0]->shape.size() == 3 ? xs[0]->shape[2] : -1;
    int total_h = 0;
    for (const auto& x : xs) {
        if (x->shape.size() != 3 || x->shape[0] != c || x->shape[2] != w)
            throw ContractViolation("concat_rows: incompatible shapes " + shape_str(xs[0]->shape) +
                                    " vs " + shape_str(x->shape));
        total_h += x->shape[1];
    }
    auto out = std::make_shared<Tensor<S>>();
    out->shape = {c, total_h, w};
    out->value.resize(static_cast<size_t>(c) * total_h * w);
    for (const auto& x : xs)
        if (x->needs_grad) out->needs_grad = true;
    int row = 0;
    for (const auto& x : xs) {
        const int h = x->shape[1];
        for (int ci = 0; ci < c; ++ci)
            std::copy(x->value.begin() + static_cast<size_t>(ci) * h * w,
                      x->value.begin() + static_cast<size_t>(ci + 1) * h * w,
                      out->value.begin() + (static_cast<size_t>(ci) * total_h + row) * w);
        row += h;
    }
    if (out->needs_grad) {
        out->grad.assign(out->value.size(), S(0));
        out->parents.assign(xs.begin(), xs.end());
        out->backprop = [c, total_h, w](Tensor<S>& self) {
            int row = 0;
            for (auto& p : self.parents) {
                const int h = p->shape[1];
                if (p->needs_grad) {
                    p->ensure_grad();
                    for (int ci = 0; ci < c; ++ci) {
                        const S* g = self.grad.data() + (static_cast<size_t>(ci) * total_h + row) * w;
                        S* dst = p->grad.data() + static_cast<size_t>(ci) * h * w;
                        for (int i = 0; i < h * w; ++i) dst[i] += g[i];
                    }
                }
                row += h;
            }
        };
    }
    return out;
}

// Extracts rows [y0, y0 + h) of every channel of a [C,H,W] map.
template <class S>
TensorPtr<S> slice_rows(const TensorPtr<S>& x, int y0, int h) {
    if (x->shape.size() != 3)
        throw ContractViolation("slice_rows: expected rank-3 input, got " + shape_str(x->shape));
    const int c = x->shape[0], total_h = x->shape[1], w = x->shape[2];
    if (y0 < 0 || h < 1 || y0 + h > total_h)
        throw ContractViolation("slice_rows: rows [" + std::to_string(y0) + ", " +
                                std::to_string(y0 + h) + ") outside " + shape_str(x->shape));
    auto out = detail::make_node<S>({c, h, w}, {x});
    for (int ci = 0; ci < c; ++ci)
        std::copy(x->value.begin() + (static_cast<size_t>(ci) * total_h + y0) * w,
                  x->value.begin() + (static_cast<size_t>(ci) * total_h + y0 + h) * w,
                  out->value.begin() + static_cast<size_t>(ci) * h * w);
    if (out->needs_grad)
        out->backprop = [c, total_h, w, y0, h](Tensor<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int ci = 0; ci < c; ++ci) {
                const S* g = self.grad.data() + static_cast<size_t>(ci) * h * w;
                S* dst = p.grad.data() + (static_cast<size_t>(ci) * total_h + y0) * w;
                for (int i = 0; i < h * w; ++i) dst[i] += g[i];
            }
        };
    return out;
}

// flips the last two dimensions (180-degree spatial rotation)
template <class S>
TensorPtr<S> flip_hw(const TensorPtr<S>& x) {
    if (x->shape.size() < 2)
        throw ContractViolation("flip_hw: expected rank >= 2, got " + shape_str(x->shape));
    const int h = x->shape[x->shape.size() - 2];
    const int w = x->shape[x->shape.size() - 1];
    const size_t planes = x->size() / static_cast<size_t>(h * w);
    auto out = detail::make_node<S>(x->shape, {x});
    for (size_t p = 0; p < planes; ++p) {
        const S* src = x->value.data() + p * h * w;
        S* dst = out->value.data() + p * h * w;
        for (int i = 0; i < h * w; ++i) dst[i] = src[h * w - 1 - i];
    }
    if (out->needs_grad)
        out->backprop = [h, w, planes](Tensor<S>& self) {
            auto& p0 = *self.parents[0];
            p0.ensure_grad();
            for (size_t p = 0; p < planes; ++p) {
                const S* g = self.grad.data() + p * h * w;
                S* dst = p0.grad.data() + p * h * w;
                for (int i = 0; i < h * w; ++i) dst[i] += g[h * w - 1 - i];
            }
        };
    return out;
}

// y = x / sum(x); requires sum(x) > 0
template <class S>
TensorPtr<S> normalize_sum(const TensorPtr<S>& x) {
    S total = 0;
    for (size_t i = 0; i < x->size(); ++i) total += x->value[i];
    if (!(total > S(0)))
        throw ContractViolation("normalize_sum: non-positive total");
    auto out = detail::make_node<S>(x->shape, {x});
    const S inv = S(1) / total;
    for (size_t i = 0; i < out->size(); ++i) out->value[i] = x->value[i] * inv;
    if (out->needs_grad)
        out->backprop = [inv](Tensor<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            S dot = 0;
            for (size_t i = 0; i < self.size(); ++i) dot += self.grad[i] * self.value[i];
            for (size_t i = 0; i < self.size(); ++i)
                p.grad[i] += (self.grad[i] - dot) * inv;
        };
    return out;
}

// channel-wise softmax over a [C,H,W] map, max-subtracted per location
template <class S>
TensorPtr<S> softmax_channels(const TensorPtr<S>& x) {
    if (x->shape.size() != 3)
        throw ContractViolation("softmax_channels: expected rank-3 input, got " +
                                shape_str(x->shape));
    const int c = x->shape[0];
    const int hw = x->shape[1] * x->shape[2];
    auto out = detail::make_node<S>(x->shape, {x});
    for (int i = 0; i < hw; ++i) {
        S m = x->value[i];
        for (int ch = 1; ch < c; ++ch) m = std::max(m, x->value[ch * hw + i]);
        S z = 0;
        for (int ch = 0; ch < c; ++ch) {
            const S e = std::exp(x->value[ch * hw + i] - m);
            out->value[ch * hw + i] = e;
            z += e;
        }
        const S inv = S(1) / z;
        for (int ch = 0; ch < c; ++ch) out->value[ch * hw + i] *= inv;
    }
    if (out->needs_grad)
        out->backprop = [c, hw](Tensor<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int i = 0; i < hw; ++i) {
                S dot = 0;
                for (int ch = 0; ch < c; ++ch)
                    dot += self.grad[ch * hw + i] * self.value[ch * hw + i];
                for (int ch = 0; ch < c; ++ch) {
                    const size_t k = static_cast<size_t>(ch) * hw + i;
                    p.grad[k] += self.value[k] * (self.grad[k] - dot);
                }
            }
        };
    return out;
}

// ---------------------------------------------------------------------------
// convolution / pooling
// ---------------------------------------------------------------------------

// 2-D cross-correlation: x [inC,H,W], w [outC,inC,kh,kw], optional b [outC],
// zero padding `pad` on both spatial sides.
template <class S>
TensorPtr<S> conv2d(const TensorPtr<S>& x, const TensorPtr<S>& w, const TensorPtr<S>& b,
                    int pad) {
    if (x->shape.size() != 3 || w->shape.size() != 4)
        throw ContractViolation("conv2d: expected input rank 3 and weight rank 4, got " +
                                shape_str(x->shape) + " and " + shape_str(w->shape));
    const int in_c = x->shape[0], h = x->shape[1], wd = x->shape[2];
    const int out_c = w->shape[0], kh = w->shape[2], kw = w->shape[3];
    if (w->shape[1] != in_c)
        throw ContractViolation("conv2d: channel mismatch, input " + shape_str(x->shape) +
                                " weight " + shape_str(w->shape));
    const int oh = h + 2 * pad - kh + 1, ow = wd + 2 * pad - kw + 1;
    if (oh < 1 || ow < 1)
        throw ContractViolation("conv2d: kernel " + shape_str(w->shape) +
                                " larger than padded input " + shape_str(x->shape));
    if (b && (b->shape.size() != 1 || b->shape[0] != out_c))
        throw ContractViolation("conv2d: bias shape " + shape_str(b->shape) +
                                " does not match weight " + shape_str(w->shape));

    auto out = detail::make_node<S>({out_c, oh, ow}, {x, w, b});
    const bool dense = kh == 1 && kw == 1 && oh == 1 && ow == 1;
    if (dense) {
        // 1x1 kernel on a 1x1 map: a plain matrix-vector product
        for (int co = 0; co < out_c; ++co) {
            const S* wrow = w->value.data() + static_cast<size_t>(co) * in_c;
            S acc = b ? b->value[co] : S(0);
            for (int ci = 0; ci < in_c; ++ci) acc += wrow[ci] * x->value[ci];
            out->value[co] = acc;
        }
    } else {
        for (int co = 0; co < out_c; ++co) {
            S* yp = out->value.data() + static_cast<size_t>(co) * oh * ow;
            if (b) std::fill(yp, yp + oh * ow, b->value[co]);
            for (int ci = 0; ci < in_c; ++ci) {
                const S* xp = x->value.data() + static_cast<size_t>(ci) * h * wd;
                const S* wp = w->value.data() + (static_cast<size_t>(co) * in_c + ci) * kh * kw;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const S wv = wp[ky * kw + kx];
                        const int oy0 = std::max(0, pad - ky), oy1 = std::min(oh, h + pad - ky);
                        const int ox0 = std::max(0, pad - kx), ox1 = std::min(ow, wd + pad - kx);
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const S* xrow = xp + (oy + ky - pad) * wd + (ox0 + kx - pad);
                            S* yrow = yp + oy * ow + ox0;
                            for (int i = 0; i < ox1 - ox0; ++i) yrow[i] += wv * xrow[i];
                        }
                    }
            }
        }
    }
    if (out->needs_grad && dense) {
        out->backprop = [in_c, out_c](Tensor<S>& self) {
            auto& x = *self.parents[0];
            auto& w = *self.parents[1];
            Tensor<S>* b = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
            const S* g = self.grad.data();
            if (b && b->needs_grad) {
                b->ensure_grad();
                for (int co = 0; co < out_c; ++co) b->grad[co] += g[co];
            }
            if (w.needs_grad) {
                w.ensure_grad();
                for (int co = 0; co < out_c; ++co) {
                    S* wrow = w.grad.data() + static_cast<size_t>(co) * in_c;
                    const S gv = g[co];
                    for (int ci = 0; ci < in_c; ++ci) wrow[ci] += gv * x.value[ci];
                }
            }
            if (x.needs_grad) {
                x.ensure_grad();
                for (int co = 0; co < out_c; ++co) {
                    const S* wrow = w.value.data() + static_cast<size_t>(co) * in_c;
                    const S gv = g[co];
                    for (int ci = 0; ci < in_c; ++ci) x.grad[ci] += gv * wrow[ci];
                }
            }
        };
    } else if (out->needs_grad) {
        const bool has_bias = static_cast<bool>(b);
        out->backprop = [in_c, h, wd, out_c, kh, kw, oh, ow, pad, has_bias](Tensor<S>& self) {
            auto& x = *self.parents[0];
            auto& w = *self.parents[1];
            Tensor<S>* b = has_bias ? self.parents[2].get() : nullptr;
            if (x.needs_grad) x.ensure_grad();
            if (w.needs_grad) w.ensure_grad();
            if (b && b->needs_grad) b->ensure_grad();
            for (int co = 0; co < out_c; ++co) {
                const S* gp = self.grad.data() + static_cast<size_t>(co) * oh * ow;
                if (b && b->needs_grad) {
                    S acc = 0;
                    for (int i = 0; i < oh * ow; ++i) acc += gp[i];
                    b->grad[co] += acc;
                }
                for (int ci = 0; ci < in_c; ++ci) {
                    const S* xp = x.value.data() + static_cast<size_t>(ci) * h * wd;
                    const size_t wb = (static_cast<size_t>(co) * in_c + ci) * kh * kw;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int oy0 = std::max(0, pad - ky), oy1 = std::min(oh, h + pad - ky);
                            const int ox0 = std::max(0, pad - kx), ox1 = std::min(ow, wd + pad - kx);
                            if (w.needs_grad) {
                                S acc = 0;
                                for (int oy = oy0; oy < oy1; ++oy) {
                                    const S* xrow = xp + (oy + ky - pad) * wd + (ox0 + kx - pad);
                                    const S* grow = gp + oy * ow + ox0;
                                    for (int i = 0; i < ox1 - ox0; ++i) acc += xrow[i] * grow[i];
                                }
                                w.grad[wb + ky * kw + kx] += acc;
                            }
                            if (x.needs_grad) {
                                const S wv = w.value[wb + ky * kw + kx];
                                S* dxp = x.grad.data() + static_cast<size_t>(ci) * h * wd;
                                for (int oy = oy0; oy < oy1; ++oy) {
                                    S* dxrow = dxp + (oy + ky - pad) * wd + (ox0 + kx - pad);
                                    const S* grow = gp + oy * ow + ox0;
                                    for (int i = 0; i < ox1 - ox0; ++i) dxrow[i] += wv * grow[i];
                                }
                            }
                        }
                }
            }
        };
    }
    return out;
}

// 1-D cross-correlation: x [inC,L], w [outC,inC,k], optional b [outC]
template <class S>
TensorPtr<S> conv1d(const TensorPtr<S>& x, const TensorPtr<S>& w, const TensorPtr<S>& b,
                    int pad) {
    if (x->shape.size() != 2 || w->shape.size() != 3)
        throw ContractViolation("conv1d: expected input rank 2 and weight rank 3, got " +
                                shape_str(x->shape) + " and " + shape_str(w->shape));
    const int in_c = x->shape[0], len = x->shape[1];
    const int out_c = w->shape[0], k = w->shape[2];
    if (w->shape[1] != in_c)
        throw ContractViolation("conv1d: channel mismatch, input " + shape_str(x->shape) +
                                " weight " + shape_str(w->shape));
    const int ol = len + 2 * pad - k + 1;
    if (ol < 1)
        throw ContractViolation("conv1d: kernel " + shape_str(w->shape) +
                                " larger than padded input " + shape_str(x->shape));
    if (b && (b->shape.size() != 1 || b->shape[0] != out_c))
        throw ContractViolation("conv1d: bias shape " + shape_str(b->shape) +
                                " does not match weight " + shape_str(w->shape));

    auto out = detail::make_node<S>({out_c, ol}, {x, w, b});
    for (int co = 0; co < out_c; ++co) {
        S* yp = out->value.data() + static_cast<size_t>(co) * ol;
        if (b) std::fill(yp, yp + ol, b->value[co]);
        for (int ci = 0; ci < in_c; ++ci) {
            const S* xp = x->value.data() + static_cast<size_t>(ci) * len;
            const S* wp = w->value.data() + (static_cast<size_t>(co) * in_c + ci) * k;
            for (int kx = 0; kx < k; ++kx) {
                const S wv = wp[kx];
                const int o0 = std::max(0, pad - kx), o1 = std::min(ol, len + pad - kx);
                const S* xrow = xp + (o0 + kx - pad);
                for (int o = o0; o < o1; ++o) yp[o] += wv * xrow[o - o0];
            }
        }
    }
    if (out->needs_grad) {
        const bool has_bias = static_cast<bool>(b);
        out->backprop = [in_c, len, out_c, k, ol, pad, has_bias](Tensor<S>& self) {
            auto& x = *self.parents[0];
            auto& w = *self.parents[1];
            Tensor<S>* b = has_bias ? self.parents[2].get() : nullptr;
            if (x.needs_grad) x.ensure_grad();
            if (w.needs_grad) w.ensure_grad();
            if (b && b->needs_grad) b->ensure_grad();
            for (int co = 0; co < out_c; ++co) {
                const S* gp = self.grad.data() + static_cast<size_t>(co) * ol;
                if (b && b->needs_grad) {
                    S acc = 0;
                    for (int i = 0; i < ol; ++i) acc += gp[i];
                    b->grad[co] += acc;
                }
                for (int ci = 0; ci < in_c; ++ci) {
                    const S* xp = x.value.data() + static_cast<size_t>(ci) * len;
                    const size_t wb = (static_cast<size_t>(co) * in_c + ci) * k;
                    for (int kx = 0; kx < k; ++kx) {
                        const int o0 = std::max(0, pad - kx), o1 = std::min(ol, len + pad - kx);
                        if (w.needs_grad) {
                            S acc = 0;
                            for (int o = o0; o < o1; ++o) acc += xp[o + kx - pad] * gp[o];
                            w.grad[wb + kx] += acc;
                        }
                        if (x.needs_grad) {
                            const S wv = w.value[wb + kx];
                            S* dxp = x.grad.data() + static_cast<size_t>(ci) * len;
                            for (int o = o0; o < o1; ++o) dxp[o + kx - pad] += wv * gp[o];
                        }
                    }
                }
            }
        };
    }
    return out;
}

// transposed 2-D convolution (upsampling): x [inC,H,W], w [inC,outC,kh,kw].
// Output spatial dims: (H-1)*stride + kh.
template <class S>
TensorPtr<S> conv_transpose2d(const TensorPtr<S>& x, const TensorPtr<S>& w,
                              const TensorPtr<S>& b, int stride) {
    if (x->shape.size() != 3 || w->shape.size() != 4)
        throw ContractViolation("conv_transpose2d: expected input rank 3 and weight rank 4, got " +
                                shape_str(x->shape) + " and " + shape_str(w->shape));
    const int in_c = x->shape[0], h = x->shape[1], wd = x->shape[2];
    const int out_c = w->shape[1], kh = w->shape[2], kw = w->shape[3];
    if (w->shape[0] != in_c)
        throw ContractViolation("conv_transpose2d: channel mismatch, input " +
                                shape_str(x->shape) + " weight " + shape_str(w->shape));
    if (b && (b->shape.size() != 1 || b->shape[0] != out_c))
        throw ContractViolation("conv_transpose2d: bias shape " + shape_str(b->shape) +
                                " does not match weight " + shape_str(w->shape));
    const int oh = (h - 1) * stride + kh, ow = (wd - 1) * stride + kw;

    auto out = detail::make_node<S>({out_c, oh, ow}, {x, w, b});
    for (int co = 0; co < out_c; ++co) {
        S* yp = out->value.data() + static_cast<size_t>(co) * oh * ow;
        if (b) std::fill(yp, yp + oh * ow, b->value[co]);
    }
    for (int ci = 0; ci < in_c; ++ci) {
        const S* xp = x->value.data() + static_cast<size_t>(ci) * h * wd;
        for (int co = 0; co < out_c; ++co) {
            S* yp = out->value.data() + static_cast<size_t>(co) * oh * ow;
            const S* wp = w->value.data() + (static_cast<size_t>(ci) * out_c + co) * kh * kw;
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const S wv = wp[ky * kw + kx];
                    for (int iy = 0; iy < h; ++iy) {
                        const S* xrow = xp + iy * wd;
                        S* yrow = yp + (iy * stride + ky) * ow + kx;
                        for (int ix = 0; ix < wd; ++ix) yrow[ix * stride] += wv * xrow[ix];
                    }
                }
        }
    }
    if (out->needs_grad) {
        const bool has_bias = static_cast<bool>(b);
        out->backprop = [in_c, h, wd, out_c, kh, kw, oh, ow, stride, has_bias](Tensor<S>& self) {
            auto& x = *self.parents[0];
            auto& w = *self.parents[1];
            Tensor<S>* b = has_bias ? self.parents[2].get() : nullptr;
            if (x.needs_grad) x.ensure_grad();
            if (w.needs_grad) w.ensure_grad();
            if (b && b->needs_grad) {
                b->ensure_grad();
                for (int co = 0; co < out_c; ++co) {
                    const S* gp = self.grad.data() + static_cast<size_t>(co) * oh * ow;
                    S acc = 0;
                    for (int i = 0; i < oh * ow; ++i) acc += gp[i];
                    b->grad[co] += acc;
                }
            }
            for (int ci = 0; ci < in_c; ++ci) {
                const S* xp = x.value.data() + static_cast<size_t>(ci) * h * wd;
                S* dxp = x.needs_grad ? x.grad.data() + static_cast<size_t>(ci) * h * wd : nullptr;
                for (int co = 0; co < out_c; ++co) {
                    const S* gp = self.grad.data() + static_cast<size_t>(co) * oh * ow;
                    const size_t wb = (static_cast<size_t>(ci) * out_c + co) * kh * kw;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            if (w.needs_grad) {
                                S acc = 0;
                                for (int iy = 0; iy < h; ++iy) {
                                    const S* xrow = xp + iy * wd;
                                    const S* grow = gp + (iy * stride + ky) * ow + kx;
                                    for (int ix = 0; ix < wd; ++ix) acc += xrow[ix] * grow[ix * stride];
                                }
                                w.grad[wb + ky * kw + kx] += acc;
                            }
                            if (x.needs_grad) {
                                const S wv = w.value[wb + ky * kw + kx];
                                for (int iy = 0; iy < h; ++iy) {
                                    S* dxrow = dxp + iy * wd;
                                    const S* grow = gp + (iy * stride + ky) * ow + kx;
                                    for (int ix = 0; ix < wd; ++ix) dxrow[ix] += wv * grow[ix * stride];
                                }
                            }
                        }
                }
            }
        };
    }
    return out;
}

// k x k max pooling with stride k; spatial dims must be divisible by k
template <class S>
TensorPtr<S> maxpool2d(const TensorPtr<S>& x, int k) {
    if (x->shape.size() != 3)
        throw ContractViolation("maxpool2d: expected rank-3 input, got " + shape_str(x->shape));
    const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
    if (h % k != 0 || w % k != 0)
        throw ContractViolation("maxpool2d: input " + shape_str(x->shape) +
                                " not divisible by pool size " + std::to_string(k));
    const int oh = h / k, ow = w / k;
    auto out = detail::make_node<S>({c, oh, ow}, {x});
    std::vector<int> argmax(out->size());
    for (int ci = 0; ci < c; ++ci) {
        const S* xp = x->value.data() + static_cast<size_t>(ci) * h * w;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                int best = (oy * k) * w + ox * k;
                S bv = xp[best];
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx) {
                        const int idx = (oy * k + dy) * w + ox * k + dx;
                        if (xp[idx] > bv) {
                            bv = xp[idx];
                            best = idx;
                        }
                    }
                const size_t o = (static_cast<size_t>(ci) * oh + oy) * ow + ox;
                out->value[o] = bv;
                argmax[o] = best;
            }
    }
    if (out->needs_grad)
        out->backprop = [argmax = std::move(argmax), c, h, w, oh, ow](Tensor<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int ci = 0; ci < c; ++ci) {
                S* dxp = p.grad.data() + static_cast<size_t>(ci) * h * w;
                const size_t base = static_cast<size_t>(ci) * oh * ow;
                for (int i = 0; i < oh * ow; ++i) dxp[argmax[base + i]] += self.grad[base + i];
            }
        };
    return out;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

// Running statistics owned by the layer; updated only in training mode.
template <class S>
struct BatchNormState {
    std::vector<S> running_mean;
    std::vector<S> running_var;
    S momentum = S(0.1);
    S eps = S(1e-5);

    explicit BatchNormState(int channels = 0)
        : running_mean(channels, S(0)), running_var(channels, S(1)) {}
};

// Per-channel normalization of a [C,H,W] map over its spatial extent.
template <class S>
TensorPtr<S> batchnorm2d(const TensorPtr<S>& x, const TensorPtr<S>& gamma,
                         const TensorPtr<S>& beta, BatchNormState<S>& st, bool training) {
    if (x->shape.size() != 3)
        throw ContractViolation("batchnorm2d: expected rank-3 input, got " + shape_str(x->shape));
    const int c = x->shape[0];
    const int n = x->shape[1] * x->shape[2];
    if (gamma->size() != static_cast<size_t>(c) || beta->size() != static_cast<size_t>(c) ||
        st.running_mean.size() != static_cast<size_t>(c))
        throw ContractViolation("batchnorm2d: parameter size does not match channels of " +
                                shape_str(x->shape));

    auto out = detail::make_node<S>(x->shape, {x, gamma, beta});
    std::vector<S> xhat(x->size());
    std::vector<S> inv_std(c);
    if (training) {
        for (int ci = 0; ci < c; ++ci) {
            const S* xp = x->value.data() + static_cast<size_t>(ci) * n;
            S mean = 0;
            for (int i = 0; i < n; ++i) mean += xp[i];
            mean /= S(n);
            S var = 0;
            for (int i = 0; i < n; ++i) {
                const S d = xp[i] - mean;
                var += d * d;
            }
            var /= S(n);
            inv_std[ci] = S(1) / std::sqrt(var + st.eps);
            S* xh = xhat.data() + static_cast<size_t>(ci) * n;
            S* yp = out->value.data() + static_cast<size_t>(ci) * n;
            for (int i = 0; i < n; ++i) {
                xh[i] = (xp[i] - mean) * inv_std[ci];
                yp[i] = gamma->value[ci] * xh[i] + beta->value[ci];
            }
            const S unbiased = n > 1 ? var * S(n) / S(n - 1) : var;
            st.running_mean[ci] = (S(1) - st.momentum) * st.running_mean[ci] + st.momentum * mean;
            st.running_var[ci] = (S(1) - st.momentum) * st.running_var[ci] + st.momentum * unbiased;
        }
    } else {
        for (int ci = 0; ci < c; ++ci) {
            const S* xp = x->value.data() + static_cast<size_t>(ci) * n;
            inv_std[ci] = S(1) / std::sqrt(st.running_var[ci] + st.eps);
            S* xh = xhat.data() + static_cast<size_t>(ci) * n;
            S* yp = out->value.data() + static_cast<size_t>(ci) * n;
            for (int i = 0; i < n; ++i) {
                xh[i] = (xp[i] - st.running_mean[ci]) * inv_std[ci];
                yp[i] = gamma->value[ci] * xh[i] + beta->value[ci];
            }
        }
    }
    if (out->needs_grad)
        out->backprop = [xhat = std::move(xhat), inv_std = std::move(inv_std), c, n,
                         training](Tensor<S>& self) {
            auto& x = *self.parents[0];
            auto& gamma = *self.parents[1];
            auto& beta = *self.parents[2];
            if (x.needs_grad) x.ensure_grad();
            if (gamma.needs_grad) gamma.ensure_grad();
            if (beta.needs_grad) beta.ensure_grad();
            for (int ci = 0; ci < c; ++ci) {
                const size_t base = static_cast<size_t>(ci) * n;
                const S* g = self.grad.data() + base;
                const S* xh = xhat.data() + base;
                S sum_g = 0, sum_gx = 0;
                for (int i = 0; i < n; ++i) {
                    sum_g += g[i];
                    sum_gx += g[i] * xh[i];
                }
                if (beta.needs_grad) beta.grad[ci] += sum_g;
                if (gamma.needs_grad) gamma.grad[ci] += sum_gx;
                if (x.needs_grad) {
                    S* dx = x.grad.data() + base;
                    const S gm = gamma.value[ci] * inv_std[ci];
                    if (training) {
                        const S mg = sum_g / S(n), mgx = sum_gx / S(n);
                        for (int i = 0; i < n; ++i) dx[i] += gm * (g[i] - mg - xh[i] * mgx);
                    } else {
                        for (int i = 0; i < n; ++i) dx[i] += gm * g[i];
                    }
                }
            }
        };
    return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

inline constexpr double kProbClamp = 1e-7;

// Mean over spatial locations of -log p[label]; probs [C,H,W] channel-normalized.
template <class S>
TensorPtr<S> cross_entropy_mean(const TensorPtr<S>& probs, const std::vector<int>& labels) {
    if (probs->shape.size() != 3)
        throw ContractViolation("cross_entropy_mean: expected rank-3 probs, got " +
                                shape_str(probs->shape));
    const int c = probs->shape[0];
    const int hw = probs->shape[1] * probs->shape[2];
    if (labels.size() != static_cast<size_t>(hw))
        throw ContractViolation("cross_entropy_mean: label count " +
                                std::to_string(labels.size()) + " does not match probs " +
                                shape_str(probs->shape));
    for (int i = 0; i < hw; ++i)
        if (labels[i] < 0 || labels[i] >= c)
            throw ContractViolation("cross_entropy_mean: label " + std::to_string(labels[i]) +
                                    " out of range [0, " + std::to_string(c) + ")");
    auto out = detail::make_node<S>({1}, {probs});
    const S clamp = S(kProbClamp);
    S acc = 0;
    for (int i = 0; i < hw; ++i) {
        const S p = probs->value[static_cast<size_t>(labels[i]) * hw + i];
        acc -= std::log(std::max(p, clamp));
    }
    out->value[0] = acc / S(hw);
    if (out->needs_grad)
        out->backprop = [labels, c, hw, clamp](Tensor<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            const S g = self.grad[0] / S(hw);
            for (int i = 0; i < hw; ++i) {
                const size_t k = static_cast<size_t>(labels[i]) * hw + i;
                if (p.value[k] > clamp) p.grad[k] -= g / p.value[k];
            }
        };
    return out;
}

// Mean over entries of -[t log p + (1 - t) log(1 - p)]; targets must be 0 or 1.
template <class S>
TensorPtr<S> bce_mean(const TensorPtr<S>& pred, const std::vector<S>& target) {
    if (pred->size() != target.size())
        throw ContractViolation("bce_mean: prediction " + shape_str(pred->shape) + " has " +
                                std::to_string(pred->size()) + " entries, target has " +
                                std::to_string(target.size()));
    for (S t : target)
        if (t != S(0) && t != S(1))
            throw ContractViolation("bce_mean: target entry not in {0, 1}");
    const size_t n = pred->size();
    const S lo = S(kProbClamp), hi = S(1) - S(kProbClamp);
    auto out = detail::make_node<S>({1}, {pred});
    S acc = 0;
    for (size_t i = 0; i < n; ++i) {
        const S p = std::clamp(pred->value[i], lo, hi);
        acc -= target[i] == S(1) ? std::log(p) : std::log(S(1) - p);
    }
    out->value[0] = acc / S(n);
    if (out->needs_grad)
        out->backprop = [target, n, lo, hi](Tensor<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            const S g = self.grad[0] / S(n);
            for (size_t i = 0; i < n; ++i) {
                const S v = p.value[i];
                if (v <= lo || v >= hi) continue;  // clamped region is flat
                p.grad[i] += g * (v - target[i]) / (v * (S(1) - v));
            }
        };
    return out;
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar root. Gradients accumulate additively into
// every participating tensor's grad.
template <class S>
void backward(const TensorPtr<S>& root) {
    if (root->size() != 1)
        throw ContractViolation("backward: root must be scalar, got " + shape_str(root->shape));
    if (root->backward_done)
        throw ContractViolation("backward: called twice on the same forward pass");
    root->backward_done = true;
    if (!root->needs_grad) return;

    // iterative DFS postorder: parents land before children
    std::vector<Tensor<S>*> order;
    std::unordered_set<Tensor<S>*> seen;
    std::vector<std::pair<Tensor<S>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor<S>* parent = node->parents[next++].get();
            if (parent->needs_grad && seen.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad.assign(1, S(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

}  // namespace tloc
