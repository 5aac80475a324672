#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tloc/checkpoint.hpp"
#include "tloc/datagen.hpp"
#include "tloc/filter.hpp"
#include "tloc/nn.hpp"
#include "tloc/rng.hpp"
#include "tloc/simworld.hpp"
#include "tloc/tensor.hpp"

namespace tloc {

enum class DecodeMode : uint8_t { ExpectedBin = 0, ArgmaxBin = 1 };

// Decodes an [N,H,W] class distribution into the scalar map multiplied into
// the belief: expected bin value k/(N-1), or the argmax bin.
template <class S>
LikelihoodMap likelihood_scalar(const Tensor<S>& probs, DecodeMode mode = DecodeMode::ExpectedBin) {
    if (probs.shape.size() != 3)
        throw ContractViolation("likelihood_scalar: expected [N,H,W] probs, got " +
                                shape_str(probs.shape));
    const int n = probs.shape[0], h = probs.shape[1], w = probs.shape[2];
    const int hw = h * w;
    LikelihoodMap map(h, w);
    for (int i = 0; i < hw; ++i) {
        if (mode == DecodeMode::ExpectedBin) {
            double acc = 0;
            for (int c = 0; c < n; ++c)
                acc += static_cast<double>(probs.value[static_cast<size_t>(c) * hw + i]) * c;
            map.v[i] = acc / (n - 1);
        } else {
            int best = 0;
            for (int c = 1; c < n; ++c)
                if (probs.value[static_cast<size_t>(c) * hw + i] >
                    probs.value[static_cast<size_t>(best) * hw + i])
                    best = c;
            map.v[i] = static_cast<double>(best) / (n - 1);
        }
    }
    return map;
}

// Architecture of the image-conditioned observation network. Channel lists
// follow the 6-conv image encoder (pooling after the 4th and 6th layers),
// the 3-layer 1-D observation encoder, and the decoder with two 2x upsampling
// stages of two convolutions each. All convolutions use kernel 3 except the
// kernel-2 transposed convolutions.
struct ObservationNetConfig {
    int h = 32, w = 32;
    int k = 5;
    int n_classes = kLikelihoodClasses;
    std::vector<int> image_channels{8, 8, 16, 16, 32, 32};
    std::vector<int> obs_channels{8, 16, 32};
    std::vector<int> decoder_channels{16, 16, 8, 8};
    std::vector<int> tconv_channels{32, 16};
    bool naive = false;  // drop the image pathway, decode from touch alone

    int bottleneck_h() const { return h / 4; }
    int bottleneck_w() const { return w / 4; }
    int obs_feature_channels() const { return obs_channels.back(); }
    int decoder_in_channels() const {
        return naive ? obs_feature_channels() : image_channels.back() + obs_feature_channels();
    }

    void validate() const {
        if (h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8)
            throw ContractViolation("observation net: grid " + std::to_string(h) + "x" +
                                    std::to_string(w) + " must be divisible by 4 (two pooling and "
                                    "two upsampling stages)");
        if (k < 1 || k % 2 == 0)
            throw ContractViolation("observation net: footprint size must be odd, got " +
                                    std::to_string(k));
        if (image_channels.size() != 6)
            throw ContractViolation("observation net: image encoder needs 6 channel entries");
        if (obs_channels.size() != 3)
            throw ContractViolation("observation net: observation encoder needs 3 channel entries");
        if (decoder_channels.size() != 4 || tconv_channels.size() != 2)
            throw ContractViolation("observation net: decoder needs 4 conv + 2 transposed entries");
        if (n_classes < 2) throw ContractViolation("observation net: need at least 2 classes");
    }

    std::string describe() const {
        std::ostringstream os;
        os << "grid=" << h << "x" << w << " k=" << k << " classes=" << n_classes
           << " naive=" << (naive ? 1 : 0) << " image=";
        for (int c : image_channels) os << c << ",";
        os << " obs=";
        for (int c : obs_channels) os << c << ",";
        os << " decoder=";
        for (int c : decoder_channels) os << c << ",";
        os << " tconv=";
        for (int c : tconv_channels) os << c << ",";
        return os.str();
    }

    uint32_t hash() const {
        const std::string text = describe();
        uint32_t h32 = 2166136261u;
        for (unsigned char ch : text) {
            h32 ^= ch;
            h32 *= 16777619u;
        }
        return h32;
    }
};

namespace detail {

inline std::vector<float> to_f32(const std::vector<double>& v) {
    std::vector<float> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
}

inline std::vector<int> entry_ints(const CheckpointEntry& e) {
    std::vector<int> out(e.values.size());
    for (size_t i = 0; i < e.values.size(); ++i) out[i] = static_cast<int>(e.values[i]);
    return out;
}

}  // namespace detail

// The learnable observation model f_O: depth image and tactile observation in,
// per-pixel 16-class likelihood distribution out. The naive baseline reuses
// the same machinery without the image pathway.
template <class S = float>
struct ObservationNet {
    ObservationNetConfig cfg;

    std::vector<Conv2dLayer<S>> img_conv;
    std::vector<BatchNorm2dLayer<S>> img_bn;
    std::vector<Conv1dLayer<S>> obs_conv;
    Conv2dLayer<S> obs_proj;  // learned linear reshape, as a 1x1 convolution
    ConvTranspose2dLayer<S> up1, up2;
    std::vector<Conv2dLayer<S>> dec_conv;
    std::vector<BatchNorm2dLayer<S>> dec_bn;
    Conv2dLayer<S> head;

    ObservationNet(ObservationNetConfig config, Rng& rng) : cfg(std::move(config)) {
        cfg.validate();
        if (!cfg.naive) {
            int prev = 1;
            for (int i = 0; i < 6; ++i) {
                img_conv.emplace_back(prev, cfg.image_channels[i], 3, 1, rng);
                img_bn.emplace_back(cfg.image_channels[i]);
                prev = cfg.image_channels[i];
            }
        }
        int prev = 1;
        for (int i = 0; i < 3; ++i) {
            obs_conv.emplace_back(prev, cfg.obs_channels[i], 3, 1, rng);
            prev = cfg.obs_channels[i];
        }
        const int flat = cfg.obs_channels.back() * cfg.k * cfg.k;
        const int projected = cfg.obs_feature_channels() * cfg.bottleneck_h() * cfg.bottleneck_w();
        obs_proj = Conv2dLayer<S>(flat, projected, 1, 0, rng);

        up1 = ConvTranspose2dLayer<S>(cfg.decoder_in_channels(), cfg.tconv_channels[0], 2, 2, rng);
        dec_conv.emplace_back(cfg.tconv_channels[0], cfg.decoder_channels[0], 3, 1, rng);
        dec_conv.emplace_back(cfg.decoder_channels[0], cfg.decoder_channels[1], 3, 1, rng);
        up2 = ConvTranspose2dLayer<S>(cfg.decoder_channels[1], cfg.tconv_channels[1], 2, 2, rng);
        dec_conv.emplace_back(cfg.tconv_channels[1], cfg.decoder_channels[2], 3, 1, rng);
        dec_conv.emplace_back(cfg.decoder_channels[2], cfg.decoder_channels[3], 3, 1, rng);
        for (int i = 0; i < 4; ++i) dec_bn.emplace_back(dec_conv[i].out_c);
        head = Conv2dLayer<S>(cfg.decoder_channels[3], cfg.n_classes, 3, 1, rng);
    }

    // Applies one batchnorm layer across a batch of same-shape feature maps:
    // samples are stacked along rows so the statistics cover the whole
    // minibatch, then split back apart.
    static std::vector<TensorPtr<S>> batch_bn(const BatchNorm2dLayer<S>& bn,
                                              const std::vector<TensorPtr<S>>& xs, bool training) {
        if (xs.size() == 1) return {bn(xs[0], training)};
        const auto normed = bn(concat_rows(xs), training);
        std::vector<TensorPtr<S>> out;
        const int h = xs[0]->shape[1];
        for (size_t i = 0; i < xs.size(); ++i)
            out.push_back(slice_rows(normed, static_cast<int>(i) * h, h));
        return out;
    }

    // depth images -> per-sample [C_img, H/4, W/4]; batchnorm statistics are
    // shared across the batch in training mode
    std::vector<TensorPtr<S>> encode_image_batch(const std::vector<const std::vector<float>*>& depths,
                                                 bool training) const {
        if (cfg.naive)
            throw ContractViolation("encode_image: model has no image pathway (naive)");
        std::vector<TensorPtr<S>> xs;
        for (const auto* depth : depths) {
            if (depth->size() != static_cast<size_t>(cfg.h) * cfg.w)
                throw ContractViolation("encode_image: depth has " + std::to_string(depth->size()) +
                                        " values, expected " + std::to_string(cfg.h * cfg.w));
            std::vector<S> vals(depth->begin(), depth->end());
            xs.push_back(Tensor<S>::from({1, cfg.h, cfg.w}, std::move(vals)));
        }
        for (int i = 0; i < 6; ++i) {
            for (auto& x : xs) x = img_conv[i](x);
            xs = batch_bn(img_bn[i], xs, training);
            for (auto& x : xs) {
                x = relu(x);
                if (i == 3 || i == 5) x = maxpool2d(x, 2);
            }
        }
        return xs;
    }

    TensorPtr<S> encode_image(const std::vector<float>& depth, bool training) const {
        return encode_image_batch({&depth}, training)[0];
    }

    // tactile observation -> [C_obs, H/4, W/4]
    TensorPtr<S> encode_observation(const std::vector<float>& obs, bool training) const {
        (void)training;
        if (obs.size() != static_cast<size_t>(cfg.k) * cfg.k)
            throw ContractViolation("encode_observation: observation has " +
                                    std::to_string(obs.size()) + " readings, expected " +
                                    std::to_string(cfg.k * cfg.k));
        std::vector<S> vals(obs.begin(), obs.end());
        auto x = Tensor<S>::from({1, cfg.k * cfg.k}, std::move(vals));
        for (int i = 0; i < 3; ++i) {
            x = obs_conv[i](x);
            if (i < 2) x = relu(x);  // last layer stays linear
        }
        x = reshape(x, {cfg.obs_channels.back() * cfg.k * cfg.k, 1, 1});
        x = obs_proj(x);
        return reshape(x, {cfg.obs_feature_channels(), cfg.bottleneck_h(), cfg.bottleneck_w()});
    }

    // concatenated bottleneck features -> per-sample [N, H, W] class
    // distributions, with shared batchnorm statistics in training mode
    std::vector<TensorPtr<S>> decode_likelihood_batch(const std::vector<TensorPtr<S>>& img_feats,
                                                      const std::vector<TensorPtr<S>>& obs_feats,
                                                      bool training) const {
        std::vector<TensorPtr<S>> xs;
        for (size_t i = 0; i < obs_feats.size(); ++i) {
            if (cfg.naive) {
                xs.push_back(obs_feats[i]);
            } else {
                if (img_feats.size() <= i || !img_feats[i])
                    throw ContractViolation("decode_likelihood: image features required");
                xs.push_back(concat_channels(img_feats[i], obs_feats[i]));
            }
        }
        for (auto& x : xs) x = dec_conv[0](up1(x));
        xs = batch_bn(dec_bn[0], xs, training);
        for (auto& x : xs) x = dec_conv[1](relu(x));
        xs = batch_bn(dec_bn[1], xs, training);
        for (auto& x : xs) x = dec_conv[2](up2(relu(x)));
        xs = batch_bn(dec_bn[2], xs, training);
        for (auto& x : xs) x = dec_conv[3](relu(x));
        xs = batch_bn(dec_bn[3], xs, training);
        for (auto& x : xs) x = softmax_channels(head(relu(x)));
        return xs;
    }

    TensorPtr<S> decode_likelihood(const TensorPtr<S>& img_feat, const TensorPtr<S>& obs_feat,
                                   bool training) const {
        return decode_likelihood_batch({img_feat}, {obs_feat}, training)[0];
    }

    TensorPtr<S> forward(const std::vector<float>& depth, const std::vector<float>& obs,
                         bool training) const {
        const auto obs_feat = encode_observation(obs, training);
        if (cfg.naive) return decode_likelihood(nullptr, obs_feat, training);
        return decode_likelihood(encode_image(depth, training), obs_feat, training);
    }

    // inference-mode scalar likelihood for the filter
    LikelihoodMap likelihood(const std::vector<float>& depth, const std::vector<float>& obs,
                             DecodeMode mode = DecodeMode::ExpectedBin) const {
        const auto probs = forward(depth, obs, false);
        return likelihood_scalar(*probs, mode);
    }

    std::vector<std::pair<std::string, TensorPtr<S>>> named_parameters() const {
        std::vector<std::pair<std::string, TensorPtr<S>>> out;
        for (size_t i = 0; i < img_conv.size(); ++i) {
            out.emplace_back("img_conv" + std::to_string(i) + "/w", img_conv[i].w);
            out.emplace_back("img_conv" + std::to_string(i) + "/b", img_conv[i].b);
            out.emplace_back("img_bn" + std::to_string(i) + "/gamma", img_bn[i].gamma);
            out.emplace_back("img_bn" + std::to_string(i) + "/beta", img_bn[i].beta);
        }
        for (size_t i = 0; i < obs_conv.size(); ++i) {
            out.emplace_back("obs_conv" + std::to_string(i) + "/w", obs_conv[i].w);
            out.emplace_back("obs_conv" + std::to_string(i) + "/b", obs_conv[i].b);
        }
        out.emplace_back("obs_proj/w", obs_proj.w);
        out.emplace_back("obs_proj/b", obs_proj.b);
        out.emplace_back("up1/w", up1.w);
        out.emplace_back("up1/b", up1.b);
        out.emplace_back("up2/w", up2.w);
        out.emplace_back("up2/b", up2.b);
        for (size_t i = 0; i < dec_conv.size(); ++i) {
            out.emplace_back("dec_conv" + std::to_string(i) + "/w", dec_conv[i].w);
            out.emplace_back("dec_conv" + std::to_string(i) + "/b", dec_conv[i].b);
            out.emplace_back("dec_bn" + std::to_string(i) + "/gamma", dec_bn[i].gamma);
            out.emplace_back("dec_bn" + std::to_string(i) + "/beta", dec_bn[i].beta);
        }
        out.emplace_back("head/w", head.w);
        out.emplace_back("head/b", head.b);
        return out;
    }

    std::vector<TensorPtr<S>> parameters() const {
        std::vector<TensorPtr<S>> out;
        for (auto& [name, p] : named_parameters()) out.push_back(p);
        return out;
    }

    // batchnorm running statistics, named alongside the parameters
    std::vector<std::pair<std::string, BatchNormState<S>*>> bn_states() const {
        std::vector<std::pair<std::string, BatchNormState<S>*>> out;
        for (size_t i = 0; i < img_bn.size(); ++i)
            out.emplace_back("img_bn" + std::to_string(i), &img_bn[i].state);
        for (size_t i = 0; i < dec_bn.size(); ++i)
            out.emplace_back("dec_bn" + std::to_string(i), &dec_bn[i].state);
        return out;
    }

    std::vector<CheckpointEntry> config_entries() const {
        auto ints = [](const std::string& name, const std::vector<int>& v) {
            CheckpointEntry e;
            e.name = name;
            e.dims = {static_cast<int>(v.size())};
            for (int x : v) e.values.push_back(static_cast<float>(x));
            return e;
        };
        return {ints("config/grid", {cfg.h, cfg.w}),
                ints("config/k", {cfg.k}),
                ints("config/n_classes", {cfg.n_classes}),
                ints("config/image_channels", cfg.image_channels),
                ints("config/obs_channels", cfg.obs_channels),
                ints("config/decoder_channels", cfg.decoder_channels),
                ints("config/tconv_channels", cfg.tconv_channels),
                ints("config/naive", {cfg.naive ? 1 : 0})};
    }

    std::vector<CheckpointEntry> state_entries() const {
        std::vector<CheckpointEntry> entries = config_entries();
        for (const auto& [name, p] : named_parameters()) {
            CheckpointEntry e;
            e.name = "param/" + name;
            e.dims = p->shape;
            e.values.assign(p->value.begin(), p->value.end());
            entries.push_back(std::move(e));
        }
        for (const auto& [name, st] : bn_states()) {
            CheckpointEntry mean, var;
            mean.name = "bn/" + name + "/running_mean";
            mean.dims = {static_cast<int>(st->running_mean.size())};
            mean.values.assign(st->running_mean.begin(), st->running_mean.end());
            var.name = "bn/" + name + "/running_var";
            var.dims = {static_cast<int>(st->running_var.size())};
            var.values.assign(st->running_var.begin(), st->running_var.end());
            entries.push_back(std::move(mean));
            entries.push_back(std::move(var));
        }
        return entries;
    }

    void load_state(const std::vector<CheckpointEntry>& entries, const std::string& path) {
        for (auto& [name, p] : named_parameters()) {
            const CheckpointEntry& e = require_entry(entries, "param/" + name, path);
            if (e.dims != p->shape)
                throw CheckpointError("checkpoint " + path + " entry '" + e.name + "' has shape " +
                                      shape_str(e.dims) + ", model expects " + shape_str(p->shape));
            for (size_t i = 0; i < e.values.size(); ++i) p->value[i] = static_cast<S>(e.values[i]);
        }
        for (auto& [name, st] : bn_states()) {
            const auto& mean = require_entry(entries, "bn/" + name + "/running_mean", path);
            const auto& var = require_entry(entries, "bn/" + name + "/running_var", path);
            st->running_mean.assign(mean.values.begin(), mean.values.end());
            st->running_var.assign(var.values.begin(), var.values.end());
        }
    }

    static ObservationNetConfig config_from_entries(const std::vector<CheckpointEntry>& entries,
                                                    const std::string& path) {
        ObservationNetConfig cfg;
        const auto grid = detail::entry_ints(require_entry(entries, "config/grid", path));
        cfg.h = grid.at(0);
        cfg.w = grid.at(1);
        cfg.k = detail::entry_ints(require_entry(entries, "config/k", path)).at(0);
        cfg.n_classes = detail::entry_ints(require_entry(entries, "config/n_classes", path)).at(0);
        cfg.image_channels = detail::entry_ints(require_entry(entries, "config/image_channels", path));
        cfg.obs_channels = detail::entry_ints(require_entry(entries, "config/obs_channels", path));
        cfg.decoder_channels =
            detail::entry_ints(require_entry(entries, "config/decoder_channels", path));
        cfg.tconv_channels = detail::entry_ints(require_entry(entries, "config/tconv_channels", path));
        cfg.naive = detail::entry_ints(require_entry(entries, "config/naive", path)).at(0) != 0;
        return cfg;
    }

    static ObservationNet<S> load(const std::string& path) {
        const auto entries = read_checkpoint(path);
        Rng rng(0);
        ObservationNet<S> net(config_from_entries(entries, path), rng);
        net.load_state(entries, path);
        return net;
    }

    void save(const std::string& path) const { write_checkpoint(path, state_entries()); }
};

// Baseline 1: constant observation model p(o|s) = 1/(H*W); correction becomes
// the identity.
inline LikelihoodMap uniform_likelihood(int h, int w) {
    if (h < 1 || w < 1)
        throw ContractViolation("uniform_likelihood: grid dims must be positive");
    return LikelihoodMap(h, w, 1.0 / (static_cast<double>(h) * w));
}

// The motion model f_M: one 3x3 logit grid per action, softmax-normalized
// into a transition kernel. Logits are stored in displacement orientation
// (entry (1+dy, 1+dx) is the logit for moving by (dx, dy)).
struct MotionNet {
    std::array<TensorPtr<float>, 4> logits;

    MotionNet() {
        for (auto& l : logits) l = Tensor<float>::leaf({3, 3}, true);  // uniform kernels
    }

    MotionKernel kernel(ActionDir a) const {
        const auto& l = logits[static_cast<size_t>(a)];
        MotionKernel k;
        float m = l->value[0];
        for (float v : l->value) m = std::max(m, v);
        double total = 0;
        for (int i = 0; i < 9; ++i) {
            k.w[static_cast<size_t>(i)] = std::exp(static_cast<double>(l->value[i]) - m);
            total += k.w[static_cast<size_t>(i)];
        }
        for (auto& v : k.w) v /= total;
        return k;
    }

    // graph node [3,3] of softmax-normalized kernel weights, for training
    TensorPtr<float> kernel_node(ActionDir a) const {
        const auto& l = logits[static_cast<size_t>(a)];
        return reshape(softmax_channels(reshape(l, {9, 1, 1})), {3, 3});
    }

    std::vector<TensorPtr<float>> parameters() const {
        return {logits[0], logits[1], logits[2], logits[3]};
    }

    std::vector<CheckpointEntry> state_entries() const {
        std::vector<CheckpointEntry> entries;
        for (size_t i = 0; i < 4; ++i) {
            CheckpointEntry e;
            e.name = std::string("param/logits/") + action_name(static_cast<ActionDir>(i));
            e.dims = {3, 3};
            e.values.assign(logits[i]->value.begin(), logits[i]->value.end());
            entries.push_back(std::move(e));
        }
        return entries;
    }

    void load_state(const std::vector<CheckpointEntry>& entries, const std::string& path) {
        for (size_t i = 0; i < 4; ++i) {
            const auto& e = require_entry(
                entries, std::string("param/logits/") + action_name(static_cast<ActionDir>(i)),
                path);
            logits[i]->value.assign(e.values.begin(), e.values.end());
        }
    }

    static MotionNet load(const std::string& path) {
        MotionNet net;
        net.load_state(read_checkpoint(path), path);
        return net;
    }

    void save(const std::string& path) const { write_checkpoint(path, state_entries()); }
};

}  // namespace tloc
