#pragma once

#include <string>
#include <utility>
#include <vector>

#include "deepsim/metrics.hpp"
#include "deepsim/tensor.hpp"
#include "deepsim/warp.hpp"

namespace deepsim {

struct UNetConfig {
    int stages = 3;
    std::vector<int> channels = {16, 32, 64};  // paper-scale 2d: {64, 128, 256}
    bool shortcuts = true;                     // false for the autoencoder
    int in_channels = 1;
    int out_channels = 1;
    Activation final_activation = Activation::linear;
    real dropout_p = real(0.1);
    int smoothing_convs = 3;
    real leaky_slope = real(0.2);
    bool zero_init_final = false;  // identity transform at the start of training

    void validate() const {
        DEEPSIM_CHECK(stages >= 1, "unet: stages must be >= 1");
        DEEPSIM_CHECK(static_cast<int>(channels.size()) == stages,
                      "unet: channels list has ", channels.size(), " entries for ", stages,
                      " stages");
        for (int c : channels)
            DEEPSIM_CHECK(c >= 1, "unet: invalid channel progression (got ", c, ")");
        DEEPSIM_CHECK(in_channels >= 1 && out_channels >= 1, "unet: channel counts must be >= 1");
        DEEPSIM_CHECK(smoothing_convs >= 1, "unet: needs at least one smoothing convolution");
        DEEPSIM_CHECK(dropout_p >= 0 && dropout_p < 1, "unet: dropout_p must be in [0,1)");
    }
};

namespace detail {

struct ConvLayer {
    Tensor weight;  // [Cout,Cin,3,3]
    Tensor bias;    // [Cout]
};

struct BnLayer {
    Tensor gamma, beta;
    std::vector<real> running_mean, running_var;
};

inline ConvLayer make_conv(int cin, int cout, Rng& rng, bool zero_init = false) {
    ConvLayer l;
    if (zero_init) {
        l.weight = Tensor::zeros({cout, cin, 3, 3}, true);
    } else {
        real stddev = static_cast<real>(std::sqrt(2.0 / (static_cast<double>(cin) * 9.0)));
        l.weight = Tensor::randn({cout, cin, 3, 3}, rng, stddev, true);
    }
    l.bias = Tensor::zeros({cout}, true);
    return l;
}

inline BnLayer make_bn(int c) {
    BnLayer l;
    l.gamma = Tensor::full({c}, real(1), true);
    l.beta = Tensor::zeros({c}, true);
    l.running_mean.assign(static_cast<std::size_t>(c), real(0));
    l.running_var.assign(static_cast<std::size_t>(c), real(1));
    return l;
}

}  // namespace detail

// Encoder-decoder network following one fixed stage recipe: each encoder
// stage is batch-norm, two 3x3 convolutions with LeakyReLU, dropout, and a
// 2x2 average pool; the decoder mirrors it with nearest-neighbor upsampling
// plus convolution, concatenating the matching encoder activation when
// shortcuts are enabled; a few smoothing convolutions and the final
// activation produce the output.
class Network {
public:
    Network() = default;

    const UNetConfig& config() const { return config_; }
    bool training() const { return training_; }
    void set_train() { training_ = true; }
    void set_eval() { training_ = false; }
    void seed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

    static Network build(const UNetConfig& config, Rng& rng) {
        config.validate();
        Network net;
        net.config_ = config;
        int prev = config.in_channels;
        for (int i = 0; i < config.stages; ++i) {
            EncoderStage st;
            st.bn = detail::make_bn(prev);
            st.conv1 = detail::make_conv(prev, config.channels[i], rng);
            st.conv2 = detail::make_conv(config.channels[i], config.channels[i], rng);
            net.enc_.push_back(std::move(st));
            prev = config.channels[i];
        }
        for (int l = config.stages - 1; l >= 0; --l) {
            DecoderStage st;
            int cin = (l == config.stages - 1) ? config.channels[l] : config.channels[l + 1];
            st.conv1 = detail::make_conv(cin, config.channels[l], rng);
            if (config.shortcuts)
                st.conv2 = detail::make_conv(2 * config.channels[l], config.channels[l], rng);
            net.dec_.push_back(std::move(st));
        }
        int c0 = config.channels[0];
        for (int j = 0; j < config.smoothing_convs; ++j) {
            bool last = j == config.smoothing_convs - 1;
            int cout = last ? config.out_channels : c0;
            net.smooth_.push_back(detail::make_conv(c0, cout, rng, last && config.zero_init_final));
        }
        net.dropout_rng_.seed(rng());
        return net;
    }

    Tensor forward(const Tensor& x) {
        check_input(x);
        std::vector<Tensor> taps;
        Tensor h = encode(x, &taps, training_);
        for (std::size_t d = 0; d < dec_.size(); ++d) {
            int level = config_.stages - 1 - static_cast<int>(d);
            h = upsample_nn2x(h);
            h = leaky_relu(conv(dec_[d].conv1, h), config_.leaky_slope);
            if (config_.shortcuts) {
                h = concat_channels(h, taps[static_cast<std::size_t>(level)]);
                h = leaky_relu(conv(dec_[d].conv2, h), config_.leaky_slope);
            }
        }
        for (std::size_t j = 0; j + 1 < smooth_.size(); ++j)
            h = leaky_relu(conv(smooth_[j], h), config_.leaky_slope);
        h = conv(smooth_.back(), h);
        return map_activation(h, config_.final_activation);
    }

    // Encoder activations (after each stage's second convolution+activation,
    // before pooling), always computed in eval mode. Does not mutate the
    // network, so concurrent feature extraction is safe.
    FeaturePyramid forward_features(const Tensor& x) {
        check_input(x);
        std::vector<Tensor> taps;
        encode(x, &taps, /*train=*/false);
        return taps;
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() {
        std::vector<std::pair<std::string, Tensor>> out;
        for (std::size_t i = 0; i < enc_.size(); ++i) {
            std::string p = "enc" + std::to_string(i);
            out.emplace_back(p + ".bn.gamma", enc_[i].bn.gamma);
            out.emplace_back(p + ".bn.beta", enc_[i].bn.beta);
            out.emplace_back(p + ".conv1.weight", enc_[i].conv1.weight);
            out.emplace_back(p + ".conv1.bias", enc_[i].conv1.bias);
            out.emplace_back(p + ".conv2.weight", enc_[i].conv2.weight);
            out.emplace_back(p + ".conv2.bias", enc_[i].conv2.bias);
        }
        for (std::size_t d = 0; d < dec_.size(); ++d) {
            int level = config_.stages - 1 - static_cast<int>(d);
            std::string p = "dec" + std::to_string(level);
            out.emplace_back(p + ".conv1.weight", dec_[d].conv1.weight);
            out.emplace_back(p + ".conv1.bias", dec_[d].conv1.bias);
            if (config_.shortcuts) {
                out.emplace_back(p + ".conv2.weight", dec_[d].conv2.weight);
                out.emplace_back(p + ".conv2.bias", dec_[d].conv2.bias);
            }
        }
        for (std::size_t j = 0; j < smooth_.size(); ++j) {
            std::string p = "smooth" + std::to_string(j);
            out.emplace_back(p + ".weight", smooth_[j].weight);
            out.emplace_back(p + ".bias", smooth_[j].bias);
        }
        return out;
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }

    std::vector<std::pair<std::string, std::vector<real>*>> named_buffers() {
        std::vector<std::pair<std::string, std::vector<real>*>> out;
        for (std::size_t i = 0; i < enc_.size(); ++i) {
            std::string p = "enc" + std::to_string(i);
            out.emplace_back(p + ".bn.running_mean", &enc_[i].bn.running_mean);
            out.emplace_back(p + ".bn.running_var", &enc_[i].bn.running_var);
        }
        return out;
    }

    void freeze() {
        for (auto& t : parameters()) {
            t.set_requires_grad(false);
            t.clear_grad();  // drop stale training gradients: a populated grad
                             // after freezing means the freeze was violated
        }
    }

    bool any_parameter_grad_populated() {
        for (auto& t : parameters())
            if (t.has_grad()) return true;
        return false;
    }

    // Full numeric state (parameters then buffers), for in-memory checkpoints.
    std::vector<std::vector<real>> state_values() {
        std::vector<std::vector<real>> out;
        for (auto& t : parameters()) out.push_back(t.values());
        for (auto& [name, b] : named_buffers()) out.push_back(*b);
        return out;
    }

    void load_state_values(const std::vector<std::vector<real>>& state) {
        auto params = parameters();
        auto buffers = named_buffers();
        DEEPSIM_CHECK(state.size() == params.size() + buffers.size(),
                      "state snapshot does not match network layout");
        std::size_t k = 0;
        for (auto& t : params) {
            DEEPSIM_CHECK(state[k].size() == t.values().size(), "state entry ", k, " size mismatch");
            t.mutable_values() = state[k++];
        }
        for (auto& [name, b] : buffers) {
            DEEPSIM_CHECK(state[k].size() == b->size(), "state entry ", k, " size mismatch");
            *b = state[k++];
        }
    }

    Network clone() {
        Network out;
        out.config_ = config_;
        out.training_ = training_;
        out.dropout_rng_ = dropout_rng_;
        for (auto& st : enc_) {
            EncoderStage c;
            c.bn.gamma = st.bn.gamma.clone();
            c.bn.beta = st.bn.beta.clone();
            c.bn.running_mean = st.bn.running_mean;
            c.bn.running_var = st.bn.running_var;
            c.conv1 = {st.conv1.weight.clone(), st.conv1.bias.clone()};
            c.conv2 = {st.conv2.weight.clone(), st.conv2.bias.clone()};
            out.enc_.push_back(std::move(c));
        }
        for (auto& st : dec_) {
            DecoderStage c;
            c.conv1 = {st.conv1.weight.clone(), st.conv1.bias.clone()};
            if (config_.shortcuts) c.conv2 = {st.conv2.weight.clone(), st.conv2.bias.clone()};
            out.dec_.push_back(std::move(c));
        }
        for (auto& st : smooth_) out.smooth_.push_back({st.weight.clone(), st.bias.clone()});
        return out;
    }

private:
    struct EncoderStage {
        detail::BnLayer bn;
        detail::ConvLayer conv1, conv2;
    };
    struct DecoderStage {
        detail::ConvLayer conv1, conv2;
    };

    void check_input(const Tensor& x) const {
        DEEPSIM_CHECK(x.shape().size() == 4, "network input must be NCHW, got ",
                      shape_str(x.shape()));
        DEEPSIM_CHECK(x.shape()[1] == config_.in_channels, "network expects ",
                      config_.in_channels, " input channels, got ", x.shape()[1]);
        int H = x.shape()[2], W = x.shape()[3];
        int div = 1 << config_.stages;
        DEEPSIM_CHECK(H % div == 0 && W % div == 0, "input extents ", H, "x", W,
                      " must be divisible by 2^stages = ", div);
    }

    Tensor conv(detail::ConvLayer& l, const Tensor& x) { return conv2d(x, l.weight, l.bias, 1); }

    Tensor encode(const Tensor& x, std::vector<Tensor>* taps, bool train) {
        Tensor h = x;
        for (auto& st : enc_) {
            h = batch_norm2d(h, st.bn.gamma, st.bn.beta, st.bn.running_mean, st.bn.running_var,
                             train);
            h = leaky_relu(conv(st.conv1, h), config_.leaky_slope);
            h = leaky_relu(conv(st.conv2, h), config_.leaky_slope);
            if (taps) taps->push_back(h);
            h = dropout(h, config_.dropout_p, train, dropout_rng_);
            h = pool_avg2x2(h);
        }
        return h;
    }

    UNetConfig config_;
    std::vector<EncoderStage> enc_;
    std::vector<DecoderStage> dec_;
    std::vector<detail::ConvLayer> smooth_;
    bool training_ = false;
    Rng dropout_rng_{0};
};

inline Network build_unet(const UNetConfig& config, Rng& rng) { return Network::build(config, rng); }

// Ready-made configurations for the three model roles.
inline UNetConfig registration_config(std::vector<int> channels = {16, 32, 64}) {
    UNetConfig c;
    c.channels = std::move(channels);
    c.stages = static_cast<int>(c.channels.size());
    c.shortcuts = true;
    c.in_channels = 2;
    c.out_channels = 2;
    c.final_activation = Activation::linear;
    c.zero_init_final = true;
    return c;
}

inline UNetConfig segmentation_config(int num_classes, std::vector<int> channels = {16, 32, 64}) {
    UNetConfig c;
    c.channels = std::move(channels);
    c.stages = static_cast<int>(c.channels.size());
    c.shortcuts = true;
    c.in_channels = 1;
    c.out_channels = num_classes;
    c.final_activation = Activation::softmax_channels;
    return c;
}

inline UNetConfig autoencoder_config(std::vector<int> channels = {16, 32, 64}) {
    UNetConfig c;
    c.channels = std::move(channels);
    c.stages = static_cast<int>(c.channels.size());
    c.shortcuts = false;
    c.in_channels = 1;
    c.out_channels = 1;
    c.final_activation = Activation::sigmoid;
    return c;
}

// The two-channel (moving, fixed) concatenation mapped to a displacement field.
inline DisplacementField forward_registration(Network& net, const Tensor& moving,
                                              const Tensor& fixed) {
    DEEPSIM_CHECK(net.config().out_channels == 2 && net.config().in_channels == 2,
                  "forward_registration: network is not configured for registration");
    DEEPSIM_CHECK(moving.shape() == fixed.shape(), "forward_registration: shape mismatch ",
                  shape_str(moving.shape()), " vs ", shape_str(fixed.shape()));
    return DisplacementField(net.forward(concat_channels(moving, fixed)));
}

inline Tensor forward_segmentation(Network& net, const Tensor& image) {
    DEEPSIM_CHECK(net.config().final_activation == Activation::softmax_channels,
                  "forward_segmentation: network lacks a softmax output");
    return net.forward(image);
}

inline Tensor forward_autoencoder(Network& net, const Tensor& image) {
    DEEPSIM_CHECK(!net.config().shortcuts,
                  "forward_autoencoder: autoencoders are built without shortcuts");
    return net.forward(image);
}

// Adapter used as the frozen extractor inside the deepsim metric. The caller
// keeps `net` alive for the lifetime of the returned function.
inline FeatureFn make_feature_fn(Network& net) {
    return [&net](const Tensor& x) { return net.forward_features(x); };
}

}  // namespace deepsim
