#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "endol2h/autodiff.hpp"
#include "endol2h/errors.hpp"
#include "endol2h/image.hpp"
#include "endol2h/rng.hpp"
#include "endol2h/tensor.hpp"

namespace endol2h {

// Named parameter/buffer registry. Parameters are created eagerly at model
// construction so checkpoints are complete before the first forward pass;
// iteration order is creation order and is what the checkpoint format uses.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
    };

    explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

    Tensor<T>& create_param(const std::string& name, std::vector<int> shape, double stddev,
                            double mean = 0.0) {
        if (pidx_.count(name)) throw ConfigError("duplicate parameter: " + name);
        Tensor<T> t(std::move(shape));
        if (stddev > 0.0)
            for (T& v : t.data) v = static_cast<T>(rng_.normal(mean, stddev));
        else if (mean != 0.0)
            for (T& v : t.data) v = static_cast<T>(mean);
        pidx_[name] = params_.size();
        params_.push_back({name, std::move(t)});
        return params_.back().tensor;
    }

    Tensor<T>& create_buffer(const std::string& name, std::vector<int> shape, T fill = T(0)) {
        if (bidx_.count(name)) throw ConfigError("duplicate buffer: " + name);
        bidx_[name] = buffers_.size();
        buffers_.push_back({name, Tensor<T>(std::move(shape), fill)});
        return buffers_.back().tensor;
    }

    Tensor<T>& param(const std::string& name) {
        auto it = pidx_.find(name);
        if (it == pidx_.end()) throw ConfigError("unknown parameter: " + name);
        return params_[it->second].tensor;
    }
    Tensor<T>& buffer(const std::string& name) {
        auto it = bidx_.find(name);
        if (it == bidx_.end()) throw ConfigError("unknown buffer: " + name);
        return buffers_[it->second].tensor;
    }

    std::vector<Entry>& params() { return params_; }
    const std::vector<Entry>& params() const { return params_; }
    std::vector<Entry>& buffers() { return buffers_; }
    const std::vector<Entry>& buffers() const { return buffers_; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& e : params_) n += e.tensor.size();
        return n;
    }

private:
    std::vector<Entry> params_, buffers_;
    std::map<std::string, std::size_t> pidx_, bidx_;
    Rng rng_;
};

struct GeneratorConfig {
    int scale = 8;           // 8, 10 or 12
    int depth = 5;           // number of stride-2 encoder stages
    int base_channels = 16;  // channels after the first encoder conv
    int in_channels = 3;
    int out_channels = 3;
    bool use_sab = true;          // spatial attention at the bottleneck
    bool sab_downsample = false;  // attend on a 2x-pooled grid

    void validate() const {
        if (scale != 8 && scale != 10 && scale != 12)
            throw ConfigError("generator scale must be 8, 10 or 12");
        if (depth < 2) throw ConfigError("generator depth must be >= 2");
        if (base_channels < 1) throw ConfigError("generator base_channels must be >= 1");
    }

    // Deepest U-Net that still leaves a >=1 pixel bottleneck.
    static int auto_depth(int h, int w) {
        int m = std::min(h, w);
        if (m < 4) throw ConfigError("input too small for the generator (min dim >= 4)");
        return static_cast<int>(std::floor(std::log2(static_cast<double>(m))));
    }

    // Encoder stage output channels: doubling, capped at 8x base.
    int stage_channels(int i) const { return base_channels * std::min(1 << i, 8); }
};

// Attention U-Net generator. Symmetric encoder/decoder at LR resolution with
// a spatial attention block on the bottleneck, followed by three 2x
// transposed-conv stages (8x) and, for scales 10/12, a learned
// resize-convolution to land exactly on scale * input size.
template <typename T>
class Generator {
public:
    using Id = typename Tape<T>::Id;

    GeneratorConfig cfg;
    ParamStore<T> ps;
    // Tape ids of every parameter used by the latest forward, keyed by name.
    std::map<std::string, Id> param_ids;

    Generator(GeneratorConfig c, std::uint64_t seed) : cfg(c), ps(seed) {
        cfg.validate();
        int d = cfg.depth;
        for (int i = 0; i < d; ++i) {
            int cin = i == 0 ? cfg.in_channels : cfg.stage_channels(i - 1);
            int cout = cfg.stage_channels(i);
            conv_init("enc" + std::to_string(i), cin, cout, 4);
            if (i > 0 && i < d - 1) bn_init("enc" + std::to_string(i), cout);
        }
        if (cfg.use_sab) {
            int cb = cfg.stage_channels(d - 1);
            ps.create_param("sab.theta", {cb, cb}, 0.02);
            ps.create_param("sab.phi", {cb, cb}, 0.02);
            ps.create_param("sab.g", {cb, cb}, 0.02);
        }
        for (int j = 0; j < d; ++j) {
            int cin = j == 0 ? cfg.stage_channels(d - 1) : 2 * cfg.stage_channels(d - 1 - j);
            int cout = j == d - 1 ? cfg.base_channels : cfg.stage_channels(d - 2 - j);
            tconv_init("dec" + std::to_string(j), cin, cout);
            bn_init("dec" + std::to_string(j), cout);
        }
        for (int s = 0; s < 3; ++s) {
            tconv_init("tail" + std::to_string(s), cfg.base_channels, cfg.base_channels);
            bn_init("tail" + std::to_string(s), cfg.base_channels);
        }
        if (cfg.scale != 8) {
            conv_init("resize", cfg.base_channels, cfg.base_channels, 3);
            bn_init("resize", cfg.base_channels);
        }
        conv_init("out", cfg.base_channels, cfg.out_channels, 3);
    }

    // x: {N, in_channels, H, W} in [-1, 1]. rng drives dropout in training.
    Id forward(Tape<T>& t, Id x, bool training, Rng& rng) {
        param_ids.clear();
        const auto& xs = t.value(x).shape;
        int H = xs[2], W = xs[3], d = cfg.depth;
        if (std::min(H, W) < (1 << d))
            throw ConfigError("generator: input " + t.value(x).shape_str() +
                              " too small for depth " + std::to_string(d) +
                              "; min dimension must be >= " + std::to_string(1 << d));

        std::vector<Id> skips;
        std::vector<std::pair<int, int>> sizes;
        Id cur = x;
        for (int i = 0; i < d; ++i) {
            std::string nm = "enc" + std::to_string(i);
            cur = t.conv2d(cur, use(t, nm + ".w", training), use(t, nm + ".b", training), 2, 1,
                           nm);
            if (i > 0 && i < d - 1) cur = bn(t, nm, cur, training);
            cur = t.leaky_relu(cur, 0.2);
            if (i < d - 1) {
                skips.push_back(cur);
                const auto& s = t.value(cur).shape;
                sizes.push_back({s[2], s[3]});
            }
        }

        if (cfg.use_sab) cur = sab_forward(t, cur, training);

        for (int j = 0; j < d; ++j) {
            std::string nm = "dec" + std::to_string(j);
            cur = t.conv_transpose2d(cur, use(t, nm + ".w", training),
                                     use(t, nm + ".b", training), 2, 1, nm);
            if (j < d - 1)
                cur = t.fit2d(cur, sizes[d - 2 - j].first, sizes[d - 2 - j].second);
            else
                cur = t.fit2d(cur, H, W);
            cur = bn(t, nm, cur, training);
            cur = t.relu(cur);
            if (j < 3) cur = t.dropout(cur, 0.5, rng, training);
            if (j < d - 1) cur = t.concat_channels(cur, skips[d - 2 - j]);
        }

        for (int s = 0; s < 3; ++s) {
            std::string nm = "tail" + std::to_string(s);
            cur = t.conv_transpose2d(cur, use(t, nm + ".w", training),
                                     use(t, nm + ".b", training), 2, 1, nm);
            cur = bn(t, nm, cur, training);
            cur = t.relu(cur);
        }
        if (cfg.scale != 8) {
            cur = t.resize_bilinear(cur, cfg.scale * H, cfg.scale * W);
            cur = t.conv2d(cur, use(t, "resize.w", training), use(t, "resize.b", training), 1, 1,
                           "resize");
            cur = bn(t, "resize", cur, training);
            cur = t.relu(cur);
        }
        cur = t.conv2d(cur, use(t, "out.w", training), use(t, "out.b", training), 1, 1, "out");
        return t.tanh_fn(cur);
    }

    // Spatial attention on {N,C,h,w} features, applied per sample:
    //   T = Wtheta X, P = Wphi X, G = Wg X          (X reshaped to {C,Nsp})
    //   psi = relu(T' P)                            {Nsp,Nsp}
    //   S = softmax_dim0(psi G')                    column-normalized {Nsp,C}
    //   E = X + (S . G')'                           elementwise product
    // Wg = 0 makes the block an exact identity.
    Id sab_forward(Tape<T>& t, Id x, bool training) {
        const auto& s = t.value(x).shape;
        int N = s[0], C = s[1], h = s[2], w = s[3];
        Id wt = use(t, "sab.theta", training);
        Id wp = use(t, "sab.phi", training);
        Id wg = use(t, "sab.g", training);
        std::vector<Id> outs;
        for (int n = 0; n < N; ++n) {
            Id sample = N == 1 ? x : t.slice_batch(x, n);
            Id att = sample;
            int ah = h, aw = w;
            if (cfg.sab_downsample && h * w > 4) {
                ah = (h + 1) / 2;
                aw = (w + 1) / 2;
                att = t.resize_bilinear(sample, ah, aw);
            }
            Id X = t.reshape(att, {C, ah * aw});
            Id Tm = t.matmul(wt, X);
            Id Pm = t.matmul(wp, X);
            Id Gm = t.matmul(wg, X);
            Id psi = t.relu(t.matmul(t.transpose2(Tm), Pm));
            Id A = t.matmul(psi, t.transpose2(Gm));
            Id S = t.softmax_dim0(A);
            Id attended = t.transpose2(t.mul(S, t.transpose2(Gm)));
            attended = t.reshape(attended, {1, C, ah, aw});
            if (ah != h || aw != w) attended = t.resize_bilinear(attended, h, w);
            outs.push_back(t.add(sample, attended));
        }
        return N == 1 ? outs[0] : t.stack_batch(outs);
    }

private:
    void conv_init(const std::string& nm, int cin, int cout, int k) {
        ps.create_param(nm + ".w", {cout, cin, k, k}, 0.02);
        ps.create_param(nm + ".b", {cout}, 0.0);
    }
    // Transposed convs store weights {Cin,Cout,k,k}.
    void tconv_init(const std::string& nm, int cin, int cout) {
        ps.create_param(nm + ".w", {cin, cout, 4, 4}, 0.02);
        ps.create_param(nm + ".b", {cout}, 0.0);
    }
    void bn_init(const std::string& nm, int c) {
        ps.create_param(nm + ".gamma", {c}, 0.02, 1.0);
        ps.create_param(nm + ".beta", {c}, 0.0);
        ps.create_buffer(nm + ".rm", {c}, T(0));
        ps.create_buffer(nm + ".rv", {c}, T(1));
    }
    Id use(Tape<T>& t, const std::string& name, bool training) {
        auto it = param_ids.find(name);
        if (it != param_ids.end()) return it->second;
        Id id = t.input(ps.param(name), training, name);
        param_ids[name] = id;
        return id;
    }
    Id bn(Tape<T>& t, const std::string& nm, Id x, bool training) {
        return t.batchnorm2d(x, use(t, nm + ".gamma", training), use(t, nm + ".beta", training),
                             &ps.buffer(nm + ".rm"), &ps.buffer(nm + ".rv"), training, 0.1, 1e-5,
                             nm + ".bn");
    }
};

struct DiscriminatorConfig {
    int base_filters = 64;
    int in_channels = 6;  // upsampled LR condition + candidate, concatenated

    void validate() const {
        if (base_filters < 1) throw ConfigError("discriminator base_filters must be >= 1");
    }
};

// Conditional PatchGAN: four k4 conv stages with filters {f,2f,4f,8f} and
// strides {2,2,2,1}, then a 1-channel k4 s1 head. Sigmoid patch map; the
// scalar score is its mean.
template <typename T>
class Discriminator {
public:
    using Id = typename Tape<T>::Id;

    DiscriminatorConfig cfg;
    ParamStore<T> ps;
    std::map<std::string, Id> param_ids;

    struct Output {
        Id patch_map;
        Id score;
    };

    Discriminator(DiscriminatorConfig c, std::uint64_t seed) : cfg(c), ps(seed) {
        cfg.validate();
        int f = cfg.base_filters;
        int chans[4] = {f, 2 * f, 4 * f, 8 * f};
        int cin = cfg.in_channels;
        for (int i = 0; i < 4; ++i) {
            conv_init("d" + std::to_string(i), cin, chans[i]);
            if (i > 0) bn_init("d" + std::to_string(i), chans[i]);
            cin = chans[i];
        }
        conv_init("head", cin, 1);
    }

    // candidate: {N,3,H,W}; condition: {N,3,H,W} bicubic-upsampled LR.
    // reuse_params shares the parameter tape inputs with the previous call on
    // the same tape so gradients from both passes accumulate in one place.
    Output forward(Tape<T>& t, Id candidate, Id condition, bool training,
                   bool reuse_params = false) {
        if (!reuse_params) param_ids.clear();
        Id cur = t.concat_channels(condition, candidate);
        static const int strides[4] = {2, 2, 2, 1};
        for (int i = 0; i < 4; ++i) {
            std::string nm = "d" + std::to_string(i);
            cur = t.conv2d(cur, use(t, nm + ".w", training), use(t, nm + ".b", training),
                           strides[i], 1, nm);
            if (i > 0) cur = bn(t, nm, cur, training);
            cur = t.leaky_relu(cur, 0.2);
        }
        cur = t.conv2d(cur, use(t, "head.w", training), use(t, "head.b", training), 1, 1, "head");
        Id map = t.sigmoid_fn(cur);
        return {map, t.mean_all(map)};
    }

private:
    void conv_init(const std::string& nm, int cin, int cout) {
        ps.create_param(nm + ".w", {cout, cin, 4, 4}, 0.02);
        ps.create_param(nm + ".b", {cout}, 0.0);
    }
    void bn_init(const std::string& nm, int c) {
        ps.create_param(nm + ".gamma", {c}, 0.02, 1.0);
        ps.create_param(nm + ".beta", {c}, 0.0);
        ps.create_buffer(nm + ".rm", {c}, T(0));
        ps.create_buffer(nm + ".rv", {c}, T(1));
    }
    Id use(Tape<T>& t, const std::string& name, bool training) {
        auto it = param_ids.find(name);
        if (it != param_ids.end()) return it->second;
        Id id = t.input(ps.param(name), training, name);
        param_ids[name] = id;
        return id;
    }
    Id bn(Tape<T>& t, const std::string& nm, Id x, bool training) {
        return t.batchnorm2d(x, use(t, nm + ".gamma", training), use(t, nm + ".beta", training),
                             &ps.buffer(nm + ".rm"), &ps.buffer(nm + ".rv"), training, 0.1, 1e-5,
                             nm + ".bn");
    }
};

// [0,1] HWC image -> {1,C,H,W} network tensor in [-1,1].
template <typename T>
Tensor<T> to_network(const ImageTensor& img) {
    Tensor<T> t({1, img.channels, img.height, img.width});
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                t.at4(0, c, y, x) = static_cast<T>(2.0 * img.at(y, x, c) - 1.0);
    return t;
}

template <typename T>
ImageTensor from_network(const Tensor<T>& t, int n = 0) {
    ImageTensor img(t.shape[2], t.shape[3], t.shape[1]);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double v = 0.5 * (static_cast<double>(t.at4(n, c, y, x)) + 1.0);
                img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
            }
    return img;
}

}  // namespace endol2h
