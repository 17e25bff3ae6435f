#pragma once

#include <string>
#include <vector>

#include "endol2h/autodiff.hpp"
#include "endol2h/errors.hpp"
#include "endol2h/networks.hpp"

namespace endol2h {

struct LossConfig {
    double alpha = 0.35;  // adversarial weight
    double beta = 0.20;   // texture (Gram) weight
    double gamma = 0.15;  // content (feature) weight
    double eps = 1e-3;    // Charbonnier knee
    bool ablate_texture = false;
    bool ablate_content = false;

    void validate() const {
        if (alpha < 0 || alpha >= 1 || beta < 0 || beta >= 1 || gamma < 0 || gamma >= 1)
            throw ConfigError("loss weights must lie in [0,1)");
        if (eps <= 0) throw ConfigError("charbonnier eps must be positive");
    }

    double beta_eff() const { return ablate_texture ? 0.0 : beta; }
    double gamma_eff() const { return ablate_content ? 0.0 : gamma; }
    // Coefficient on the Charbonnier term; 0.442 at the defaults.
    double pixel_coeff() const { return (1.0 - alpha) * (1.0 - beta_eff()) * (1.0 - gamma_eff()); }
};

// Small fixed conv stack standing in for the perceptual backbone. Weights are
// deterministic from the seed and can be replaced from a checkpoint; they are
// never trained, but gradients still flow through to the generator output.
struct FeatureExtractorConfig {
    int in_channels = 3;
    std::vector<int> widths = {8, 16};
    int content_tap = 1;  // layer index used by the content loss
    int texture_tap = 0;  // layer index used by the texture loss

    void validate() const {
        if (widths.empty()) throw ConfigError("feature extractor needs at least one layer");
        if (content_tap < 0 || content_tap >= static_cast<int>(widths.size()) ||
            texture_tap < 0 || texture_tap >= static_cast<int>(widths.size()))
            throw ConfigError("feature tap index out of range");
    }
};

template <typename T>
class FeatureExtractor {
public:
    using Id = typename Tape<T>::Id;

    FeatureExtractorConfig cfg;
    ParamStore<T> ps;

    explicit FeatureExtractor(FeatureExtractorConfig c = {}, std::uint64_t seed = 2024)
        : cfg(c), ps(seed) {
        cfg.validate();
        int cin = cfg.in_channels;
        for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
            ps.create_param("f" + std::to_string(i) + ".w", {cfg.widths[i], cin, 3, 3}, 0.15);
            ps.create_param("f" + std::to_string(i) + ".b", {cfg.widths[i]}, 0.0);
            cin = cfg.widths[i];
        }
    }

    // Post-relu feature maps for every layer; stride-2 k3 p1 convs.
    std::vector<Id> forward(Tape<T>& t, Id x) {
        std::vector<Id> taps;
        Id cur = x;
        for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
            std::string nm = "f" + std::to_string(i);
            cur = t.conv2d(cur, t.input(ps.param(nm + ".w"), false, nm),
                           t.input(ps.param(nm + ".b"), false, nm), 2, 1, nm);
            cur = t.relu(cur);
            taps.push_back(cur);
        }
        return taps;
    }
};

// mean(sqrt((a-b)^2 + eps^2))
template <typename T>
typename Tape<T>::Id charbonnier_loss(Tape<T>& t, typename Tape<T>::Id a,
                                      typename Tape<T>::Id b, double eps) {
    auto d = t.sub(a, b);
    return t.mean_all(t.sqrt_fn(t.add_const(t.mul(d, d), eps * eps)));
}

// Squared feature distance at one tap, normalized by spatial size only.
template <typename T>
typename Tape<T>::Id content_loss(Tape<T>& t, typename Tape<T>::Id feat_sr,
                                  typename Tape<T>::Id feat_hr) {
    const auto& s = t.value(feat_sr).shape;
    auto d = t.sub(feat_sr, feat_hr);
    return t.scale(t.sum_all(t.mul(d, d)), 1.0 / (static_cast<double>(s[2]) * s[3]));
}

// Gram matrix of a {1,C,H,W} feature map, normalized by H*W: {C,C}.
template <typename T>
typename Tape<T>::Id gram_matrix(Tape<T>& t, typename Tape<T>::Id feat) {
    const auto& s = t.value(feat).shape;
    if (s[0] != 1) throw ConfigError("gram_matrix expects a single sample");
    int C = s[1], N = s[2] * s[3];
    auto F = t.reshape(feat, {C, N});
    return t.scale(t.matmul(F, t.transpose2(F)), 1.0 / N);
}

// (1/C^2) * squared Frobenius distance between Gram matrices.
template <typename T>
typename Tape<T>::Id texture_loss(Tape<T>& t, typename Tape<T>::Id feat_sr,
                                  typename Tape<T>::Id feat_hr) {
    int C = t.value(feat_sr).shape[1];
    auto d = t.sub(gram_matrix(t, feat_sr), gram_matrix(t, feat_hr));
    return t.scale(t.sum_all(t.mul(d, d)), 1.0 / (static_cast<double>(C) * C));
}

// Least-squares GAN objectives over the discriminator patch map.
template <typename T>
typename Tape<T>::Id lsgan_generator_loss(Tape<T>& t, typename Tape<T>::Id d_map_sr) {
    auto d = t.add_const(d_map_sr, -1.0);
    return t.mean_all(t.mul(d, d));
}

template <typename T>
typename Tape<T>::Id lsgan_discriminator_loss(Tape<T>& t, typename Tape<T>::Id d_map_sr,
                                              typename Tape<T>::Id d_map_hr) {
    auto fake = t.mean_all(t.mul(d_map_sr, d_map_sr));
    auto r = t.add_const(d_map_hr, -1.0);
    return t.add(fake, t.mean_all(t.mul(r, r)));
}

template <typename T>
struct GeneratorLossResult {
    typename Tape<T>::Id total;
    double adv = 0, charbonnier = 0, content = 0, texture = 0;
};

// Hybrid objective:
//   L = alpha*L_adv + (1-alpha)(1-beta)(1-gamma)*L_Cha
//       + gamma*L_content + beta*L_texture
template <typename T>
GeneratorLossResult<T> generator_loss(Tape<T>& t, typename Tape<T>::Id sr,
                                      typename Tape<T>::Id hr, typename Tape<T>::Id d_map_sr,
                                      FeatureExtractor<T>& features, const LossConfig& cfg) {
    cfg.validate();
    GeneratorLossResult<T> r;
    auto adv = lsgan_generator_loss(t, d_map_sr);
    auto cha = charbonnier_loss(t, sr, hr, cfg.eps);
    auto total = t.add(t.scale(adv, cfg.alpha), t.scale(cha, cfg.pixel_coeff()));
    r.adv = static_cast<double>(t.value(adv).data[0]);
    r.charbonnier = static_cast<double>(t.value(cha).data[0]);
    if (cfg.gamma_eff() > 0.0 || cfg.beta_eff() > 0.0) {
        auto fs = features.forward(t, sr);
        auto fh = features.forward(t, hr);
        if (cfg.gamma_eff() > 0.0) {
            auto con = content_loss(t, fs[features.cfg.content_tap], fh[features.cfg.content_tap]);
            r.content = static_cast<double>(t.value(con).data[0]);
            total = t.add(total, t.scale(con, cfg.gamma_eff()));
        }
        if (cfg.beta_eff() > 0.0) {
            auto tex = texture_loss(t, fs[features.cfg.texture_tap], fh[features.cfg.texture_tap]);
            r.texture = static_cast<double>(t.value(tex).data[0]);
            total = t.add(total, t.scale(tex, cfg.beta_eff()));
        }
    }
    r.total = total;
    return r;
}

}  // namespace endol2h
