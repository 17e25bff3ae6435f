#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "endol2h/errors.hpp"
#include "endol2h/image.hpp"
#include "endol2h/rng.hpp"

namespace endol2h {

// Odd-sized 2D kernel with entries summing to 1.
struct Kernel2D {
    int size = 1;
    std::vector<double> weights{1.0};

    double at(int y, int x) const { return weights[static_cast<std::size_t>(y) * size + x]; }

    bool normalized(double tol = 1e-6) const {
        double s = 0.0;
        for (double w : weights) s += w;
        return std::abs(s - 1.0) <= tol;
    }
};

inline Kernel2D gaussian_kernel(int size, double sigma) {
    if (size < 1 || size % 2 == 0) throw ConfigError("gaussian_kernel: size must be odd");
    Kernel2D k;
    k.size = size;
    k.weights.assign(static_cast<std::size_t>(size) * size, 0.0);
    int r = size / 2;
    double sum = 0.0;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
            double w = std::exp(-(y * y + x * x) / (2.0 * sigma * sigma));
            k.weights[static_cast<std::size_t>(y + r) * size + (x + r)] = w;
            sum += w;
        }
    for (double& w : k.weights) w /= sum;
    return k;
}

// delta = {kappa, r, sigma} of the degradation model, plus the RNG seed.
struct DegradationConfig {
    Kernel2D blur_kernel = gaussian_kernel(5, 2.0);
    int scale = 8;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (blur_kernel.size % 2 == 0) throw ConfigError("blur kernel must be odd-sized");
        if (!blur_kernel.normalized()) throw ConfigError("blur kernel must sum to 1");
        if (scale < 1) throw ConfigError("scale must be >= 1");
        if (noise_sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
    }

    // Default blur: 5x5 Gaussian with sigma = r/4.
    static DegradationConfig for_scale(int r, double noise = 0.0, std::uint64_t seed = 0) {
        DegradationConfig cfg;
        cfg.scale = r;
        cfg.blur_kernel = gaussian_kernel(5, r / 4.0);
        cfg.noise_sigma = noise;
        cfg.seed = seed;
        return cfg;
    }
};

// Convolution with edge replication at the borders.
inline ImageTensor gaussian_blur(const ImageTensor& img, const Kernel2D& kernel) {
    if (kernel.size % 2 == 0) throw ConfigError("gaussian_blur: kernel must be odd-sized");
    if (!kernel.normalized()) throw ConfigError("gaussian_blur: kernel must sum to 1");
    ImageTensor out(img.height, img.width, img.channels);
    int r = kernel.size / 2;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (int ky = -r; ky <= r; ++ky)
                    for (int kx = -r; kx <= r; ++kx) {
                        int sy = std::clamp(y + ky, 0, img.height - 1);
                        int sx = std::clamp(x + kx, 0, img.width - 1);
                        acc += kernel.at(ky + r, kx + r) * img.at(sy, sx, c);
                    }
                out.at(y, x, c) = acc;
            }
    return out;
}

namespace detail {

// Catmull-Rom cubic, a = -0.5.
inline double cubic_kernel(double x) {
    const double a = -0.5;
    x = std::abs(x);
    if (x < 1.0) return (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0;
    if (x < 2.0) return a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a;
    return 0.0;
}

struct ResampleTap {
    int index;
    double weight;
};

// Per-output-pixel taps along one axis. When antialiasing a downscale the
// kernel support is widened by the scale ratio. Weights are renormalized so
// each row sums to 1.
inline std::vector<std::vector<ResampleTap>> resample_taps(int in_size, int out_size,
                                                           bool antialias) {
    double scale = static_cast<double>(out_size) / in_size;
    double filter_scale = (antialias && scale < 1.0) ? scale : 1.0;
    double support = 2.0 / filter_scale;

    std::vector<std::vector<ResampleTap>> rows(out_size);
    for (int o = 0; o < out_size; ++o) {
        double center = (o + 0.5) / scale - 0.5;
        int lo = static_cast<int>(std::floor(center - support)) ;
        int hi = static_cast<int>(std::ceil(center + support));
        double sum = 0.0;
        std::vector<ResampleTap>& taps = rows[o];
        for (int i = lo; i <= hi; ++i) {
            double w = cubic_kernel((i - center) * filter_scale);
            if (w == 0.0) continue;
            taps.push_back({std::clamp(i, 0, in_size - 1), w});
            sum += w;
        }
        for (ResampleTap& t : taps) t.weight /= sum;
    }
    return rows;
}

}  // namespace detail

// Separable Catmull-Rom bicubic resampling, output clamped to [0,1].
inline ImageTensor resample_bicubic(const ImageTensor& img, int out_h, int out_w,
                                    bool antialias = true) {
    if (out_h < 1 || out_w < 1) throw InputError("resample_bicubic: output dims must be >= 1");
    auto col_taps = detail::resample_taps(img.width, out_w, antialias);
    auto row_taps = detail::resample_taps(img.height, out_h, antialias);

    // horizontal pass
    ImageTensor tmp(img.height, out_w, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (const auto& t : col_taps[x]) acc += t.weight * img.at(y, t.index, c);
                tmp.at(y, x, c) = acc;
            }
    // vertical pass
    ImageTensor out(out_h, out_w, img.channels);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (const auto& t : row_taps[y]) acc += t.weight * tmp.at(t.index, x, c);
                out.at(y, x, c) = std::clamp(acc, 0.0, 1.0);
            }
    return out;
}

// out = clamp(img + n), n ~ N(0, sigma^2), deterministic in (img, sigma, seed).
inline ImageTensor add_gaussian_noise(const ImageTensor& img, double sigma,
                                      std::uint64_t seed) {
    if (sigma < 0.0) throw ConfigError("add_gaussian_noise: sigma must be >= 0");
    if (sigma == 0.0) return img;
    ImageTensor out = img;
    Rng rng(seed);
    for (double& v : out.data) v = std::clamp(v + rng.normal(0.0, sigma), 0.0, 1.0);
    return out;
}

// Largest size divisible by the scale factor; used before degradation.
inline ImageTensor crop_to_divisible(const ImageTensor& hr, int scale) {
    int h = (hr.height / scale) * scale;
    int w = (hr.width / scale) * scale;
    if (h < scale || w < scale)
        throw InputError("image smaller than scale factor " + std::to_string(scale));
    if (h == hr.height && w == hr.width) return hr;
    return center_crop(hr, h, w);
}

// blur -> bicubic downsample -> noise.
inline ImageTensor degrade(const ImageTensor& hr, const DegradationConfig& cfg) {
    cfg.validate();
    ImageTensor cropped = crop_to_divisible(hr, cfg.scale);
    ImageTensor blurred = gaussian_blur(cropped, cfg.blur_kernel);
    ImageTensor low = resample_bicubic(blurred, cropped.height / cfg.scale,
                                       cropped.width / cfg.scale, /*antialias=*/true);
    return add_gaussian_noise(low, cfg.noise_sigma, cfg.seed);
}

}  // namespace endol2h
