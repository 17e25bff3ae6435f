#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "endol2h/errors.hpp"
#include "endol2h/image.hpp"
#include "endol2h/losses.hpp"
#include "endol2h/networks.hpp"

namespace endol2h {

// Peak signal-to-noise ratio over all channels, peak 1.0. Identical images
// return +infinity.
inline double psnr(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_dims(b)) throw InputError("psnr: image dimensions differ");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= a.data.size();
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

struct MetricMap {
    double mean = 0.0;
    ImageTensor map;  // single channel, valid-region size
};

namespace detail {

inline std::vector<double> ssim_window() {
    // 11x11 Gaussian, sigma 1.5, normalized.
    std::vector<double> w(121);
    double sum = 0.0;
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
            double dy = y - 5, dx = x - 5;
            w[y * 11 + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
            sum += w[y * 11 + x];
        }
    for (double& v : w) v /= sum;
    return w;
}

}  // namespace detail

// Luminance SSIM with the standard 11x11 sigma-1.5 Gaussian window,
// C1=(0.01)^2, C2=(0.03)^2 for unit dynamic range. The map covers window
// positions fully inside the image (valid region).
inline MetricMap ssim(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_dims(b)) throw InputError("ssim: image dimensions differ");
    if (a.height < 11 || a.width < 11) throw InputError("ssim: image smaller than 11x11 window");
    ImageTensor la = to_luminance(a), lb = to_luminance(b);
    static const std::vector<double> win = detail::ssim_window();
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    int Ho = a.height - 10, Wo = a.width - 10;
    MetricMap out;
    out.map = ImageTensor(Ho, Wo, 1);
    double total = 0.0;
    for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
            double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
            for (int wy = 0; wy < 11; ++wy)
                for (int wx = 0; wx < 11; ++wx) {
                    double w = win[wy * 11 + wx];
                    ma += w * la.at(y + wy, x + wx, 0);
                    mb += w * lb.at(y + wy, x + wx, 0);
                }
            for (int wy = 0; wy < 11; ++wy)
                for (int wx = 0; wx < 11; ++wx) {
                    double w = win[wy * 11 + wx];
                    double da = la.at(y + wy, x + wx, 0) - ma;
                    double db = lb.at(y + wy, x + wx, 0) - mb;
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            double s = ((2 * ma * mb + C1) * (2 * cov + C2)) /
                       ((ma * ma + mb * mb + C1) * (va + vb + C2));
            out.map.at(y, x, 0) = s;
            total += s;
        }
    out.mean = total / (static_cast<double>(Ho) * Wo);
    return out;
}

// Gradient-magnitude-similarity deviation (lower is better): Prewitt 3x3
// gradients on luminance, GMS=(2 g1 g2 + c)/(g1^2+g2^2+c) with c=0.0026,
// result is the population standard deviation of the valid-region GMS map.
inline MetricMap gmsd(const ImageTensor& a, const ImageTensor& b) {
    if (!a.same_dims(b)) throw InputError("gmsd: image dimensions differ");
    if (a.height < 3 || a.width < 3) throw InputError("gmsd: image smaller than 3x3");
    ImageTensor la = to_luminance(a), lb = to_luminance(b);
    const double c = 0.0026;
    int Ho = a.height - 2, Wo = a.width - 2;
    auto grad_mag = [](const ImageTensor& l, int y, int x) {
        // Prewitt, 1/3-normalized
        double gx = 0, gy = 0;
        for (int k = 0; k < 3; ++k) {
            gx += (l.at(y + k, x + 2, 0) - l.at(y + k, x, 0)) / 3.0;
            gy += (l.at(y + 2, x + k, 0) - l.at(y, x + k, 0)) / 3.0;
        }
        return std::sqrt(gx * gx + gy * gy);
    };
    MetricMap out;
    out.map = ImageTensor(Ho, Wo, 1);
    double mean = 0.0;
    for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
            double g1 = grad_mag(la, y, x), g2 = grad_mag(lb, y, x);
            double gms = (2 * g1 * g2 + c) / (g1 * g1 + g2 * g2 + c);
            out.map.at(y, x, 0) = gms;
            mean += gms;
        }
    mean /= out.map.data.size();
    double var = 0.0;
    for (double v : out.map.data) var += (v - mean) * (v - mean);
    out.mean = std::sqrt(var / out.map.data.size());
    return out;
}

// Learned-perceptual-style distance: deep features from the (fixed) feature
// extractor, unit-normalized along channels at every spatial site, squared
// differences averaged spatially with uniform 1/C channel weights, summed
// over layers. Zero for identical inputs; lower is better.
template <typename T>
double lpips_distance(const ImageTensor& a, const ImageTensor& b, FeatureExtractor<T>& fx) {
    if (!a.same_dims(b)) throw InputError("lpips: image dimensions differ");
    Tape<T> t;
    auto fa = fx.forward(t, t.input(to_network<T>(a)));
    auto fb = fx.forward(t, t.input(to_network<T>(b)));
    double total = 0.0;
    const double eps = 1e-10;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        const auto& A = t.value(fa[l]);
        const auto& B = t.value(fb[l]);
        int C = A.shape[1], H = A.shape[2], W = A.shape[3];
        double layer = 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double na = eps, nb = eps;
                for (int c = 0; c < C; ++c) {
                    na += static_cast<double>(A.at4(0, c, y, x)) * A.at4(0, c, y, x);
                    nb += static_cast<double>(B.at4(0, c, y, x)) * B.at4(0, c, y, x);
                }
                na = std::sqrt(na);
                nb = std::sqrt(nb);
                for (int c = 0; c < C; ++c) {
                    double d = static_cast<double>(A.at4(0, c, y, x)) / na -
                               static_cast<double>(B.at4(0, c, y, x)) / nb;
                    layer += d * d / C;
                }
            }
        total += layer / (static_cast<double>(H) * W);
    }
    return total;
}

struct MetricReport {
    double psnr = 0, ssim = 0, gmsd = 0, lpips = 0;
};

template <typename T>
MetricReport compute_metrics(const ImageTensor& sr, const ImageTensor& hr,
                             FeatureExtractor<T>& fx) {
    MetricReport r;
    r.psnr = psnr(sr, hr);
    r.ssim = ssim(sr, hr).mean;
    r.gmsd = gmsd(sr, hr).mean;
    r.lpips = lpips_distance(sr, hr, fx);
    return r;
}

// Blue->green->red false-color rendering of a scalar map scaled to [lo,hi].
inline ImageTensor false_color(const ImageTensor& map, double lo, double hi) {
    ImageTensor out(map.height, map.width, 3);
    for (int y = 0; y < map.height; ++y)
        for (int x = 0; x < map.width; ++x) {
            double v = (map.at(y, x, 0) - lo) / (hi - lo);
            v = std::clamp(v, 0.0, 1.0);
            out.at(y, x, 0) = std::clamp(2.0 * v - 1.0, 0.0, 1.0);           // red
            out.at(y, x, 1) = 1.0 - std::fabs(2.0 * v - 1.0);                // green
            out.at(y, x, 2) = std::clamp(1.0 - 2.0 * v, 0.0, 1.0);          // blue
        }
    return out;
}

// Raw f32 grid: u32 height, u32 width (little endian), then h*w f32 values.
inline void write_float_grid(const std::string& path, const ImageTensor& map) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write float grid: " + path);
    std::uint32_t dims[2] = {static_cast<std::uint32_t>(map.height),
                             static_cast<std::uint32_t>(map.width)};
    f.write(reinterpret_cast<char*>(dims), 8);
    for (double v : map.data) {
        float fv = static_cast<float>(v);
        f.write(reinterpret_cast<char*>(&fv), 4);
    }
}

inline ImageTensor read_float_grid(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read float grid: " + path);
    std::uint32_t dims[2];
    if (!f.read(reinterpret_cast<char*>(dims), 8)) throw IoError("truncated float grid: " + path);
    ImageTensor map(static_cast<int>(dims[0]), static_cast<int>(dims[1]), 1);
    for (double& v : map.data) {
        float fv;
        if (!f.read(reinterpret_cast<char*>(&fv), 4))
            throw IoError("truncated float grid: " + path);
        v = fv;
    }
    return map;
}

// Per-image rows plus a trailing mean row.
inline void write_metrics_csv(const std::string& path,
                              const std::vector<std::pair<std::string, MetricReport>>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write metrics csv: " + path);
    f << "image,psnr,ssim,gmsd,lpips\n";
    MetricReport mean;
    f.precision(9);
    for (const auto& [name, r] : rows) {
        f << name << "," << r.psnr << "," << r.ssim << "," << r.gmsd << "," << r.lpips << "\n";
        mean.psnr += r.psnr;
        mean.ssim += r.ssim;
        mean.gmsd += r.gmsd;
        mean.lpips += r.lpips;
    }
    if (!rows.empty()) {
        double n = static_cast<double>(rows.size());
        f << "mean," << mean.psnr / n << "," << mean.ssim / n << "," << mean.gmsd / n << ","
          << mean.lpips / n << "\n";
    }
}

}  // namespace endol2h
