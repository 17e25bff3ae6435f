#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "endol2h/metrics.hpp"

using namespace endol2h;

namespace {

ImageTensor random_image(int h, int w, std::uint64_t seed) {
    ImageTensor img(h, w, 3);
    Rng rng(seed);
    for (double& v : img.data) v = rng.uniform(0.0, 1.0);
    return img;
}

ImageTensor noisy_copy(const ImageTensor& img, double sigma, std::uint64_t seed) {
    ImageTensor out = img;
    Rng rng(seed);
    for (double& v : out.data) v = std::clamp(v + rng.normal(0.0, sigma), 0.0, 1.0);
    return out;
}

double lum(const ImageTensor& img, int y, int x) {
    return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

// SSIM oracle using the E[x^2]-mu^2 moment formulation (the library uses
// centered sums), valid region only.
double oracle_ssim(const ImageTensor& a, const ImageTensor& b) {
    std::vector<double> w(121);
    double ws = 0.0;
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
            w[y * 11 + x] = std::exp(-((x - 5.0) * (x - 5.0) + (y - 5.0) * (y - 5.0)) / 4.5);
            ws += w[y * 11 + x];
        }
    for (double& v : w) v /= ws;
    double total = 0.0;
    int n = 0;
    for (int y = 0; y + 11 <= a.height; ++y)
        for (int x = 0; x + 11 <= a.width; ++x) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int wy = 0; wy < 11; ++wy)
                for (int wx = 0; wx < 11; ++wx) {
                    double wt = w[wy * 11 + wx];
                    double va = lum(a, y + wy, x + wx), vb = lum(b, y + wy, x + wx);
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            total += ((2 * ma * mb + 1e-4) * (2 * cov + 9e-4)) /
                     ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
            ++n;
        }
    return total / n;
}

double oracle_gmsd(const ImageTensor& a, const ImageTensor& b) {
    static const int px[3][3] = {{-1, 0, 1}, {-1, 0, 1}, {-1, 0, 1}};
    static const int py[3][3] = {{-1, -1, -1}, {0, 0, 0}, {1, 1, 1}};
    auto mag = [&](const ImageTensor& img, int y, int x) {
        double gx = 0, gy = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double v = lum(img, y + i, x + j);
                gx += px[i][j] * v / 3.0;
                gy += py[i][j] * v / 3.0;
            }
        return std::sqrt(gx * gx + gy * gy);
    };
    std::vector<double> gms;
    for (int y = 0; y + 3 <= a.height; ++y)
        for (int x = 0; x + 3 <= a.width; ++x) {
            double g1 = mag(a, y, x), g2 = mag(b, y, x);
            gms.push_back((2 * g1 * g2 + 0.0026) / (g1 * g1 + g2 * g2 + 0.0026));
        }
    double mean = 0.0;
    for (double v : gms) mean += v;
    mean /= gms.size();
    double var = 0.0;
    for (double v : gms) var += (v - mean) * (v - mean);
    return std::sqrt(var / gms.size());
}

// Feature pyramid via plain loops (stride-2 k3 p1 conv + relu), then the
// unit-normalized squared distance.
double oracle_lpips(const ImageTensor& a, const ImageTensor& b, FeatureExtractor<double>& fx) {
    struct Map {
        int c, h, w;
        std::vector<double> d;
        double& at(int ci, int y, int x) { return d[(ci * h + y) * w + x]; }
    };
    auto to_map = [](const ImageTensor& img) {
        Map m{img.channels, img.height, img.width, {}};
        m.d.resize(static_cast<std::size_t>(img.channels) * img.height * img.width);
        for (int c = 0; c < img.channels; ++c)
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    m.at(c, y, x) = 2.0 * img.at(y, x, c) - 1.0;
        return m;
    };
    auto features = [&](Map in) {
        std::vector<Map> taps;
        for (std::size_t l = 0; l < fx.cfg.widths.size(); ++l) {
            const auto& w = fx.ps.param("f" + std::to_string(l) + ".w");
            const auto& bias = fx.ps.param("f" + std::to_string(l) + ".b");
            int cout = w.shape[0];
            Map out{cout, (in.h + 2 - 3) / 2 + 1, (in.w + 2 - 3) / 2 + 1, {}};
            out.d.resize(static_cast<std::size_t>(cout) * out.h * out.w);
            for (int co = 0; co < cout; ++co)
                for (int oy = 0; oy < out.h; ++oy)
                    for (int ox = 0; ox < out.w; ++ox) {
                        double acc = bias.data[co];
                        for (int ci = 0; ci < in.c; ++ci)
                            for (int ky = 0; ky < 3; ++ky)
                                for (int kx = 0; kx < 3; ++kx) {
                                    int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
                                    if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                                    acc += in.at(ci, iy, ix) * w.at4(co, ci, ky, kx);
                                }
                        out.at(co, oy, ox) = std::max(acc, 0.0);
                    }
            taps.push_back(out);
            in = taps.back();
        }
        return taps;
    };
    auto fa = features(to_map(a)), fb = features(to_map(b));
    double total = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        auto& A = fa[l];
        auto& B = fb[l];
        double layer = 0.0;
        for (int y = 0; y < A.h; ++y)
            for (int x = 0; x < A.w; ++x) {
                double na = 1e-10, nb = 1e-10;
                for (int c = 0; c < A.c; ++c) {
                    na += A.at(c, y, x) * A.at(c, y, x);
                    nb += B.at(c, y, x) * B.at(c, y, x);
                }
                na = std::sqrt(na);
                nb = std::sqrt(nb);
                for (int c = 0; c < A.c; ++c) {
                    double d = A.at(c, y, x) / na - B.at(c, y, x) / nb;
                    layer += d * d / A.c;
                }
            }
        total += layer / (static_cast<double>(A.h) * A.w);
    }
    return total;
}

}  // namespace

TEST_CASE("psnr known values and identity") {
    ImageTensor a(8, 8, 3, 0.25), b(8, 8, 3, 0.75);
    CHECK(psnr(a, b) == doctest::Approx(-10.0 * std::log10(0.25)).epsilon(1e-12));
    CHECK(std::isinf(psnr(a, a)));
    ImageTensor c(8, 9, 3);
    CHECK_THROWS_AS(psnr(a, c), InputError);
}

TEST_CASE("ssim is one for identical images and matches the oracle") {
    auto a = random_image(16, 16, 1);
    auto same = ssim(a, a);
    CHECK(same.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(same.map.height == 6);
    CHECK(same.map.width == 6);
    for (int k = 0; k < 5; ++k) {
        auto x = random_image(16, 16, 10 + k);
        auto y = noisy_copy(x, 0.1, 20 + k);
        CHECK(ssim(x, y).mean == doctest::Approx(oracle_ssim(x, y)).epsilon(1e-6));
    }
    CHECK_THROWS_AS(ssim(random_image(8, 8, 1), random_image(8, 8, 2)), InputError);
}

TEST_CASE("gmsd is zero for identical images and matches the oracle") {
    auto a = random_image(16, 16, 2);
    CHECK(gmsd(a, a).mean == doctest::Approx(0.0).epsilon(1e-12));
    for (int k = 0; k < 5; ++k) {
        auto x = random_image(16, 16, 30 + k);
        auto y = noisy_copy(x, 0.08, 40 + k);
        CHECK(gmsd(x, y).mean == doctest::Approx(oracle_gmsd(x, y)).epsilon(1e-6));
    }
}

TEST_CASE("lpips distance is zero for identical images and matches the oracle") {
    FeatureExtractor<double> fx({}, 77);
    auto a = random_image(16, 16, 3);
    CHECK(lpips_distance(a, a, fx) == doctest::Approx(0.0).epsilon(1e-12));
    for (int k = 0; k < 5; ++k) {
        auto x = random_image(16, 16, 50 + k);
        auto y = noisy_copy(x, 0.1, 60 + k);
        CHECK(lpips_distance(x, y, fx) == doctest::Approx(oracle_lpips(x, y, fx)).epsilon(1e-6));
    }
}

TEST_CASE("metrics degrade monotonically with noise level") {
    auto hr = random_image(32, 32, 4);
    auto mild = noisy_copy(hr, 0.02, 5);
    auto harsh = noisy_copy(hr, 0.2, 6);
    FeatureExtractor<double> fx({}, 77);
    auto rm = compute_metrics(mild, hr, fx);
    auto rh = compute_metrics(harsh, hr, fx);
    CHECK(rm.psnr > rh.psnr);
    CHECK(rm.ssim > rh.ssim);
    CHECK(rm.gmsd < rh.gmsd);
    CHECK(rm.lpips < rh.lpips);
}

TEST_CASE("false color map stays in range and uses the full ramp") {
    ImageTensor map(1, 3, 1);
    map.at(0, 0, 0) = 0.0;
    map.at(0, 1, 0) = 0.5;
    map.at(0, 2, 0) = 1.0;
    ImageTensor fc = false_color(map, 0.0, 1.0);
    CHECK(fc.at(0, 0, 2) == doctest::Approx(1.0));  // low -> blue
    CHECK(fc.at(0, 1, 1) == doctest::Approx(1.0));  // mid -> green
    CHECK(fc.at(0, 2, 0) == doctest::Approx(1.0));  // high -> red
    for (double v : fc.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("float grid round trip") {
    namespace fs = std::filesystem;
    auto path = (fs::temp_directory_path() / "el2h_grid.f32").string();
    auto m = ssim(random_image(16, 16, 7), random_image(16, 16, 8)).map;
    write_float_grid(path, m);
    ImageTensor back = read_float_grid(path);
    REQUIRE(back.height == m.height);
    REQUIRE(back.width == m.width);
    for (std::size_t i = 0; i < m.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(m.data[i]).epsilon(1e-6));
    fs::remove(path);
}

TEST_CASE("metrics csv has per-image rows and a mean row") {
    namespace fs = std::filesystem;
    auto path = (fs::temp_directory_path() / "el2h_metrics.csv").string();
    write_metrics_csv(path, {{"a.png", {30.0, 0.9, 0.05, 0.1}}, {"b.png", {20.0, 0.7, 0.15, 0.3}}});
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "image,psnr,ssim,gmsd,lpips");
    int rows = 0;
    std::string last;
    while (std::getline(f, line))
        if (!line.empty()) {
            last = line;
            ++rows;
        }
    CHECK(rows == 3);
    CHECK(last.substr(0, 5) == "mean,");
    CHECK(last.find("25") != std::string::npos);  // mean psnr
    fs::remove(path);
}
