#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "endol2h/errors.hpp"

namespace endol2h {

// Paired differences a[i] - b[i].
inline std::vector<double> metric_diff(const std::vector<double>& a,
                                       const std::vector<double>& b) {
    if (a.size() != b.size()) throw InputError("metric_diff: sample sizes differ");
    if (a.empty()) throw InputError("metric_diff: empty samples");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return d;
}

struct WilcoxonResult {
    double W = 0;        // sum of signed ranks
    int n_effective = 0;  // pairs remaining after dropping zero differences
    double z = 0;
    double p_value = 1.0;  // two-sided
    bool exact = false;    // exact enumeration vs normal approximation
};

namespace detail {

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace detail

// Wilcoxon signed-rank test on paired differences. Zero differences are
// dropped; tied magnitudes get average ranks. For n <= exact_threshold the
// two-sided p-value enumerates all 2^n sign assignments; otherwise it uses
// the normal approximation z = W / sqrt(n(n+1)(2n+1)/6).
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs,
                                           int exact_threshold = 12) {
    std::vector<double> d;
    for (double v : diffs)
        if (v != 0.0) d.push_back(v);
    WilcoxonResult r;
    r.n_effective = static_cast<int>(d.size());
    if (d.empty()) {
        r.exact = true;
        return r;  // no evidence either way
    }
    int n = r.n_effective;

    // average ranks of |d|
    std::vector<int> order(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return std::fabs(d[a]) < std::fabs(d[b]); });
    std::vector<double> rank(d.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && std::fabs(d[order[j]]) == std::fabs(d[order[i]])) ++j;
        double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) rank[order[k]] = avg;
        i = j;
    }

    for (std::size_t i = 0; i < d.size(); ++i) r.W += d[i] > 0 ? rank[i] : -rank[i];
    double sigma = std::sqrt(n * (n + 1.0) * (2.0 * n + 1.0) / 6.0);
    r.z = r.W / sigma;

    if (n <= exact_threshold) {
        r.exact = true;
        // All sign assignments are equally likely under H0.
        std::uint64_t total = 1ull << n, hits = 0;
        double target = std::fabs(r.W) - 1e-9;
        for (std::uint64_t mask = 0; mask < total; ++mask) {
            double w = 0.0;
            for (int i = 0; i < n; ++i) w += (mask >> i) & 1 ? rank[i] : -rank[i];
            if (std::fabs(w) >= target) ++hits;
        }
        r.p_value = static_cast<double>(hits) / static_cast<double>(total);
    } else {
        // Continuity-corrected normal approximation with an Edgeworth
        // kurtosis term; W is symmetric with excess kurtosis -2*S4/S2^2.
        double s2 = 0.0, s4 = 0.0;
        for (double rk : rank) {
            s2 += rk * rk;
            s4 += rk * rk * rk * rk;
        }
        double g2 = -2.0 * s4 / (s2 * s2);
        double zc = std::max(std::fabs(r.W) - 0.5, 0.0) / sigma;
        double phi = std::exp(-zc * zc / 2.0) / std::sqrt(2.0 * 3.14159265358979323846);
        double tail = detail::normal_sf(zc) + g2 / 24.0 * (zc * zc * zc - 3.0 * zc) * phi;
        r.p_value = std::clamp(2.0 * tail, 0.0, 1.0);
    }
    return r;
}

struct SampleSummary {
    int n = 0;
    double mean = 0, stddev_pop = 0, stddev_sample = 0;
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

// Quartiles use linear interpolation between closest ranks.
inline SampleSummary summarize(std::vector<double> v) {
    if (v.empty()) throw InputError("summarize: empty sample");
    SampleSummary s;
    s.n = static_cast<int>(v.size());
    for (double x : v) s.mean += x;
    s.mean /= s.n;
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev_pop = std::sqrt(ss / s.n);
    s.stddev_sample = s.n > 1 ? std::sqrt(ss / (s.n - 1)) : 0.0;
    std::sort(v.begin(), v.end());
    auto quantile = [&](double p) {
        double idx = p * (v.size() - 1);
        std::size_t lo = static_cast<std::size_t>(std::floor(idx));
        std::size_t hi = std::min(lo + 1, v.size() - 1);
        double f = idx - lo;
        return v[lo] * (1.0 - f) + v[hi] * f;
    };
    s.min = v.front();
    s.q1 = quantile(0.25);
    s.median = quantile(0.5);
    s.q3 = quantile(0.75);
    s.max = v.back();
    return s;
}

// Standardized scores (x - mean) / stddev_pop.
inline std::vector<double> zscores(const std::vector<double>& v) {
    SampleSummary s = summarize(v);
    if (s.stddev_pop == 0.0) throw NumericalError("zscores: zero variance sample");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - s.mean) / s.stddev_pop;
    return out;
}

struct MosAggregate {
    int n = 0;
    double mean = 0, stddev = 0, min = 0, max = 0;
};

// Mean-opinion-score aggregation; spread is the sample (n-1) deviation, the
// convention used when reporting rater panels.
inline MosAggregate mos_aggregate(const std::vector<double>& scores) {
    SampleSummary s = summarize(scores);
    return {s.n, s.mean, s.stddev_sample, s.min, s.max};
}

}  // namespace endol2h
