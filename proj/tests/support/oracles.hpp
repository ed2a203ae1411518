#pragma once

// Brute-force reference implementations used only by tests. They follow the
// textbook definitions directly and share no code with the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

/// O(n²) pair enumeration, ties count one half.
inline double auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            pairs += 1;
            if (s[i] > s[j]) wins += 1;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

/// Sweeps thresholds at +inf, every midpoint between distinct scores and
/// -inf (positive when score > threshold), then interpolates the first sign
/// change of fpr - fnr.
inline double eer(const std::vector<double>& s, const std::vector<int>& y) {
    std::vector<double> u = s;
    std::sort(u.begin(), u.end(), std::greater<>());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    std::vector<double> thr = {std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i + 1 < u.size(); ++i) thr.push_back(u[i] / 2 + u[i + 1] / 2);
    thr.push_back(-std::numeric_limits<double>::infinity());

    double P = 0, N = 0;
    for (int v : y) (v ? P : N) += 1;
    std::vector<double> fpr, fnr;
    for (double t : thr) {
        double tp = 0, fp = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] > t) (y[i] ? tp : fp) += 1;
        }
        fpr.push_back(fp / N);
        fnr.push_back(1.0 - tp / P);
    }
    for (std::size_t k = 0; k < thr.size(); ++k) {
        const double d1 = fpr[k] - fnr[k];
        if (d1 == 0.0) return fpr[k];
        if (d1 > 0.0) {
            const double d0 = fpr[k - 1] - fnr[k - 1];
            const double t = d0 / (d0 - d1);
            return fpr[k - 1] + t * (fpr[k] - fpr[k - 1]);
        }
    }
    return 1.0;
}

inline double log_softmax_at(const std::vector<double>& z, std::size_t k) {
    double m = *std::max_element(z.begin(), z.end());
    double s = 0;
    for (double v : z) s += std::exp(v - m);
    return z[k] - m - std::log(s);
}

inline double giou(double ax1, double ay1, double ax2, double ay2, double bx1, double by1, double bx2, double by2) {
    const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
    const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
    const double inter = iw * ih;
    const double uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    const double c = (std::max(ax2, bx2) - std::min(ax1, bx1)) * (std::max(ay2, by2) - std::min(ay1, by1));
    return inter / uni - (c - uni) / c;
}

/// Naive single-head scaled dot-product attention on row-major buffers.
inline std::vector<double> attention(const std::vector<double>& q, const std::vector<double>& k,
                                     const std::vector<double>& v, std::size_t nq, std::size_t nk, std::size_t d,
                                     std::size_t dv) {
    std::vector<double> out(nq * dv, 0.0);
    for (std::size_t i = 0; i < nq; ++i) {
        std::vector<double> w(nk);
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < nk; ++j) {
            double dot = 0;
            for (std::size_t c = 0; c < d; ++c) dot += q[i * d + c] * k[j * d + c];
            w[j] = dot / std::sqrt(static_cast<double>(d));
            m = std::max(m, w[j]);
        }
        double z = 0;
        for (auto& x : w) z += (x = std::exp(x - m));
        for (std::size_t j = 0; j < nk; ++j)
            for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += w[j] / z * v[j * dv + c];
    }
    return out;
}

} // namespace oracle
