#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace fusionrl::stats {

/// Linear-interpolation quantile on inclusive ranks: position p * (n - 1)
/// into the sorted sample.
inline double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> xs, double p) {
    std::sort(xs.begin(), xs.end());
    return quantile_sorted(xs, p);
}

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

/// Fraction of the sample that is <= x.
inline double ecdf(std::span<const double> sorted, double x) {
    if (sorted.empty()) throw std::invalid_argument("ecdf of an empty sample");
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), x);
    return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

struct MannWhitneyResult {
    double u = 0.0;       ///< U statistic of the first sample
    double z = 0.0;
    double p_greater = 1.0; ///< one-sided: first sample stochastically greater
};

/// Mann-Whitney U with mid-ranks for ties, tie-corrected normal
/// approximation and continuity correction.
inline MannWhitneyResult mann_whitney(std::span<const double> x, std::span<const double> y) {
    if (x.empty() || y.empty()) throw std::invalid_argument("mann_whitney needs two non-empty samples");
    const std::size_t n1 = x.size(), n2 = y.size(), n = n1 + n2;
    std::vector<std::pair<double, int>> all;
    all.reserve(n);
    for (double v : x) all.emplace_back(v, 0);
    for (double v : y) all.emplace_back(v, 1);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    double rank_x = 0.0, tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && all[j].first == all[i].first) ++j;
        const double mid = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (all[k].second == 0) rank_x += mid;
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    MannWhitneyResult r;
    const double dn1 = static_cast<double>(n1), dn2 = static_cast<double>(n2), dn = static_cast<double>(n);
    r.u = rank_x - dn1 * (dn1 + 1.0) / 2.0;
    const double mean = dn1 * dn2 / 2.0;
    const double var = dn1 * dn2 / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
    if (var <= 0.0) return r;
    r.z = (r.u - mean - 0.5) / std::sqrt(var);
    r.p_greater = boost::math::cdf(boost::math::complement(boost::math::normal(), r.z));
    return r;
}

/// Pearson chi-square goodness of fit against equal expected counts;
/// returns the upper-tail p-value.
inline double chi_square_uniform_p(std::span<const std::size_t> counts) {
    if (counts.size() < 2) throw std::invalid_argument("chi-square needs at least two cells");
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    const double expected = total / static_cast<double>(counts.size());
    double stat = 0.0;
    for (auto c : counts) stat += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
    const boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

} // namespace fusionrl::stats
