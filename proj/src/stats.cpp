#include "hileak/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace hileak {

Moments update(Moments m, double x) {
    if (!std::isfinite(x))
        throw std::invalid_argument("Moments::update: non-finite sample");
    m.n += 1;
    const double delta = x - m.mean;
    m.mean += delta / static_cast<double>(m.n);
    m.m2 += delta * (x - m.mean);
    return m;
}

Moments merge(const Moments &a, const Moments &b) noexcept {
    if (a.n == 0)
        return b;
    if (b.n == 0)
        return a;
    const double na = static_cast<double>(a.n);
    const double nb = static_cast<double>(b.n);
    const double n = na + nb;
    const double delta = b.mean - a.mean;
    Moments r;
    r.n = a.n + b.n;
    r.mean = a.mean + delta * (nb / n);
    r.m2 = a.m2 + b.m2 + delta * delta * (na * nb / n);
    return r;
}

Moments moments_of(std::span<const double> xs) {
    Moments m;
    for (double x : xs)
        m = update(m, x);
    return m;
}

WelchResult welch_t(const Moments &a, const Moments &b) {
    if (a.n < 2 || b.n < 2)
        throw std::invalid_argument("welch_t: each population needs at least two samples");
    const double qa = a.variance() / static_cast<double>(a.n);
    const double qb = b.variance() / static_cast<double>(b.n);
    const double se2 = qa + qb;
    const double diff = a.mean - b.mean;
    WelchResult r;
    if (se2 == 0.0) {
        if (diff != 0.0) {
            r.infinite = true;
            r.t = std::copysign(std::numeric_limits<double>::infinity(), diff);
        }
        return r;
    }
    r.t = diff / std::sqrt(se2);
    r.dof = (se2 * se2) / (qa * qa / static_cast<double>(a.n - 1) + qb * qb / static_cast<double>(b.n - 1));
    return r;
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double beta_cf(double x, double a, double b) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny)
        d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny)
            d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny)
            c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny)
            d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny)
            c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps)
            break;
    }
    return h;
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

template <class Sf> double bisect_isf(double p, Sf sf) {
    double lo = 0.0;
    double hi = 1.0;
    while (sf(hi) > p) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e12)
            return std::numeric_limits<double>::infinity();
    }
    for (int i = 0; i < 400 && hi - lo > 1e-15 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (sf(mid) > p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace

double incomplete_beta(double x, double a, double b) {
    if (x <= 0.0)
        return 0.0;
    if (x >= 1.0)
        return 1.0;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * beta_cf(x, a, b) / a;
    return 1.0 - front * beta_cf(1.0 - x, b, a) / b;
}

double student_t_sf(double t, double dof) {
    if (!(dof > 0.0))
        throw std::invalid_argument("student_t_sf: dof must be positive");
    if (std::isinf(t))
        return t > 0 ? 0.0 : 1.0;
    const double tail = 0.5 * incomplete_beta(dof / (dof + t * t), 0.5 * dof, 0.5);
    return t >= 0.0 ? tail : 1.0 - tail;
}

double student_t_isf(double p, double dof) {
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("student_t_isf: probability must lie in (0, 1)");
    if (p > 0.5)
        return -student_t_isf(1.0 - p, dof);
    if (p == 0.5)
        return 0.0;
    if (dof > 1e4 || std::isinf(dof))
        return bisect_isf(p, normal_sf);
    return bisect_isf(p, [dof](double t) { return student_t_sf(t, dof); });
}

double two_sided_critical(double alpha, double dof) { return student_t_isf(0.5 * alpha, dof); }

double corrected_threshold(std::uint64_t n_comparisons, double alpha, double dof) {
    if (n_comparisons < 1)
        throw std::invalid_argument("corrected_threshold: need at least one comparison");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("corrected_threshold: alpha must lie in (0, 1)");
    const double per_test = -std::expm1(std::log1p(-alpha) / static_cast<double>(n_comparisons));
    return two_sided_critical(per_test, dof);
}

TostBounds tost_bounds(double mu, std::span<const double> mean_diff_samples, double alpha) {
    if (mean_diff_samples.size() < 2)
        throw std::invalid_argument("tost_bounds: need at least two mean-difference samples");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("tost_bounds: alpha must lie in (0, 1)");
    const Moments m = moments_of(mean_diff_samples);
    TostBounds b;
    b.target_mu = mu;
    b.n = m.n;
    b.alpha = alpha;
    b.s = std::sqrt(m.variance());
    if (b.s == 0.0) {
        b.degenerate = true;
        b.lower = b.upper = mu;
        return b;
    }
    const double half = student_t_isf(alpha, static_cast<double>(m.n - 1)) * b.s / std::sqrt(static_cast<double>(m.n));
    b.lower = mu - half;
    b.upper = mu + half;
    return b;
}

bool not_leaky(const Moments &fixed, const Moments &random, const TostBounds &bounds, double alpha) {
    if (fixed.n < 2 || random.n < 2)
        throw std::invalid_argument("not_leaky: each population needs at least two samples");
    const double diff = fixed.mean - random.mean;
    const double qf = fixed.variance() / static_cast<double>(fixed.n);
    const double qr = random.variance() / static_cast<double>(random.n);
    const double se2 = qf + qr;
    if (se2 == 0.0)
        return diff > bounds.lower && diff < bounds.upper;
    const double se = std::sqrt(se2);
    const double dof = (se2 * se2) / (qf * qf / static_cast<double>(fixed.n - 1) + qr * qr / static_cast<double>(random.n - 1));
    const double crit = student_t_isf(alpha, dof);
    const bool below_upper = (diff - bounds.upper) / se < -crit;
    const bool above_lower = (diff - bounds.lower) / se > crit;
    return below_upper && above_lower;
}

bool not_leaky(std::span<const double> z_fixed, std::span<const double> z_random, const TostBounds &bounds,
               double alpha) {
    return not_leaky(moments_of(z_fixed), moments_of(z_random), bounds, alpha);
}

} // namespace hileak
