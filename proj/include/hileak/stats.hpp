#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace hileak {

/// Streaming first and second central moments. All accumulation is double
/// precision regardless of the storage type of the samples.
struct Moments {
    std::uint64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0; // sum of squared deviations from the mean

    double variance() const noexcept { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
};

/// Welford update. Throws std::invalid_argument on a non-finite sample.
Moments update(Moments m, double x);

/// Chan et al. pairwise combination; equals the moments of the concatenation.
Moments merge(const Moments &a, const Moments &b) noexcept;

Moments moments_of(std::span<const double> xs);

struct WelchResult {
    double t = 0.0;
    double dof = 0.0;
    /// Both populations have zero variance but different means; t is +/-inf.
    bool infinite = false;
};

/// Welch's t-test; the sign of t follows mean(a) - mean(b).
/// Requires a.n >= 2 and b.n >= 2.
WelchResult welch_t(const Moments &a, const Moments &b);

/// Upper-tail probability P(T > t) of Student's t with `dof` degrees of freedom.
double student_t_sf(double t, double dof);

/// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double x, double a, double b);

/// One-sided quantile: the t with P(T > t) = p. Bisection on the CDF; switches
/// to the normal distribution when dof exceeds 1e4.
double student_t_isf(double p, double dof);

/// Two-sided critical value: P(|T| > t) = alpha.
double two_sided_critical(double alpha, double dof);

/// Family-wise threshold for `n_comparisons` simultaneous tests at level
/// alpha: per-test level 1 - (1 - alpha)^(1/n), then the two-sided quantile.
double corrected_threshold(std::uint64_t n_comparisons, double alpha, double dof);

/// Equivalence bounds around a target mean difference, built from a sample of
/// mean differences: target_mu -/+ t_alpha * s / sqrt(n).
struct TostBounds {
    double target_mu = 0.0;
    double s = 0.0;
    std::uint64_t n = 0;
    double alpha = 0.05;
    double lower = 0.0;
    double upper = 0.0;
    /// The mean-difference sample had zero spread; lower == upper == target_mu.
    bool degenerate = false;
};

TostBounds tost_bounds(double mu, std::span<const double> mean_diff_samples, double alpha = 0.05);

/// Two one-sided Welch tests at `alpha`: true iff mean(z_fixed) - mean(z_random)
/// is significantly below bounds.upper and significantly above bounds.lower.
bool not_leaky(std::span<const double> z_fixed, std::span<const double> z_random, const TostBounds &bounds,
               double alpha);
inline bool not_leaky(std::span<const double> z_fixed, std::span<const double> z_random,
                      const TostBounds &bounds) {
    return not_leaky(z_fixed, z_random, bounds, bounds.alpha);
}
bool not_leaky(const Moments &fixed, const Moments &random, const TostBounds &bounds, double alpha);

} // namespace hileak
