#pragma once

// Modified Bessel function of the second kind K_nu(x) for real order and
// positive real argument.
//
// Temme's method: for |mu| <= 1/2 the pair (K_mu, K_{mu+1}) comes from the
// Temme power series when x < 2 and from Steed's evaluation of the CF2
// continued fraction otherwise; arbitrary orders follow by upward recurrence,
// which is stable for K. Values are carried as (mantissa, log-scale) so that
// large orders or large arguments never overflow.

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "nmvm/errors.hpp"

namespace nmvm::special {

namespace detail {

// Taylor coefficients of 1/Gamma(z) = sum_{k>=1} c_k z^k (Abramowitz & Stegun 6.1.34).
inline constexpr std::array<double, 26> kRecipGamma = {
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
    0.0000000050020075,
    -0.0000000011812746,
    0.0000000001043427,
    0.0000000000077823,
    -0.0000000000036968,
    0.0000000000005100,
    -0.0000000000000206,
    -0.0000000000000054,
    0.0000000000000014,
    0.0000000000000001,
};

struct TemmeGammas {
    double gam1;   // (1/G(1-mu) - 1/G(1+mu)) / (2 mu)
    double gam2;   // (1/G(1-mu) + 1/G(1+mu)) / 2
    double gampl;  // 1/G(1+mu)
    double gammi;  // 1/G(1-mu)
};

// Split the series of 1/G(1+mu) into even and odd parts so gam1 has no
// cancellation as mu -> 0. Valid for |mu| <= 1/2.
inline TemmeGammas temme_gammas(double mu) {
    const double mu2 = mu * mu;
    double odd = 0.0;   // sum_j c_{2j+1} mu^{2j}
    double even = 0.0;  // sum_j c_{2j+2} mu^{2j}
    for (int j = 12; j >= 0; --j) {
        odd = odd * mu2 + kRecipGamma[2 * j];
        even = even * mu2 + kRecipGamma[2 * j + 1];
    }
    return {-even, odd, odd + mu * even, odd - mu * even};
}

/// e^x K_mu(x) and e^x K_{mu+1}(x) for |mu| <= 1/2.
struct ScaledPair {
    double k_mu;
    double k_mu1;
};

inline ScaledPair temme_pair(double mu, double x) {
    constexpr double eps = 1e-17;
    constexpr int max_iter = 100000;
    const double pi = std::numbers::pi;

    if (x < 2.0) {
        const double x2 = 0.5 * x;
        const double pimu = pi * mu;
        const double fact = std::abs(pimu) < 1e-300 ? 1.0 : pimu / std::sin(pimu);
        double d = -std::log(x2);
        double e = mu * d;
        const double fact2 = std::abs(e) < 1e-300 ? 1.0 : std::sinh(e) / e;
        const auto g = temme_gammas(mu);
        double ff = fact * (g.gam1 * std::cosh(e) + g.gam2 * fact2 * d);
        double sum = ff;
        e = std::exp(e);
        double p = 0.5 * e / g.gampl;
        double q = 0.5 / (e * g.gammi);
        double c = 1.0;
        d = x2 * x2;
        double sum1 = p;
        const double mu2 = mu * mu;
        for (int i = 1; i <= max_iter; ++i) {
            ff = (i * ff + p + q) / (i * static_cast<double>(i) - mu2);
            c *= d / i;
            p /= (i - mu);
            q /= (i + mu);
            const double del = c * ff;
            sum += del;
            const double del1 = c * (p - i * ff);
            sum1 += del1;
            if (std::abs(del) < std::abs(sum) * eps) break;
        }
        const double ex = std::exp(x);
        return {sum * ex, sum1 * (2.0 / x) * ex};
    }

    // Steed's algorithm for CF2, scaled by e^x.
    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d;
    double delh = d;
    double q1 = 0.0;
    double q2 = 1.0;
    const double a1 = 0.25 - mu * mu;
    double q = a1;
    double c = a1;
    double a = -a1;
    double s = 1.0 + q * delh;
    for (int i = 1; i <= max_iter; ++i) {
        a -= 2 * i;
        c = -a * c / (i + 1.0);
        const double qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        const double dels = q * delh;
        s += dels;
        if (std::abs(dels / s) < eps) break;
    }
    h = a1 * h;
    const double k_mu = std::sqrt(pi / (2.0 * x)) / s;
    const double k_mu1 = k_mu * (mu + x + 0.5 - h) / x;
    return {k_mu, k_mu1};
}

/// K_nu(x) = mantissa * exp(log_scale - x).
struct ScaledValue {
    double mantissa;
    double log_scale;
};

inline ScaledValue bessel_k_scaled_parts(double nu, double x) {
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw DomainError("bessel_k: argument must be positive and finite, got " + std::to_string(x));
    }
    if (!std::isfinite(nu)) throw DomainError("bessel_k: order must be finite");
    nu = std::abs(nu);
    const auto steps = static_cast<long>(std::floor(nu + 0.5));
    const double mu = nu - static_cast<double>(steps);
    auto pair = temme_pair(mu, x);
    double km = pair.k_mu;
    double k1 = pair.k_mu1;
    double log_scale = 0.0;
    const double two_over_x = 2.0 / x;
    for (long i = 1; i <= steps; ++i) {
        const double next = (mu + static_cast<double>(i)) * two_over_x * k1 + km;
        km = k1;
        k1 = next;
        if (k1 > 1e250) {
            log_scale += std::log(k1);
            km /= k1;
            k1 = 1.0;
        }
    }
    return {km, log_scale};
}

}  // namespace detail

/// K_nu(x). Symmetric in nu. Underflows to 0 for very large x; use log_bessel_k there.
inline double bessel_k(double nu, double x) {
    const auto v = detail::bessel_k_scaled_parts(nu, x);
    return v.mantissa * std::exp(v.log_scale - x);
}

/// e^x K_nu(x).
inline double bessel_k_scaled(double nu, double x) {
    const auto v = detail::bessel_k_scaled_parts(nu, x);
    return v.mantissa * std::exp(v.log_scale);
}

/// log K_nu(x), finite for every finite order and positive argument.
inline double log_bessel_k(double nu, double x) {
    const auto v = detail::bessel_k_scaled_parts(nu, x);
    return std::log(v.mantissa) + v.log_scale - x;
}

/// K_{nu+1}(x) / K_nu(x) without forming either value.
inline double bessel_k_ratio(double nu, double x) {
    return std::exp(log_bessel_k(nu + 1.0, x) - log_bessel_k(nu, x));
}

}  // namespace nmvm::special
