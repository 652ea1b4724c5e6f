#pragma once

// Positive mixing laws Z for normal mean-variance mixtures
//   X = mu + gamma Z + sqrt(Z) A N.
// Each family provides its Laplace transform E[exp(-sZ)], the derivative,
// real-order moments and a sampler.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "nmvm/bessel.hpp"
#include "nmvm/errors.hpp"
#include "nmvm/rng.hpp"

namespace nmvm {

struct ConstantMixing {
    double value;
};

struct ExponentialMixing {
    double rate;
};

/// Density proportional to z^{lambda-1} exp(-(chi/z + psi z)/2).
struct GigMixing {
    double lambda;
    double chi;
    double psi;
};

struct BoundedUniformMixing {
    double lower;
    double upper;
};

class MixingDistribution {
public:
    using Family = std::variant<ConstantMixing, ExponentialMixing, GigMixing, BoundedUniformMixing>;

    static MixingDistribution constant(double value) {
        if (!(value > 0.0) || !std::isfinite(value)) {
            throw InputError("constant mixing requires value > 0");
        }
        return MixingDistribution(ConstantMixing{value});
    }

    static MixingDistribution exponential(double rate = 1.0) {
        if (!(rate > 0.0) || !std::isfinite(rate)) {
            throw InputError("exponential mixing requires rate > 0");
        }
        return MixingDistribution(ExponentialMixing{rate});
    }

    static MixingDistribution gig(double lambda, double chi, double psi) {
        if (!std::isfinite(lambda)) throw InputError("gig mixing requires a finite lambda");
        if (!(chi > 0.0) || !std::isfinite(chi)) throw InputError("gig mixing requires chi > 0");
        if (!(psi > 0.0) || !std::isfinite(psi)) throw InputError("gig mixing requires psi > 0");
        return MixingDistribution(GigMixing{lambda, chi, psi});
    }

    static MixingDistribution bounded_uniform(double lower, double upper) {
        if (!(lower > 0.0) || !(upper > lower) || !std::isfinite(upper)) {
            throw InputError("bounded_uniform mixing requires 0 < lower < upper");
        }
        return MixingDistribution(BoundedUniformMixing{lower, upper});
    }

    const Family& family() const noexcept { return family_; }

    template <typename T>
    bool is() const noexcept {
        return std::holds_alternative<T>(family_);
    }

    template <typename T>
    const T& as() const {
        return std::get<T>(family_);
    }

    std::string kind_name() const {
        return std::visit(
            [](const auto& f) -> std::string {
                using F = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<F, ConstantMixing>) return "constant";
                else if constexpr (std::is_same_v<F, ExponentialMixing>) return "exponential";
                else if constexpr (std::is_same_v<F, GigMixing>) return "gig";
                else return "bounded_uniform";
            },
            family_);
    }

private:
    explicit MixingDistribution(Family f) : family_(f) {}
    Family family_;
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// log((1 - e^{-t}) / t), the log Laplace transform of U(0,1) at t.
inline double log_unit_uniform_laplace(double t) {
    if (std::abs(t) < 1e-4) return t * (-0.5 + t / 24.0);
    if (t > -700.0) return std::log(-std::expm1(-t) / t);
    const double a = -t;
    return a + std::log(-std::expm1(-a)) - std::log(a);
}

// Mean of the density proportional to e^{-t u} on [0, 1].
inline double unit_uniform_tilted_mean(double t) {
    if (std::abs(t) < 1e-3) {
        const double t2 = t * t;
        return 0.5 - t / 12.0 + t * t2 / 720.0;
    }
    return 1.0 / t - 1.0 / std::expm1(t);
}

inline double gig_omega(const GigMixing& g) { return std::sqrt(g.chi * g.psi); }

}  // namespace detail

/// s_0: the Laplace transform is finite for all s > s_0. -inf when unbounded below.
inline double s_lower_bound(const MixingDistribution& mix) {
    return std::visit(
        [](const auto& f) -> double {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, ExponentialMixing>) return -f.rate;
            else if constexpr (std::is_same_v<F, GigMixing>) return -0.5 * f.psi;
            else return -detail::kInf;
        },
        mix.family());
}

/// Lower and upper end of the support of Z.
inline std::pair<double, double> support(const MixingDistribution& mix) {
    return std::visit(
        [](const auto& f) -> std::pair<double, double> {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, ConstantMixing>) return {f.value, f.value};
            else if constexpr (std::is_same_v<F, BoundedUniformMixing>) return {f.lower, f.upper};
            else return {0.0, detail::kInf};
        },
        mix.family());
}

inline void check_laplace_domain(const MixingDistribution& mix, double s, const char* who) {
    if (std::isnan(s) || !(s > s_lower_bound(mix)) || s == detail::kInf) {
        throw DomainError(std::string(who) + ": s = " + std::to_string(s) +
                          " is outside (s0, inf) with s0 = " + std::to_string(s_lower_bound(mix)));
    }
}

/// log E[exp(-sZ)].
inline double log_laplace(const MixingDistribution& mix, double s) {
    check_laplace_domain(mix, s, "laplace");
    return std::visit(
        [s](const auto& f) -> double {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, ConstantMixing>) {
                return -s * f.value;
            } else if constexpr (std::is_same_v<F, ExponentialMixing>) {
                return -std::log1p(s / f.rate);
            } else if constexpr (std::is_same_v<F, GigMixing>) {
                const double u = f.psi + 2.0 * s;
                return 0.5 * f.lambda * (std::log(f.psi) - std::log(u)) +
                       special::log_bessel_k(f.lambda, std::sqrt(f.chi * u)) -
                       special::log_bessel_k(f.lambda, detail::gig_omega(f));
            } else {
                const double width = f.upper - f.lower;
                return -s * f.lower + detail::log_unit_uniform_laplace(s * width);
            }
        },
        mix.family());
}

inline double laplace(const MixingDistribution& mix, double s) { return std::exp(log_laplace(mix, s)); }

/// E[Z e^{-sZ}] / E[e^{-sZ}]: the mean of Z under the exponentially tilted law.
/// Equals -d/ds log L(s).
inline double tilted_mean(const MixingDistribution& mix, double s) {
    check_laplace_domain(mix, s, "laplace_deriv");
    return std::visit(
        [s](const auto& f) -> double {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, ConstantMixing>) {
                return f.value;
            } else if constexpr (std::is_same_v<F, ExponentialMixing>) {
                return 1.0 / (f.rate + s);
            } else if constexpr (std::is_same_v<F, GigMixing>) {
                // Tilting GIG(lambda, chi, psi) by e^{-sz} gives GIG(lambda, chi, psi + 2s).
                const double u = f.psi + 2.0 * s;
                return std::sqrt(f.chi / u) * special::bessel_k_ratio(f.lambda, std::sqrt(f.chi * u));
            } else {
                const double width = f.upper - f.lower;
                return f.lower + width * detail::unit_uniform_tilted_mean(s * width);
            }
        },
        mix.family());
}

/// d/ds E[exp(-sZ)] = -E[Z exp(-sZ)].
inline double laplace_deriv(const MixingDistribution& mix, double s) {
    return -laplace(mix, s) * tilted_mean(mix, s);
}

/// E[Z^r].
inline double moment(const MixingDistribution& mix, double r) {
    return std::visit(
        [r](const auto& f) -> double {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, ConstantMixing>) {
                return std::pow(f.value, r);
            } else if constexpr (std::is_same_v<F, ExponentialMixing>) {
                if (!(r > -1.0)) {
                    throw DomainError("moment: E[Z^r] diverges for exponential mixing when r <= -1");
                }
                return std::exp(std::lgamma(1.0 + r) - r * std::log(f.rate));
            } else if constexpr (std::is_same_v<F, GigMixing>) {
                const double omega = detail::gig_omega(f);
                return std::exp(0.5 * r * std::log(f.chi / f.psi) + special::log_bessel_k(f.lambda + r, omega) -
                                special::log_bessel_k(f.lambda, omega));
            } else {
                const double width = f.upper - f.lower;
                if (r == -1.0) return (std::log(f.upper) - std::log(f.lower)) / width;
                return (std::pow(f.upper, r + 1.0) - std::pow(f.lower, r + 1.0)) / ((r + 1.0) * width);
            }
        },
        mix.family());
}

inline double mean(const MixingDistribution& mix) { return moment(mix, 1.0); }

inline double variance(const MixingDistribution& mix) {
    return std::visit(
        [&mix](const auto& f) -> double {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, ConstantMixing>) {
                return 0.0;
            } else if constexpr (std::is_same_v<F, ExponentialMixing>) {
                return 1.0 / (f.rate * f.rate);
            } else if constexpr (std::is_same_v<F, BoundedUniformMixing>) {
                const double w = f.upper - f.lower;
                return w * w / 12.0;
            } else {
                const double m = moment(mix, 1.0);
                return moment(mix, 2.0) - m * m;
            }
        },
        mix.family());
}

inline double binomial(int n, int k) {
    double c = 1.0;
    for (int j = 1; j <= k; ++j) c = c * (n - k + j) / j;
    return c;
}

/// E[(Z - EZ)^i Z^p] by binomial expansion of (Z - EZ)^i.
inline double mixed_central_moment(const MixingDistribution& mix, int i, double p) {
    if (i < 0) throw DomainError("mixed_central_moment: i must be >= 0");
    if (i == 0) return p == 0.0 ? 1.0 : moment(mix, p);
    if (mix.is<ConstantMixing>()) return 0.0;
    const double m = mean(mix);
    double sum = 0.0;
    for (int j = 0; j <= i; ++j) {
        sum += binomial(i, j) * moment(mix, p + j) * std::pow(-m, i - j);
    }
    return sum;
}

namespace detail {

// Devroye (2014) rejection sampler for the GIG law with density proportional to
// x^{lambda-1} exp(-omega/2 (x + 1/x)); scaled afterwards by eta = sqrt(chi/psi).
class GigRejection {
public:
    GigRejection() = default;

    explicit GigRejection(const GigMixing& g) {
        negative_ = g.lambda < 0.0;
        lambda_ = std::abs(g.lambda);
        omega_ = std::sqrt(g.chi * g.psi);
        eta_ = std::sqrt(g.chi / g.psi);
        alpha_ = std::sqrt(omega_ * omega_ + lambda_ * lambda_) - lambda_;

        double tmp = -psi(1.0);
        if (tmp < 0.5) {
            t_ = std::log(4.0 / (alpha_ + 2.0 * lambda_));
        } else if (tmp <= 2.0) {
            t_ = 1.0;
        } else {
            t_ = std::sqrt(2.0 / (alpha_ + lambda_));
        }
        tmp = -psi(-1.0);
        if (tmp < 0.5) {
            const double inv = 1.0 / alpha_;
            s_ = std::log(1.0 + inv + std::sqrt(inv * (inv + 2.0)));
            if (lambda_ > 0.0) s_ = std::min(s_, 1.0 / lambda_);
        } else if (tmp <= 2.0) {
            s_ = 1.0;
        } else {
            s_ = std::sqrt(4.0 / (alpha_ * std::cosh(1.0) + lambda_));
        }
        eta_t_ = -psi(t_);
        zeta_ = -psi_prime(t_);
        theta_ = -psi(-s_);
        xi_ = psi_prime(-s_);
        p_ = 1.0 / xi_;
        r_ = 1.0 / zeta_;
        t1_ = t_ - r_ * eta_t_;
        s1_ = s_ - p_ * theta_;
        q_ = t1_ + s1_;
        const double total = p_ + q_ + r_;
        frac_q_ = q_ / total;
        frac_qr_ = (q_ + r_) / total;
        const double ratio = lambda_ / omega_;
        mode_scale_ = ratio + std::sqrt(1.0 + ratio * ratio);
    }

    double draw(CounterRng& rng) const {
        double x = 0.0;
        for (;;) {
            const double u = rng.uniform();
            const double v = rng.uniform();
            const double w = rng.uniform();
            if (u < frac_q_) {
                x = -s1_ + q_ * v;
            } else if (u < frac_qr_) {
                x = t1_ - r_ * std::log(v);
            } else {
                x = -s1_ + p_ * std::log(v);
            }
            double chi = 1.0;
            if (x < -s1_) {
                chi = std::exp(-theta_ + xi_ * (x + s_));
            } else if (x > t1_) {
                chi = std::exp(-eta_t_ - zeta_ * (x - t_));
            }
            if (w * chi <= std::exp(psi(x))) break;
        }
        double z = mode_scale_ * std::exp(x);
        if (negative_) z = 1.0 / z;
        return eta_ * z;
    }

private:
    double psi(double x) const { return -alpha_ * (std::cosh(x) - 1.0) - lambda_ * (std::exp(x) - x - 1.0); }
    double psi_prime(double x) const { return -alpha_ * std::sinh(x) - lambda_ * (std::exp(x) - 1.0); }

    bool negative_ = false;
    double lambda_ = 0.0, omega_ = 1.0, eta_ = 1.0, alpha_ = 1.0;
    double t_ = 1.0, s_ = 1.0, eta_t_ = 0.0, zeta_ = 1.0, theta_ = 0.0, xi_ = 1.0;
    double p_ = 1.0, q_ = 1.0, r_ = 1.0, t1_ = 0.0, s1_ = 0.0;
    double frac_q_ = 0.0, frac_qr_ = 0.0, mode_scale_ = 1.0;
};

}  // namespace detail

/// Draws Z from a fixed mixing law; set-up cost is paid once.
class MixingSampler {
public:
    explicit MixingSampler(const MixingDistribution& mix) : mix_(mix) {
        if (mix.is<GigMixing>()) gig_ = detail::GigRejection(mix.as<GigMixing>());
    }

    double operator()(CounterRng& rng) const {
        return std::visit(
            [&](const auto& f) -> double {
                using F = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<F, ConstantMixing>) return f.value;
                else if constexpr (std::is_same_v<F, ExponentialMixing>) return rng.exponential() / f.rate;
                else if constexpr (std::is_same_v<F, GigMixing>) return gig_.draw(rng);
                else return f.lower + (f.upper - f.lower) * rng.uniform();
            },
            mix_.family());
    }

private:
    MixingDistribution mix_;
    detail::GigRejection gig_;
};

/// `count` draws; draw i comes from stream (seed, i) so any prefix is reproducible.
inline std::vector<double> sample(const MixingDistribution& mix, std::uint64_t seed, std::size_t count) {
    if (count < 1) throw InputError("sample: count must be >= 1");
    const MixingSampler sampler(mix);
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        CounterRng rng(seed, i);
        out[i] = sampler(rng);
    }
    return out;
}

}  // namespace nmvm
