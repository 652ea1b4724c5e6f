#pragma once

// Utility functions with derivatives of every order the moment expansion needs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "nmvm/errors.hpp"

namespace nmvm {

class UtilitySpec {
public:
    enum class Kind { exponential, power, log, quadratic, custom };

    using ValueFn = std::function<double(double)>;
    using DerivFn = std::function<double(int, double)>;

    /// U(w) = -exp(-a w)
    static UtilitySpec exponential(double a) {
        if (!(a > 0.0) || !std::isfinite(a)) throw InputError("exponential utility: a must be > 0");
        return UtilitySpec(
            Kind::exponential, "exponential", [a](double w) { return -std::exp(-a * w); },
            [a](int k, double w) { return -std::pow(-a, k) * std::exp(-a * w); }, kUnbounded,
            -std::numeric_limits<double>::infinity(), a);
    }

    /// U(w) = w^(1-eta) / (1-eta), w > 0; eta = 1 is the log utility.
    static UtilitySpec power(double eta) {
        if (!(eta > 0.0) || !std::isfinite(eta)) throw InputError("power utility: eta must be > 0");
        if (eta == 1.0) return log();
        return UtilitySpec(
            Kind::power, "power", [eta](double w) { return std::pow(w, 1.0 - eta) / (1.0 - eta); },
            [eta](int k, double w) {
                double c = 1.0;
                for (int j = 0; j < k - 1; ++j) c *= -eta - j;
                return c * std::pow(w, -eta - (k - 1));
            },
            kUnbounded, 0.0, eta);
    }

    /// U(w) = ln w, w > 0.
    static UtilitySpec log() {
        return UtilitySpec(
            Kind::log, "log", [](double w) { return std::log(w); },
            [](int k, double w) { return (k % 2 == 1 ? 1.0 : -1.0) * std::tgamma(k) / std::pow(w, k); }, kUnbounded, 0.0,
            1.0);
    }

    /// U(w) = w - b w^2
    static UtilitySpec quadratic(double b) {
        if (!(b > 0.0) || !std::isfinite(b)) throw InputError("quadratic utility: b must be > 0");
        return UtilitySpec(
            Kind::quadratic, "quadratic", [b](double w) { return w - b * w * w; },
            [b](int k, double w) {
                if (k == 1) return 1.0 - 2.0 * b * w;
                return k == 2 ? -2.0 * b : 0.0;
            },
            kUnbounded, -std::numeric_limits<double>::infinity(), b);
    }

    /// User-supplied utility; derivatives are checked against finite differences on `probes`.
    static UtilitySpec custom(std::string name, ValueFn value, DerivFn derivative, int max_order,
                              std::vector<double> probes = {0.5, 0.75, 1.0, 1.5, 2.0},
                              double domain_lower = -std::numeric_limits<double>::infinity()) {
        if (max_order < 1) throw InputError("custom utility: max_order must be >= 1");
        UtilitySpec u(Kind::custom, std::move(name), std::move(value), std::move(derivative), max_order, domain_lower,
                      std::nan(""));
        u.validate(probes);
        return u;
    }

    Kind kind() const { return kind_; }
    const std::string& name() const { return name_; }
    int max_order() const { return max_order_; }
    /// Parameter of the built-in family (a, eta, b); NaN for custom utilities.
    double parameter() const { return parameter_; }
    /// U is defined for w strictly above this value.
    double domain_lower() const { return domain_lower_; }
    bool in_domain(double w) const { return w > domain_lower_; }

    double value(double w) const { return value_(w); }
    double derivative(int k, double w) const {
        if (k < 1 || k > max_order_) throw InputError("utility derivative order out of range");
        return deriv_(k, w);
    }

    /// Throws InputError when derivative k differs from a central difference of
    /// derivative k-1 by more than 1e-5 relative at any probe.
    void validate(const std::vector<double>& probes) const {
        const int top = std::min(max_order_, 8);
        for (double w : probes) {
            if (!in_domain(w)) continue;
            for (int k = 1; k <= top; ++k) {
                const double h = 1e-4 * std::max(1.0, std::abs(w));
                if (!in_domain(w - h)) continue;
                const auto lower = [&](double t) { return k == 1 ? value_(t) : deriv_(k - 1, t); };
                const double fd = (lower(w + h) - lower(w - h)) / (2.0 * h);
                const double d = deriv_(k, w);
                const double scale = std::max({std::abs(d), std::abs(fd), 1e-8 * std::max(1.0, std::abs(lower(w)))});
                if (!(std::abs(fd - d) <= 1e-5 * scale)) {
                    throw InputError("utility '" + name_ + "': derivative of order " + std::to_string(k) +
                                     " disagrees with finite differences at w=" + std::to_string(w));
                }
            }
        }
    }

    static constexpr int kUnbounded = 64;

private:
    UtilitySpec(Kind kind, std::string name, ValueFn value, DerivFn deriv, int max_order, double domain_lower,
                double parameter)
        : kind_(kind), name_(std::move(name)), value_(std::move(value)), deriv_(std::move(deriv)),
          max_order_(max_order), domain_lower_(domain_lower), parameter_(parameter) {}

    Kind kind_;
    std::string name_;
    ValueFn value_;
    DerivFn deriv_;
    int max_order_;
    double domain_lower_;
    double parameter_;
};

}  // namespace nmvm
