#pragma once

// Finite segments of a countable-asset market
//   R_1 = gamma_1 Z + mu_1 + beta_bar_1 sqrt(Z) eps_1,
//   R_i = gamma_i Z + mu_i + beta_i sqrt(Z) eps_1 + beta_bar_i sqrt(Z) eps_i   (i >= 2),
// with r_f = 0 and bounded Z. Strategies are written as V(h) = sum h_i sqrt(Z)(eps_i - b_i(Z)),
// where b_i(z) = E_Q[eps_i | Z = z] makes every R_i a Q-martingale increment.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "nmvm/errors.hpp"
#include "nmvm/exp_opt.hpp"
#include "nmvm/mixing.hpp"
#include "nmvm/model.hpp"
#include "nmvm/parallel.hpp"

namespace nmvm {

/// Coefficient sequence c_i, given as kappa / i^p or as explicit values.
class Sequence {
public:
    static Sequence power(double kappa, double p) {
        if (!std::isfinite(kappa) || !std::isfinite(p)) throw InputError("sequence: non-finite power-law parameters");
        Sequence s;
        s.kappa_ = kappa;
        s.p_ = p;
        return s;
    }
    /// values[k] is the term with index first_index + k.
    static Sequence values(std::vector<double> v, int first_index = 1) {
        for (double x : v) {
            if (!std::isfinite(x)) throw InputError("sequence: non-finite value");
        }
        Sequence s;
        s.values_ = std::move(v);
        s.first_ = first_index;
        s.explicit_ = true;
        return s;
    }
    static Sequence zero() { return power(0.0, 0.0); }

    bool is_explicit() const { return explicit_; }
    double kappa() const { return kappa_; }
    double exponent() const { return p_; }
    const std::vector<double>& explicit_values() const { return values_; }
    int first_index() const { return first_; }
    /// Largest index this sequence can produce.
    int last_index() const {
        return explicit_ ? first_ + static_cast<int>(values_.size()) - 1 : std::numeric_limits<int>::max();
    }

    double operator()(int i) const {
        if (!explicit_) return kappa_ / std::pow(static_cast<double>(i), p_);
        if (i < first_ || i > last_index()) throw InputError("sequence: index " + std::to_string(i) + " not provided");
        return values_[static_cast<std::size_t>(i - first_)];
    }

private:
    double kappa_ = 0.0, p_ = 0.0;
    std::vector<double> values_;
    int first_ = 1;
    bool explicit_ = false;
};

struct LargeMarketSpec {
    Sequence gamma = Sequence::zero();
    Sequence mu = Sequence::zero();
    Sequence beta = Sequence::zero();  ///< used for i >= 2
    Sequence beta_bar = Sequence::power(1.0, 0.0);
    MixingDistribution mix = MixingDistribution::bounded_uniform(0.5, 1.5);
    int max_n = 1;

    /// Support [c, C] of Z.
    std::pair<double, double> z_range() const { return support(mix); }

    /// Throws InputError for unbounded mixing, zero beta_bar or too-short explicit arrays.
    void validate() const {
        if (max_n < 1) throw InputError("large market: max_n must be >= 1");
        const auto [c, cc] = z_range();
        if (!(c > 0.0) || !std::isfinite(cc)) {
            throw InputError("large market: mixing must have bounded support [c, C] with c > 0 (" + mix.kind_name() + ")");
        }
        if (gamma.last_index() < max_n || mu.last_index() < max_n || beta_bar.last_index() < max_n ||
            (max_n >= 2 && beta.last_index() < max_n)) {
            throw InputError("large market: explicit sequences shorter than max_n");
        }
        if (max_n >= 2 && beta.is_explicit() && beta.first_index() > 2) {
            throw InputError("large market: beta values must start at index 2");
        }
        for (int i = 1; i <= max_n; ++i) {
            if (beta_bar(i) == 0.0) throw InputError("large market: beta_bar_" + std::to_string(i) + " is zero");
        }
    }
};

/// sqrt(z) b_i(z) = -(gamma'_i z + mu'_i): coefficients of the n-asset model in h-coordinates.
struct EffectiveSegment {
    Vector mu_prime;
    Vector gamma_prime;
};

/// (gamma'_i, mu'_i) of a single asset.
inline std::pair<double, double> effective_coefficients(const LargeMarketSpec& spec, int i) {
    const double bb1 = spec.beta_bar(1);
    const double g1 = spec.gamma(1) / bb1;
    const double m1 = spec.mu(1) / bb1;
    if (i == 1) return {g1, m1};
    const double bb = spec.beta_bar(i);
    const double b = spec.beta(i);
    return {(spec.gamma(i) - b * g1) / bb, (spec.mu(i) - b * m1) / bb};
}

inline EffectiveSegment effective_nmvm_segment(const LargeMarketSpec& spec, int n) {
    if (n < 1 || n > spec.max_n) throw InputError("segment size must be in [1, max_n]");
    EffectiveSegment seg{Vector(n), Vector(n)};
    for (int i = 1; i <= n; ++i) {
        const auto [g, m] = effective_coefficients(spec, i);
        seg.gamma_prime(i - 1) = g;
        seg.mu_prime(i - 1) = m;
    }
    return seg;
}

inline void check_z(const LargeMarketSpec& spec, double z) {
    const auto [c, cc] = spec.z_range();
    if (!(z >= c && z <= cc)) throw DomainError("z outside the support [c, C] of Z");
}

/// b_i(z) = E_Q[eps_i | Z = z]; for i >= 2 it carries the -beta_i b_1(z) / beta_bar_i term.
inline double b_function(const LargeMarketSpec& spec, int i, double z) {
    if (i < 1) throw InputError("b_function: i must be >= 1");
    check_z(spec, z);
    const double rz = std::sqrt(z);
    const double b1 = -spec.gamma(1) * rz / spec.beta_bar(1) - spec.mu(1) / (rz * spec.beta_bar(1));
    if (i == 1) return b1;
    const double bb = spec.beta_bar(i);
    return -spec.gamma(i) * rz / bb - spec.mu(i) / (rz * bb) - spec.beta(i) * b1 / bb;
}

/// sup over z in [c, C] of |u sqrt(z) + v / sqrt(z)|, checking both ends and the stationary point z = v/u.
inline double sup_abs_sqrt_form(double u, double v, double c, double cc) {
    const auto f = [&](double z) { return std::abs(u * std::sqrt(z) + v / std::sqrt(z)); };
    double m = std::max(f(c), f(cc));
    if (u != 0.0 && v / u > c && v / u < cc) m = std::max(m, f(v / u));
    return m;
}

/// d_i = sup_{z in [c, C]} |b_i(z)|.
inline double d_coefficient(const LargeMarketSpec& spec, int i) {
    if (i < 1) throw InputError("d_coefficient: i must be >= 1");
    const auto [g, m] = effective_coefficients(spec, i);
    const auto [c, cc] = spec.z_range();
    return sup_abs_sqrt_form(-g, -m, c, cc);
}

/// sum_{i=n+1}^{2n} d_i^2, the Cauchy-tail proxy for square-summability of (d_i).
inline double d2_tail(const LargeMarketSpec& spec, int n) {
    double s = 0.0;
    for (int i = n + 1; i <= 2 * n; ++i) {
        const double d = d_coefficient(spec, i);
        s += d * d;
    }
    return s;
}

struct SegmentOptimum {
    double u_n;     ///< min_h E[exp(-V(h))]
    double q_min;
    Vector h_star;  ///< minimizing h = gamma' - q_min mu'
};

/// Minimal E[exp(-V(h))] over h in R^n, via the closed-form optimizer on the segment's
/// NMVM form (A = I, r_f = 0, a = W0 = 1).
inline SegmentOptimum segment_optimum(const LargeMarketSpec& spec, int n) {
    const auto seg = effective_nmvm_segment(spec, n);
    TransformedModel tm;
    tm.mu0 = seg.mu_prime;
    tm.gamma0 = seg.gamma_prime;
    tm.a_scalar = tm.gamma0.squaredNorm();
    tm.b_scalar = tm.gamma0.dot(tm.mu0);
    tm.c_scalar = tm.mu0.squaredNorm();
    tm.s0 = s_lower_bound(spec.mix);
    tm.theta0 = theta0_for(tm.a_scalar, tm.c_scalar, tm.s0);
    SegmentOptimum out;
    if (!(tm.c_scalar > 0.0)) {
        // Without a location premium the best achievable Laplace argument is A/2 at h = gamma'.
        out.q_min = 0.0;
        out.u_n = laplace(spec.mix, 0.5 * tm.a_scalar);
        out.h_star = tm.gamma0;
        return out;
    }
    out.q_min = minimize_h(tm, spec.mix);
    out.u_n = std::exp(-tm.b_scalar + log_h(tm, spec.mix, out.q_min));
    out.h_star = tm.gamma0 - out.q_min * tm.mu0;
    return out;
}

inline double u_n(const LargeMarketSpec& spec, int n) { return segment_optimum(spec, n).u_n; }

/// f_n(z, eps) = exp(sum_i [b_i(z) eps_i - b_i(z)^2 / 2]); under f_n dP each eps_i given Z = z is N(b_i(z), 1).
inline double martingale_density(const LargeMarketSpec& spec, int n, double z, const Vector& eps) {
    if (eps.size() != n) throw InputError("martingale_density: eps must have length n");
    double e = 0.0;
    for (int i = 1; i <= n; ++i) {
        const double b = b_function(spec, i, z);
        e += b * eps(i - 1) - 0.5 * b * b;
    }
    return std::exp(e);
}

struct ConvergenceRow {
    int n;
    double u_n;
    double gap;            ///< U_{previous n} - U_n; NaN on the first row
    double gap_to_double;  ///< U_n - U_{2n}; NaN when index 2n is not available
    double d2_tail;        ///< sum_{i=n+1}^{2n} d_i^2; NaN when index 2n is not available
};

struct ConvergenceStudy {
    std::vector<ConvergenceRow> rows;
    bool converged = false;  ///< |U_n - U_{2n}| below tolerance on the last row
    double tolerance = 0.0;
};

inline ConvergenceStudy convergence_study(const LargeMarketSpec& spec, const std::vector<int>& n_list,
                                          double tolerance = 1e-4) {
    spec.validate();
    if (n_list.empty()) throw InputError("convergence_study: empty n list");
    for (std::size_t k = 0; k < n_list.size(); ++k) {
        if (n_list[k] < 1 || n_list[k] > spec.max_n) throw InputError("convergence_study: n outside [1, max_n]");
        if (k > 0 && n_list[k] <= n_list[k - 1]) throw InputError("convergence_study: n list must be increasing");
    }
    ConvergenceStudy out;
    out.tolerance = tolerance;
    out.rows.resize(n_list.size());
    // Quantities at index 2n are properties of the coefficients, so they are evaluated
    // beyond max_n whenever the sequences can produce those indices.
    const int reach = std::min({spec.gamma.last_index(), spec.mu.last_index(), spec.beta.last_index(),
                                spec.beta_bar.last_index()});
    const double nan = std::numeric_limits<double>::quiet_NaN();
    parallel_for(n_list.size(), [&](std::size_t k) {
        const int n = n_list[k];
        auto& row = out.rows[k];
        row.n = n;
        row.u_n = u_n(spec, n);
        if (n <= reach / 2) {
            LargeMarketSpec wide = spec;
            wide.max_n = 2 * n;
            row.d2_tail = d2_tail(wide, n);
            row.gap_to_double = row.u_n - u_n(wide, 2 * n);
        } else {
            row.d2_tail = nan;
            row.gap_to_double = nan;
        }
    });
    for (std::size_t k = 0; k < out.rows.size(); ++k) {
        out.rows[k].gap = k == 0 ? nan : out.rows[k - 1].u_n - out.rows[k].u_n;
    }
    out.converged = std::abs(out.rows.back().gap_to_double) < tolerance;
    return out;
}

}  // namespace nmvm
