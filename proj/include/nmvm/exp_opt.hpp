#pragma once

// Closed-form exponential-utility optimizer. Maximizing E[-e^{-aW}] over x reduces
// to minimizing H(theta) = e^{C theta} L_Z(A/2 - theta^2 C / 2) over a 1-D set of
// theta values, where A, B, C are the transformed scalars.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "nmvm/errors.hpp"
#include "nmvm/mixing.hpp"
#include "nmvm/model.hpp"
#include "nmvm/optim.hpp"

namespace nmvm {

struct SolverInfo {
    std::string method;
    int iterations = 0;
    double bracket_lo = 0.0;
    double bracket_hi = 0.0;
    double tolerance = 0.0;  ///< achieved bound on |theta - q_min| (bracket width)
};

struct ExpOptResult {
    double q_min = 0.0;
    Vector x_star;
    double optimal_utility = 0.0;  ///< E[U(W(x*))]; may underflow to -0 for extreme inputs
    double log_neg_utility = 0.0;  ///< log(-E[U(W(x*))]), always representable
    double g_value = 0.0;
    SolverInfo solver_info;
};

/// Closed interval of theta values; infinite ends are allowed.
struct ThetaDomain {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = 0.0;
};

/// Closed interval constraint on c = x^T (mu - 1 r_f).
struct ReturnConstraint {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    bool unconstrained() const { return std::isinf(lo) && lo < 0 && std::isinf(hi) && hi > 0; }
};

inline double log_h(const TransformedModel& tm, const MixingDistribution& mix, double theta) {
    if (!(std::abs(theta) < tm.theta0)) throw DomainError("H: theta outside (-theta0, theta0)");
    const double tau = 0.5 * tm.a_scalar - 0.5 * theta * theta * tm.c_scalar;
    return tm.c_scalar * theta + log_laplace(mix, tau);
}

inline double h_function(const TransformedModel& tm, const MixingDistribution& mix, double theta) {
    return std::exp(log_h(tm, mix, theta));
}

/// d/dtheta log H = C (1 + theta * m(tau)) with m the tilted mean of Z; this returns 1 + theta m(tau).
inline double h_slope_factor(const TransformedModel& tm, const MixingDistribution& mix, double theta) {
    const double tau = 0.5 * tm.a_scalar - 0.5 * theta * theta * tm.c_scalar;
    return 1.0 + theta * tilted_mean(mix, tau);
}

/// g(x_c) for the g-maximizing portfolio at return level c, written through q_c.
inline double g_from_q(const TransformedModel& tm, double q) { return 0.5 * tm.a_scalar - 0.5 * q * q * tm.c_scalar; }

/// theta value attached to the return level c.
inline double q_from_c(const TransformedModel& tm, double a, double w0, double c) {
    return (tm.b_scalar - a * w0 * c) / tm.c_scalar;
}

inline ThetaDomain theta_domain_for(const TransformedModel& tm, double a, double w0, const ReturnConstraint& rc) {
    if (rc.unconstrained()) return {};
    if (rc.lo > rc.hi) throw InfeasibleError("return constraint interval is empty");
    ThetaDomain d;
    d.lo = std::isinf(rc.hi) ? -std::numeric_limits<double>::infinity() : q_from_c(tm, a, w0, rc.hi);
    d.hi = std::isinf(rc.lo) ? std::numeric_limits<double>::infinity() : q_from_c(tm, a, w0, rc.lo);
    return d;
}

namespace detail {

struct HMin {
    double theta;
    SolverInfo info;
};

inline double safe_log_h(const TransformedModel& tm, const MixingDistribution& mix, double theta) {
    try {
        const double v = log_h(tm, mix, theta);
        return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
    } catch (const DomainError&) {
        return std::numeric_limits<double>::infinity();
    }
}

}  // namespace detail

/// Global minimizer of H over the closure of `domain` intersected with (-theta0, theta0).
inline detail::HMin minimize_h_detailed(const TransformedModel& tm, const MixingDistribution& mix, ThetaDomain domain) {
    if (!(tm.c_scalar > 0.0)) throw DegenerateError("H is constant when C = 0 (mu = 1 r_f)");
    if (std::isnan(domain.lo) || std::isnan(domain.hi) || domain.lo > domain.hi) throw InfeasibleError("theta domain is empty");
    const double eps = 1e-9 * std::max(1.0, std::isfinite(tm.theta0) ? tm.theta0 : 1.0);
    double lo = domain.lo;
    double hi = domain.hi;
    if (std::isfinite(tm.theta0)) {
        lo = std::max(lo, -tm.theta0 + eps);
        hi = std::min(hi, tm.theta0 - eps);
    }
    if (lo > hi) throw InfeasibleError("theta domain does not meet (-theta0, theta0)");
    detail::HMin out;
    out.info.bracket_lo = lo;
    out.info.bracket_hi = hi;
    if (lo >= 0.0) {
        // H is strictly increasing on [0, theta0).
        out.theta = lo;
        out.info.method = "left-endpoint";
        return out;
    }
    const double right = std::min(hi, 0.0);
    double left = lo;
    int doublings = 0;
    if (std::isinf(left)) {
        left = std::min(-1.0, right - 1.0);
        while (h_slope_factor(tm, mix, left) >= 0.0) {
            if (++doublings > 1100) throw DegenerateError("H has no minimizer: still decreasing as theta -> -inf");
            left *= 2.0;
        }
        out.info.bracket_lo = left;
    }

    constexpr int kSeeds = 33;
    std::vector<double> grid(kSeeds), vals(kSeeds);
    for (int i = 0; i < kSeeds; ++i) {
        grid[i] = i == kSeeds - 1 ? right : left + (right - left) * i / (kSeeds - 1);
        vals[i] = detail::safe_log_h(tm, mix, grid[i]);
    }
    // Candidates: both ends plus a refined local minimum around every interior grid minimum.
    std::vector<double> cands{left, right};
    int iterations = doublings;
    double width = 0.0;
    for (int i = 0; i < kSeeds; ++i) {
        const bool below_left = i == 0 || vals[i] <= vals[i - 1];
        const bool below_right = i == kSeeds - 1 || vals[i] <= vals[i + 1];
        if (!(below_left && below_right)) continue;
        const double a = grid[std::max(i - 1, 0)];
        const double b = grid[std::min(i + 1, kSeeds - 1)];
        const auto bm = optim::brent_minimize([&](double t) { return detail::safe_log_h(tm, mix, t); }, a, b);
        iterations += bm.iterations;
        double t = bm.x;
        // Value-based search stalls near sqrt(eps); polish on the slope factor when it brackets a sign change.
        const auto slope = [&](double th) { return h_slope_factor(tm, mix, th); };
        const double sa = slope(a);
        const double sb = slope(b);
        if (sa < 0.0 && sb > 0.0) {
            const auto r = optim::toms748(slope, a, b);
            iterations += r.iterations;
            width = std::max(width, r.width);
            if (detail::safe_log_h(tm, mix, r.x) <= bm.fx + 1e-15 * std::abs(bm.fx)) t = r.x;
        }
        cands.push_back(t);
    }
    double best = cands.front();
    double best_val = detail::safe_log_h(tm, mix, best);
    for (double t : cands) {
        const double v = detail::safe_log_h(tm, mix, t);
        if (v < best_val || (v == best_val && t < best)) {
            best = t;
            best_val = v;
        }
    }
    if (!std::isfinite(best_val)) throw InvariantError("minimize_h: H is not finite at any candidate");
    out.theta = best;
    out.info.method = "grid33+brent+toms748";
    out.info.iterations = iterations;
    out.info.tolerance = width;
    return out;
}

inline double minimize_h(const TransformedModel& tm, const MixingDistribution& mix, ThetaDomain domain = {}) {
    return minimize_h_detailed(tm, mix, domain).theta;
}

struct FocSolution {
    double tau_star;
    double theta_star;
    int iterations;
};

/// Stationary points of H on theta < 0, found in tau = A/2 - theta^2 C / 2 coordinates:
/// m(tau) sqrt(A - 2 tau) = sqrt(C), where m is the tilted mean of Z. Among several roots,
/// the one with the smallest H is returned.
inline FocSolution solve_foc(const TransformedModel& tm, const MixingDistribution& mix) {
    if (!(tm.c_scalar > 0.0)) throw DegenerateError("solve_foc requires C > 0");
    const double sqrt_c = std::sqrt(tm.c_scalar);
    const double s0 = tm.s0;
    // u = sqrt(A - 2 tau) in (0, u_max); u_max = sqrt(A - 2 s0) or found by doubling.
    const auto tau_of = [&](double u) { return 0.5 * (tm.a_scalar - u * u); };
    const auto phi = [&](double tau) { return tilted_mean(mix, tau) * std::sqrt(tm.a_scalar - 2.0 * tau) - sqrt_c; };
    double u_max;
    if (std::isfinite(s0)) {
        u_max = std::sqrt(tm.a_scalar - 2.0 * s0);
        u_max *= 1.0 - 1e-12;
    } else {
        u_max = std::max(1.0, std::sqrt(std::max(tm.a_scalar, 0.0)) + 1.0);
        int k = 0;
        while (phi(tau_of(u_max)) <= 0.0) {
            if (++k > 1100) throw DomainError("solve_foc: no root");
            u_max *= 2.0;
        }
    }
    constexpr int kScan = 200;
    std::vector<FocSolution> roots;
    double u_prev = 0.0;
    double f_prev = -sqrt_c;  // limit as tau -> A/2
    for (int i = 1; i <= kScan; ++i) {
        const double u = u_max * i / kScan;
        const double f = phi(tau_of(u));
        if ((f_prev < 0.0) != (f < 0.0) || f == 0.0) {
            // Bisect in tau; tau decreases as u grows.
            const double t_hi = tau_of(u_prev);
            const double t_lo = tau_of(u);
            const auto r = optim::bisect(phi, t_lo, t_hi, 0.0, 200);
            const double th = -std::sqrt(std::max(tm.a_scalar - 2.0 * r.x, 0.0) / tm.c_scalar);
            roots.push_back({r.x, th, r.iterations});
        }
        u_prev = u;
        f_prev = f;
    }
    if (roots.empty()) throw DomainError("solve_foc: no root");
    FocSolution best = roots.front();
    double best_val = detail::safe_log_h(tm, mix, best.theta_star);
    for (const auto& r : roots) {
        const double v = detail::safe_log_h(tm, mix, r.theta_star);
        if (v < best_val) {
            best = r;
            best_val = v;
        }
    }
    return best;
}

/// x* = (Sigma^-1 gamma - q Sigma^-1 (mu - 1 r_f)) / (a W0).
inline Vector optimal_portfolio(const MarketModel& model, double a, double w0, double q) {
    validate_investor(a, w0);
    Vector x = (model.solve_sigma(model.gamma()) - q * model.solve_sigma(model.excess_mu())) / (a * w0);
    if (!x.allFinite()) throw InvariantError("optimal_portfolio: non-finite weights");
    return x;
}

inline ExpOptResult optimize(const MarketModel& model, const MixingDistribution& mix, double a, double w0,
                             const ReturnConstraint& rc = {}) {
    validate_investor(a, w0);
    const auto tm = transform(model, mix);
    if (!(tm.c_scalar > 0.0)) throw DegenerateError("C = 0 (mu = 1 r_f): the optimal theta is undefined");
    const auto domain = theta_domain_for(tm, a, w0, rc);
    const auto hm = minimize_h_detailed(tm, mix, domain);
    ExpOptResult res;
    res.q_min = hm.theta;
    res.solver_info = hm.info;
    res.x_star = optimal_portfolio(model, a, w0, res.q_min);
    const Portfolio p{res.x_star, w0, a};
    res.g_value = g_value(model, p);
    res.log_neg_utility = log_neg_expected_exp_utility(model, mix, p);
    res.optimal_utility = -std::exp(res.log_neg_utility);
    return res;
}

}  // namespace nmvm
