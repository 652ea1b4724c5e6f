#pragma once

// Moment-expansion optimizer for general utilities. The law of W depends on the
// portfolio only through (phi, psi, rho): the cosines of y = A^T x with gamma0
// and mu0, and |y|. E U(W) is approximated by the Taylor series of U around the
// mean wealth, truncated at a chosen order, and maximized over that 3-D set.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include "nmvm/errors.hpp"
#include "nmvm/mixing.hpp"
#include "nmvm/model.hpp"
#include "nmvm/optim.hpp"
#include "nmvm/utility.hpp"

namespace nmvm {

struct ReducedPoint {
    double phi = 0.0;  ///< cos(y, gamma0)
    double psi = 0.0;  ///< cos(y, mu0)
    double rho = 0.0;  ///< |y|
};

/// Box bounds on the reduced coordinates. A NaN rho_hi asks optimize_3d to pick
/// a bound from the local mean-variance scale of the utility.
struct ReducedBox {
    double phi_lo = -1.0, phi_hi = 1.0;
    double psi_lo = -1.0, psi_hi = 1.0;
    double rho_lo = 0.0, rho_hi = std::numeric_limits<double>::quiet_NaN();

    bool contains(const ReducedPoint& p, double tol = 1e-12) const {
        return p.phi >= phi_lo - tol && p.phi <= phi_hi + tol && p.psi >= psi_lo - tol && p.psi <= psi_hi + tol &&
               p.rho >= rho_lo - tol * std::max(1.0, rho_lo) && p.rho <= rho_hi + tol * std::max(1.0, rho_hi);
    }
};

/// E N^m for N ~ N(0,1): 0 for odd m, (m-1)!! for even m.
inline double normal_moment(int m) {
    if (m < 0) throw InputError("normal_moment: m must be >= 0");
    if (m % 2 == 1) return 0.0;
    double r = 1.0;
    for (int j = m - 1; j > 1; j -= 2) r *= j;
    return r;
}

/// Orthonormal frame for y-space: gamma0 direction, the part of mu0 orthogonal to
/// it, and (when n allows) one fixed direction orthogonal to both.
class ReducedFrame {
public:
    explicit ReducedFrame(const TransformedModel& tm) {
        const auto n = tm.mu0.size();
        g_norm_ = tm.gamma0.norm();
        m_norm_ = tm.mu0.norm();
        std::vector<Vector> cols;
        if (g_norm_ > 0.0) cols.push_back(tm.gamma0 / g_norm_);
        if (m_norm_ > 0.0) {
            Vector r = tm.mu0;
            for (const auto& c : cols) r -= r.dot(c) * c;
            if (r.norm() > 1e-10 * m_norm_) cols.push_back(r / r.norm());
        }
        span_dim_ = static_cast<int>(cols.size());
        if (n > span_dim_) {
            Matrix b(n, span_dim_);
            for (int j = 0; j < span_dim_; ++j) b.col(j) = cols[j];
            const Matrix proj = Matrix::Identity(n, n) - b * b.transpose();
            Eigen::ColPivHouseholderQR<Matrix> qr(proj);
            Vector e = Vector::Zero(n);
            e(0) = 1.0;
            Vector c = qr.householderQ() * e;
            // Re-orthogonalize against the span for numerical hygiene.
            for (const auto& col : cols) c -= c.dot(col) * col;
            cols.push_back(c / c.norm());
        }
        basis_.resize(n, static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) basis_.col(static_cast<Eigen::Index>(j)) = cols[j];
        gamma_c_ = basis_.transpose() * tm.gamma0;
        mu_c_ = basis_.transpose() * tm.mu0;
        if (has_complement()) {
            gamma_c_(dim() - 1) = 0.0;
            mu_c_(dim() - 1) = 0.0;
        }
    }

    int dim() const { return static_cast<int>(basis_.cols()); }
    int span_dim() const { return span_dim_; }
    bool has_complement() const { return dim() > span_dim_; }
    const Matrix& basis() const { return basis_; }
    double gamma_norm() const { return g_norm_; }
    double mu_norm() const { return m_norm_; }

    Vector y_of(const Vector& v) const { return basis_ * v; }

    ReducedPoint point_of(const Vector& v) const {
        ReducedPoint p;
        p.rho = v.norm();
        if (p.rho > 0.0) {
            if (g_norm_ > 0.0) p.phi = std::clamp(v.dot(gamma_c_) / (g_norm_ * p.rho), -1.0, 1.0);
            if (m_norm_ > 0.0) p.psi = std::clamp(v.dot(mu_c_) / (m_norm_ * p.rho), -1.0, 1.0);
        }
        return p;
    }

    /// Frame coordinates of a y realizing p; throws InfeasibleError if no such y exists.
    Vector coords_of(const ReducedPoint& p, double tol = 1e-10) const {
        if (!(p.rho >= 0.0) || !std::isfinite(p.rho)) throw InputError("reduced point: rho must be finite and >= 0");
        Vector v = Vector::Zero(dim());
        if (p.rho == 0.0) return v;
        Vector vs;
        double residual;
        span_solution(p, vs, residual);
        if (residual > tol * p.rho * std::max({1.0, g_norm_, m_norm_})) {
            throw InfeasibleError("reduced point: (phi, psi) inconsistent with the angle between gamma0 and mu0");
        }
        const double r2 = p.rho * p.rho - vs.squaredNorm();
        if (r2 < -tol * p.rho * p.rho) throw InfeasibleError("reduced point violates the Gram (cosine) constraint");
        v.head(span_dim_) = vs;
        if (has_complement()) {
            v(dim() - 1) = std::sqrt(std::max(r2, 0.0));
        } else if (r2 > tol * p.rho * p.rho) {
            throw InfeasibleError("reduced point needs a direction outside span{gamma0, mu0}, which n does not allow");
        }
        return v;
    }

    /// Nearest-feasible frame coordinates for p (used to seed searches).
    Vector project(const ReducedPoint& p) const {
        Vector v = Vector::Zero(dim());
        if (!(p.rho > 0.0)) return v;
        Vector vs;
        double residual;
        span_solution(p, vs, residual);
        const double ns = vs.norm();
        if (ns >= p.rho || (!has_complement() && ns > 0.0)) {
            v.head(span_dim_) = vs * (p.rho / ns);
        } else if (has_complement()) {
            v.head(span_dim_) = vs;
            v(dim() - 1) = std::sqrt(p.rho * p.rho - ns * ns);
        } else {
            v(0) = p.rho;
        }
        return v;
    }

private:
    void span_solution(const ReducedPoint& p, Vector& vs, double& residual) const {
        vs = Vector::Zero(span_dim_);
        residual = 0.0;
        if (span_dim_ == 0) return;
        std::vector<std::pair<Vector, double>> rows;
        if (g_norm_ > 0.0) rows.emplace_back(gamma_c_.head(span_dim_), p.phi * g_norm_ * p.rho);
        if (m_norm_ > 0.0) rows.emplace_back(mu_c_.head(span_dim_), p.psi * m_norm_ * p.rho);
        Matrix m(static_cast<Eigen::Index>(rows.size()), span_dim_);
        Vector rhs(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            m.row(static_cast<Eigen::Index>(i)) = rows[i].first.transpose();
            rhs(static_cast<Eigen::Index>(i)) = rows[i].second;
        }
        // Minimum-norm solution (Moore-Penrose) of the cosine constraints within the span.
        Eigen::CompleteOrthogonalDecomposition<Matrix> cod(m);
        vs = cod.solve(rhs);
        residual = (m * vs - rhs).norm();
    }

    Matrix basis_;
    Vector gamma_c_, mu_c_;
    double g_norm_ = 0.0, m_norm_ = 0.0;
    int span_dim_ = 0;
};

/// (phi, psi, rho) of the portfolio x, via y = A^T x.
inline ReducedPoint reduced_point(const MarketModel& model, const TransformedModel& tm, const Vector& x) {
    ReducedPoint p;
    p.rho = std::sqrt(std::max(x.dot(model.sigma() * x), 0.0));
    if (p.rho > 0.0) {
        const double g = tm.gamma0.norm();
        const double m = tm.mu0.norm();
        if (g > 0.0) p.phi = x.dot(model.gamma()) / (g * p.rho);
        if (m > 0.0) p.psi = x.dot(model.excess_mu()) / (m * p.rho);
    }
    return p;
}

inline bool gram_feasible(const TransformedModel& tm, const ReducedPoint& p, double tol = 1e-10) {
    if (std::abs(p.phi) > 1.0 + tol || std::abs(p.psi) > 1.0 + tol || !(p.rho >= 0.0)) return false;
    try {
        ReducedFrame(tm).coords_of(p, tol);
        return true;
    } catch (const InfeasibleError&) {
        return false;
    }
}

/// x = A^{-T} ybar for a ybar with the prescribed cosines and norm (minimum-norm span
/// part plus a fixed orthogonal direction).
inline Vector reconstruct_portfolio(const ReducedPoint& p, const TransformedModel& tm, const MarketModel& model) {
    const ReducedFrame frame(tm);
    const Vector y = frame.y_of(frame.coords_of(p));
    return model.solve_a_transpose(y);
}

/// E W(y) = W0 (1 + r_f) + W0 rho (|mu0| psi + |gamma0| phi E Z)
inline double mean_wealth(const TransformedModel& tm, double w0, double r_f, const ReducedPoint& p,
                          const MixingDistribution& mix) {
    return w0 * (1.0 + r_f) + w0 * p.rho * (tm.mu0.norm() * p.psi + tm.gamma0.norm() * p.phi * mean(mix));
}

/// J_k as a polynomial in t = |gamma0| phi: J_k(t) = sum_i C(k,i) E[(Z-EZ)^i Z^{(k-i)/2}] E N^{k-i} t^i.
class MomentExpansion {
public:
    MomentExpansion(const MixingDistribution& mix, int max_k) : coeff_(static_cast<std::size_t>(max_k) + 1) {
        if (max_k < 0) throw InputError("moment expansion order must be >= 0");
        for (int k = 0; k <= max_k; ++k) {
            auto& row = coeff_[static_cast<std::size_t>(k)];
            row.assign(static_cast<std::size_t>(k) + 1, 0.0);
            if (k == 1) continue;
            for (int i = 0; i <= k; ++i) {
                const double en = normal_moment(k - i);
                if (en == 0.0) continue;
                row[static_cast<std::size_t>(i)] = binomial(k, i) * mixed_central_moment(mix, i, 0.5 * (k - i)) * en;
            }
        }
    }

    int max_k() const { return static_cast<int>(coeff_.size()) - 1; }

    double j(int k, double t) const {
        const auto& row = coeff_.at(static_cast<std::size_t>(k));
        double s = 0.0;
        for (int i = static_cast<int>(row.size()) - 1; i >= 0; --i) s = s * t + row[static_cast<std::size_t>(i)];
        return s;
    }

private:
    std::vector<std::vector<double>> coeff_;
};

/// E[W(y) - w(y)]^k = W0^k rho^k J_k(|gamma0| phi).
inline double wealth_central_moment(int k, const ReducedPoint& p, const TransformedModel& tm,
                                    const MixingDistribution& mix, double w0) {
    if (k < 1) throw InputError("wealth_central_moment: k must be >= 1");
    if (k == 1 || p.rho == 0.0) return 0.0;
    const double t = tm.gamma0.norm() * p.phi;
    double s = 0.0;
    for (int i = 0; i <= k; ++i) {
        const double en = normal_moment(k - i);
        if (en == 0.0) continue;
        s += binomial(k, i) * mixed_central_moment(mix, i, 0.5 * (k - i)) * en * std::pow(t, i);
    }
    return std::pow(w0 * p.rho, k) * s;
}

struct DistStats {
    double std_dev;
    double skewness;
    double kurtosis;  ///< non-excess (3 for Gaussian wealth)
};

/// Closed forms for the standard deviation, skewness and kurtosis of W(y), written
/// with the raw moments of Z. Skewness and kurtosis do not depend on rho > 0; at rho = 0
/// the wealth is constant and both are NaN.
inline DistStats dist_stats(const ReducedPoint& p, const TransformedModel& tm, const MixingDistribution& mix,
                            double w0) {
    const double m1 = mean(mix);
    const double m2 = moment(mix, 2.0);
    const double m3 = moment(mix, 3.0);
    const double m4 = moment(mix, 4.0);
    const double var = variance(mix);
    const double c3 = m3 - 3.0 * m2 * m1 + 2.0 * m1 * m1 * m1;
    const double c4 = m4 - 4.0 * m3 * m1 + 6.0 * m2 * m1 * m1 - 3.0 * m1 * m1 * m1 * m1;
    const double t = tm.gamma0.norm() * p.phi;
    const double v2 = t * t * var + m1;
    DistStats s;
    s.std_dev = w0 * p.rho * std::sqrt(v2);
    s.skewness = (t * t * t * c3 + 3.0 * t * var) / std::pow(v2, 1.5);
    s.kurtosis = (t * t * t * t * c4 + 6.0 * t * t * (m3 - 2.0 * m2 * m1 + m1 * m1 * m1) + 3.0 * m2) / (v2 * v2);
    if (p.rho == 0.0) s.skewness = s.kurtosis = std::numeric_limits<double>::quiet_NaN();
    return s;
}

/// Truncated expansion M_K(phi, psi, rho) with cached moment coefficients.
class ExpansionObjective {
public:
    ExpansionObjective(const TransformedModel& tm, const MixingDistribution& mix, const UtilitySpec& utility, int order,
                       double w0, double r_f)
        : tm_(tm), mix_(mix), utility_(utility), order_(order), w0_(w0), r_f_(r_f), mean_z_(mean(mix)),
          g_norm_(tm.gamma0.norm()), m_norm_(tm.mu0.norm()), expansion_(mix, order) {
        if (order < 2) throw InputError("expansion order must be >= 2");
        if (order > utility.max_order()) throw InputError("expansion order exceeds the utility's available derivatives");
        if (!(w0 > 0.0)) throw InputError("initial wealth W0 must be > 0");
    }

    int order() const { return order_; }

    double mean_wealth(const ReducedPoint& p) const {
        return w0_ * (1.0 + r_f_) + w0_ * p.rho * (m_norm_ * p.psi + g_norm_ * p.phi * mean_z_);
    }

    /// -inf when the mean wealth is outside the utility's domain.
    double operator()(const ReducedPoint& p) const {
        const double w = mean_wealth(p);
        if (!utility_.in_domain(w)) return -std::numeric_limits<double>::infinity();
        double m = utility_.value(w);
        if (p.rho == 0.0) return m;
        const double t = g_norm_ * p.phi;
        const double scale = w0_ * p.rho;
        double pw = scale;
        double fact = 1.0;
        for (int k = 2; k <= order_; ++k) {
            pw *= scale;
            fact *= k;
            const double d = utility_.derivative(k, w);
            if (d != 0.0) m += d * pw * expansion_.j(k, t) / fact;
        }
        return m;
    }

private:
    TransformedModel tm_;
    MixingDistribution mix_;
    UtilitySpec utility_;
    int order_;
    double w0_, r_f_, mean_z_, g_norm_, m_norm_;
    MomentExpansion expansion_;
};

inline double m_objective(const ReducedPoint& p, const UtilitySpec& utility, int order, const TransformedModel& tm,
                          const MixingDistribution& mix, double w0, double r_f) {
    return ExpansionObjective(tm, mix, utility, order, w0, r_f)(p);
}

/// Exact E[-exp(-a W)] at a reduced point, through the Laplace transform of Z;
/// -inf when the expectation diverges.
inline double exact_exp_utility_reduced(const ReducedPoint& p, const TransformedModel& tm, const MixingDistribution& mix,
                                        double a, double w0, double r_f) {
    const double aw = a * w0;
    const double s = aw * p.rho * tm.gamma0.norm() * p.phi - 0.5 * aw * aw * p.rho * p.rho;
    if (!(s > s_lower_bound(mix))) return -std::numeric_limits<double>::infinity();
    return -std::exp(-aw * (1.0 + r_f) - aw * p.rho * tm.mu0.norm() * p.psi + log_laplace(mix, s));
}

/// Truncation diagnostic at p: |M_K - exact| for exponential utility, |M_{K+1} - M_K| otherwise
/// (0 for quadratic utility, where M_2 is already exact). NaN when order K+1 is unavailable.
inline double truncation_gap(const ReducedPoint& p, const UtilitySpec& utility, int order, const TransformedModel& tm,
                             const MixingDistribution& mix, double w0, double r_f) {
    const double mk = m_objective(p, utility, order, tm, mix, w0, r_f);
    switch (utility.kind()) {
        case UtilitySpec::Kind::exponential:
            return std::abs(mk - exact_exp_utility_reduced(p, tm, mix, utility.parameter(), w0, r_f));
        case UtilitySpec::Kind::quadratic:
            return 0.0;
        default:
            if (order + 1 > utility.max_order()) return std::numeric_limits<double>::quiet_NaN();
            return std::abs(m_objective(p, utility, order + 1, tm, mix, w0, r_f) - mk);
    }
}

/// Scale of |y| at which a mean-variance investor with the utility's local risk
/// tolerance at W0(1+r_f) would stop adding risk.
inline double mean_variance_rho(const TransformedModel& tm, const MixingDistribution& mix, const UtilitySpec& utility,
                                double w0, double r_f) {
    const double wbar = w0 * (1.0 + r_f);
    if (!utility.in_domain(wbar)) throw InputError("utility is undefined at W0(1+r_f)");
    const double d1 = utility.derivative(1, wbar);
    const double d2 = utility.derivative(2, wbar);
    const double tolerance = -d1 / d2;
    if (!(d2 < 0.0) || !(tolerance > 0.0) || !std::isfinite(tolerance)) {
        throw InputError("utility is not locally risk averse at W0(1+r_f); give an explicit rho upper bound");
    }
    const double slope = (tm.mu0 + mean(mix) * tm.gamma0).norm();
    return tolerance * slope / (w0 * mean(mix));
}

struct Optimize3dResult {
    ReducedPoint point;
    double objective = 0.0;
    double rho_upper = 0.0;  ///< rho bound actually used
    int starts = 0;          ///< feasible multi-start seeds
    int evaluations = 0;
};

/// Maximizes M_K over the box intersected with the set of realizable (phi, psi, rho).
/// Search runs over frame coordinates v (|v| = rho), seeded from a 5x5x7 lattice of the
/// box and refined by Nelder-Mead; ties go to the lexicographically smallest point.
inline Optimize3dResult optimize_3d(const TransformedModel& tm, const MixingDistribution& mix,
                                    const UtilitySpec& utility, int order, double w0, double r_f,
                                    ReducedBox box = {}) {
    const ExpansionObjective obj(tm, mix, utility, order, w0, r_f);
    if (std::isnan(box.rho_hi)) box.rho_hi = std::max(box.rho_lo, 3.0 * mean_variance_rho(tm, mix, utility, w0, r_f));
    if (box.phi_lo > box.phi_hi || box.psi_lo > box.psi_hi || box.rho_lo > box.rho_hi || box.rho_lo < 0.0 ||
        box.phi_lo > 1.0 || box.phi_hi < -1.0 || box.psi_lo > 1.0 || box.psi_hi < -1.0) {
        throw InfeasibleError("reduced domain is empty");
    }
    Optimize3dResult res;
    res.rho_upper = box.rho_hi;
    const ReducedFrame frame(tm);
    const double inf = std::numeric_limits<double>::infinity();
    if (box.rho_hi == 0.0) {
        res.point = {};
        res.objective = obj(res.point);
        if (!std::isfinite(res.objective)) throw InfeasibleError("utility undefined at the only feasible point");
        res.starts = 1;
        return res;
    }
    int evals = 0;
    const auto neg = [&](const Vector& v) {
        ++evals;
        const ReducedPoint p = frame.point_of(v);
        if (!box.contains(p)) return inf;
        const double m = obj(p);
        return std::isfinite(m) ? -m : inf;
    };
    const auto better = [](double f, const ReducedPoint& p, double bf, const ReducedPoint& bp) {
        if (f != bf) return f < bf;
        return std::tie(p.phi, p.psi, p.rho) < std::tie(bp.phi, bp.psi, bp.rho);
    };

    double best_f = inf;
    ReducedPoint best_p{};
    if (box.rho_lo == 0.0) {
        best_f = neg(Vector::Zero(frame.dim()));
        best_p = {};
    }
    const double step = 0.1 * box.rho_hi;
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            for (int k = 0; k < 7; ++k) {
                const ReducedPoint seed{box.phi_lo + (box.phi_hi - box.phi_lo) * i / 4.0,
                                        box.psi_lo + (box.psi_hi - box.psi_lo) * j / 4.0,
                                        box.rho_lo + (box.rho_hi - box.rho_lo) * (k + 1) / 8.0};
                const Vector v0 = frame.project(seed);
                if (!std::isfinite(neg(v0))) continue;
                ++res.starts;
                const auto nm = optim::nelder_mead(neg, v0, Vector::Constant(frame.dim(), step), 1e-10 * box.rho_hi, 4000);
                const ReducedPoint p = frame.point_of(nm.x);
                if (nm.fx < 1e299 && better(nm.fx, p, best_f, best_p)) {
                    best_f = nm.fx;
                    best_p = p;
                }
            }
        }
    }
    if (!std::isfinite(best_f)) throw InfeasibleError("no feasible point in the reduced domain");
    res.point = best_p;
    res.objective = -best_f;
    res.evaluations = evals;
    return res;
}

struct GeneralOptResult {
    ReducedPoint point;
    Vector x;
    double objective = 0.0;       ///< M_K at the optimum
    double truncation_gap = 0.0;  ///< see truncation_gap()
    DistStats stats{};
    double mean_wealth = 0.0;
    Optimize3dResult search;
};

inline GeneralOptResult general_optimize(const MarketModel& model, const MixingDistribution& mix,
                                         const UtilitySpec& utility, int order, double w0, const ReducedBox& box = {}) {
    validate_investor(1.0, w0);
    const auto tm = transform(model, mix);
    GeneralOptResult r;
    r.search = optimize_3d(tm, mix, utility, order, w0, model.r_f(), box);
    r.point = r.search.point;
    r.objective = r.search.objective;
    r.x = reconstruct_portfolio(r.point, tm, model);
    r.truncation_gap = truncation_gap(r.point, utility, order, tm, mix, w0, model.r_f());
    r.stats = dist_stats(r.point, tm, mix, w0);
    r.mean_wealth = mean_wealth(tm, w0, model.r_f(), r.point, mix);
    return r;
}

}  // namespace nmvm
