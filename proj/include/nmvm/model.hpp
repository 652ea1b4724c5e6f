#pragma once

// NMVM market X = mu + gamma Z + sqrt(Z) A N_n with a risk-free asset paying r_f,
// the y = A^T x change of coordinates, and expected exponential utility in
// closed form through the Laplace transform of Z.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

#include "nmvm/errors.hpp"
#include "nmvm/mixing.hpp"

namespace nmvm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class MarketModel {
public:
    /// Validates dimensions, rejects a numerically singular A and caches Sigma = A A^T.
    static MarketModel create(Vector mu, Vector gamma, Matrix a_matrix, double r_f) {
        const auto n = mu.size();
        if (n < 1) throw InputError("model: n must be >= 1");
        if (gamma.size() != n) throw InputError("model: gamma length does not match n");
        if (a_matrix.rows() != n || a_matrix.cols() != n) throw InputError("model: A must be n x n");
        if (!mu.allFinite() || !gamma.allFinite() || !a_matrix.allFinite() || !std::isfinite(r_f)) {
            throw InputError("model: non-finite entries");
        }
        Eigen::JacobiSVD<Matrix> svd(a_matrix);
        const auto& sv = svd.singularValues();
        if (!(sv(n - 1) >= 1e-12 * sv(0))) {
            throw InputError("model: A is numerically singular (smallest/largest singular value < 1e-12)");
        }
        return MarketModel(std::move(mu), std::move(gamma), std::move(a_matrix), r_f);
    }

    Eigen::Index n() const { return mu_.size(); }
    double r_f() const { return r_f_; }
    const Vector& mu() const { return mu_; }
    const Vector& gamma() const { return gamma_; }
    const Matrix& a_matrix() const { return a_; }
    const Matrix& sigma() const { return sigma_; }

    /// mu - 1 r_f
    const Vector& excess_mu() const { return excess_; }

    Vector solve_sigma(const Vector& rhs) const { return sigma_llt_.solve(rhs); }
    Vector solve_a(const Vector& rhs) const { return a_lu_.solve(rhs); }
    /// Solves A^T x = y, i.e. maps y-coordinates back to portfolio weights.
    Vector solve_a_transpose(const Vector& y) const { return a_lu_.transpose().solve(y); }

private:
    MarketModel(Vector mu, Vector gamma, Matrix a, double r_f)
        : mu_(std::move(mu)), gamma_(std::move(gamma)), a_(std::move(a)), r_f_(r_f) {
        sigma_ = a_ * a_.transpose();
        sigma_ = 0.5 * (sigma_ + sigma_.transpose());
        excess_ = mu_ - Vector::Constant(n(), r_f_);
        sigma_llt_.compute(sigma_);
        if (sigma_llt_.info() != Eigen::Success) throw InputError("model: Sigma = A A^T is not positive definite");
        a_lu_.compute(a_);
    }

    Vector mu_;
    Vector gamma_;
    Matrix a_;
    double r_f_;
    Matrix sigma_;
    Vector excess_;
    Eigen::LLT<Matrix> sigma_llt_;
    Eigen::PartialPivLU<Matrix> a_lu_;
};

/// Model data in y-coordinates.
struct TransformedModel {
    Vector mu0;         ///< A mu0 = mu - 1 r_f
    Vector gamma0;      ///< A gamma0 = gamma
    double a_scalar;    ///< gamma^T Sigma^-1 gamma = |gamma0|^2
    double b_scalar;    ///< gamma^T Sigma^-1 (mu - 1 r_f) = gamma0 . mu0
    double c_scalar;    ///< (mu - 1 r_f)^T Sigma^-1 (mu - 1 r_f) = |mu0|^2
    double s0;          ///< lower end of the Laplace domain of Z
    double theta0;      ///< H is defined on (-theta0, theta0); +inf when s0 = -inf

    double mu0_norm() const { return mu0.norm(); }
    double gamma0_norm() const { return gamma0.norm(); }
};

/// Investor data: weights on the risky assets, initial wealth and absolute risk aversion.
struct Portfolio {
    Vector x;
    double w0 = 1.0;
    double a = 1.0;
};

inline void validate_investor(double a, double w0) {
    if (!(a > 0.0) || !std::isfinite(a)) throw InputError("risk aversion a must be > 0");
    if (!(w0 > 0.0) || !std::isfinite(w0)) throw InputError("initial wealth W0 must be > 0");
}

inline double theta0_for(double a_scalar, double c_scalar, double s0) {
    if (!std::isfinite(s0)) return std::numeric_limits<double>::infinity();
    if (c_scalar <= 0.0) return std::numeric_limits<double>::infinity();
    return std::sqrt((a_scalar - 2.0 * s0) / c_scalar);
}

inline TransformedModel transform(const MarketModel& model, const MixingDistribution& mix) {
    TransformedModel tm;
    tm.mu0 = model.solve_a(model.excess_mu());
    tm.gamma0 = model.solve_a(model.gamma());
    if (!tm.mu0.allFinite() || !tm.gamma0.allFinite()) throw InputError("transform: linear solve against A failed");
    tm.a_scalar = tm.gamma0.squaredNorm();
    tm.c_scalar = tm.mu0.squaredNorm();
    tm.b_scalar = tm.gamma0.dot(tm.mu0);
    tm.s0 = s_lower_bound(mix);
    tm.theta0 = theta0_for(tm.a_scalar, tm.c_scalar, tm.s0);
    return tm;
}

/// g(x) = a W0 x^T gamma - (a W0)^2 / 2 x^T Sigma x, the Laplace argument in E U(W).
inline double g_value(const MarketModel& model, const Portfolio& p) {
    const double aw = p.a * p.w0;
    return aw * p.x.dot(model.gamma()) - 0.5 * aw * aw * p.x.dot(model.sigma() * p.x);
}

inline void check_portfolio(const MarketModel& model, const Portfolio& p) {
    validate_investor(p.a, p.w0);
    if (p.x.size() != model.n()) throw InputError("portfolio length does not match n");
}

/// x lies in the open set where the expected exponential utility is finite.
inline bool feasibility_check(const MarketModel& model, const MixingDistribution& mix, const Portfolio& p) {
    check_portfolio(model, p);
    return g_value(model, p) > s_lower_bound(mix);
}

/// log(-E[U(W(x))]) for U(W) = -exp(-a W).
inline double log_neg_expected_exp_utility(const MarketModel& model, const MixingDistribution& mix, const Portfolio& p) {
    if (!feasibility_check(model, mix, p)) {
        throw InfeasibleError("portfolio is outside the set where E[U(W)] is finite");
    }
    const double aw = p.a * p.w0;
    return -aw * (1.0 + model.r_f()) - aw * p.x.dot(model.excess_mu()) + log_laplace(mix, g_value(model, p));
}

/// E[U(W(x))] = -e^{-a W0 (1+r_f)} e^{-a W0 x^T (mu - 1 r_f)} L_Z(g(x)).
inline double expected_exp_utility(const MarketModel& model, const MixingDistribution& mix, const Portfolio& p) {
    return -std::exp(log_neg_expected_exp_utility(model, mix, p));
}

}  // namespace nmvm
