#pragma once

// Thin wrappers over Boost.Math (scalar minimization, bracketed roots) and
// GSL's simplex minimizer, with the error conventions used in this library.

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>

#include "nmvm/errors.hpp"

namespace nmvm::optim {

struct ScalarMin {
    double x;
    double fx;
    int iterations;
};

/// Brent's method on [lo, hi]; precision is limited to about sqrt(eps) in x.
template <class F>
ScalarMin brent_minimize(F f, double lo, double hi, int max_iter = 200) {
    std::uintmax_t it = static_cast<std::uintmax_t>(max_iter);
    const auto r = boost::math::tools::brent_find_minima(f, lo, hi, std::numeric_limits<double>::digits, it);
    return {r.first, r.second, static_cast<int>(it)};
}

struct Root {
    double x;
    int iterations;
    double width;  ///< final bracket width
};

/// Bisection on a sign-changing bracket, stopping at `max_iter` halvings or when
/// the bracket is below tol_abs + 4 eps |x|.
template <class F>
Root bisect(F f, double lo, double hi, double tol_abs = 0.0, int max_iter = 200) {
    double flo = f(lo);
    const double fhi = f(hi);
    if (flo == 0.0) return {lo, 0, 0.0};
    if (fhi == 0.0) return {hi, 0, 0.0};
    if ((flo > 0.0) == (fhi > 0.0)) throw DomainError("bisect: endpoints do not bracket a root");
    int it = 0;
    while (it < max_iter) {
        const double mid = lo + 0.5 * (hi - lo);
        if (hi - lo <= tol_abs + 4.0 * std::numeric_limits<double>::epsilon() * std::abs(mid) || mid == lo || mid == hi) break;
        const double fm = f(mid);
        ++it;
        if (fm == 0.0) return {mid, it, 0.0};
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return {lo + 0.5 * (hi - lo), it, hi - lo};
}

/// TOMS 748 on a sign-changing bracket, converged to a few ulps.
template <class F>
Root toms748(F f, double lo, double hi, int max_iter = 200) {
    std::uintmax_t it = static_cast<std::uintmax_t>(max_iter);
    const auto r = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(50), it);
    return {0.5 * (r.first + r.second), static_cast<int>(it), r.second - r.first};
}

struct SimplexResult {
    Eigen::VectorXd x;
    double fx;
    int iterations;
    double size;  ///< characteristic simplex size at exit
    bool converged;
};

namespace detail {

inline void quiet_gsl() {
    static const bool once = [] {
        gsl_set_error_handler_off();
        return true;
    }();
    (void)once;
}

struct GslMinimizerDeleter {
    void operator()(gsl_multimin_fminimizer* p) const { gsl_multimin_fminimizer_free(p); }
};
struct GslVectorDeleter {
    void operator()(gsl_vector* p) const { gsl_vector_free(p); }
};

}  // namespace detail

/// Nelder-Mead (GSL nmsimplex2) minimization of f. Non-finite values are replaced by a
/// huge penalty so callers can return +inf outside their domain.
inline SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x0,
                                 const Eigen::VectorXd& step, double size_tol = 1e-12, int max_iter = 20000) {
    detail::quiet_gsl();
    const auto n = static_cast<std::size_t>(x0.size());
    struct Ctx {
        const std::function<double(const Eigen::VectorXd&)>* f;
        Eigen::VectorXd buf;
    } ctx{&f, Eigen::VectorXd(x0.size())};
    gsl_multimin_function fn;
    fn.n = n;
    fn.params = &ctx;
    fn.f = [](const gsl_vector* v, void* params) -> double {
        auto* c = static_cast<Ctx*>(params);
        for (std::size_t i = 0; i < v->size; ++i) c->buf(static_cast<Eigen::Index>(i)) = gsl_vector_get(v, i);
        const double val = (*c->f)(c->buf);
        return std::isfinite(val) ? val : 1e300;
    };
    std::unique_ptr<gsl_vector, detail::GslVectorDeleter> x(gsl_vector_alloc(n)), ss(gsl_vector_alloc(n));
    for (std::size_t i = 0; i < n; ++i) {
        gsl_vector_set(x.get(), i, x0(static_cast<Eigen::Index>(i)));
        gsl_vector_set(ss.get(), i, step(static_cast<Eigen::Index>(i)));
    }
    std::unique_ptr<gsl_multimin_fminimizer, detail::GslMinimizerDeleter> s(
        gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n));
    if (gsl_multimin_fminimizer_set(s.get(), &fn, x.get(), ss.get()) != GSL_SUCCESS) {
        throw DomainError("nelder_mead: objective is not finite at the starting point");
    }
    int it = 0;
    bool converged = false;
    double size = 0.0;
    double best_size = std::numeric_limits<double>::infinity();
    int since_shrink = 0;
    while (it < max_iter) {
        ++it;
        if (gsl_multimin_fminimizer_iterate(s.get()) != GSL_SUCCESS) break;
        size = gsl_multimin_fminimizer_size(s.get());
        if (gsl_multimin_test_size(size, size_tol) == GSL_SUCCESS) {
            converged = true;
            break;
        }
        // Once function values stop resolving, the simplex cycles without shrinking.
        if (size < 0.999 * best_size) {
            best_size = size;
            since_shrink = 0;
        } else if (++since_shrink > 50 * static_cast<int>(n + 1)) {
            break;
        }
    }
    SimplexResult r;
    r.x.resize(x0.size());
    for (std::size_t i = 0; i < n; ++i) r.x(static_cast<Eigen::Index>(i)) = gsl_vector_get(s->x, i);
    r.fx = s->fval;
    r.iterations = it;
    r.size = size;
    r.converged = converged;
    return r;
}

}  // namespace nmvm::optim
