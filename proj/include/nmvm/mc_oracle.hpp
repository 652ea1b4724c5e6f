#pragma once

// Monte Carlo reference implementations used to cross-check the closed forms.
// Path p (or antithetic pair p) always draws from CounterRng(seed, p), and sums are
// formed per fixed-size block and combined in block order, so estimates are
// bit-identical for any thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nmvm/errors.hpp"
#include "nmvm/mixing.hpp"
#include "nmvm/model.hpp"
#include "nmvm/optim.hpp"
#include "nmvm/parallel.hpp"
#include "nmvm/rng.hpp"
#include "nmvm/utility.hpp"

namespace nmvm {

struct McConfig {
    std::uint64_t seed = 1;
    std::size_t paths = 100000;
    /// Pairs each draw (z, g) with (z, -g); `paths` then counts both members.
    bool antithetic = false;

    std::size_t units() const { return antithetic ? (paths + 1) / 2 : paths; }
    void validate() const {
        if (paths < 1) throw InputError("Monte Carlo: paths must be >= 1");
    }
};

struct McEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
    std::size_t samples = 0;    ///< independent units (paths, or pairs when antithetic)
    std::size_t nonfinite = 0;  ///< draws with a non-finite integrand; estimate is NaN when > 0
};

namespace detail {

inline constexpr std::size_t kMcBlock = 4096;

/// Means and standard errors of the `dim` outputs of value(k, out), k in [0, count). Sums are
/// shifted by the values at k = 0 so a constant integrand is reproduced exactly with zero error.
template <class F>
std::vector<McEstimate> reduce_means(std::size_t count, std::size_t dim, F value) {
    std::vector<double> ref(dim);
    value(std::size_t{0}, ref.data());
    for (double& r : ref) {
        if (!std::isfinite(r)) r = 0.0;
    }
    const std::size_t blocks = (count + kMcBlock - 1) / kMcBlock;
    // Per block: dim sums, dim sums of squares, dim non-finite counts.
    std::vector<double> parts(blocks * 3 * dim, 0.0);
    parallel_for(blocks, [&](std::size_t b) {
        double* acc = parts.data() + b * 3 * dim;
        std::vector<double> v(dim);
        const std::size_t end = std::min(count, (b + 1) * kMcBlock);
        for (std::size_t k = b * kMcBlock; k < end; ++k) {
            value(k, v.data());
            for (std::size_t j = 0; j < dim; ++j) {
                if (!std::isfinite(v[j])) {
                    acc[2 * dim + j] += 1.0;
                    continue;
                }
                const double d = v[j] - ref[j];
                acc[j] += d;
                acc[dim + j] += d * d;
            }
        }
    });
    std::vector<McEstimate> out(dim);
    const double n = static_cast<double>(count);
    for (std::size_t j = 0; j < dim; ++j) {
        double s = 0.0, s2 = 0.0, bad = 0.0;
        for (std::size_t b = 0; b < blocks; ++b) {
            s += parts[b * 3 * dim + j];
            s2 += parts[b * 3 * dim + dim + j];
            bad += parts[b * 3 * dim + 2 * dim + j];
        }
        auto& e = out[j];
        e.samples = count;
        e.nonfinite = static_cast<std::size_t>(bad);
        if (e.nonfinite > 0) {
            e.estimate = std::numeric_limits<double>::quiet_NaN();
            e.std_error = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        const double m = s / n;
        e.estimate = ref[j] + m;
        e.std_error = count > 1 ? std::sqrt(std::max(s2 - n * m * m, 0.0) / (n - 1.0) / n) : 0.0;
    }
    return out;
}

template <class F>
McEstimate reduce_mean(std::size_t count, F value) {
    return reduce_means(count, 1, [&](std::size_t k, double* out) { out[0] = value(k); }).front();
}

/// One NMVM draw: z from the mixing law, then n standard normals.
struct PathDraw {
    double z;
    Vector g;
};

inline void draw_path(CounterRng& rng, const MixingSampler& sampler, PathDraw& d) {
    d.z = sampler(rng);
    for (Eigen::Index i = 0; i < d.g.size(); ++i) d.g(i) = rng.normal();
}

}  // namespace detail

/// Rows mu + gamma z + sqrt(z) A g. With antithetic sampling, rows 2p and 2p+1 share z and use +-g;
/// an odd path count is rounded up to whole pairs.
inline Matrix sample_returns(const MarketModel& model, const MixingDistribution& mix, const McConfig& cfg) {
    cfg.validate();
    const auto n = model.n();
    const MixingSampler sampler(mix);
    const std::size_t units = cfg.units();
    Matrix out(static_cast<Eigen::Index>(cfg.antithetic ? 2 * units : units), n);
    const std::size_t blocks = (units + detail::kMcBlock - 1) / detail::kMcBlock;
    parallel_for(blocks, [&](std::size_t b) {
        detail::PathDraw d{0.0, Vector(n)};
        const std::size_t end = std::min(units, (b + 1) * detail::kMcBlock);
        for (std::size_t p = b * detail::kMcBlock; p < end; ++p) {
            CounterRng rng(cfg.seed, p);
            detail::draw_path(rng, sampler, d);
            const Vector loc = model.mu() + model.gamma() * d.z;
            const Vector noise = std::sqrt(d.z) * (model.a_matrix() * d.g);
            if (cfg.antithetic) {
                out.row(static_cast<Eigen::Index>(2 * p)) = (loc + noise).transpose();
                out.row(static_cast<Eigen::Index>(2 * p + 1)) = (loc - noise).transpose();
            } else {
                out.row(static_cast<Eigen::Index>(p)) = (loc + noise).transpose();
            }
        }
    });
    return out;
}

/// E f(W) for W = W0 (1 + r_f) + W0 x^T (X - 1 r_f), streamed without storing paths.
template <class F>
McEstimate mc_wealth_expectation(const MarketModel& model, const MixingDistribution& mix, const Vector& x, double w0,
                                 const McConfig& cfg, F f) {
    cfg.validate();
    if (x.size() != model.n() || !x.allFinite()) throw InputError("Monte Carlo: portfolio must be finite with length n");
    const MixingSampler sampler(mix);
    const double base = w0 * (1.0 + model.r_f());
    const double loc = x.dot(model.excess_mu());
    const double skew = x.dot(model.gamma());
    const Vector at_x = model.a_matrix().transpose() * x;
    const auto n = model.n();
    return detail::reduce_mean(cfg.units(), [&](std::size_t p) {
        thread_local detail::PathDraw d{0.0, Vector()};
        if (d.g.size() != n) d.g.resize(n);
        CounterRng rng(cfg.seed, p);
        detail::draw_path(rng, sampler, d);
        const double center = base + w0 * (loc + skew * d.z);
        const double noise = w0 * std::sqrt(d.z) * at_x.dot(d.g);
        if (!cfg.antithetic) return static_cast<double>(f(center + noise));
        return 0.5 * (static_cast<double>(f(center + noise)) + static_cast<double>(f(center - noise)));
    });
}

/// Empirical E U(W) with its standard error. Wealth outside the utility's domain counts as non-finite.
inline McEstimate mc_expected_utility(const MarketModel& model, const MixingDistribution& mix, const UtilitySpec& utility,
                                      const Vector& x, double w0, const McConfig& cfg) {
    validate_investor(1.0, w0);
    return mc_wealth_expectation(model, mix, x, w0, cfg, [&](double w) {
        return utility.in_domain(w) ? utility.value(w) : std::numeric_limits<double>::quiet_NaN();
    });
}

/// E[(W - center)^k] for k = 1..max_k from one pass over the paths.
inline std::vector<McEstimate> mc_wealth_moments(const MarketModel& model, const MixingDistribution& mix,
                                                 const Vector& x, double w0, double center, int max_k,
                                                 const McConfig& cfg) {
    cfg.validate();
    if (max_k < 1) throw InputError("Monte Carlo: max_k must be >= 1");
    if (x.size() != model.n() || !x.allFinite()) throw InputError("Monte Carlo: portfolio must be finite with length n");
    const MixingSampler sampler(mix);
    const double base = w0 * (1.0 + model.r_f());
    const double loc = x.dot(model.excess_mu());
    const double skew = x.dot(model.gamma());
    const Vector at_x = model.a_matrix().transpose() * x;
    const auto n = model.n();
    const auto k_max = static_cast<std::size_t>(max_k);
    return detail::reduce_means(cfg.units(), k_max, [&](std::size_t p, double* out) {
        thread_local detail::PathDraw d{0.0, Vector()};
        if (d.g.size() != n) d.g.resize(n);
        CounterRng rng(cfg.seed, p);
        detail::draw_path(rng, sampler, d);
        const double dev = base + w0 * (loc + skew * d.z) - center;
        const double noise = w0 * std::sqrt(d.z) * at_x.dot(d.g);
        double up = 1.0, down = 1.0;
        for (std::size_t k = 0; k < k_max; ++k) {
            up *= dev + noise;
            down *= dev - noise;
            out[k] = cfg.antithetic ? 0.5 * (up + down) : up;
        }
    });
}

/// Stored scenarios for common-random-numbers optimization: row p is X_p - 1 r_f.
struct Scenarios {
    Matrix excess;
    bool antithetic = false;  ///< rows (2p, 2p+1) are antithetic pairs

    std::size_t units() const {
        return antithetic ? static_cast<std::size_t>(excess.rows()) / 2 : static_cast<std::size_t>(excess.rows());
    }
};

inline Scenarios draw_scenarios(const MarketModel& model, const MixingDistribution& mix, const McConfig& cfg) {
    Scenarios s;
    s.excess = sample_returns(model, mix, cfg);
    s.excess.array().rowwise() -= Eigen::RowVectorXd::Constant(model.n(), model.r_f()).array();
    s.antithetic = cfg.antithetic;
    return s;
}

namespace detail {

/// U over an array of wealth values; NaN outside the utility's domain.
inline Eigen::ArrayXd utility_values(const UtilitySpec& u, const Eigen::ArrayXd& w) {
    switch (u.kind()) {
        case UtilitySpec::Kind::exponential:
            return -(-u.parameter() * w).exp();
        case UtilitySpec::Kind::quadratic:
            return w - u.parameter() * w.square();
        default: {
            Eigen::ArrayXd out(w.size());
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                out(i) = u.in_domain(w(i)) ? u.value(w(i)) : std::numeric_limits<double>::quiet_NaN();
            }
            return out;
        }
    }
}

}  // namespace detail

/// CRN estimate of E U(base + w0 x^T R) over the stored scenarios.
inline McEstimate scenario_expected_utility(const Scenarios& s, const UtilitySpec& utility, const Vector& x,
                                            double base, double w0) {
    if (x.size() != s.excess.cols()) throw InputError("scenario utility: portfolio length mismatch");
    const Eigen::ArrayXd w = base + w0 * (s.excess * x).array();
    const Eigen::ArrayXd u = detail::utility_values(utility, w);
    return detail::reduce_mean(s.units(), [&](std::size_t p) {
        if (!s.antithetic) return u(static_cast<Eigen::Index>(p));
        return 0.5 * (u(static_cast<Eigen::Index>(2 * p)) + u(static_cast<Eigen::Index>(2 * p + 1)));
    });
}

enum class BruteForceMethod { grid, simplex };

struct PortfolioBox {
    Vector lo;
    Vector hi;
};

struct BruteForceOptions {
    BruteForceMethod method = BruteForceMethod::simplex;
    PortfolioBox box;
    int grid_points = 11;  ///< per axis, grid method
    int zoom_rounds = 8;   ///< grid method: re-grid around the incumbent this many times
    int restarts = 1;      ///< simplex method: restarts from the incumbent
    double size_tol = 1e-7;  ///< simplex method: stop size relative to the widest box side
};

struct BruteForceResult {
    Vector x;
    McEstimate value;  ///< CRN estimate of E U at x
    int evaluations = 0;
    /// Final grid spacing (grid) or simplex size (simplex) per axis scale.
    double resolution = 0.0;
};

/// Maximizes the CRN objective over the box. The objective is a deterministic function of x,
/// so the returned point is reproducible for a fixed scenario set.
inline BruteForceResult brute_force_optimize(const Scenarios& s, const UtilitySpec& utility, double base, double w0,
                                             const BruteForceOptions& opt) {
    const auto n = s.excess.cols();
    const auto& box = opt.box;
    if (box.lo.size() != n || box.hi.size() != n) throw InputError("brute force: box must have length n");
    if (!box.lo.allFinite() || !box.hi.allFinite() || (box.hi.array() < box.lo.array()).any()) {
        throw InputError("brute force: box bounds must be finite with lo <= hi");
    }
    BruteForceResult res;
    const auto value_at = [&](const Vector& x) {
        ++res.evaluations;
        return scenario_expected_utility(s, utility, x, base, w0).estimate;
    };
    const auto inside = [&](const Vector& x) {
        return (x.array() >= box.lo.array()).all() && (x.array() <= box.hi.array()).all();
    };

    if (opt.method == BruteForceMethod::grid) {
        if (n > 6) throw InputError("brute force: grid search supports n <= 6");
        if (opt.grid_points < 2) throw InputError("brute force: grid_points must be >= 2");
        Vector lo = box.lo, hi = box.hi;
        Vector best = 0.5 * (lo + hi);
        double best_val = -std::numeric_limits<double>::infinity();
        Vector spacing = Vector::Zero(n);
        for (int round = 0; round <= opt.zoom_rounds; ++round) {
            spacing = (hi - lo) / static_cast<double>(opt.grid_points - 1);
            std::size_t total = 1;
            for (Eigen::Index i = 0; i < n; ++i) total *= static_cast<std::size_t>(opt.grid_points);
            Vector x(n);
            for (std::size_t k = 0; k < total; ++k) {
                std::size_t r = k;
                for (Eigen::Index i = 0; i < n; ++i) {
                    x(i) = lo(i) + spacing(i) * static_cast<double>(r % static_cast<std::size_t>(opt.grid_points));
                    r /= static_cast<std::size_t>(opt.grid_points);
                }
                const double v = value_at(x);
                if (v > best_val) {
                    best_val = v;
                    best = x;
                }
            }
            lo = (best - spacing).cwiseMax(box.lo);
            hi = (best + spacing).cwiseMin(box.hi);
        }
        res.resolution = spacing.maxCoeff();
        res.x = best;
    } else {
        const Vector width = box.hi - box.lo;
        Vector x = 0.5 * (box.lo + box.hi);
        const auto neg = [&](const Eigen::VectorXd& v) {
            if (!inside(v)) return std::numeric_limits<double>::infinity();
            return -value_at(v);
        };
        double scale = 0.1;
        optim::SimplexResult sr{x, 0.0, 0, 0.0, false};
        for (int k = 0; k <= opt.restarts; ++k) {
            const Vector step = (scale * width).cwiseMax(1e-12);
            sr = optim::nelder_mead(neg, x, step, opt.size_tol * width.maxCoeff(), 20000);
            x = sr.x;
            scale *= 0.1;
        }
        res.resolution = sr.size;
        res.x = x;
    }
    res.value = scenario_expected_utility(s, utility, res.x, base, w0);
    return res;
}

/// Brute-force maximizer of E U(W(x)) for the model, with W = W0 (1 + r_f) + W0 x^T (X - 1 r_f).
inline BruteForceResult brute_force_optimize(const MarketModel& model, const MixingDistribution& mix,
                                             const UtilitySpec& utility, double w0, const McConfig& cfg,
                                             const BruteForceOptions& opt) {
    validate_investor(1.0, w0);
    const auto s = draw_scenarios(model, mix, cfg);
    return brute_force_optimize(s, utility, w0 * (1.0 + model.r_f()), w0, opt);
}

}  // namespace nmvm
