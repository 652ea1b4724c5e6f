#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nmvm/exp_opt.hpp"
#include "nmvm/general_opt.hpp"
#include "support/random_models.hpp"

using namespace nmvm;
using testing_support::random_model;
using testing_support::random_vector;

namespace {

TransformedModel tm_of(const Vector& mu0, const Vector& gamma0, const MixingDistribution& mix) {
    TransformedModel tm;
    tm.mu0 = mu0;
    tm.gamma0 = gamma0;
    tm.a_scalar = gamma0.squaredNorm();
    tm.c_scalar = mu0.squaredNorm();
    tm.b_scalar = gamma0.dot(mu0);
    tm.s0 = s_lower_bound(mix);
    tm.theta0 = theta0_for(tm.a_scalar, tm.c_scalar, tm.s0);
    return tm;
}

// Exact E[b-quadratic utility] of x from the mean and variance of W, written in x-space.
double exact_quadratic(const MarketModel& m, const MixingDistribution& mix, double b, double w0, const Vector& x) {
    const double ez = mean(mix);
    const double ew = w0 * (1.0 + m.r_f()) + w0 * x.dot(m.excess_mu() + ez * m.gamma());
    const double xg = x.dot(m.gamma());
    const double var = w0 * w0 * (xg * xg * variance(mix) + ez * x.dot(m.sigma() * x));
    return ew - b * (ew * ew + var);
}

std::vector<MixingDistribution> families() {
    return {MixingDistribution::constant(1.0), MixingDistribution::exponential(1.0),
            MixingDistribution::gig(-0.5, 1.0, 1.0), MixingDistribution::gig(0.7, 2.0, 0.5),
            MixingDistribution::bounded_uniform(0.5, 1.5)};
}

}  // namespace

TEST(GeneralOpt, NormalMoments) {
    EXPECT_EQ(normal_moment(0), 1.0);
    EXPECT_EQ(normal_moment(1), 0.0);
    EXPECT_EQ(normal_moment(2), 1.0);
    EXPECT_EQ(normal_moment(4), 3.0);
    EXPECT_EQ(normal_moment(6), 15.0);
    EXPECT_EQ(normal_moment(7), 0.0);
    for (int m = 0; m <= 12; m += 2) {
        EXPECT_DOUBLE_EQ(normal_moment(m), std::pow(2.0, -m / 2.0) * std::tgamma(m + 1) / std::tgamma(m / 2 + 1));
    }
}

TEST(GeneralOpt, MeanWealthExamples) {
    const auto e = MixingDistribution::exponential(1.0);
    Vector mu0(2), g0(2);
    mu0 << 0.3, 0.4;
    g0 << 0.0, 0.0;
    const auto tm = tm_of(mu0, g0, e);
    EXPECT_DOUBLE_EQ(mean_wealth(tm, 2.0, 0.05, {0.3, -0.2, 0.0}, e), 2.1);
    EXPECT_DOUBLE_EQ(mean_wealth(tm, 2.0, 0.05, {0.0, 1.0, 1.0}, e), 2.1 + 2.0 * 0.5);
}

TEST(GeneralOpt, SecondMomentClosedForm) {
    Vector mu0(3), g0(3);
    mu0 << 0.1, 0.2, -0.1;
    g0 << 0.3, -0.2, 0.4;
    for (const auto& mix : families()) {
        const auto tm = tm_of(mu0, g0, mix);
        for (const ReducedPoint p : {ReducedPoint{0.3, 0.1, 0.7}, ReducedPoint{-0.8, 0.2, 1.5}}) {
            const double w0 = 1.7;
            const double g = g0.norm();
            const double j2 = mean(mix) + g * g * variance(mix) * p.phi * p.phi;
            const double expected = w0 * w0 * p.rho * p.rho * j2;
            EXPECT_NEAR(wealth_central_moment(2, p, tm, mix, w0), expected, 1e-12 * expected) << mix.kind_name();
            EXPECT_EQ(wealth_central_moment(1, p, tm, mix, w0), 0.0);
        }
    }
}

TEST(GeneralOpt, DistStatsMatchMomentRatios) {
    Vector mu0(3), g0(3);
    mu0 << 0.1, 0.2, -0.1;
    g0 << 0.3, -0.2, 0.4;
    for (const auto& mix : families()) {
        const auto tm = tm_of(mu0, g0, mix);
        for (const ReducedPoint p : {ReducedPoint{0.5, 0.1, 1.0}, ReducedPoint{-0.9, 0.2, 0.4}, ReducedPoint{0.0, 1.0, 2.0}}) {
            const auto s = dist_stats(p, tm, mix, 1.3);
            const double k2 = wealth_central_moment(2, p, tm, mix, 1.3);
            const double k3 = wealth_central_moment(3, p, tm, mix, 1.3);
            const double k4 = wealth_central_moment(4, p, tm, mix, 1.3);
            EXPECT_NEAR(s.std_dev, std::sqrt(k2), 1e-10 * std::sqrt(k2));
            EXPECT_NEAR(s.skewness, k3 / std::pow(k2, 1.5), 1e-10 * std::max(1.0, std::abs(s.skewness))) << mix.kind_name();
            EXPECT_NEAR(s.kurtosis, k4 / (k2 * k2), 1e-10 * s.kurtosis) << mix.kind_name();
        }
    }
    const auto one = MixingDistribution::constant(1.0);
    const auto s1 = dist_stats({0.4, 0.1, 1.0}, tm_of(mu0, g0, one), one, 1.0);
    EXPECT_NEAR(s1.skewness, 0.0, 1e-15);
    EXPECT_NEAR(s1.kurtosis, 3.0, 1e-14);
    const auto e = MixingDistribution::exponential(1.0);
    const auto s0 = dist_stats({0.0, 0.3, 1.0}, tm_of(mu0, g0, e), e, 1.0);
    EXPECT_EQ(s0.skewness, 0.0);
    EXPECT_NEAR(s0.kurtosis, 3.0 * 2.0 / 1.0, 1e-13);
    const auto degenerate = dist_stats({0.5, 0.3, 0.0}, tm_of(mu0, g0, e), e, 1.0);
    EXPECT_EQ(degenerate.std_dev, 0.0);
    EXPECT_TRUE(std::isnan(degenerate.skewness));
    EXPECT_TRUE(std::isnan(degenerate.kurtosis));
}

TEST(GeneralOpt, QuadraticObjectiveIsExact) {
    Vector mu0(2), g0(2);
    mu0 << 0.2, 0.1;
    g0 << -0.1, 0.3;
    const double b = 0.2, w0 = 1.1, r_f = 0.02;
    const auto u = UtilitySpec::quadratic(b);
    for (const auto& mix : families()) {
        const auto tm = tm_of(mu0, g0, mix);
        const ReducedPoint p{0.6, -0.3, 0.8};
        const double w = mean_wealth(tm, w0, r_f, p, mix);
        const double j2 = mean(mix) + g0.squaredNorm() * variance(mix) * p.phi * p.phi;
        const double expected = w - b * w * w - b * w0 * w0 * p.rho * p.rho * j2;
        for (int order : {2, 3, 4, 6}) EXPECT_NEAR(m_objective(p, u, order, tm, mix, w0, r_f), expected, 1e-14);
        EXPECT_EQ(truncation_gap(p, u, 4, tm, mix, w0, r_f), 0.0);
    }
}

TEST(GeneralOpt, ZeroRhoIsUtilityOfRiskFreeWealth) {
    Vector mu0(2), g0(2);
    mu0 << 0.2, 0.1;
    g0 << -0.1, 0.3;
    const auto e = MixingDistribution::exponential(1.0);
    const auto tm = tm_of(mu0, g0, e);
    const auto u = UtilitySpec::power(3.0);
    for (int order : {2, 4, 7}) EXPECT_EQ(m_objective({0.2, 0.3, 0.0}, u, order, tm, e, 2.0, 0.01), u.value(2.02));
    EXPECT_THROW(m_objective({0.2, 0.3, 0.0}, u, 1, tm, e, 2.0, 0.01), InputError);
}

TEST(GeneralOpt, UtilityDerivativesAreConsistent) {
    for (const auto& u : {UtilitySpec::exponential(1.5), UtilitySpec::power(3.0), UtilitySpec::power(0.5),
                          UtilitySpec::log(), UtilitySpec::quadratic(0.1)}) {
        EXPECT_NO_THROW(u.validate({0.5, 1.0, 2.0, 3.5})) << u.name();
    }
    EXPECT_THROW(UtilitySpec::custom(
                     "bad", [](double w) { return -std::exp(-w); }, [](int, double w) { return std::exp(-w) * 1.01; }, 4),
                 InputError);
    EXPECT_NO_THROW(UtilitySpec::custom(
        "cara2", [](double w) { return -std::exp(-2 * w); },
        [](int k, double w) { return -std::pow(-2.0, k) * std::exp(-2 * w); }, 6));
}

TEST(GeneralOpt, ReconstructionSatisfiesConstraints) {
    std::mt19937_64 gen(17);
    const auto mix = MixingDistribution::gig(0.7, 2.0, 0.5);
    const auto m = random_model(gen, 4);
    const auto tm = transform(m, mix);
    const ReducedFrame frame(tm);
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
        Vector v(frame.dim());
        for (int i = 0; i < frame.dim(); ++i) v(i) = ud(gen);
        const ReducedPoint p = frame.point_of(v);
        const Vector x = reconstruct_portfolio(p, tm, m);
        const Vector y = m.a_matrix().transpose() * x;
        EXPECT_NEAR(y.dot(tm.gamma0), p.phi * tm.gamma0.norm() * p.rho, 1e-10);
        EXPECT_NEAR(y.dot(tm.mu0), p.psi * tm.mu0.norm() * p.rho, 1e-10);
        EXPECT_NEAR(y.norm(), p.rho, 1e-10);
        const ReducedPoint q = reduced_point(m, tm, x);
        EXPECT_NEAR(q.phi, p.phi, 1e-9);
        EXPECT_NEAR(q.psi, p.psi, 1e-9);
        EXPECT_NEAR(q.rho, p.rho, 1e-9);
    }
}

TEST(GeneralOpt, ReconstructionForcedByOrthogonalVectors) {
    Vector mu0(3), g0(3);
    mu0 << 0.0, 0.5, 0.0;
    g0 << 0.3, 0.0, 0.0;
    const auto mix = MixingDistribution::exponential(1.0);
    const auto tm = tm_of(mu0, g0, mix);
    const auto model = MarketModel::create(mu0, g0, Matrix::Identity(3, 3), 0.0);
    const Vector x = reconstruct_portfolio({1.0, 0.0, 2.0}, tm, model);
    EXPECT_NEAR(x(0), 2.0, 1e-15);
    EXPECT_NEAR(x(1), 0.0, 1e-15);
    EXPECT_NEAR(x(2), 0.0, 1e-15);
    EXPECT_THROW(reconstruct_portfolio({1.0, 0.5, 2.0}, tm, model), InfeasibleError);
    EXPECT_FALSE(gram_feasible(tm, {0.8, 0.8, 1.0}));
    EXPECT_TRUE(gram_feasible(tm, {0.6, 0.6, 1.0}));
}

TEST(GeneralOpt, RoundTripKeepsObjective) {
    std::mt19937_64 gen(23);
    const auto mix = MixingDistribution::exponential(1.0);
    const auto m = random_model(gen, 3);
    const auto tm = transform(m, mix);
    const auto u = UtilitySpec::exponential(1.0);
    for (int rep = 0; rep < 20; ++rep) {
        const Vector x = random_vector(gen, 3, 0.4);
        const ReducedPoint p = reduced_point(m, tm, x);
        const Vector x2 = reconstruct_portfolio(p, tm, m);
        const ReducedPoint p2 = reduced_point(m, tm, x2);
        EXPECT_NEAR(m_objective(p, u, 4, tm, mix, 1.0, m.r_f()), m_objective(p2, u, 4, tm, mix, 1.0, m.r_f()), 1e-10);
        // Exact expected utility in x-space agrees with the reduced-coordinate formula.
        if (feasibility_check(m, mix, {x, 1.0, 1.0})) {
            EXPECT_NEAR(expected_exp_utility(m, mix, {x, 1.0, 1.0}), exact_exp_utility_reduced(p, tm, mix, 1.0, 1.0, m.r_f()),
                        1e-12);
        }
    }
}

TEST(GeneralOpt, QuadraticWithoutSkewPicksExtremePsi) {
    Vector mu(3);
    mu << 0.06, 0.03, 0.05;
    const auto model = MarketModel::create(mu, Vector::Zero(3), Matrix::Identity(3, 3), 0.01);
    const auto mix = MixingDistribution::gig(0.7, 2.0, 0.5);
    const auto r = general_optimize(model, mix, UtilitySpec::quadratic(0.1), 4, 1.0);
    EXPECT_NEAR(r.point.psi, 1.0, 1e-8);
}

TEST(GeneralOpt, QuadraticMatchesClosedFormOptimum) {
    std::mt19937_64 gen(29);
    for (int rep = 0; rep < 4; ++rep) {
        const int n = 2 + rep % 3;
        const auto m = random_model(gen, n);
        const auto mix = rep % 2 ? MixingDistribution::exponential(1.0) : MixingDistribution::gig(-0.5, 1.0, 1.0);
        const double b = 0.1, w0 = 1.0;
        const auto r = general_optimize(m, mix, UtilitySpec::quadratic(b), 4, w0);
        // E U is a concave quadratic in x: grad = w0 bt (1 - 2b E W) - 2 b w0^2 Q x = 0.
        const double ez = mean(mix);
        const Vector bt = m.excess_mu() + ez * m.gamma();
        const Matrix q = variance(mix) * m.gamma() * m.gamma().transpose() + ez * m.sigma();
        const double base = w0 * (1.0 + m.r_f());
        const Matrix lhs = 2.0 * b * w0 * w0 * (q + bt * bt.transpose());
        const Vector rhs = w0 * (1.0 - 2.0 * b * base) * bt;
        const Vector xs = lhs.ldlt().solve(rhs);
        for (int i = 0; i < n; ++i) EXPECT_NEAR(r.x(i), xs(i), 1e-6) << "rep " << rep;
        EXPECT_NEAR(r.objective, exact_quadratic(m, mix, b, w0, xs), 1e-12);
    }
}

TEST(GeneralOpt, ExponentialExpansionNearClosedForm) {
    std::mt19937_64 gen(37);
    const auto e = MixingDistribution::exponential(1.0);
    const auto m = random_model(gen, 3);
    const auto closed = optimize(m, e, 1.0, 1.0);
    const auto r = general_optimize(m, e, UtilitySpec::exponential(1.0), 4, 1.0);
    const double exact = expected_exp_utility(m, e, {r.x, 1.0, 1.0});
    EXPECT_LT(std::abs(exact - closed.optimal_utility), 0.02 * std::abs(closed.optimal_utility));
    EXPECT_GE(closed.optimal_utility, exact - 1e-14);
    EXPECT_GT(r.truncation_gap, 0.0);
}

TEST(GeneralOpt, OptimumNotBeatenByRandomProbes) {
    std::mt19937_64 gen(41);
    const auto mix = MixingDistribution::gig(-0.5, 1.0, 1.0);
    const auto m = random_model(gen, 3);
    const auto tm = transform(m, mix);
    const auto u = UtilitySpec::power(3.0);
    const auto res = optimize_3d(tm, mix, u, 4, 1.0, m.r_f());
    const ReducedFrame frame(tm);
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    const ExpansionObjective obj(tm, mix, u, 4, 1.0, m.r_f());
    for (int i = 0; i < 10'000; ++i) {
        Vector v(frame.dim());
        for (int j = 0; j < frame.dim(); ++j) v(j) = ud(gen);
        v *= res.rho_upper * std::abs(ud(gen)) / v.norm();
        EXPECT_LE(obj(frame.point_of(v)), res.objective + 1e-8);
    }
}
