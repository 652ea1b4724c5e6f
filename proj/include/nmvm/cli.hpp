#pragma once

// Batch entry points behind the nmvm command-line tool. Each run_* function reads a
// spec file, writes its result atomically and returns the process exit code:
// 0 ok, 1 input error, 2 infeasible or degenerate problem, 3 internal invariant violation.

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nmvm/errors.hpp"
#include "nmvm/exp_opt.hpp"
#include "nmvm/general_opt.hpp"
#include "nmvm/large_market.hpp"
#include "nmvm/mc_oracle.hpp"
#include "nmvm/spec_file.hpp"

namespace nmvm::cli {

enum ExitCode : int { kOk = 0, kInputError = 1, kInfeasible = 2, kInternal = 3 };

using OrderedJson = nlohmann::ordered_json;

/// %.17g; NaN is always spelled "nan" (glibc may print "-nan").
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// JSON text with two-space indentation; numbers use 17 significant digits and non-finite values become null.
inline void write_json(std::ostream& os, const OrderedJson& j, int indent = 0) {
    const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
    const std::string close(static_cast<std::size_t>(indent), ' ');
    switch (j.type()) {
        case OrderedJson::value_t::object: {
            if (j.empty()) {
                os << "{}";
                return;
            }
            os << "{\n";
            bool first = true;
            for (const auto& [k, v] : j.items()) {
                if (!first) os << ",\n";
                first = false;
                os << pad << OrderedJson(k).dump() << ": ";
                write_json(os, v, indent + 2);
            }
            os << "\n" << close << "}";
            return;
        }
        case OrderedJson::value_t::array: {
            if (j.empty()) {
                os << "[]";
                return;
            }
            // Arrays of numbers stay on one line.
            bool flat = true;
            for (const auto& v : j) flat = flat && (v.is_number() || v.is_null());
            os << (flat ? "[" : "[\n");
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i > 0) os << (flat ? ", " : ",\n");
                if (!flat) os << pad;
                write_json(os, j[i], indent + 2);
            }
            os << (flat ? "]" : "\n" + close + "]");
            return;
        }
        case OrderedJson::value_t::number_float: {
            const double d = j.get<double>();
            if (std::isfinite(d)) os << format_number(d);
            else os << "null";
            return;
        }
        default:
            os << j.dump();
    }
}

inline OrderedJson number_json(double v) { return std::isfinite(v) ? OrderedJson(v) : OrderedJson(nullptr); }

inline OrderedJson vector_json(const Vector& v) {
    OrderedJson a = OrderedJson::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number_json(v(i)));
    return a;
}

/// Writes `content` to `path` through a temporary file and a rename; "-" or "" writes to stdout.
inline void write_atomic(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content << std::flush;
        return;
    }
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        if (!out) throw InputError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw InputError("cannot rename onto '" + path + "': " + ec.message());
    }
}

/// Maps the library's exception classes onto exit codes, printing a diagnostic.
inline int guarded(const std::string& command, const std::function<int()>& body) {
    try {
        return body();
    } catch (const InputError& e) {
        std::cerr << "nmvm " << command << ": input error: " << e.what() << "\n";
        return kInputError;
    } catch (const InfeasibleError& e) {
        std::cerr << "nmvm " << command << ": infeasible: " << e.what() << "\n";
        return kInfeasible;
    } catch (const DegenerateError& e) {
        std::cerr << "nmvm " << command << ": degenerate problem: " << e.what() << "\n";
        return kInfeasible;
    } catch (const DomainError& e) {
        std::cerr << "nmvm " << command << ": outside the model's domain: " << e.what() << "\n";
        return kInfeasible;
    } catch (const std::exception& e) {
        std::cerr << "nmvm " << command << ": internal error: " << e.what() << "\n";
        return kInternal;
    }
}

inline std::string exp_opt_json(const MarketSpecFile& spec) {
    const auto& model = spec.require_model();
    const auto& mix = spec.require_mixing();
    const auto& inv = spec.require_investor();
    const auto tm = transform(model, mix);
    const auto r = optimize(model, mix, inv.a, inv.w0, spec.c_interval.value_or(ReturnConstraint{}));
    OrderedJson j;
    j["q_min"] = number_json(r.q_min);
    j["x_star"] = vector_json(r.x_star);
    j["expected_utility"] = number_json(r.optimal_utility);
    j["log_neg_expected_utility"] = number_json(r.log_neg_utility);
    j["g_value"] = number_json(r.g_value);
    j["theta0"] = number_json(tm.theta0);
    j["scalars"] = {{"A", number_json(tm.a_scalar)}, {"B", number_json(tm.b_scalar)}, {"C", number_json(tm.c_scalar)}};
    j["solver_info"] = {{"method", r.solver_info.method},
                        {"iterations", r.solver_info.iterations},
                        {"bracket", {number_json(r.solver_info.bracket_lo), number_json(r.solver_info.bracket_hi)}},
                        {"tolerance", number_json(r.solver_info.tolerance)}};
    std::ostringstream os;
    write_json(os, j);
    os << "\n";
    return os.str();
}

inline std::string general_opt_json(const MarketSpecFile& spec, int order) {
    const auto& model = spec.require_model();
    const auto& mix = spec.require_mixing();
    const auto& inv = spec.require_investor();
    const auto utility = spec.utility_or_default();
    const auto r = general_optimize(model, mix, utility, order, inv.w0, spec.reduced_box.value_or(ReducedBox{}));
    OrderedJson j;
    j["alpha"] = number_json(r.point.phi);
    j["beta"] = number_json(r.point.psi);
    j["rho"] = number_json(r.point.rho);
    j["x"] = vector_json(r.x);
    j["m_value"] = number_json(r.objective);
    j["truncation_gap"] = number_json(r.truncation_gap);
    j["order"] = order;
    j["utility"] = utility.name();
    j["mean_wealth"] = number_json(r.mean_wealth);
    j["stats"] = {{"std_dev", number_json(r.stats.std_dev)},
                  {"skewness", number_json(r.stats.skewness)},
                  {"kurtosis", number_json(r.stats.kurtosis)}};
    j["search"] = {{"rho_upper", number_json(r.search.rho_upper)},
                   {"starts", r.search.starts},
                   {"evaluations", r.search.evaluations}};
    std::ostringstream os;
    write_json(os, j);
    os << "\n";
    return os.str();
}

struct LargeMarketOutput {
    std::string csv;
    bool monotone = true;
    bool converged = false;
};

inline LargeMarketOutput large_market_csv(const MarketSpecFile& spec, double tolerance) {
    const auto& lm = spec.require_large_market();
    const auto study = convergence_study(lm.spec, lm.n_list, tolerance);
    LargeMarketOutput out;
    std::ostringstream os;
    os << "n,U_n,gap_to_double,d2_tail\n";
    for (const auto& r : study.rows) {
        os << r.n << "," << format_number(r.u_n) << "," << format_number(r.gap_to_double) << ","
           << format_number(r.d2_tail) << "\n";
        // Increases beyond rounding of the solved minima violate U_n nonincreasing.
        if (r.gap < -1e-12 * std::max(1.0, std::abs(r.u_n))) out.monotone = false;
    }
    out.csv = os.str();
    out.converged = study.converged;
    return out;
}

struct McVerifyOptions {
    std::size_t paths = 200000;
    std::uint64_t seed = 1;
    double z_threshold = 3.0;
};

/// Oracle comparisons available for the blocks present in the spec.
inline std::pair<std::string, bool> mc_verify_json(const MarketSpecFile& spec, const McVerifyOptions& opt) {
    if (!(opt.z_threshold > 0.0)) throw InputError("--tolerance must be > 0 standard errors");
    OrderedJson checks = OrderedJson::array();
    bool all = true;
    const auto add = [&](const std::string& name, double closed, const McEstimate& mc, double slack, bool one_sided) {
        // one_sided: closed form is an upper bound on the Monte Carlo maximum.
        const double diff = one_sided ? std::max(mc.estimate - closed, 0.0) : std::abs(mc.estimate - closed);
        const bool pass = mc.nonfinite == 0 && diff <= opt.z_threshold * mc.std_error + slack;
        all = all && pass;
        checks.push_back({{"name", name},
                          {"closed_form", number_json(closed)},
                          {"mc_estimate", number_json(mc.estimate)},
                          {"std_error", number_json(mc.std_error)},
                          {"allowance", number_json(opt.z_threshold * mc.std_error + slack)},
                          {"pass", pass}});
    };
    const McConfig cfg{opt.seed, opt.paths, false};
    if (spec.model && spec.mixing && spec.investor) {
        const auto& model = *spec.model;
        const auto& mix = *spec.mixing;
        const auto& inv = *spec.investor;
        const auto exp_u = UtilitySpec::exponential(inv.a);
        const auto r = optimize(model, mix, inv.a, inv.w0, spec.c_interval.value_or(ReturnConstraint{}));
        add("exp_opt.expected_utility", r.optimal_utility,
            mc_expected_utility(model, mix, exp_u, r.x_star, inv.w0, cfg), 0.0, false);
        // Brute force in a box around the closed-form optimum; the closed form must not be beaten.
        const double half = 1.0 + r.x_star.cwiseAbs().maxCoeff();
        BruteForceOptions bo;
        bo.box = {r.x_star.array() - half, r.x_star.array() + half};
        const McConfig crn{opt.seed + 1, opt.paths, true};
        const auto bf = brute_force_optimize(model, mix, exp_u, inv.w0, crn, bo);
        add("exp_opt.dominates_brute_force", r.optimal_utility, bf.value, 0.0, true);
        if (spec.utility) {
            const auto tm = transform(model, mix);
            const auto g = general_optimize(model, mix, *spec.utility, 4, inv.w0, spec.reduced_box.value_or(ReducedBox{}));
            const double slack = std::isfinite(g.truncation_gap) ? g.truncation_gap : 0.0;
            add("general_opt.m_value_vs_utility", g.objective,
                mc_expected_utility(model, mix, *spec.utility, g.x, inv.w0, cfg), slack, false);
            const auto moments = mc_wealth_moments(model, mix, g.x, inv.w0, g.mean_wealth, 4, cfg);
            for (int k = 2; k <= 4; ++k) {
                add("general_opt.central_moment_" + std::to_string(k), wealth_central_moment(k, g.point, tm, mix, inv.w0),
                    moments[static_cast<std::size_t>(k - 1)], 0.0, false);
            }
        }
    }
    if (spec.large_market) {
        const auto& lm = *spec.large_market;
        const int n = std::min(lm.n_list.front(), 3);
        const auto closed = segment_optimum(lm.spec, n);
        // Raw draws of (Z, eps) and h-returns sqrt(Z)(eps_i - b_i(Z)).
        const MixingSampler sampler(lm.spec.mix);
        Scenarios s{Matrix(static_cast<Eigen::Index>(opt.paths), n), false};
        std::vector<double> density(opt.paths);
        for (std::size_t p = 0; p < opt.paths; ++p) {
            CounterRng rng(opt.seed + 2, p);
            const double z = sampler(rng);
            Vector eps(n);
            for (int i = 0; i < n; ++i) eps(i) = rng.normal();
            for (int i = 0; i < n; ++i) {
                s.excess(static_cast<Eigen::Index>(p), i) = std::sqrt(z) * (eps(i) - b_function(lm.spec, i + 1, z));
            }
            density[p] = martingale_density(lm.spec, n, z, eps);
        }
        BruteForceOptions bo;
        const double half = 1.0 + closed.h_star.cwiseAbs().maxCoeff();
        bo.box = {closed.h_star.array() - half, closed.h_star.array() + half};
        auto bf = brute_force_optimize(s, UtilitySpec::exponential(1.0), 0.0, 1.0, bo);
        bf.value.estimate = -bf.value.estimate;
        add("large_market.u_" + std::to_string(n) + "_vs_brute_force", closed.u_n, bf.value, 0.0, false);
        const auto dens = detail::reduce_mean(opt.paths, [&](std::size_t p) { return density[p]; });
        add("large_market.density_mean", 1.0, dens, 0.0, false);
    }
    if (checks.empty()) throw InputError("mc-verify: spec has neither model/mixing/investor blocks nor a large_market block");
    OrderedJson j;
    j["paths"] = opt.paths;
    j["seed"] = opt.seed;
    j["z_threshold"] = number_json(opt.z_threshold);
    j["checks"] = checks;
    j["all_pass"] = all;
    std::ostringstream os;
    write_json(os, j);
    os << "\n";
    return {os.str(), all};
}

inline int run_exp_opt(const std::string& spec_path, const std::string& out_path) {
    return guarded("exp-opt", [&] {
        write_atomic(out_path, exp_opt_json(load_spec_file(spec_path)));
        return static_cast<int>(kOk);
    });
}

inline int run_general_opt(const std::string& spec_path, const std::string& out_path, int order = 4) {
    return guarded("general-opt", [&] {
        if (order < 2 || order > 8) throw InputError("--order must be in [2, 8]");
        write_atomic(out_path, general_opt_json(load_spec_file(spec_path), order));
        return static_cast<int>(kOk);
    });
}

inline int run_large_market(const std::string& spec_path, const std::string& out_path, double tolerance = 1e-4) {
    return guarded("large-market", [&] {
        if (!(tolerance > 0.0)) throw InputError("--tolerance must be > 0");
        const auto out = large_market_csv(load_spec_file(spec_path), tolerance);
        write_atomic(out_path, out.csv);
        if (!out.monotone) {
            std::cerr << "nmvm large-market: internal error: U_n increased along n_list\n";
            return static_cast<int>(kInternal);
        }
        if (!out.converged) std::cerr << "nmvm large-market: note: last doubling gap is not below the tolerance\n";
        return static_cast<int>(kOk);
    });
}

inline int run_mc_verify(const std::string& spec_path, const std::string& out_path, const McVerifyOptions& opt = {}) {
    return guarded("mc-verify", [&] {
        if (opt.paths < 2) throw InputError("--paths must be >= 2");
        const auto [text, pass] = mc_verify_json(load_spec_file(spec_path), opt);
        write_atomic(out_path, text);
        if (!pass) {
            std::cerr << "nmvm mc-verify: at least one oracle comparison failed\n";
            return static_cast<int>(kInternal);
        }
        return static_cast<int>(kOk);
    });
}

}  // namespace nmvm::cli
