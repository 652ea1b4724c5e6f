#pragma once

// Market spec files: JSON with the blocks model, mixing, investor, utility, domain and
// large_market, all optional at parse time. Unknown keys are rejected and every error
// names the offending field.

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nmvm/errors.hpp"
#include "nmvm/exp_opt.hpp"
#include "nmvm/general_opt.hpp"
#include "nmvm/large_market.hpp"
#include "nmvm/mixing.hpp"
#include "nmvm/model.hpp"
#include "nmvm/utility.hpp"

namespace nmvm {

struct InvestorBlock {
    double a = 1.0;
    double w0 = 1.0;
};

struct LargeMarketBlock {
    LargeMarketSpec spec;
    std::vector<int> n_list;
};

struct MarketSpecFile {
    std::optional<MarketModel> model;
    std::optional<MixingDistribution> mixing;
    std::optional<InvestorBlock> investor;
    std::optional<UtilitySpec> utility;
    std::optional<ReturnConstraint> c_interval;
    std::optional<ReducedBox> reduced_box;
    std::optional<LargeMarketBlock> large_market;

    const MarketModel& require_model() const {
        if (!model) throw InputError("spec: missing block 'model'");
        return *model;
    }
    const MixingDistribution& require_mixing() const {
        if (!mixing) throw InputError("spec: missing block 'mixing'");
        return *mixing;
    }
    const InvestorBlock& require_investor() const {
        if (!investor) throw InputError("spec: missing block 'investor'");
        return *investor;
    }
    const LargeMarketBlock& require_large_market() const {
        if (!large_market) throw InputError("spec: missing block 'large_market'");
        return *large_market;
    }
    /// The utility block, or exponential utility with the investor's risk aversion.
    UtilitySpec utility_or_default() const {
        if (utility) return *utility;
        return UtilitySpec::exponential(require_investor().a);
    }
};

namespace spec_detail {

using Json = nlohmann::json;

inline void check_keys(const Json& obj, const std::string& path, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw InputError(path + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key)) throw InputError(path + "." + key + ": unknown key");
    }
}

inline const Json& field(const Json& obj, const std::string& path, const std::string& key) {
    if (!obj.contains(key)) throw InputError(path + "." + key + ": missing");
    return obj.at(key);
}

inline double number(const Json& v, const std::string& path) {
    if (!v.is_number()) throw InputError(path + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw InputError(path + ": must be finite");
    return d;
}

inline double number(const Json& obj, const std::string& path, const std::string& key) {
    return number(field(obj, path, key), path + "." + key);
}

inline double number_or(const Json& obj, const std::string& path, const std::string& key, double fallback) {
    return obj.contains(key) ? number(obj, path, key) : fallback;
}

inline int integer(const Json& v, const std::string& path) {
    if (!v.is_number_integer()) throw InputError(path + ": expected an integer");
    const auto i = v.get<long long>();
    if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max()) {
        throw InputError(path + ": integer out of range");
    }
    return static_cast<int>(i);
}

inline std::vector<double> numbers(const Json& v, const std::string& path) {
    if (!v.is_array()) throw InputError(path + ": expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

inline Vector vector_of(const Json& obj, const std::string& path, const std::string& key, std::size_t n) {
    const auto v = numbers(field(obj, path, key), path + "." + key);
    if (v.size() != n) {
        throw InputError(path + "." + key + ": expected " + std::to_string(n) + " entries, got " + std::to_string(v.size()));
    }
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// [lo, hi]; null ends become -inf / +inf when `allow_open`, NaN for an open upper end otherwise.
inline std::pair<double, double> interval(const Json& v, const std::string& path, bool allow_open) {
    if (!v.is_array() || v.size() != 2) throw InputError(path + ": expected [lo, hi]");
    const double inf = std::numeric_limits<double>::infinity();
    double lo, hi;
    if (v[0].is_null()) {
        if (!allow_open) throw InputError(path + "[0]: lower end must be a number");
        lo = -inf;
    } else {
        lo = number(v[0], path + "[0]");
    }
    if (v[1].is_null()) {
        hi = allow_open ? inf : std::numeric_limits<double>::quiet_NaN();
    } else {
        hi = number(v[1], path + "[1]");
    }
    if (lo > hi) throw InputError(path + ": lower end exceeds upper end");
    return {lo, hi};
}

inline MarketModel parse_model(const Json& j) {
    const std::string p = "model";
    check_keys(j, p, {"n", "r_f", "mu", "gamma", "A"});
    const int n = integer(field(j, p, "n"), p + ".n");
    if (n < 1) throw InputError("model.n: must be >= 1");
    const auto un = static_cast<std::size_t>(n);
    const Vector mu = vector_of(j, p, "mu", un);
    const Vector gamma = vector_of(j, p, "gamma", un);
    const auto a_flat = numbers(field(j, p, "A"), p + ".A");
    if (a_flat.size() != un * un) {
        throw InputError("model.A: expected " + std::to_string(un * un) + " entries (row-major n x n), got " +
                         std::to_string(a_flat.size()));
    }
    Matrix a(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) a(r, c) = a_flat[static_cast<std::size_t>(r * n + c)];
    return MarketModel::create(mu, gamma, a, number_or(j, p, "r_f", 0.0));
}

inline MixingDistribution parse_mixing(const Json& j, const std::string& p) {
    if (!j.is_object()) throw InputError(p + ": expected an object");
    const auto& kind_v = field(j, p, "kind");
    if (!kind_v.is_string()) throw InputError(p + ".kind: expected a string");
    const auto kind = kind_v.get<std::string>();
    try {
        if (kind == "constant") {
            check_keys(j, p, {"kind", "value"});
            return MixingDistribution::constant(number(j, p, "value"));
        }
        if (kind == "exponential") {
            check_keys(j, p, {"kind", "rate"});
            return MixingDistribution::exponential(number_or(j, p, "rate", 1.0));
        }
        if (kind == "gig") {
            check_keys(j, p, {"kind", "lambda", "chi", "psi"});
            return MixingDistribution::gig(number(j, p, "lambda"), number(j, p, "chi"), number(j, p, "psi"));
        }
        if (kind == "bounded_uniform") {
            check_keys(j, p, {"kind", "lower", "upper"});
            return MixingDistribution::bounded_uniform(number(j, p, "lower"), number(j, p, "upper"));
        }
    } catch (const InputError& e) {
        const std::string msg = e.what();
        if (msg.rfind(p, 0) == 0) throw;
        throw InputError(p + ": " + msg);
    }
    throw InputError(p + ".kind: unknown mixing kind '" + kind + "' (constant, exponential, gig, bounded_uniform)");
}

inline InvestorBlock parse_investor(const Json& j) {
    check_keys(j, "investor", {"a", "W0"});
    InvestorBlock b{number_or(j, "investor", "a", 1.0), number_or(j, "investor", "W0", 1.0)};
    if (!(b.a > 0.0)) throw InputError("investor.a: must be > 0");
    if (!(b.w0 > 0.0)) throw InputError("investor.W0: must be > 0");
    return b;
}

inline UtilitySpec parse_utility(const Json& j, const std::optional<InvestorBlock>& inv) {
    const std::string p = "utility";
    if (!j.is_object()) throw InputError(p + ": expected an object");
    const auto& kind_v = field(j, p, "kind");
    if (!kind_v.is_string()) throw InputError(p + ".kind: expected a string");
    const auto kind = kind_v.get<std::string>();
    try {
        if (kind == "exponential") {
            check_keys(j, p, {"kind", "a"});
            return UtilitySpec::exponential(number_or(j, p, "a", inv ? inv->a : 1.0));
        }
        if (kind == "power") {
            check_keys(j, p, {"kind", "eta"});
            return UtilitySpec::power(number(j, p, "eta"));
        }
        if (kind == "log") {
            check_keys(j, p, {"kind"});
            return UtilitySpec::log();
        }
        if (kind == "quadratic") {
            check_keys(j, p, {"kind", "b"});
            return UtilitySpec::quadratic(number(j, p, "b"));
        }
    } catch (const InputError& e) {
        const std::string msg = e.what();
        if (msg.rfind(p, 0) == 0) throw;
        throw InputError(p + ": " + msg);
    }
    throw InputError(p + ".kind: unknown utility kind '" + kind + "' (exponential, power, log, quadratic)");
}

/// {"kappa": k, "p": p} for kappa / i^p, {"values": [...], "first_index": i}, or a bare array.
inline Sequence parse_sequence(const Json& j, const std::string& p, int default_first) {
    if (j.is_array()) return Sequence::values(numbers(j, p), default_first);
    if (!j.is_object()) throw InputError(p + ": expected an object or an array");
    if (j.contains("values")) {
        check_keys(j, p, {"values", "first_index"});
        const int first = j.contains("first_index") ? integer(j.at("first_index"), p + ".first_index") : default_first;
        if (first < 1) throw InputError(p + ".first_index: must be >= 1");
        return Sequence::values(numbers(j.at("values"), p + ".values"), first);
    }
    check_keys(j, p, {"kappa", "p"});
    return Sequence::power(number(j, p, "kappa"), number_or(j, p, "p", 0.0));
}

inline LargeMarketBlock parse_large_market(const Json& j) {
    const std::string p = "large_market";
    check_keys(j, p, {"gamma", "mu", "beta", "beta_bar", "support", "mixing", "n_list"});
    LargeMarketBlock b;
    auto& s = b.spec;
    s.gamma = parse_sequence(field(j, p, "gamma"), p + ".gamma", 1);
    s.mu = parse_sequence(field(j, p, "mu"), p + ".mu", 1);
    s.beta = j.contains("beta") ? parse_sequence(j.at("beta"), p + ".beta", 2) : Sequence::zero();
    s.beta_bar = j.contains("beta_bar") ? parse_sequence(j.at("beta_bar"), p + ".beta_bar", 1) : Sequence::power(1.0, 0.0);
    if (j.contains("support") == j.contains("mixing")) {
        throw InputError(p + ": give exactly one of 'support' ([c, C], uniform Z) or 'mixing'");
    }
    if (j.contains("support")) {
        const auto [c, cc] = interval(j.at("support"), p + ".support", false);
        if (std::isnan(cc)) throw InputError(p + ".support[1]: upper end must be a number");
        try {
            s.mix = MixingDistribution::bounded_uniform(c, cc);
        } catch (const InputError& e) {
            throw InputError(p + ".support: " + e.what());
        }
    } else {
        s.mix = parse_mixing(j.at("mixing"), p + ".mixing");
    }
    const auto& nl = field(j, p, "n_list");
    if (!nl.is_array() || nl.empty()) throw InputError(p + ".n_list: expected a non-empty array of integers");
    for (std::size_t i = 0; i < nl.size(); ++i) {
        const std::string ip = p + ".n_list[" + std::to_string(i) + "]";
        const int n = integer(nl[i], ip);
        if (n < 1) throw InputError(ip + ": must be >= 1");
        if (!b.n_list.empty() && n <= b.n_list.back()) throw InputError(p + ".n_list: must be strictly increasing");
        b.n_list.push_back(n);
    }
    s.max_n = b.n_list.back();
    try {
        s.validate();
    } catch (const InputError& e) {
        throw InputError(p + ": " + e.what());
    }
    return b;
}

inline void parse_domain(const Json& j, MarketSpecFile& out) {
    const std::string p = "domain";
    check_keys(j, p, {"c_interval", "phi", "psi", "rho"});
    if (j.contains("c_interval")) {
        const auto [lo, hi] = interval(j.at("c_interval"), p + ".c_interval", true);
        out.c_interval = ReturnConstraint{lo, hi};
    }
    if (j.contains("phi") || j.contains("psi") || j.contains("rho")) {
        ReducedBox box;
        if (j.contains("phi")) std::tie(box.phi_lo, box.phi_hi) = interval(j.at("phi"), p + ".phi", false);
        if (j.contains("psi")) std::tie(box.psi_lo, box.psi_hi) = interval(j.at("psi"), p + ".psi", false);
        if (j.contains("rho")) std::tie(box.rho_lo, box.rho_hi) = interval(j.at("rho"), p + ".rho", false);
        if (box.rho_lo < 0.0) throw InputError(p + ".rho[0]: must be >= 0");
        out.reduced_box = box;
    }
}

}  // namespace spec_detail

inline MarketSpecFile parse_spec(const std::string& text) {
    spec_detail::Json j;
    try {
        j = spec_detail::Json::parse(text);
    } catch (const spec_detail::Json::parse_error& e) {
        throw InputError(std::string("spec: malformed JSON: ") + e.what());
    }
    spec_detail::check_keys(j, "spec", {"model", "mixing", "investor", "utility", "domain", "large_market"});
    MarketSpecFile out;
    try {
        if (j.contains("model")) out.model = spec_detail::parse_model(j.at("model"));
    } catch (const InputError& e) {
        const std::string msg = e.what();
        if (msg.rfind("model", 0) == 0) throw;
        throw InputError("model: " + msg);
    }
    if (j.contains("mixing")) out.mixing = spec_detail::parse_mixing(j.at("mixing"), "mixing");
    if (j.contains("investor")) out.investor = spec_detail::parse_investor(j.at("investor"));
    if (j.contains("utility")) out.utility = spec_detail::parse_utility(j.at("utility"), out.investor);
    if (j.contains("domain")) spec_detail::parse_domain(j.at("domain"), out);
    if (j.contains("large_market")) out.large_market = spec_detail::parse_large_market(j.at("large_market"));
    return out;
}

inline MarketSpecFile load_spec_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("spec: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_spec(ss.str());
}

}  // namespace nmvm
