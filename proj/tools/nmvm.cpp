// nmvm: batch front end for the portfolio solvers and the Monte Carlo oracle.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nmvm/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Expected-utility portfolio optimization for normal mean-variance mixture markets.\n"
                 "Exit codes: 0 ok, 1 input error, 2 infeasible or degenerate problem, 3 internal error.\n"
                 "NMVM_THREADS caps the number of worker threads."};
    app.require_subcommand(1);

    std::string spec_path, out_path = "-";
    int order = 4;
    double lm_tolerance = 1e-4;
    nmvm::cli::McVerifyOptions mc;

    auto* exp_opt = app.add_subcommand("exp-opt", "Closed-form optimal portfolio for exponential utility (JSON).");
    exp_opt->add_option("--spec", spec_path, "Market spec file (JSON)")->required();
    exp_opt->add_option("--out", out_path, "Output file; '-' writes to stdout")->capture_default_str();

    auto* general = app.add_subcommand("general-opt", "Moment-expansion optimum for a general utility (JSON).");
    general->add_option("--spec", spec_path, "Market spec file (JSON)")->required();
    general->add_option("--out", out_path, "Output file; '-' writes to stdout")->capture_default_str();
    general->add_option("--order", order, "Truncation order of the moment expansion (2 to 8)")->capture_default_str();

    auto* large = app.add_subcommand("large-market", "U_n convergence table for a large market (CSV).");
    large->add_option("--spec", spec_path, "Market spec file with a large_market block (JSON)")->required();
    large->add_option("--out", out_path, "Output file; '-' writes to stdout")->capture_default_str();
    large->add_option("--tolerance", lm_tolerance, "Convergence threshold on |U_n - U_2n| for the last n")
        ->capture_default_str();

    auto* verify = app.add_subcommand("mc-verify", "Compare closed forms with the Monte Carlo oracle (JSON report).");
    verify->add_option("--spec", spec_path, "Market spec file (JSON)")->required();
    verify->add_option("--out", out_path, "Output file; '-' writes to stdout")->capture_default_str();
    verify->add_option("--paths", mc.paths, "Monte Carlo paths per estimate")->capture_default_str();
    verify->add_option("--seed", mc.seed, "Random seed")->capture_default_str();
    verify->add_option("--tolerance", mc.z_threshold, "Allowed deviation in standard errors")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return nmvm::cli::kInputError;
    }

    if (exp_opt->parsed()) return nmvm::cli::run_exp_opt(spec_path, out_path);
    if (general->parsed()) return nmvm::cli::run_general_opt(spec_path, out_path, order);
    if (large->parsed()) return nmvm::cli::run_large_market(spec_path, out_path, lm_tolerance);
    return nmvm::cli::run_mc_verify(spec_path, out_path, mc);
}
