// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end over the C API. Scenario values are layered in a
// fixed order so the caller can reason about precedence: library defaults,
// then --profile, then --config, then the explicit flags.

#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pfas.h"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_numerical = 3;

struct Options {
    std::string profile;
    std::string config_path;
    std::optional<std::string> seed;
    std::optional<std::string> trials;
    std::optional<std::string> estimator;
    std::optional<std::string> precoder;
    std::string out = "-";
    bool debug_trace = false;
};

int status_to_exit(int status) {
    if (status == PFAS_OK) return exit_ok;
    if (status == PFAS_NUMERICAL || status == PFAS_INTERNAL) return exit_numerical;
    return exit_config;
}

int report(int status, const char* stage) {
    std::fprintf(stderr, "pfas: %s: %s\n", stage, pfas_last_error());
    return status_to_exit(status);
}

// Trace files get the output stem so a run's CSV and traces sit together.
std::string trace_stem(const std::string& out) {
    if (out.empty() || out == "-") return "pfas";
    if (out.size() > 4 && out.compare(out.size() - 4, 4, ".csv") == 0)
        return out.substr(0, out.size() - 4);
    return out;
}

int run(const Options& opt, bool rate) {
    pfas_config* config = pfas_config_create();
    if (config == nullptr) {
        std::fprintf(stderr, "pfas: cannot allocate configuration\n");
        return exit_numerical;
    }
    struct Guard {
        pfas_config* c;
        pfas_result* r = nullptr;
        ~Guard() {
            pfas_result_destroy(r);
            pfas_config_destroy(c);
        }
    } guard{config};

    int status = PFAS_OK;
    if (!opt.profile.empty() &&
        (status = pfas_config_apply_profile(config, opt.profile.c_str())) != PFAS_OK)
        return report(status, "profile");
    if (!opt.config_path.empty() &&
        (status = pfas_config_load_file(config, opt.config_path.c_str())) != PFAS_OK)
        return report(status, opt.config_path.c_str());

    auto set = [&](const char* key, const std::string& value) {
        status = pfas_config_set(config, key, value.c_str());
        return status == PFAS_OK;
    };
    if (opt.seed && !set("seed", *opt.seed)) return report(status, "--seed");
    if (opt.trials && !set("n_trials", *opt.trials)) return report(status, "--trials");
    if (opt.estimator && !set("estimator", *opt.estimator)) return report(status, "--estimator");
    if (opt.precoder && !set("precoder", *opt.precoder)) return report(status, "--precoder");
    if (opt.debug_trace) {
        if (!set("debug_trace", "true")) return report(status, "--debug-trace");
        if (!set("trace_prefix", trace_stem(opt.out))) return report(status, "--debug-trace");
    }

    status = rate ? pfas_run_rate(config, &guard.r) : pfas_run_nmse(config, &guard.r);
    if (status != PFAS_OK) return report(status, rate ? "rate" : "nmse");

    status = pfas_result_write_csv(guard.r, opt.out.c_str());
    if (status != PFAS_OK) return report(status, opt.out.c_str());
    return exit_ok;
}

void add_common(CLI::App* sub, Options& opt) {
    sub->add_option("--config", opt.config_path, "Scenario file (key = value lines)");
    sub->add_option("--profile", opt.profile, "Size preset: desk or paper");
    sub->add_option("--seed", opt.seed, "Master seed (unsigned 64-bit)");
    sub->add_option("--trials", opt.trials, "Number of Monte-Carlo trials");
    sub->add_option("--estimator", opt.estimator, "Channel estimator: ls, omp, or vbi");
    sub->add_option("--precoder", opt.precoder,
                    "Precoder arm: proposed, random, nonfas, groupopt, or upper");
    sub->add_option("--out", opt.out, "Output CSV path; '-' streams to stdout");
    sub->add_flag("--debug-trace", opt.debug_trace,
                  "Single-threaded run with per-trial estimator traces");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pixel-antenna MIMO-OFDM simulation (library " +
                 std::string(pfas_version_string()) + ")"};
    app.require_subcommand(1);

    Options nmse_opt, rate_opt;
    CLI::App* nmse = app.add_subcommand("nmse", "Uplink channel-estimation error experiment");
    add_common(nmse, nmse_opt);
    CLI::App* rate = app.add_subcommand("rate", "Downlink precoded sum-rate experiment");
    add_common(rate, rate_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    if (nmse->parsed()) return run(nmse_opt, false);
    return run(rate_opt, true);
}
