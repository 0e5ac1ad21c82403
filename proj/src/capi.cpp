// SPDX-License-Identifier: Apache-2.0
//
// C ABI shim over the harness. Handles are thin wrappers around the C++
// value types; every entry point catches, maps the exception family onto a
// status code, and parks the message in a thread-local slot.

#include "pfas.h"

#include <exception>
#include <fstream>
#include <iostream>
#include <memory>
#include <new>
#include <string>

#include "pfas/common.hpp"
#include "pfas/harness.hpp"

struct pfas_config {
    pfas::ScenarioConfig cfg;
};

struct pfas_result {
    pfas::RunResult res;
};

namespace {

thread_local std::string t_last_error;

int fail(int code, const char* what) {
    t_last_error = what != nullptr ? what : "";
    return code;
}

int fail_argument(const char* what) { return fail(PFAS_ARGUMENT, what); }

// IO problems surface as ConfigError inside the core ("cannot open ...");
// callers of file operations get PFAS_IO instead so they can distinguish a
// bad path from a bad scenario.
template <typename Fn>
int guarded(Fn&& fn, int config_status = PFAS_CONFIG) {
    try {
        fn();
    } catch (const pfas::ConfigError& e) {
        return fail(config_status, e.what());
    } catch (const pfas::NumericalError& e) {
        return fail(PFAS_NUMERICAL, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(PFAS_ARGUMENT, e.what());
    } catch (const std::bad_alloc&) {
        return fail(PFAS_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(PFAS_INTERNAL, e.what());
    } catch (...) {
        return fail(PFAS_INTERNAL, "unknown error");
    }
    t_last_error.clear();
    return PFAS_OK;
}

} // namespace

extern "C" {

const char* pfas_version_string(void) { return "1.0.0"; }

const char* pfas_last_error(void) { return t_last_error.c_str(); }

pfas_config* pfas_config_create(void) {
    pfas_config* config = new (std::nothrow) pfas_config{};
    if (config != nullptr) t_last_error.clear();
    return config;
}

void pfas_config_destroy(pfas_config* config) { delete config; }

int pfas_config_apply_profile(pfas_config* config, const char* name) {
    if (config == nullptr) return fail_argument("config is null");
    if (name == nullptr) return fail_argument("profile name is null");
    return guarded([&] { pfas::apply_profile(config->cfg, name); });
}

int pfas_config_load_file(pfas_config* config, const char* path) {
    if (config == nullptr) return fail_argument("config is null");
    if (path == nullptr) return fail_argument("path is null");
    // An unreadable file reports PFAS_IO; a bad line inside an open file is
    // a scenario problem and keeps the PFAS_CONFIG classification.
    if (std::ifstream probe(path); !probe)
        return fail(PFAS_IO, ("cannot open config file: " + std::string(path)).c_str());
    return guarded([&] { config->cfg = pfas::load_scenario(path, config->cfg); });
}

int pfas_config_set(pfas_config* config, const char* key, const char* value) {
    if (config == nullptr) return fail_argument("config is null");
    if (key == nullptr || value == nullptr) return fail_argument("key or value is null");
    return guarded([&] {
        if (std::string(key) == "trace_prefix")
            config->cfg.trace_prefix = value;
        else
            pfas::set_scenario_key(config->cfg, key, value);
    });
}

int pfas_run_nmse(const pfas_config* config, pfas_result** out) {
    if (config == nullptr) return fail_argument("config is null");
    if (out == nullptr) return fail_argument("out is null");
    *out = nullptr;
    return guarded([&] {
        auto result = std::make_unique<pfas_result>();
        result->res = pfas::run_nmse_experiment(config->cfg);
        *out = result.release();
    });
}

int pfas_run_rate(const pfas_config* config, pfas_result** out) {
    if (config == nullptr) return fail_argument("config is null");
    if (out == nullptr) return fail_argument("out is null");
    *out = nullptr;
    return guarded([&] {
        auto result = std::make_unique<pfas_result>();
        result->res = pfas::run_rate_experiment(config->cfg);
        *out = result.release();
    });
}

void pfas_result_destroy(pfas_result* result) { delete result; }

long pfas_result_row_count(const pfas_result* result) {
    return result == nullptr ? -1 : static_cast<long>(result->res.rows.size());
}

int pfas_result_row(const pfas_result* result, long index, int* trial, const char** metric,
                    double* value) {
    if (result == nullptr) return fail_argument("result is null");
    if (index < 0 || index >= static_cast<long>(result->res.rows.size()))
        return fail_argument("row index out of range");
    const pfas::TrialRow& row = result->res.rows[static_cast<std::size_t>(index)];
    if (trial != nullptr) *trial = row.trial;
    if (metric != nullptr) *metric = row.metric.c_str();
    if (value != nullptr) *value = row.value;
    t_last_error.clear();
    return PFAS_OK;
}

long pfas_result_summary_count(const pfas_result* result) {
    return result == nullptr ? -1 : static_cast<long>(result->res.summary.size());
}

int pfas_result_summary(const pfas_result* result, long index, const char** metric,
                        double* mean, double* stddev, int* count) {
    if (result == nullptr) return fail_argument("result is null");
    if (index < 0 || index >= static_cast<long>(result->res.summary.size()))
        return fail_argument("summary index out of range");
    const pfas::MetricSummary& s = result->res.summary[static_cast<std::size_t>(index)];
    if (metric != nullptr) *metric = s.metric.c_str();
    if (mean != nullptr) *mean = s.mean;
    if (stddev != nullptr) *stddev = s.stddev;
    if (count != nullptr) *count = s.count;
    t_last_error.clear();
    return PFAS_OK;
}

int pfas_result_write_csv(const pfas_result* result, const char* path) {
    if (result == nullptr) return fail_argument("result is null");
    const bool to_stdout = path == nullptr || std::string(path) == "-";
    return guarded(
        [&] {
            if (to_stdout) {
                pfas::emit_csv(result->res, std::cout);
                std::cout.flush();
                if (!std::cout) throw pfas::ConfigError("failed writing CSV to stdout");
            } else {
                pfas::emit_csv(result->res, std::string(path));
            }
        },
        PFAS_IO);
}

} // extern "C"
