// SPDX-License-Identifier: Apache-2.0
//
// Monte-Carlo experiment orchestration: scenario configuration, the NMSE and
// achievable-rate experiment loops, metric aggregation and CSV emission.
//
// Reproducibility contract: a (config, seed) pair fully determines every
// draw. Each trial derives its own sub-seeds for scene, sounding plan,
// noise, test states and optimizer restarts, so trials are independent and
// the result is identical no matter how many workers execute them.
//
// The transmit power convention: pilots have unit modulus, so an uplink
// budget of P_T scales the effective sounding noise to noise_var_ul / P_T;
// the downlink budget enters the precoder directly. Reported SNR is
// P_T / noise_var with both noise variances defaulting to one.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace pfas {

enum class Estimator { LS, OMP, VBI };
enum class PrecoderKind { Proposed, Random, NonFas, GroupOpt, Upper };

// Scene handling: Grid snaps every synthetic path onto the angular grid so
// the separable model is exact; Exact keeps the drawn angles, so grid
// mismatch enters both the observations and the truth channels.
enum class GenMode { Grid, Exact };

std::string to_string(Estimator e);
std::string to_string(PrecoderKind p);
std::string to_string(GenMode g);
Estimator estimator_from_string(const std::string& s);
PrecoderKind precoder_from_string(const std::string& s);
GenMode gen_mode_from_string(const std::string& s);

struct ScenarioConfig {
    int m1 = 4, m2 = 4; // antenna array, M = m1 * m2
    int n_states = 12;
    int n_subc = 256;
    double grid_step_deg = 5.0;
    int delay_span = 8;
    int n_users = 4;
    int n_blocks = 4;
    int n_paths = 8;
    double angle_spread_deg = 5.0;
    double p_t_db = 20.0;
    double noise_var_ul = 1.0;
    double noise_var_dl = 1.0;
    int n_trials = 10;
    std::uint64_t seed = 1;
    Estimator estimator = Estimator::VBI;
    PrecoderKind precoder = PrecoderKind::Proposed;
    GenMode gen_mode = GenMode::Grid;
    bool debug_trace = false;  // single worker, verbose estimator output
    std::string trace_prefix;  // VBI iteration traces written per trial when set
    std::string scene_file;    // reuse one scene for every trial when set
    std::string pattern_file;  // load the pattern set instead of synthesizing
};

// Named presets. "desk" shrinks the grid and subcarrier count for fast
// runs; "paper" restores the full-scale dimensions.
void apply_profile(ScenarioConfig& config, const std::string& name);

// Plain-text key = value file; '#' starts a comment. Unknown keys and
// malformed values raise ConfigError with the offending line.
ScenarioConfig load_scenario(const std::string& path, ScenarioConfig base);

// One key = value assignment with the same keys and parsing as the file
// format. Unknown keys and malformed values raise ConfigError.
void set_scenario_key(ScenarioConfig& config, const std::string& key,
                      const std::string& value);

// for_rate additionally requires n_users <= M. Raises ConfigError.
void validate_scenario(const ScenarioConfig& config, bool for_rate);

// Fresh random state configurations scored in the generalization metric.
inline constexpr int n_test_state_configs = 50;

struct TrialRow {
    int trial = 0;
    std::string metric;
    double value = 0.0;
};

struct MetricSummary {
    std::string metric;
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation, 0 for a single trial
    int count = 0;
};

struct RunResult {
    ScenarioConfig config;
    std::vector<TrialRow> rows;         // trial-major, fixed metric order
    std::vector<MetricSummary> summary; // metrics in first-appearance order
};

// Channel-estimation experiment. Per trial: draw a single-user scene,
// sound it over n_blocks random-state blocks, estimate, then report
//   nmse_train_db  aggregate NMSE over the sounding state configurations,
//   nmse_test_db   aggregate NMSE over fresh random state configurations,
//   nmse_coeff_db  NMSE of the angular-delay coefficients themselves.
RunResult run_nmse_experiment(const ScenarioConfig& config);

// Downlink experiment. Per trial: draw a K-user scene, estimate every
// user's coefficients from a shared sounding plan, pick pattern states with
// the configured precoder, then score the zero-forcing rate on the true
// channels at the chosen states. Baselines that assume perfect channel
// knowledge (random, nonfas, groupopt, upper) skip the estimation stage.
// Reports rate_bits and the comb-4 pilot bookkeeping per trial.
RunResult run_rate_experiment(const ScenarioConfig& config);

void emit_csv(const RunResult& result, std::ostream& out);
void emit_csv(const RunResult& result, const std::string& path);

} // namespace pfas
