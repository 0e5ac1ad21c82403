// SPDX-License-Identifier: Apache-2.0
//
// Experiment loops. Per-trial randomness is derived from (seed, trial,
// purpose) so every trial is an independent, reproducible unit; trials run
// on a small worker pool and results are stored by trial index, which keeps
// the output identical under any scheduling.

#include "pfas/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include "pfas/channel.hpp"
#include "pfas/common.hpp"
#include "pfas/patterns.hpp"
#include "pfas/precoding.hpp"
#include "pfas/sounding.hpp"
#include "pfas/sparse_omp.hpp"
#include "pfas/turbo_vbi.hpp"

namespace pfas {

namespace {

// Spherical-harmonic order of synthesized pattern sets.
constexpr int pattern_order = 3;

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double to_db(double ratio) { return 10.0 * std::log10(std::max(ratio, 1e-300)); }

int parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return static_cast<int>(x);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an integer: '" + v + "'");
    }
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t pos = 0;
        std::uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an unsigned integer: '" + v + "'");
    }
}

bool parse_bool(const std::string& v, const std::string& key) {
    const std::string s = lower(v);
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::string format_g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// Shared per-run state: everything derived from the config once and read
// concurrently by the trial workers.
struct ExperimentContext {
    ScenarioConfig cfg;
    double p_t_lin;
    ArrayGeometry geom;
    AngleGrid grid;
    PatternSet patterns;
    GridPatternTable table;
    GridPatternTable iso_table; // single-state reference antennas
    ScatterScene fixed_scene;
    bool has_fixed_scene = false;

    explicit ExperimentContext(const ScenarioConfig& c)
        : cfg(c),
          p_t_lin(std::pow(10.0, c.p_t_db / 10.0)),
          geom(c.m1, c.m2),
          grid(make_grid(c.grid_step_deg)),
          patterns(c.pattern_file.empty()
                       ? PatternSet::synthesize(derive_seed(c.seed, 0, SeedPurpose::Patterns),
                                                c.n_states, pattern_order)
                       : load_pattern_table(c.pattern_file)),
          table(tabulate_patterns(patterns, grid)),
          iso_table(tabulate_patterns(PatternSet::isotropic(), grid)) {
        if (patterns.n_states() != cfg.n_states)
            throw ConfigError("pattern file provides " + std::to_string(patterns.n_states()) +
                              " states, config expects " + std::to_string(cfg.n_states));
        if (!cfg.scene_file.empty()) {
            fixed_scene = load_scene(cfg.scene_file);
            if (fixed_scene.delay_span != cfg.delay_span)
                throw ConfigError("scene file delay span " +
                                  std::to_string(fixed_scene.delay_span) +
                                  " does not match configured delay span " +
                                  std::to_string(cfg.delay_span));
            has_fixed_scene = true;
        }
    }

    double effective_sounding_noise() const { return cfg.noise_var_ul / p_t_lin; }
};

ScatterScene trial_scene(const ExperimentContext& ctx, int trial, int n_users) {
    ScatterScene scene =
        ctx.has_fixed_scene
            ? ctx.fixed_scene
            : synth_scene(derive_seed(ctx.cfg.seed, static_cast<std::uint64_t>(trial),
                                      SeedPurpose::Scene),
                          n_users, ctx.cfg.n_paths, ctx.cfg.delay_span,
                          ctx.cfg.angle_spread_deg);
    if (scene.n_users < n_users)
        throw ConfigError("scene provides " + std::to_string(scene.n_users) +
                          " users, experiment needs " + std::to_string(n_users));
    if (ctx.cfg.gen_mode == GenMode::Grid) scene = snap_scene_to_grid(scene, ctx.grid);
    return scene;
}

std::string trace_path(const ExperimentContext& ctx, int trial, int user) {
    if (ctx.cfg.trace_prefix.empty() || ctx.cfg.estimator != Estimator::VBI) return "";
    return ctx.cfg.trace_prefix + ".vbi-trace.t" + std::to_string(trial) + ".u" +
           std::to_string(user) + ".csv";
}

SparseCoeffs estimate_one(const ReducedObservation& reduced, const ExperimentContext& ctx,
                          const std::string& trace_file) {
    switch (ctx.cfg.estimator) {
        case Estimator::LS:
            return ls_estimate(reduced);
        case Estimator::OMP:
            return run_momp(reduced).coeffs;
        case Estimator::VBI: {
            OmpResult omp = run_momp(reduced);
            // A noise-only observation can leave the greedy pass empty; the
            // all-zero estimate is then the only sensible refinement.
            if (omp.coeffs.support.empty()) return omp.coeffs;
            Mask mask = build_mask(omp.coeffs.support, ctx.grid, ctx.cfg.delay_span);
            VbiResult vbi = run_turbo_vbi(reduced, mask, VbiConfig{}, omp.coeffs);
            if (!trace_file.empty()) write_vbi_trace(trace_file, vbi.trace);
            return vbi.coeffs;
        }
    }
    throw std::logic_error("estimate_one: unhandled estimator");
}

using TrialMetrics = std::vector<std::pair<std::string, double>>;

TrialMetrics run_trial_nmse(const ExperimentContext& ctx, int trial) {
    const ScenarioConfig& cfg = ctx.cfg;
    ScatterScene scene = trial_scene(ctx, trial, 1);
    SparseCoeffs truth = project_scene_to_grid(scene, ctx.grid, 0);

    SoundingPlan plan = make_plan(
        derive_seed(cfg.seed, static_cast<std::uint64_t>(trial), SeedPurpose::Plan),
        cfg.n_blocks, cfg.n_states, ctx.geom.m(), cfg.n_subc, cfg.delay_span,
        ctx.effective_sounding_noise());
    auto rng = make_engine(cfg.seed, static_cast<std::uint64_t>(trial), SeedPurpose::Noise);
    SoundingObservation obs =
        cfg.gen_mode == GenMode::Grid
            ? sound_grid(truth, ctx.grid, ctx.table, ctx.geom, plan, rng)
            : sound_exact(scene, ctx.patterns, ctx.geom, plan, 0, rng);
    ReducedObservation reduced = preprocess(obs, ctx.grid, ctx.table, ctx.geom);
    SparseCoeffs est = estimate_one(reduced, ctx, trace_path(ctx, trial, 0));

    double num = 0.0, den = 0.0;
    auto accumulate = [&](const std::vector<int>& states) {
        Eigen::MatrixXcd h_true =
            cfg.gen_mode == GenMode::Grid
                ? approx_channel(truth, ctx.grid, ctx.table, ctx.geom, states, cfg.n_subc)
                : exact_channel_all(scene, ctx.patterns, ctx.geom, states, cfg.n_subc, 0);
        Eigen::MatrixXcd h_est =
            approx_channel(est, ctx.grid, ctx.table, ctx.geom, states, cfg.n_subc);
        num += (h_est - h_true).squaredNorm();
        den += h_true.squaredNorm();
    };

    for (const auto& states : plan.block_states) accumulate(states);
    const double train_db = to_db(num / den);

    num = den = 0.0;
    auto rng_test =
        make_engine(cfg.seed, static_cast<std::uint64_t>(trial), SeedPurpose::TestStates);
    std::uniform_int_distribution<int> pick(1, cfg.n_states);
    for (int i = 0; i < n_test_state_configs; ++i) {
        std::vector<int> states(static_cast<std::size_t>(ctx.geom.m()));
        for (auto& s : states) s = pick(rng_test);
        accumulate(states);
    }
    const double test_db = to_db(num / den);

    const double coeff_num =
        (est.psi_v - truth.psi_v).squaredNorm() + (est.psi_h - truth.psi_h).squaredNorm();
    const double coeff_den = truth.psi_v.squaredNorm() + truth.psi_h.squaredNorm();

    return {{"nmse_train_db", train_db},
            {"nmse_test_db", test_db},
            {"nmse_coeff_db", to_db(coeff_num / coeff_den)}};
}

TrialMetrics run_trial_rate(const ExperimentContext& ctx, int trial) {
    const ScenarioConfig& cfg = ctx.cfg;
    const int k_users = cfg.n_users;
    ScatterScene scene = trial_scene(ctx, trial, k_users);

    std::vector<SparseCoeffs> truths;
    truths.reserve(static_cast<std::size_t>(k_users));
    for (int k = 0; k < k_users; ++k)
        truths.push_back(project_scene_to_grid(scene, ctx.grid, k));
    DownlinkChannelSet true_set{ctx.grid, ctx.table, ctx.geom, cfg.n_subc, truths};

    const double noise_dl = cfg.noise_var_dl;
    double rate = 0.0;
    switch (cfg.precoder) {
        case PrecoderKind::Proposed: {
            SoundingPlan plan = make_plan(
                derive_seed(cfg.seed, static_cast<std::uint64_t>(trial), SeedPurpose::Plan),
                cfg.n_blocks, cfg.n_states, ctx.geom.m(), cfg.n_subc, cfg.delay_span,
                ctx.effective_sounding_noise());
            auto basis = make_basis(ctx.grid, ctx.table, ctx.geom, plan);
            auto rng =
                make_engine(cfg.seed, static_cast<std::uint64_t>(trial), SeedPurpose::Noise);
            std::vector<SparseCoeffs> ests;
            ests.reserve(static_cast<std::size_t>(k_users));
            for (int k = 0; k < k_users; ++k) {
                SoundingObservation obs =
                    cfg.gen_mode == GenMode::Grid
                        ? sound_grid(truths[static_cast<std::size_t>(k)], ctx.grid, ctx.table,
                                     ctx.geom, plan, rng)
                        : sound_exact(scene, ctx.patterns, ctx.geom, plan, k, rng);
                ests.push_back(
                    estimate_one(reduce(basis, obs), ctx, trace_path(ctx, trial, k)));
            }
            DownlinkChannelSet est_set{ctx.grid, ctx.table, ctx.geom, cfg.n_subc,
                                       std::move(ests)};
            StateOptConfig oc;
            oc.seed =
                derive_seed(cfg.seed, static_cast<std::uint64_t>(trial), SeedPurpose::Optimizer);
            PrecoderSolution sol = optimize_states(est_set, ctx.p_t_lin, noise_dl, oc);
            // States were chosen on estimates; the score is what they earn
            // on the true channels.
            rate = evaluate_discrete(true_set, sol.states, ctx.p_t_lin, noise_dl).rate_bits;
            break;
        }
        case PrecoderKind::Upper: {
            StateOptConfig oc;
            oc.seed =
                derive_seed(cfg.seed, static_cast<std::uint64_t>(trial), SeedPurpose::Optimizer);
            rate = optimize_states(true_set, ctx.p_t_lin, noise_dl, oc).rate_bits;
            break;
        }
        case PrecoderKind::Random:
            rate = random_states(true_set, ctx.p_t_lin, noise_dl,
                                 derive_seed(cfg.seed, static_cast<std::uint64_t>(trial),
                                             SeedPurpose::Optimizer))
                       .rate_bits;
            break;
        case PrecoderKind::GroupOpt:
            rate = group_opt(true_set, ctx.p_t_lin, noise_dl).rate_bits;
            break;
        case PrecoderKind::NonFas: {
            DownlinkChannelSet iso_set{ctx.grid, ctx.iso_table, ctx.geom, cfg.n_subc, truths};
            rate = evaluate_discrete(iso_set,
                                     std::vector<int>(static_cast<std::size_t>(ctx.geom.m()), 1),
                                     ctx.p_t_lin, noise_dl)
                       .rate_bits;
            break;
        }
    }

    return {{"rate_bits", rate},
            {"pilot_symbols", static_cast<double>(comb4_overhead(k_users, cfg.n_blocks))}};
}

std::vector<TrialMetrics> run_trials(const ExperimentContext& ctx,
                                     const std::function<TrialMetrics(int)>& body) {
    const int n = ctx.cfg.n_trials;
    std::vector<TrialMetrics> out(static_cast<std::size_t>(n));
    if (n == 0) return out;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));

    unsigned hw = std::thread::hardware_concurrency();
    unsigned workers = ctx.cfg.debug_trace
                           ? 1u
                           : std::max(1u, std::min(hw ? hw : 1u, static_cast<unsigned>(n)));
    std::atomic<int> next{0};
    auto work = [&] {
        for (;;) {
            const int t = next.fetch_add(1);
            if (t >= n) return;
            try {
                out[static_cast<std::size_t>(t)] = body(t);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    for (int t = 0; t < n; ++t)
        if (errors[static_cast<std::size_t>(t)])
            std::rethrow_exception(errors[static_cast<std::size_t>(t)]);
    return out;
}

RunResult assemble(const ScenarioConfig& cfg, const std::vector<TrialMetrics>& trials) {
    RunResult res;
    res.config = cfg;
    std::vector<std::string> order;
    std::vector<std::vector<double>> values;
    for (std::size_t t = 0; t < trials.size(); ++t) {
        for (const auto& [name, value] : trials[t]) {
            res.rows.push_back({static_cast<int>(t), name, value});
            auto it = std::find(order.begin(), order.end(), name);
            if (it == order.end()) {
                order.push_back(name);
                values.emplace_back();
                it = std::prev(order.end());
            }
            values[static_cast<std::size_t>(it - order.begin())].push_back(value);
        }
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& v = values[i];
        MetricSummary s;
        s.metric = order[i];
        s.count = static_cast<int>(v.size());
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        s.mean = mean;
        s.stddev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
        res.summary.push_back(std::move(s));
    }
    return res;
}

} // namespace

std::string to_string(Estimator e) {
    switch (e) {
        case Estimator::LS:
            return "ls";
        case Estimator::OMP:
            return "omp";
        case Estimator::VBI:
            return "vbi";
    }
    return "?";
}

std::string to_string(PrecoderKind p) {
    switch (p) {
        case PrecoderKind::Proposed:
            return "proposed";
        case PrecoderKind::Random:
            return "random";
        case PrecoderKind::NonFas:
            return "nonfas";
        case PrecoderKind::GroupOpt:
            return "groupopt";
        case PrecoderKind::Upper:
            return "upper";
    }
    return "?";
}

std::string to_string(GenMode g) { return g == GenMode::Grid ? "grid" : "exact"; }

Estimator estimator_from_string(const std::string& s) {
    const std::string v = lower(trim(s));
    if (v == "ls") return Estimator::LS;
    if (v == "omp") return Estimator::OMP;
    if (v == "vbi") return Estimator::VBI;
    throw ConfigError("unknown estimator '" + s + "' (expected ls, omp or vbi)");
}

PrecoderKind precoder_from_string(const std::string& s) {
    const std::string v = lower(trim(s));
    if (v == "proposed") return PrecoderKind::Proposed;
    if (v == "random") return PrecoderKind::Random;
    if (v == "nonfas") return PrecoderKind::NonFas;
    if (v == "groupopt") return PrecoderKind::GroupOpt;
    if (v == "upper") return PrecoderKind::Upper;
    throw ConfigError("unknown precoder '" + s +
                      "' (expected proposed, random, nonfas, groupopt or upper)");
}

GenMode gen_mode_from_string(const std::string& s) {
    const std::string v = lower(trim(s));
    if (v == "grid") return GenMode::Grid;
    if (v == "exact") return GenMode::Exact;
    throw ConfigError("unknown gen_mode '" + s + "' (expected grid or exact)");
}

void apply_profile(ScenarioConfig& config, const std::string& name) {
    const std::string v = lower(trim(name));
    if (v == "desk") {
        config.n_subc = 64;
        config.grid_step_deg = 15.0;
        config.delay_span = 8;
    } else if (v == "paper") {
        config.n_subc = 256;
        config.grid_step_deg = 5.0;
        config.delay_span = 8;
    } else {
        throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
    }
}

ScenarioConfig load_scenario(const std::string& path, ScenarioConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": empty key or value");
        try {
            set_scenario_key(base, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

void set_scenario_key(ScenarioConfig& config, const std::string& key,
                      const std::string& value) {
    if (key == "m1") config.m1 = parse_int(value, key);
    else if (key == "m2") config.m2 = parse_int(value, key);
    else if (key == "n_states") config.n_states = parse_int(value, key);
    else if (key == "n_subc") config.n_subc = parse_int(value, key);
    else if (key == "grid_step_deg") config.grid_step_deg = parse_double(value, key);
    else if (key == "delay_span") config.delay_span = parse_int(value, key);
    else if (key == "n_users") config.n_users = parse_int(value, key);
    else if (key == "n_blocks") config.n_blocks = parse_int(value, key);
    else if (key == "n_paths") config.n_paths = parse_int(value, key);
    else if (key == "angle_spread_deg") config.angle_spread_deg = parse_double(value, key);
    else if (key == "p_t_db") config.p_t_db = parse_double(value, key);
    else if (key == "noise_var_ul") config.noise_var_ul = parse_double(value, key);
    else if (key == "noise_var_dl") config.noise_var_dl = parse_double(value, key);
    else if (key == "n_trials") config.n_trials = parse_int(value, key);
    else if (key == "seed") config.seed = parse_u64(value, key);
    else if (key == "estimator") config.estimator = estimator_from_string(value);
    else if (key == "precoder") config.precoder = precoder_from_string(value);
    else if (key == "gen_mode") config.gen_mode = gen_mode_from_string(value);
    else if (key == "debug_trace") config.debug_trace = parse_bool(value, key);
    else if (key == "scene_file") config.scene_file = value;
    else if (key == "pattern_file") config.pattern_file = value;
    else
        throw ConfigError("unknown key '" + key + "'");
}

void validate_scenario(const ScenarioConfig& config, bool for_rate) {
    if (config.m1 < 1 || config.m2 < 1) throw ConfigError("m1 and m2 must be >= 1");
    if (config.n_states < 1) throw ConfigError("n_states must be >= 1");
    if (config.n_subc < 1) throw ConfigError("n_subc must be >= 1");
    if (config.delay_span < 1 || config.delay_span > config.n_subc)
        throw ConfigError("delay_span must be in [1, n_subc]");
    if (config.n_users < 1) throw ConfigError("n_users must be >= 1");
    if (config.n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
    if (config.n_paths < 1) throw ConfigError("n_paths must be >= 1");
    if (config.n_trials < 0) throw ConfigError("n_trials must be >= 0");
    if (!(config.angle_spread_deg >= 0.0)) throw ConfigError("angle_spread_deg must be >= 0");
    if (!(config.noise_var_ul > 0.0) || !(config.noise_var_dl > 0.0))
        throw ConfigError("noise variances must be positive");
    if (!std::isfinite(config.p_t_db)) throw ConfigError("p_t_db must be finite");
    try {
        (void)make_grid(config.grid_step_deg);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("grid_step_deg: ") + e.what());
    }
    if (for_rate && config.n_users > config.m1 * config.m2)
        throw ConfigError("rate experiments need n_users <= m1 * m2");
}

RunResult run_nmse_experiment(const ScenarioConfig& config) {
    validate_scenario(config, false);
    ExperimentContext ctx(config);
    auto trials = run_trials(ctx, [&](int t) { return run_trial_nmse(ctx, t); });
    return assemble(config, trials);
}

RunResult run_rate_experiment(const ScenarioConfig& config) {
    validate_scenario(config, true);
    ExperimentContext ctx(config);
    auto trials = run_trials(ctx, [&](int t) { return run_trial_rate(ctx, t); });
    return assemble(config, trials);
}

void emit_csv(const RunResult& result, std::ostream& out) {
    const ScenarioConfig& c = result.config;
    out << "m1,m2,n_states,n_subc,delay_span,n_users,n_blocks,n_paths,grid_step_deg,"
           "angle_spread_deg,p_t_db,noise_var_ul,noise_var_dl,estimator,precoder,gen_mode,"
           "seed,trials,trial,metric,value\n";
    std::ostringstream prefix;
    prefix << c.m1 << ',' << c.m2 << ',' << c.n_states << ',' << c.n_subc << ','
           << c.delay_span << ',' << c.n_users << ',' << c.n_blocks << ',' << c.n_paths << ','
           << format_g9(c.grid_step_deg) << ',' << format_g9(c.angle_spread_deg) << ','
           << format_g9(c.p_t_db) << ',' << format_g9(c.noise_var_ul) << ','
           << format_g9(c.noise_var_dl) << ',' << to_string(c.estimator) << ','
           << to_string(c.precoder) << ',' << to_string(c.gen_mode) << ',' << c.seed << ','
           << c.n_trials;
    const std::string scenario = prefix.str();
    for (const auto& row : result.rows)
        out << scenario << ',' << row.trial << ',' << row.metric << ',' << format_g9(row.value)
            << '\n';
}

void emit_csv(const RunResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open output file: " + path);
    emit_csv(result, out);
    out.flush();
    if (!out) throw ConfigError("failed while writing output file: " + path);
}

} // namespace pfas
