#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mras/baselines.hpp"
#include "mras/channel.hpp"
#include "mras/sensing.hpp"
#include "mras/solver.hpp"
#include "mras/types.hpp"

namespace mras {

/// Activity error rate: symmetric difference between the true and detected
/// device sets, normalized by the device count.
inline double aer(const std::vector<Index>& truth, const std::vector<Index>& detected,
                  Index n_devices) {
    const std::set<Index> t(truth.begin(), truth.end());
    const std::set<Index> d(detected.begin(), detected.end());
    Index miss = 0, fa = 0;
    for (Index n : t)
        if (!d.count(n)) ++miss;
    for (Index n : d)
        if (!t.count(n)) ++fa;
    return static_cast<double>(miss + fa) / static_cast<double>(n_devices);
}

inline double miss_rate(const std::vector<Index>& truth, const std::vector<Index>& detected,
                        Index n_devices) {
    const std::set<Index> d(detected.begin(), detected.end());
    Index miss = 0;
    for (Index n : truth)
        if (!d.count(n)) ++miss;
    return static_cast<double>(miss) / static_cast<double>(n_devices);
}

inline double false_alarm_rate(const std::vector<Index>& truth,
                               const std::vector<Index>& detected, Index n_devices) {
    const std::set<Index> t(truth.begin(), truth.end());
    Index fa = 0;
    for (Index n : detected)
        if (!t.count(n)) ++fa;
    return static_cast<double>(fa) / static_cast<double>(n_devices);
}

/// NMSE exactly as printed in the experiments section: the estimated channels
/// appear in the denominator. Returns +inf when the estimate is all zero.
inline double nmse_paper(const std::vector<CMat>& h_true, const std::vector<CMat>& h_est) {
    if (h_true.size() != h_est.size())
        throw std::invalid_argument("nmse: device count mismatch");
    double num = 0.0, den = 0.0;
    for (size_t n = 0; n < h_true.size(); ++n) {
        if (h_true[n].rows() != h_est[n].rows() || h_true[n].cols() != h_est[n].cols())
            throw std::invalid_argument("nmse: shape mismatch");
        num += (h_true[n] - h_est[n]).squaredNorm();
        den += h_est[n].squaredNorm();
    }
    if (den <= 0.0) return std::numeric_limits<double>::infinity();
    return std::sqrt(num) / std::sqrt(den);
}

/// Standard variant with the true channels in the denominator.
inline double nmse_standard(const std::vector<CMat>& h_true, const std::vector<CMat>& h_est) {
    double num = 0.0, den = 0.0;
    for (size_t n = 0; n < h_true.size(); ++n) {
        num += (h_true[n] - h_est[n]).squaredNorm();
        den += h_true[n].squaredNorm();
    }
    if (den <= 0.0) return std::numeric_limits<double>::infinity();
    return std::sqrt(num) / std::sqrt(den);
}

enum class SweepVar { PilotLength, Spread };

inline const char* to_string(SweepVar v) {
    return v == SweepVar::PilotLength ? "Bp" : "p";
}

struct ExperimentConfig {
    Index M = 32, B = 256, D = 32, N = 20, K = 6;
    int L_max = 2;
    int p = 2;
    Index M_p = 32;
    Index B_p = 32;
    double snr_db = 25.0;
    int trials = 50;
    std::uint64_t seed = 1;
    std::vector<std::string> solvers{"mras", "fista", "gomp"};
    SweepVar sweep_var = SweepVar::PilotLength;
    std::vector<Index> sweep_values{8, 16, 24, 32, 48, 64};
    std::string out_csv;
    bool timing = false;  // keep the CSV byte-reproducible unless explicitly on
    double amp_lo = 1.0, amp_hi = 1.0;
    bool tune_fista_lambda = true;
    SolverConfig solver;
    BaselineConfig baseline;

    // Per-trial seeds use a fixed odd stride so streams do not collide.
    std::uint64_t trial_seed(int trial) const {
        return seed + static_cast<std::uint64_t>(trial) * 0x9E3779B9ull;
    }
};

inline void validate(const ExperimentConfig& cfg) {
    if (cfg.K > cfg.N) throw std::invalid_argument("config: K <= N required");
    if (cfg.trials < 1) throw std::invalid_argument("config: trials >= 1 required");
    if (cfg.sweep_values.empty()) throw std::invalid_argument("config: empty sweep list");
    if (static_cast<Index>(cfg.p) * cfg.L_max > std::min(cfg.M, cfg.D))
        throw std::invalid_argument("config: p*L_max <= min(M, D) required");
}

/// One Monte-Carlo instance: ground truth, measurement ensemble, noisy data.
struct TrialInstance {
    DelayAngularState truth;
    std::vector<Index> active_set;
    SensingEnsemble ens;
    CMat Y;
    double sigma2 = 0.0;
};

inline TrialInstance make_trial(const ExperimentConfig& cfg, const Dictionaries& dicts,
                                Index b_p, int p, std::uint64_t seed) {
    Rng rng(seed);
    TrialInstance tr;
    tr.active_set = detail::sample_without_replacement(rng, cfg.N, cfg.K);
    tr.truth = DelayAngularState::zeros(cfg.N, cfg.M, dicts.D);
    for (Index n : tr.active_set) {
        auto dev = synthesize_device(rng, cfg.M, dicts.D, cfg.L_max, p, cfg.amp_lo, cfg.amp_hi);
        tr.truth.set_block(n, std::move(dev.delay_angular));
    }
    tr.ens = generate_ensemble(rng, dicts, cfg.N, cfg.M_p, b_p);
    const CMat y0 = forward(tr.ens, tr.truth);
    auto noisy = add_noise(rng, y0, cfg.snr_db);
    tr.Y = std::move(noisy.first);
    tr.sigma2 = noisy.second;
    return tr;
}

struct TrialResult {
    double aer = 0.0, miss = 0.0, fa = 0.0;
    double nmse_paper = 0.0, nmse_std = 0.0;
    double seconds = 0.0;
    int iterations = 0;
    bool failed = false;
    bool nmse_defined = true;
};

namespace detail {

inline TrialResult score_estimate(const TrialInstance& tr, const DelayAngularState& est,
                                  double v1, Index n_devices) {
    TrialResult r;
    const auto detected = detect_activity(est, v1);
    r.aer = aer(tr.active_set, detected, n_devices);
    r.miss = miss_rate(tr.active_set, detected, n_devices);
    r.fa = false_alarm_rate(tr.active_set, detected, n_devices);
    // The dictionaries are scaled-unitary, so the channel-domain NMSE equals
    // the delay-angular NMSE exactly; computed here in the compact domain.
    r.nmse_paper = nmse_paper(tr.truth.blocks, est.blocks);
    r.nmse_std = nmse_standard(tr.truth.blocks, est.blocks);
    r.nmse_defined = std::isfinite(r.nmse_paper);
    return r;
}

}  // namespace detail

/// Runs one solver on one instance and scores it. Aborts inside a solver are
/// reported via the failed flag rather than propagated.
inline TrialResult eval_solver(const std::string& name, const TrialInstance& tr,
                               const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    TrialResult r;
    try {
        if (name == "mras") {
            SolverConfig scfg = cfg.solver;
            scfg.L_max = cfg.L_max;
            Rng rng(0xacce55u);
            auto res = solve(tr.ens, tr.Y, scfg, rng);
            r = detail::score_estimate(tr, res.blocks, scfg.v1, cfg.N);
            r.iterations = res.iterations;
        } else if (name == "fista") {
            BaselineConfig bcfg = cfg.baseline;
            DelayAngularState best;
            double best_nmse = std::numeric_limits<double>::infinity();
            if (cfg.tune_fista_lambda) {
                const auto back = adjoint(tr.ens, tr.Y);
                double linf = 0.0;
                for (const auto& b : back.blocks)
                    linf = std::max(linf, b.cwiseAbs().maxCoeff());
                for (double rel : {1e-3, 1e-2, 1e-1, 1.0}) {
                    bcfg.lambda = rel * linf;
                    auto est = fista_solve(tr.ens, tr.Y, bcfg);
                    const double score = nmse_paper(tr.truth.blocks, est.blocks);
                    if (score < best_nmse || !std::isfinite(best_nmse)) {
                        best_nmse = score;
                        best = std::move(est);
                    }
                }
            } else {
                best = fista_solve(tr.ens, tr.Y, bcfg);
            }
            r = detail::score_estimate(tr, best, cfg.solver.v1, cfg.N);
        } else if (name == "gomp") {
            BaselineConfig bcfg = cfg.baseline;
            bcfg.omp_max_groups = static_cast<int>(cfg.K);
            auto est = gomp_solve(tr.ens, tr.Y, bcfg);
            r = detail::score_estimate(tr, est, cfg.solver.v1, cfg.N);
        } else {
            throw std::invalid_argument("unknown solver: " + name);
        }
    } catch (const std::runtime_error&) {
        r.failed = true;  // solver abort; recorded, excluded from means
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

struct SweepRow {
    std::string solver;
    std::string sweep_var;
    Index sweep_val = 0;
    int trials = 0;
    double aer_mean = 0.0, miss_rate = 0.0, fa_rate = 0.0;
    double nmse_paper = 0.0, nmse_std = 0.0;
    double time_mean_s = 0.0;
    int failures = 0;
};

inline std::string format_csv_value(double v) {
    char buf[64];
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::string sweep_csv_header() {
    return "solver,sweep_var,sweep_val,trials,aer_mean,miss_rate,fa_rate,nmse_paper,nmse_std,"
           "time_mean_s,failures";
}

inline std::string to_csv(const std::vector<SweepRow>& rows) {
    std::string out = sweep_csv_header() + "\n";
    for (const auto& r : rows) {
        out += r.solver + ',' + r.sweep_var + ',' + std::to_string(r.sweep_val) + ',' +
               std::to_string(r.trials) + ',' + format_csv_value(r.aer_mean) + ',' +
               format_csv_value(r.miss_rate) + ',' + format_csv_value(r.fa_rate) + ',' +
               format_csv_value(r.nmse_paper) + ',' + format_csv_value(r.nmse_std) + ',' +
               format_csv_value(r.time_mean_s) + ',' + std::to_string(r.failures) + '\n';
    }
    return out;
}

/// Monte-Carlo sweep over pilot length or spread. Trials run in parallel and
/// are reduced in trial-index order, so the output is deterministic for a
/// given config. Writes the CSV to cfg.out_csv when set.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg) {
    validate(cfg);
    const Dictionaries dicts = build_dictionaries(
        cfg.M, cfg.B, static_cast<double>(cfg.D) / static_cast<double>(cfg.B), 1.0);

    std::vector<SweepRow> rows;
    for (const Index sweep_val : cfg.sweep_values) {
        const Index b_p = cfg.sweep_var == SweepVar::PilotLength ? sweep_val : cfg.B_p;
        const int p = cfg.sweep_var == SweepVar::Spread ? static_cast<int>(sweep_val) : cfg.p;

        std::vector<std::vector<TrialResult>> results(
            static_cast<size_t>(cfg.trials),
            std::vector<TrialResult>(cfg.solvers.size()));

#pragma omp parallel for schedule(dynamic)
        for (int trial = 0; trial < cfg.trials; ++trial) {
            const auto tr = make_trial(cfg, dicts, b_p, p, cfg.trial_seed(trial));
            for (size_t s = 0; s < cfg.solvers.size(); ++s)
                results[static_cast<size_t>(trial)][s] = eval_solver(cfg.solvers[s], tr, cfg);
        }

        for (size_t s = 0; s < cfg.solvers.size(); ++s) {
            SweepRow row;
            row.solver = cfg.solvers[s];
            row.sweep_var = to_string(cfg.sweep_var);
            row.sweep_val = sweep_val;
            row.trials = cfg.trials;
            int ok = 0, nmse_ok = 0;
            double time_sum = 0.0;
            for (int trial = 0; trial < cfg.trials; ++trial) {
                const auto& r = results[static_cast<size_t>(trial)][s];
                if (r.failed) {
                    ++row.failures;
                    continue;
                }
                ++ok;
                row.aer_mean += r.aer;
                row.miss_rate += r.miss;
                row.fa_rate += r.fa;
                time_sum += r.seconds;
                if (r.nmse_defined) {
                    ++nmse_ok;
                    row.nmse_paper += r.nmse_paper;
                    row.nmse_std += r.nmse_std;
                }
            }
            if (ok > 0) {
                row.aer_mean /= ok;
                row.miss_rate /= ok;
                row.fa_rate /= ok;
                row.time_mean_s = cfg.timing ? time_sum / ok : 0.0;
            }
            if (nmse_ok > 0) {
                row.nmse_paper /= nmse_ok;
                row.nmse_std /= nmse_ok;
            }
            rows.push_back(std::move(row));
        }
    }

    if (!cfg.out_csv.empty()) {
        std::ofstream f(cfg.out_csv, std::ios::binary);
        if (!f) throw std::runtime_error("run_sweep: cannot open " + cfg.out_csv);
        f << to_csv(rows);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Per-iteration scaling benchmark
// ---------------------------------------------------------------------------

struct BenchConfig {
    Index M = 16, B = 1024, D = 16, M_p = 16, N = 16, B_p = 128;
    std::vector<Index> N_values{8, 16, 32, 64};
    std::vector<Index> Bp_values{64, 128, 256, 512};
    int L_max = 2;
    int repeats = 5;
    std::uint64_t seed = 7;
};

struct BenchPoint {
    std::string dim;
    Index value = 0;
    double seconds = 0.0;
};

struct BenchResult {
    std::vector<BenchPoint> points;
    std::map<std::string, double> slopes;  // log-log fit per swept dimension
};

/// Median-free timing of one solver iteration core (gradient + update) at the
/// given dimensions; minimum over repeats.
inline double time_one_iteration(Index m, Index b, Index d, Index m_p, Index b_p, Index n,
                                 int l_max, std::uint64_t seed, int repeats) {
    Rng rng(seed);
    const auto dicts =
        build_dictionaries(m, b, static_cast<double>(d) / static_cast<double>(b), 1.0);
    auto truth = DelayAngularState::zeros(n, m, dicts.D);
    const Index k = std::max<Index>(1, n / 4);
    for (Index i = 0; i < k; ++i) {
        auto dev = synthesize_device(rng, m, dicts.D, l_max, 2);
        truth.set_block(i, std::move(dev.delay_angular));
    }
    const auto ens = generate_ensemble(rng, dicts, n, m_p, b_p);
    const CMat y = forward(ens, truth);

    SolverConfig cfg;
    cfg.L_max = l_max;
    const auto s0 = truncated_init(ens, y, cfg);

    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        auto g = riemannian_gradient(s0, ens, y, cfg);
        auto s1 = retract(s0, g, -1e-6);
        auto gt = transport(s0, s1, g);
        const double dt =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        best = std::min(best, dt);
        (void)gt;
    }
    return best;
}

inline double fit_loglog_slope(const std::vector<std::pair<Index, double>>& pts) {
    const double n = static_cast<double>(pts.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [v, t] : pts) {
        const double x = std::log(static_cast<double>(v));
        const double y = std::log(t);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline BenchResult bench_scaling(const BenchConfig& cfg) {
    BenchResult res;
    auto run_dim = [&](const std::string& dim, const std::vector<Index>& values) {
        if (values.empty()) return;
        std::vector<std::pair<Index, double>> pts;
        for (Index v : values) {
            const Index n = dim == "N" ? v : cfg.N;
            const Index b_p = dim == "Bp" ? v : cfg.B_p;
            const Index d = dim == "D" ? v : cfg.D;
            const Index m_p = dim == "Mp" ? v : cfg.M_p;
            const double t = time_one_iteration(cfg.M, cfg.B, d, m_p, b_p, n, cfg.L_max,
                                                cfg.seed, cfg.repeats);
            res.points.push_back({dim, v, t});
            pts.emplace_back(v, t);
        }
        if (pts.size() >= 2) res.slopes[dim] = fit_loglog_slope(pts);
    };
    run_dim("N", cfg.N_values);
    run_dim("Bp", cfg.Bp_values);
    return res;
}

}  // namespace mras
