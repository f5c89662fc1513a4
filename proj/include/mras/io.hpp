#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mras/channel.hpp"
#include "mras/sensing.hpp"

namespace mras {

/// Writes a state realization as CSV-of-complex: header `M,D,N,L_max`, then the
/// stacked M x (D*N) matrix row-major as re,im pairs (one matrix row per line).
inline void save_state(const std::string& path, const DelayAngularState& x, int l_max) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_state: cannot open " + path);
    f << x.M() << ',' << x.D() << ',' << x.n_devices() << ',' << l_max << '\n';
    char buf[64];
    for (Index i = 0; i < x.M(); ++i) {
        bool first = true;
        for (Index n = 0; n < x.n_devices(); ++n) {
            const auto& b = x.blocks[static_cast<size_t>(n)];
            for (Index j = 0; j < x.D(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g,%.17g", b(i, j).real(), b(i, j).imag());
                if (!first) f << ',';
                f << buf;
                first = false;
            }
        }
        f << '\n';
    }
}

inline std::pair<DelayAngularState, int> load_state(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_state: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("load_state: empty file");
    Index m = 0, d = 0, n = 0;
    int l_max = 0;
    {
        std::istringstream hs(line);
        char c;
        if (!(hs >> m >> c >> d >> c >> n >> c >> l_max))
            throw std::runtime_error("load_state: malformed header");
    }
    auto x = DelayAngularState::zeros(n, m, d);
    for (Index i = 0; i < m; ++i) {
        if (!std::getline(f, line)) throw std::runtime_error("load_state: truncated file");
        std::istringstream ls(line);
        std::string tok;
        for (Index dev = 0; dev < n; ++dev)
            for (Index j = 0; j < d; ++j) {
                double re = 0.0, im = 0.0;
                if (!std::getline(ls, tok, ',')) throw std::runtime_error("load_state: short row");
                re = std::stod(tok);
                if (!std::getline(ls, tok, ',')) throw std::runtime_error("load_state: short row");
                im = std::stod(tok);
                x.blocks[static_cast<size_t>(dev)](i, j) = Complex(re, im);
            }
    }
    for (Index dev = 0; dev < n; ++dev)
        x.active[static_cast<size_t>(dev)] =
            x.blocks[static_cast<size_t>(dev)].isZero(0.0) ? 0 : 1;
    return {std::move(x), l_max};
}

/// Ensembles are serialized by seed plus dimensions; the matrices are
/// regenerated on load.
struct EnsembleSpec {
    std::uint64_t seed = 0;
    Index M = 0, B = 0, D = 0, N = 0, M_p = 0, B_p = 0;
    double T_s = 1.0;
};

inline SensingEnsemble make_ensemble(const EnsembleSpec& spec) {
    const auto dicts = build_dictionaries(
        spec.M, spec.B, static_cast<double>(spec.D) / static_cast<double>(spec.B), spec.T_s);
    Rng rng(spec.seed);
    return generate_ensemble(rng, dicts, spec.N, spec.M_p, spec.B_p);
}

inline void save_ensemble_spec(const std::string& path, const EnsembleSpec& s) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_ensemble_spec: cannot open " + path);
    f << "seed=" << s.seed << "\nM=" << s.M << "\nB=" << s.B << "\nD=" << s.D << "\nN=" << s.N
      << "\nMp=" << s.M_p << "\nBp=" << s.B_p << "\nTs=" << s.T_s << '\n';
}

inline EnsembleSpec load_ensemble_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_ensemble_spec: cannot open " + path);
    EnsembleSpec s;
    std::string line;
    while (std::getline(f, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos || line.empty() || line[0] == '#') continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "seed") s.seed = std::stoull(val);
        else if (key == "M") s.M = std::stoll(val);
        else if (key == "B") s.B = std::stoll(val);
        else if (key == "D") s.D = std::stoll(val);
        else if (key == "N") s.N = std::stoll(val);
        else if (key == "Mp") s.M_p = std::stoll(val);
        else if (key == "Bp") s.B_p = std::stoll(val);
        else if (key == "Ts") s.T_s = std::stod(val);
        else throw std::runtime_error("load_ensemble_spec: unknown key " + key);
    }
    if (s.M < 1 || s.B < 1 || s.N < 1) throw std::runtime_error("load_ensemble_spec: bad spec");
    return s;
}

/// CSV of concentration-probe summaries, one row per probe.
inline void save_rip_csv(const std::string& path, const std::vector<RipSummary>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_rip_csv: cannot open " + path);
    f << "trials,u,r,Bp,Mp,mean_rho,max_dev,tail_frac\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%d,%lld,%lld,%.9g,%.9g,%.9g\n", r.trials, r.u,
                      r.r, static_cast<long long>(r.B_p), static_cast<long long>(r.M_p),
                      r.mean_rho, r.max_dev, r.tail_frac);
        f << buf;
    }
}

}  // namespace mras
