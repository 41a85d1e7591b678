// Precision-aware scaling law
//
//   L(N, D, P) = A / (N * eff(P))^alpha + B / D^beta + E
//
// fitted in log space (a = log A, b = log B, e = log E, log eff(P)) by
// minimizing the mean Huber loss of log-loss residuals from a grid of
// Nelder-Mead starts. eff(16) is pinned to 1.
#pragma once

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace quest {

struct RunRecord {
    double n = 0.0;  // non-embedding parameters
    double d = 0.0;  // training tokens
    int p = 16;      // precision tag (bits)
    double loss = 0.0;
};

struct ScalingLawParams {
    double a = 0.0, b = 0.0, e = 0.0;
    double alpha = 0.0, beta = 0.0;
    std::map<int, double> eff = {{16, 1.0}};

    double eff_at(int p) const {
        auto it = eff.find(p);
        if (it == eff.end()) throw std::out_of_range("scaling law: no eff for precision " + std::to_string(p));
        return it->second;
    }
};

inline double predict_loss(const ScalingLawParams& s, double n, double d, int p) {
    return std::exp(s.a) / std::pow(n * s.eff_at(p), s.alpha) + std::exp(s.b) / std::pow(d, s.beta) + std::exp(s.e);
}

/// Overtraining limit D -> infinity.
inline double predict_loss_ot(const ScalingLawParams& s, double n, int p) {
    return std::exp(s.a) / std::pow(n * s.eff_at(p), s.alpha) + std::exp(s.e);
}

inline double huber(double r, double delta = 1e-3) {
    const double ar = std::abs(r);
    return ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta);
}

inline double efficiency(const ScalingLawParams& s, int p) { return s.eff_at(p) / static_cast<double>(p); }

// ---------------------------------------------------------------------------

struct NelderMeadResult {
    std::vector<double> x;
    double f = 0.0;
    std::size_t iterations = 0;
};

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
/// Stops when the simplex diameter drops below `tol` or after `max_iter` iterations.
template <class F>
NelderMeadResult nelder_mead(F&& f, std::vector<double> x0, double step, double tol = 1e-8, std::size_t max_iter = 5000) {
    const std::size_t n = x0.size();
    std::vector<std::vector<double>> pts(n + 1, x0);
    for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += step;
    std::vector<double> fv(n + 1);
    for (std::size_t i = 0; i <= n; ++i) fv[i] = f(pts[i]);
    std::vector<std::size_t> order(n + 1);
    std::vector<double> centroid(n), xr(n), xe(n), xc(n);

    auto diameter = [&] {
        double d = 0.0;
        for (std::size_t i = 1; i <= n; ++i)
            for (std::size_t j = 0; j < n; ++j) d = std::max(d, std::abs(pts[i][j] - pts[0][j]));
        return d;
    };

    std::size_t it = 0;
    for (; it < max_iter; ++it) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        {
            auto p2 = pts;
            auto f2 = fv;
            for (std::size_t i = 0; i <= n; ++i) {
                pts[i] = std::move(p2[order[i]]);
                fv[i] = f2[order[i]];
            }
        }
        if (diameter() < tol) break;

        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) centroid[j] += pts[i][j] / static_cast<double>(n);
        const auto& worst = pts[n];
        for (std::size_t j = 0; j < n; ++j) xr[j] = centroid[j] + (centroid[j] - worst[j]);
        const double fr = f(xr);
        if (fr < fv[0]) {
            for (std::size_t j = 0; j < n; ++j) xe[j] = centroid[j] + 2.0 * (centroid[j] - worst[j]);
            const double fe = f(xe);
            if (fe < fr) {
                pts[n] = xe;
                fv[n] = fe;
            } else {
                pts[n] = xr;
                fv[n] = fr;
            }
            continue;
        }
        if (fr < fv[n - 1]) {
            pts[n] = xr;
            fv[n] = fr;
            continue;
        }
        const bool outside = fr < fv[n];
        for (std::size_t j = 0; j < n; ++j)
            xc[j] = outside ? centroid[j] + 0.5 * (xr[j] - centroid[j]) : centroid[j] + 0.5 * (worst[j] - centroid[j]);
        const double fc = f(xc);
        if (fc < (outside ? fr : fv[n])) {
            pts[n] = xc;
            fv[n] = fc;
            continue;
        }
        for (std::size_t i = 1; i <= n; ++i) {
            for (std::size_t j = 0; j < n; ++j) pts[i][j] = pts[0][j] + 0.5 * (pts[i][j] - pts[0][j]);
            fv[i] = f(pts[i]);
        }
    }
    const auto best = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
    return {pts[best], fv[best], it};
}

// ---------------------------------------------------------------------------

struct FitOptions {
    double huber_delta = 1e-3;
    double tol = 1e-8;
    std::size_t max_iter = 5000;
    double simplex_step = 0.25;
    std::vector<double> alpha_grid = {0.0, 0.5, 1.0, 1.5, 2.0};
    std::vector<double> beta_grid = {0.0, 0.5, 1.0, 1.5, 2.0};
    std::vector<double> e_grid = {-1.0, -0.5, 0.0, 0.5, 1.0};
    std::vector<double> a_grid = {0.0, 5.0, 10.0, 15.0, 20.0, 25.0};
    std::vector<double> b_grid = {0.0, 5.0, 10.0, 15.0, 20.0, 25.0};
    std::size_t max_restarts = 100;  // fresh simplices around the winner until it stops improving
};

struct FitResult {
    ScalingLawParams params;
    double objective = 0.0;
    std::size_t starts = 0;
    std::size_t restarts = 0;
};

/// Compiled objective over a fixed record set; the parameter vector is
/// (a, b, e, alpha, beta, log eff(P) for every P != 16 in ascending order).
class ScalingObjective {
public:
    ScalingObjective(const std::vector<RunRecord>& records, double delta) : delta_(delta) {
        for (const auto& r : records) {
            if (!(r.n > 0 && r.d > 0 && r.loss > 0)) throw std::invalid_argument("fit: records need N, D, loss > 0");
            if (r.p != 16) free_.insert(r.p);
        }
        std::map<int, std::size_t> slot;
        std::size_t k = 0;
        for (int p : free_) slot[p] = k++;
        for (const auto& r : records)
            rows_.push_back({std::log(r.n), std::log(r.d), std::log(r.loss), r.p == 16 ? -1 : static_cast<int>(slot[r.p])});
        // Sum order is the sorted record order so the objective does not depend on input order.
        std::sort(rows_.begin(), rows_.end(), [](const Row& x, const Row& y) {
            return std::tie(x.log_n, x.log_d, x.slot, x.log_l) < std::tie(y.log_n, y.log_d, y.slot, y.log_l);
        });
    }

    std::size_t dims() const { return 5 + free_.size(); }
    const std::set<int>& free_precisions() const { return free_; }

    double operator()(const std::vector<double>& th) const {
        const double a = th[0], b = th[1], e = th[2], al = th[3], be = th[4];
        if (al < 0.0 || be < 0.0) return std::numeric_limits<double>::infinity();
        double total = 0.0;
        for (const auto& r : rows_) {
            const double le = r.slot < 0 ? 0.0 : th[5 + static_cast<std::size_t>(r.slot)];
            const double t1 = a - al * (r.log_n + le);
            const double t2 = b - be * r.log_d;
            const double m = std::max({t1, t2, e});
            const double pred = m + std::log(std::exp(t1 - m) + std::exp(t2 - m) + std::exp(e - m));
            total += huber(r.log_l - pred, delta_);
        }
        return total / static_cast<double>(rows_.size());
    }

    ScalingLawParams unpack(const std::vector<double>& th) const {
        ScalingLawParams s;
        s.a = th[0];
        s.b = th[1];
        s.e = th[2];
        s.alpha = th[3];
        s.beta = th[4];
        std::size_t k = 5;
        for (int p : free_) s.eff[p] = std::exp(th[k++]);
        s.eff[16] = 1.0;
        return s;
    }

    std::vector<double> pack(const ScalingLawParams& s) const {
        std::vector<double> th = {s.a, s.b, s.e, s.alpha, s.beta};
        for (int p : free_) th.push_back(std::log(s.eff_at(p)));
        return th;
    }

private:
    struct Row {
        double log_n, log_d, log_l;
        int slot;
    };
    double delta_;
    std::set<int> free_;
    std::vector<Row> rows_;
};

inline void validate_records(const std::vector<RunRecord>& records) {
    if (records.empty()) throw std::invalid_argument("fit: no records");
    std::map<int, std::pair<std::set<double>, std::set<double>>> by_p;
    bool has16 = false;
    for (const auto& r : records) {
        by_p[r.p].first.insert(r.n);
        by_p[r.p].second.insert(r.d);
        has16 = has16 || r.p == 16;
    }
    if (!has16) throw std::invalid_argument("fit: 16-bit records are required to anchor eff(16) = 1");
    for (const auto& [p, sets] : by_p) {
        if (sets.first.size() < 2)
            throw std::invalid_argument("fit: precision " + std::to_string(p) + " needs at least 2 distinct N (degenerate data)");
        if (sets.second.size() < 2)
            throw std::invalid_argument("fit: precision " + std::to_string(p) + " needs at least 2 distinct D (degenerate data)");
    }
}

inline double fit_objective(const std::vector<RunRecord>& records, const ScalingLawParams& s, double delta = 1e-3) {
    ScalingObjective obj(records, delta);
    return obj(obj.pack(s));
}

/// Runs Nelder-Mead from every point of the initialization grid and keeps the
/// lowest objective (first in grid order on ties), then restarts from the winner.
inline FitResult fit(const std::vector<RunRecord>& records, const FitOptions& opt = {}) {
    validate_records(records);
    ScalingObjective obj(records, opt.huber_delta);
    FitResult best;
    best.objective = std::numeric_limits<double>::infinity();
    std::vector<double> best_x;
    for (double al : opt.alpha_grid)
        for (double be : opt.beta_grid)
            for (double e : opt.e_grid)
                for (double a : opt.a_grid)
                    for (double b : opt.b_grid) {
                        std::vector<double> x0 = {a, b, e, al, be};
                        x0.resize(obj.dims(), 0.0);
                        auto r = nelder_mead(obj, x0, opt.simplex_step, opt.tol, opt.max_iter);
                        ++best.starts;
                        if (r.f < best.objective) {
                            best.objective = r.f;
                            best_x = r.x;
                        }
                    }
    // A collapsed simplex can stall short of the minimum in 9+ dimensions.
    for (std::size_t k = 0; k < opt.max_restarts; ++k) {
        auto r = nelder_mead(obj, best_x, opt.simplex_step, opt.tol, opt.max_iter);
        const bool better = r.f < best.objective;
        if (better) {
            best_x = r.x;
            ++best.restarts;
        }
        if (!(r.f < best.objective - 1e-15 * std::max(1.0, best.objective))) {
            best.objective = std::min(best.objective, r.f);
            break;
        }
        best.objective = r.f;
    }
    best.params = obj.unpack(best_x);
    return best;
}

// ---------------------------------------------------------------------------
// Iso-memory comparison against 16-bit.

struct Threshold {
    std::optional<double> ratio;  // compute-matched (D/N) * 16^2 / P^2
    std::string note;
};

/// Smallest compute-matched ratio r at which precision P beats 16-bit at the
/// same memory (N_P = 8 * bytes / P) and same N*D. Scans r log-uniformly over
/// [r_min, r_max] and bisects the first crossing to 1e-3 relative.
inline Threshold isomem_threshold(const ScalingLawParams& s, double model_bytes, int p, double r_min = 1.0,
                                  double r_max = 1e5) {
    s.eff_at(p);
    s.eff_at(16);
    const double n_p = 8.0 * model_bytes / p;
    const double n_16 = 8.0 * model_bytes / 16.0;
    auto gap = [&](double r) {
        const double lp = predict_loss(s, n_p, r * n_p * p * p / 256.0, p);
        const double l16 = predict_loss(s, n_16, r * n_16, 16);
        return lp - l16;
    };
    if (gap(r_min) < 0.0) return {r_min, "crossing at scan minimum"};
    constexpr int kScan = 400;
    double prev = r_min;
    for (int i = 1; i <= kScan; ++i) {
        const double r = r_min * std::pow(r_max / r_min, static_cast<double>(i) / kScan);
        if (gap(r) < 0.0) {
            double lo = prev, hi = r;
            while ((hi - lo) / hi > 1e-3) {
                const double mid = std::sqrt(lo * hi);
                (gap(mid) < 0.0 ? hi : lo) = mid;
            }
            return {hi, "crossing"};
        }
        prev = r;
    }
    std::ostringstream os;
    os << "no threshold <= " << r_max;
    return {std::nullopt, os.str()};
}

// ---------------------------------------------------------------------------
// Files.

inline std::vector<RunRecord> read_records_csv(std::istream& is) {
    std::vector<RunRecord> out;
    std::string line;
    bool header = true;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            header = false;
            if (line.find_first_of("0123456789") != 0) continue;  // skip a textual header row
        }
        std::istringstream ls(line);
        RunRecord r;
        char c1, c2, c3;
        if (!(ls >> r.n >> c1 >> r.d >> c2 >> r.p >> c3 >> r.loss) || c1 != ',' || c2 != ',' || c3 != ',')
            throw std::invalid_argument("records CSV: cannot parse line '" + line + "'");
        out.push_back(r);
    }
    return out;
}

inline nlohmann::json to_json_params(const ScalingLawParams& s) {
    nlohmann::json eff = nlohmann::json::object();
    for (auto [p, v] : s.eff) eff[std::to_string(p)] = v;
    return {{"a", s.a}, {"b", s.b}, {"e", s.e}, {"A", std::exp(s.a)}, {"B", std::exp(s.b)}, {"E", std::exp(s.e)},
            {"alpha", s.alpha}, {"beta", s.beta}, {"eff", eff}};
}

inline void write_efficiency_csv(std::ostream& os, const ScalingLawParams& s) {
    os << "P,eff,eff_over_P\n";
    for (auto [p, v] : s.eff) os << p << ',' << v << ',' << v / p << '\n';
}

struct PlannedRun {
    double n = 0.0;
    int p = 16;
    double tokens_per_param = 0.0;
    double d = 0.0;
};

/// The N x P x (D/N) run matrix.
inline std::vector<PlannedRun> plan_runs(const std::vector<double>& ns, const std::vector<int>& ps,
                                         const std::vector<double>& ratios) {
    std::vector<PlannedRun> out;
    for (double n : ns)
        for (int p : ps)
            for (double r : ratios) out.push_back({n, p, r, n * r});
    return out;
}

inline void write_plan_csv(std::ostream& os, const std::vector<PlannedRun>& runs) {
    os << "N,P,tokens_per_param,D\n";
    os.precision(12);
    for (const auto& r : runs) os << r.n << ',' << r.p << ',' << r.tokens_per_param << ',' << r.d << '\n';
}

}  // namespace quest
