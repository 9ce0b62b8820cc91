#include "trajlab/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace trajlab {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

// ----------------------------- metrics -----------------------------

RunMetric metric_from_name(const std::string& name) {
    if (name == "train_loss") return RunMetric::TrainLoss;
    if (name == "val_loss") return RunMetric::ValLoss;
    if (name == "gns_tr_noise") return RunMetric::GnsTrNoise;
    if (name == "gns_gnorm2") return RunMetric::GnsGnorm2;
    if (name == "gns_b_precond") return RunMetric::GnsBPrecond;
    if (name == "param_norm") return RunMetric::ParamNorm;
    if (name == "scaled_noise") return RunMetric::ScaledNoise;
    if (name == "scaled_gnorm2") return RunMetric::ScaledGnorm2;
    throw InputError("unknown metric \"" + name + "\"");
}

const char* metric_name(RunMetric m) {
    switch (m) {
        case RunMetric::TrainLoss: return "train_loss";
        case RunMetric::ValLoss: return "val_loss";
        case RunMetric::GnsTrNoise: return "gns_tr_noise";
        case RunMetric::GnsGnorm2: return "gns_gnorm2";
        case RunMetric::GnsBPrecond: return "gns_b_precond";
        case RunMetric::ParamNorm: return "param_norm";
        case RunMetric::ScaledNoise: return "scaled_noise";
        case RunMetric::ScaledGnorm2: return "scaled_gnorm2";
    }
    return "?";
}

namespace {

std::optional<double> metric_value(const MetricPoint& p, RunMetric m) {
    switch (m) {
        case RunMetric::TrainLoss: return p.train_loss;
        case RunMetric::ValLoss: return p.val_loss;
        case RunMetric::GnsTrNoise: return p.gns_tr_noise;
        case RunMetric::GnsGnorm2: return p.gns_gnorm2;
        case RunMetric::GnsBPrecond:
            return p.gns_valid ? p.gns_b_precond : std::nullopt;
        case RunMetric::ParamNorm: return p.param_norm;
        case RunMetric::ScaledNoise:
            if (p.gns_tr_noise && p.batch_size > 0)
                return (p.lr / static_cast<double>(p.batch_size)) * *p.gns_tr_noise;
            return std::nullopt;
        case RunMetric::ScaledGnorm2:
            if (p.gns_gnorm2) return p.lr * *p.gns_gnorm2;
            return std::nullopt;
    }
    return std::nullopt;
}

// (tokens, value) series of one metric over a run's logged points.
void extract_series(const RunRecord& rec, RunMetric m, std::vector<double>& xs,
                    std::vector<double>& ys) {
    xs.clear();
    ys.clear();
    for (const auto& p : rec.points) {
        auto v = metric_value(p, m);
        if (!v) continue;
        xs.push_back(static_cast<double>(p.tokens));
        ys.push_back(*v);
    }
}

// Linear interpolation at x over an ascending series; nullopt outside.
std::optional<double> interp(const std::vector<double>& xs, const std::vector<double>& ys,
                             double x) {
    if (xs.empty() || x < xs.front() || x > xs.back()) return std::nullopt;
    auto it = std::lower_bound(xs.begin(), xs.end(), x);
    const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
    if (hi == 0 || xs[hi] == x) return ys[std::min(hi, ys.size() - 1)];
    const std::size_t lo = hi - 1;
    const double w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    return ys[lo] + w * (ys[hi] - ys[lo]);
}

} // namespace

// ----------------------------- align_and_smooth -----------------------------

std::vector<Curve> align_and_smooth(const std::vector<RunRecord>& records, RunMetric metric,
                                    const GridSpec& grid, double ema_halflife_tokens,
                                    std::vector<std::string>* warnings) {
    if (grid.points < 2) throw InputError("align_and_smooth: grid needs at least two points");
    if (!(grid.end_tokens > grid.start_tokens))
        throw InputError("align_and_smooth: empty token range");

    auto grid_tokens = std::make_shared<std::vector<double>>();
    grid_tokens->reserve(grid.points);
    for (std::size_t i = 0; i < grid.points; ++i)
        grid_tokens->push_back(grid.start_tokens +
                               (grid.end_tokens - grid.start_tokens) *
                                   static_cast<double>(i) /
                                   static_cast<double>(grid.points - 1));
    std::shared_ptr<const std::vector<double>> shared = grid_tokens;

    std::vector<Curve> out;
    std::vector<double> xs, ys;
    for (const auto& rec : records) {
        extract_series(rec, metric, xs, ys);
        Curve c;
        c.grid = shared;
        c.values.assign(grid.points, 0.0);
        c.mask.assign(grid.points, false);
        c.meta.eta = rec.config.optim.peak_lr;
        c.meta.lambda = rec.config.optim.weight_decay;
        c.meta.gamma = c.meta.eta * c.meta.lambda;
        c.meta.batch = static_cast<double>(batch_size_at(rec.config.bs, 0));
        c.meta.metric = metric_name(metric);
        c.meta.config_hash = rec.hash;

        bool missed = false;
        for (std::size_t i = 0; i < grid.points; ++i) {
            auto v = interp(xs, ys, (*shared)[i]);
            if (v) {
                c.values[i] = *v;
                c.mask[i] = true;
            } else {
                missed = true;
            }
        }
        if (missed && warnings)
            warnings->push_back("run " + rec.hash + " does not cover the full grid for " +
                                metric_name(metric) + "; uncovered points masked");

        if (ema_halflife_tokens > 0.0) {
            double acc = 0.0, wsum = 0.0, prev_token = 0.0;
            bool started = false;
            for (std::size_t i = 0; i < grid.points; ++i) {
                if (!c.mask[i]) continue;
                const double token = (*shared)[i];
                const double decay =
                    started ? std::exp2(-(token - prev_token) / ema_halflife_tokens) : 0.0;
                acc = decay * acc + (1.0 - decay) * c.values[i];
                wsum = decay * wsum + (1.0 - decay);
                c.values[i] = acc / wsum;
                prev_token = token;
                started = true;
            }
        }
        out.push_back(std::move(c));
    }
    return out;
}

// ----------------------------- rel_distance -----------------------------

double rel_distance(const Curve& a, const Curve& b) {
    const bool same_grid = a.grid == b.grid || (a.grid && b.grid && *a.grid == *b.grid);
    if (!same_grid) throw ContractError("rel_distance: curves live on different grids");
    if (a.meta.metric != b.meta.metric)
        throw ContractError("rel_distance: curves carry different metrics");

    double diff2 = 0.0, na2 = 0.0, nb2 = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        if (!a.mask[i] || !b.mask[i]) continue;
        const double va = a.values[i], vb = b.values[i];
        diff2 += (va - vb) * (va - vb);
        na2 += va * va;
        nb2 += vb * vb;
        ++used;
    }
    if (used == 0)
        throw InsufficientDataError("rel_distance: no overlapping unmasked points");
    const double denom2 = 0.5 * (na2 + nb2);
    if (denom2 == 0.0)
        throw NumericError("rel_distance: undefined for two identically zero curves");
    return std::sqrt(diff2) / std::sqrt(denom2);
}

// ----------------------------- matrices -----------------------------

DistanceMatrix pairwise_matrix(const std::vector<Curve>& curves, double threshold) {
    if (curves.size() < 2)
        throw InsufficientDataError("pairwise_matrix: need at least two curves");
    const std::size_t n = curves.size();
    DistanceMatrix m;
    m.threshold = threshold;
    m.values = Matrix(n, n);
    m.below_threshold.assign(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "eta=%g lambda=%g", curves[i].meta.eta,
                      curves[i].meta.lambda);
        m.labels.push_back(buf);
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = rel_distance(curves[i], curves[j]);
            m.values.at(i, j) = d;
            m.values.at(j, i) = d;
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            m.below_threshold[i][j] = m.values.at(i, j) < threshold;
    return m;
}

const char* group_key_name(GroupKey k) { return k == GroupKey::Elr ? "elr" : "lr"; }

CurveGroups group_curves(const std::vector<Curve>& curves, GroupKey key) {
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const double v = key == GroupKey::Elr ? curves[i].meta.gamma : curves[i].meta.eta;
        if (!(v > 0.0)) throw InputError("group_curves: curves must carry positive keys");
        keyed.emplace_back(v, i);
    }
    std::sort(keyed.begin(), keyed.end());
    CurveGroups groups;
    for (const auto& [v, idx] : keyed) {
        // Cluster keys that agree to within a relative 1e-9.
        if (groups.key_values.empty() || v > groups.key_values.back() * (1.0 + 1e-9)) {
            groups.key_values.push_back(v);
            groups.members.emplace_back();
        }
        groups.members.back().push_back(idx);
    }
    return groups;
}

GroupMatrix group_distance(const std::vector<Curve>& curves, GroupKey key, double threshold) {
    auto groups = group_curves(curves, key);
    const std::size_t g = groups.key_values.size();
    if (g < 2) throw InsufficientDataError("group_distance: need at least two groups");

    GroupMatrix gm;
    gm.threshold = threshold;
    gm.group_keys = groups.key_values;
    gm.values = Matrix(g, g);
    gm.defined.assign(g, std::vector<bool>(g, false));
    gm.below_threshold.assign(g, std::vector<bool>(g, false));

    for (std::size_t i = 0; i < g; ++i) {
        for (std::size_t j = i; j < g; ++j) {
            double sum = 0.0;
            std::size_t count = 0;
            if (i == j) {
                const auto& m = groups.members[i];
                for (std::size_t a = 0; a < m.size(); ++a)
                    for (std::size_t b = a + 1; b < m.size(); ++b) {
                        sum += rel_distance(curves[m[a]], curves[m[b]]);
                        ++count;
                    }
            } else {
                for (std::size_t a : groups.members[i])
                    for (std::size_t b : groups.members[j]) {
                        sum += rel_distance(curves[a], curves[b]);
                        ++count;
                    }
            }
            if (count > 0) {
                gm.values.at(i, j) = sum / static_cast<double>(count);
                gm.values.at(j, i) = gm.values.at(i, j);
                gm.defined[i][j] = gm.defined[j][i] = true;
                gm.below_threshold[i][j] = gm.below_threshold[j][i] =
                    gm.values.at(i, j) < threshold;
            }
        }
    }
    return gm;
}

InvarianceVerdict detect_invariance(const std::vector<Curve>& curves, GroupKey key,
                                    double threshold, double margin) {
    auto groups = group_curves(curves, key);
    if (groups.key_values.size() < 2)
        throw InputError("detect_invariance: degenerate grouping (fewer than two groups)");
    for (const auto& m : groups.members)
        if (m.size() < 2)
            throw InputError("detect_invariance: degenerate grouping (singleton group)");

    auto gm = group_distance(curves, key, threshold);
    InvarianceVerdict verdict;
    verdict.threshold = threshold;
    verdict.margin = margin;
    verdict.overall = true;
    const std::size_t g = groups.key_values.size();
    for (std::size_t i = 0; i < g; ++i) {
        InvarianceVerdict::Group grp;
        grp.key = groups.key_values[i];
        grp.members = groups.members[i].size();
        grp.mean_within = gm.values.at(i, i);
        double sum = 0.0;
        for (std::size_t j = 0; j < g; ++j)
            if (j != i) sum += gm.values.at(i, j);
        grp.mean_across = sum / static_cast<double>(g - 1);
        grp.invariant =
            grp.mean_within < threshold && grp.mean_within < grp.mean_across / margin;
        verdict.overall = verdict.overall && grp.invariant;
        verdict.groups.push_back(grp);
    }
    return verdict;
}

// ----------------------------- power-law fits -----------------------------

namespace {

struct LogLogFit {
    double coeff = 0.0;
    double exponent = 0.0;
    double r2 = 0.0;
};

// ln y = ln coeff + exponent * ln x over positive data.
LogLogFit loglog_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
    const std::size_t n = xs.size();
    Matrix a(n, 2);
    std::vector<double> b(n);
    for (std::size_t i = 0; i < n; ++i) {
        a.at(i, 0) = 1.0;
        a.at(i, 1) = std::log(xs[i]);
        b[i] = std::log(ys[i]);
    }
    const auto sol = solve_least_squares(a, b);
    LogLogFit fit;
    fit.coeff = std::exp(sol.x[0]);
    fit.exponent = sol.x[1];
    double mean = 0.0;
    for (double v : b) mean += v;
    mean /= static_cast<double>(n);
    double ss_tot = 0.0;
    for (double v : b) ss_tot += (v - mean) * (v - mean);
    fit.r2 = ss_tot > 0.0 ? 1.0 - (sol.residual_norm * sol.residual_norm) / ss_tot : 1.0;
    return fit;
}

double golden_max(const std::function<double(double)>& f, double lo, double hi, int iters) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int i = 0; i < iters; ++i) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        }
    }
    return f1 >= f2 ? x1 : x2;
}

// y = c0 + A x^e via a 200-level grid over c0 in [0, min y), an inner log-log
// regression per level, and golden-section refinement of the winner.
PowerLawFit nested_offset_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double min_y = *std::min_element(ys.begin(), ys.end());
    if (!(min_y > 0.0))
        throw InputError("power-law fit: values must be positive for the offset search");

    auto r2_at = [&](double c0) {
        std::vector<double> shifted(ys.size());
        for (std::size_t i = 0; i < ys.size(); ++i) shifted[i] = ys[i] - c0;
        return loglog_fit(xs, shifted).r2;
    };

    const int levels = 200;
    int best = 0;
    double best_r2 = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < levels; ++j) {
        const double c0 = min_y * static_cast<double>(j) / static_cast<double>(levels);
        const double r2 = r2_at(c0);
        if (r2 > best_r2) {
            best_r2 = r2;
            best = j;
        }
    }
    const double step = min_y / static_cast<double>(levels);
    const double lo = std::max(0.0, min_y * static_cast<double>(best) / levels - step);
    const double hi = std::min(min_y * (1.0 - 1e-12),
                               min_y * static_cast<double>(best) / levels + step);
    const double c0 = golden_max(r2_at, lo, hi, 80);

    std::vector<double> shifted(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) shifted[i] = ys[i] - c0;
    const auto inner = loglog_fit(xs, shifted);
    PowerLawFit fit;
    fit.c0 = c0;
    fit.coeff = inner.coeff;
    fit.exponent = inner.exponent;
    fit.r2 = inner.r2;
    return fit;
}

PowerLawFit degenerate_fit(const std::vector<double>& ys) {
    PowerLawFit fit;
    fit.degenerate = true;
    double mean = 0.0;
    for (double v : ys) mean += v;
    fit.c0 = mean / static_cast<double>(ys.size());
    return fit;
}

bool nearly_constant(const std::vector<double>& ys) {
    const auto [lo, hi] = std::minmax_element(ys.begin(), ys.end());
    return *hi - *lo <= 1e-12 * std::max(std::abs(*hi), 1.0);
}

} // namespace

PowerLawFit fit_run_power_law(const std::vector<double>& iters,
                              const std::vector<double>& losses, double eta) {
    if (iters.size() != losses.size())
        throw ContractError("fit_run_power_law: mismatched series lengths");
    if (iters.size() < 20)
        throw InsufficientDataError("fit_run_power_law: need at least 20 points");
    if (!(eta > 0.0)) throw InputError("fit_run_power_law: eta must be positive");

    // A decaying curve must end below where it starts; otherwise the fit is
    // degenerate by construction.
    const std::size_t head = std::max<std::size_t>(1, iters.size() / 10);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < head; ++i) {
        first += losses[i];
        last += losses[losses.size() - 1 - i];
    }
    if (last >= first || nearly_constant(losses)) return degenerate_fit(losses);

    std::vector<double> xs(iters.size());
    for (std::size_t i = 0; i < iters.size(); ++i) {
        if (!(iters[i] > 0.0))
            throw InputError("fit_run_power_law: iteration counts must be positive");
        xs[i] = eta * iters[i];
    }
    return nested_offset_fit(xs, losses);
}

PowerLawFit fit_L0_elr(const std::vector<double>& gammas, const std::vector<double>& l0_values) {
    if (gammas.size() != l0_values.size())
        throw ContractError("fit_L0_elr: mismatched series lengths");
    std::vector<double> distinct = gammas;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end(),
                               [](double a, double b) { return b <= a * (1.0 + 1e-9); }),
                   distinct.end());
    if (distinct.size() < 4)
        throw InsufficientDataError("fit_L0_elr: need at least 4 distinct gamma levels");
    if (nearly_constant(l0_values)) return degenerate_fit(l0_values);
    return nested_offset_fit(gammas, l0_values);
}

PowerLawFit fit_noise_elr(const std::vector<double>& gammas, const std::vector<double>& levels,
                          std::vector<std::string>* warnings) {
    if (gammas.size() != levels.size())
        throw ContractError("fit_noise_elr: mismatched series lengths");
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < gammas.size(); ++i) {
        if (!(levels[i] > 0.0)) {
            if (warnings) {
                char buf[96];
                std::snprintf(buf, sizeof buf,
                              "fit_noise_elr: run with gamma=%g excluded (non-positive level %g)",
                              gammas[i], levels[i]);
                warnings->push_back(buf);
            }
            continue;
        }
        xs.push_back(gammas[i]);
        ys.push_back(levels[i]);
    }
    std::vector<double> distinct = xs;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end(),
                               [](double a, double b) { return b <= a * (1.0 + 1e-9); }),
                   distinct.end());
    if (distinct.size() < 2)
        throw InsufficientDataError("fit_noise_elr: need at least two distinct gamma levels");
    const auto inner = loglog_fit(xs, ys);
    PowerLawFit fit;
    fit.coeff = inner.coeff;
    fit.exponent = inner.exponent;
    fit.r2 = inner.r2;
    return fit;
}

// ----------------------------- paraboloid -----------------------------

ParaboloidFit fit_paraboloid(const std::vector<GridCell>& cells) {
    std::vector<const GridCell*> used;
    std::size_t excluded = 0;
    for (const auto& c : cells) {
        if (c.valid)
            used.push_back(&c);
        else
            ++excluded;
    }
    if (used.size() < 6)
        throw InsufficientDataError(
            "fit_paraboloid: need at least 6 non-diverged cells, have " +
            std::to_string(used.size()));

    const std::size_t n = used.size();
    Matrix a(n, 6);
    std::vector<double> b(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x1 = std::log2(used[i]->eta);
        const double x2 = std::log2(used[i]->lambda);
        a.at(i, 0) = 1.0;
        a.at(i, 1) = x1;
        a.at(i, 2) = x2;
        a.at(i, 3) = 0.5 * x1 * x1;
        a.at(i, 4) = x1 * x2;
        a.at(i, 5) = 0.5 * x2 * x2;
        b[i] = used[i]->loss;
    }
    const auto sol = solve_least_squares(a, b);

    ParaboloidFit fit;
    fit.c = sol.x[0];
    fit.b[0] = sol.x[1];
    fit.b[1] = sol.x[2];
    fit.hess = Matrix(2, 2, {sol.x[3], sol.x[4], sol.x[4], sol.x[5]});
    fit.eig = eigen_sym2(fit.hess);
    fit.pd = fit.eig.lambda2 > 0.0;
    fit.cells_used = n;
    fit.cells_excluded = excluded;

    double mean = 0.0;
    for (double v : b) mean += v;
    mean /= static_cast<double>(n);
    double ss_tot = 0.0;
    fit.max_residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double pred = 0.0;
        for (int j = 0; j < 6; ++j) pred += a.at(i, j) * sol.x[j];
        fit.max_residual = std::max(fit.max_residual, std::abs(pred - b[i]));
        ss_tot += (b[i] - mean) * (b[i] - mean);
    }
    fit.r2 = ss_tot > 0.0 ? 1.0 - (sol.residual_norm * sol.residual_norm) / ss_tot : 1.0;

    if (fit.pd) {
        const double h11 = fit.hess.at(0, 0), h12 = fit.hess.at(0, 1), h22 = fit.hess.at(1, 1);
        const double det = h11 * h22 - h12 * h12;
        fit.min_x[0] = -(h22 * fit.b[0] - h12 * fit.b[1]) / det;
        fit.min_x[1] = -(h11 * fit.b[1] - h12 * fit.b[0]) / det;
        const double x1 = fit.min_x[0], x2 = fit.min_x[1];
        fit.min_value = fit.c + fit.b[0] * x1 + fit.b[1] * x2 +
                        0.5 * (h11 * x1 * x1 + 2 * h12 * x1 * x2 + h22 * x2 * x2);
        double lo1 = 0, hi1 = 0, lo2 = 0, hi2 = 0;
        bool first = true;
        for (const auto* cell : used) {
            const double cx1 = std::log2(cell->eta), cx2 = std::log2(cell->lambda);
            if (first) {
                lo1 = hi1 = cx1;
                lo2 = hi2 = cx2;
                first = false;
            } else {
                lo1 = std::min(lo1, cx1);
                hi1 = std::max(hi1, cx1);
                lo2 = std::min(lo2, cx2);
                hi2 = std::max(hi2, cx2);
            }
        }
        fit.min_inside_grid = x1 >= lo1 && x1 <= hi1 && x2 >= lo2 && x2 <= hi2;
    }
    return fit;
}

std::vector<EigenDynamicsPoint> eigen_dynamics(const std::vector<RunRecord>& runs,
                                               const std::vector<double>& horizons,
                                               RunMetric metric) {
    std::vector<EigenDynamicsPoint> out;
    std::vector<double> xs, ys;
    for (double h : horizons) {
        EigenDynamicsPoint pt;
        pt.tokens = h;
        std::vector<GridCell> cells;
        for (const auto& rec : runs) {
            extract_series(rec, metric, xs, ys);
            auto v = interp(xs, ys, h);
            GridCell cell;
            cell.eta = rec.config.optim.peak_lr;
            cell.lambda = rec.config.optim.weight_decay;
            if (v) {
                cell.loss = *v;
                cell.valid = true;
            } else {
                cell.valid = false; // diverged or short run: excluded at this horizon
            }
            cells.push_back(cell);
        }
        try {
            auto fit = fit_paraboloid(cells);
            pt.lambda1 = fit.eig.lambda1;
            pt.lambda2 = fit.eig.lambda2;
            pt.angle_deg = std::atan2(fit.eig.v1[1], fit.eig.v1[0]) * 180.0 / kPi;
            pt.pd = fit.pd;
            pt.ok = true;
        } catch (const Error& e) {
            pt.ok = false;
            pt.error = e.what();
        }
        out.push_back(std::move(pt));
    }
    return out;
}

// ----------------------------- scaling laws -----------------------------

ScalingLaws fit_scaling_laws(const std::vector<BudgetOptimum>& optima) {
    std::vector<double> ds;
    for (const auto& o : optima) ds.push_back(o.d_tokens);
    std::vector<double> distinct = ds;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end(),
                               [](double a, double b) { return b <= a * (1.0 + 1e-9); }),
                   distinct.end());
    if (distinct.size() < 4)
        throw InsufficientDataError("fit_scaling_laws: need at least 4 token budgets");

    std::vector<double> etas, lambdas, gammas, losses;
    for (const auto& o : optima) {
        if (std::abs(o.gamma_star - o.eta_star * o.lambda_star) >
            1e-9 * std::max(std::abs(o.gamma_star), std::abs(o.eta_star * o.lambda_star)))
            throw InputError("fit_scaling_laws: gamma* must equal eta* x lambda*");
        etas.push_back(o.eta_star);
        lambdas.push_back(o.lambda_star);
        gammas.push_back(o.gamma_star);
        losses.push_back(o.loss_star);
    }

    auto powerlaw = [&](const std::vector<double>& ys) {
        const auto inner = loglog_fit(ds, ys);
        PowerLawFit fit;
        fit.coeff = inner.coeff;
        fit.exponent = inner.exponent;
        fit.r2 = inner.r2;
        return fit;
    };

    ScalingLaws laws;
    laws.eta = powerlaw(etas);
    laws.lambda = powerlaw(lambdas);
    laws.gamma = powerlaw(gammas);
    laws.loss = nearly_constant(losses) ? degenerate_fit(losses)
                                        : nested_offset_fit(ds, losses);
    return laws;
}

// ----------------------------- decay prediction -----------------------------

std::vector<double> tau_at_points(const RunRecord& run) {
    // Replay the schedule exactly as the training loop walked it.
    const LrSchedule sched = run.config.lr_schedule();
    const auto per_example = static_cast<std::uint64_t>(run.config.model.context_k) + 1;
    std::uint64_t max_iter = 0;
    for (const auto& p : run.points) max_iter = std::max(max_iter, p.iter);

    std::vector<double> tau_by_iter(max_iter + 1, 0.0);
    std::uint64_t tokens = 0;
    double tau = 0.0;
    for (std::uint64_t i = 1; i <= max_iter; ++i) {
        const std::size_t batch = batch_size_at(run.config.bs, tokens);
        const std::uint64_t step_tokens = static_cast<std::uint64_t>(batch) * per_example;
        if (tokens + step_tokens > run.config.total_tokens)
            throw ContractError("tau_at_points: logged iterations exceed the token budget");
        tokens += step_tokens;
        tau += lr_at(sched, tokens);
        tau_by_iter[i] = tau;
    }

    std::vector<double> out;
    out.reserve(run.points.size());
    for (const auto& p : run.points) out.push_back(tau_by_iter[p.iter]);
    return out;
}

DecayPrediction predict_decay_gain(const RunRecord& const_run, double tau_point,
                                   const RunRecord* wsd_run, RunMetric metric) {
    if (const_run.config.lr_kind != LrSchedule::Kind::Constant)
        throw ContractError("predict_decay_gain: source run must use a constant LR schedule");
    if (!(tau_point > 0.0)) throw InputError("predict_decay_gain: tau must be positive");

    const auto taus = tau_at_points(const_run);
    // Nearest logged point carrying both the metric and a usable GNS estimate.
    std::ptrdiff_t best = -1;
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < const_run.points.size(); ++i) {
        const auto& p = const_run.points[i];
        if (!metric_value(p, metric)) continue;
        const double gap = std::abs(taus[i] - tau_point);
        if (gap < best_gap) {
            best_gap = gap;
            best = static_cast<std::ptrdiff_t>(i);
        }
    }
    if (best < 0 || best_gap > 0.01 * tau_point)
        throw ContractError(
            "predict_decay_gain: no logged point within 1% of the target gradient-flow time");
    const auto& p = const_run.points[static_cast<std::size_t>(best)];
    if (!p.gns_valid || !p.gns_tr_noise)
        throw ContractError("predict_decay_gain: GNS estimate invalid at the matched point; "
                            "prediction refused");

    DecayPrediction pred;
    pred.tau_target = tau_point;
    pred.matched_iter = p.iter;
    pred.tau_matched = taus[static_cast<std::size_t>(best)];
    pred.loss_const = *metric_value(p, metric);
    pred.scaled_noise = (p.lr / static_cast<double>(p.batch_size)) * *p.gns_tr_noise;
    pred.predicted = pred.loss_const - 0.25 * pred.scaled_noise;

    if (wsd_run) {
        const auto wsd_taus = tau_at_points(*wsd_run);
        std::ptrdiff_t wb = -1;
        double wb_gap = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < wsd_run->points.size(); ++i) {
            if (!metric_value(wsd_run->points[i], metric)) continue;
            const double gap = std::abs(wsd_taus[i] - tau_point);
            if (gap < wb_gap) {
                wb_gap = gap;
                wb = static_cast<std::ptrdiff_t>(i);
            }
        }
        if (wb < 0 || wb_gap > 0.01 * tau_point)
            throw ContractError("predict_decay_gain: paired run has no logged point within 1% "
                                "of the target gradient-flow time");
        pred.has_actual = true;
        pred.actual = *metric_value(wsd_run->points[static_cast<std::size_t>(wb)], metric);
        pred.rel_error = std::abs(pred.actual - pred.predicted) / pred.actual;
    }
    return pred;
}

} // namespace trajlab
