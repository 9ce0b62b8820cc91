#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trajlab/numkit.hpp"
#include "trajlab/runner.hpp"

namespace trajlab {

// ----------------------------- curves -----------------------------

enum class RunMetric {
    TrainLoss,
    ValLoss,
    GnsTrNoise,
    GnsGnorm2,
    GnsBPrecond,
    ParamNorm,
    ScaledNoise,  // (lr/B) * tr_noise
    ScaledGnorm2, // lr * gnorm2
};

RunMetric metric_from_name(const std::string& name);
const char* metric_name(RunMetric m);

struct CurveMeta {
    double eta = 0.0;
    double lambda = 0.0;
    double gamma = 0.0; // eta * lambda
    double batch = 0.0; // batch size at the start of the run
    std::string metric;
    std::string config_hash;
};

// One metric series interpolated onto a token grid shared by all curves of an
// analysis. Masked points fall outside the run's logged range.
struct Curve {
    std::shared_ptr<const std::vector<double>> grid;
    std::vector<double> values;
    std::vector<bool> mask; // true = usable
    CurveMeta meta;
};

struct GridSpec {
    double start_tokens = 0.0;
    double end_tokens = 0.0;
    std::size_t points = 0;
};

// Linear interpolation of each run's metric onto the common grid, then
// optional EMA smoothing with a halflife in tokens (0 disables). Runs that do
// not cover part of the grid get masked points and a warning.
std::vector<Curve> align_and_smooth(const std::vector<RunRecord>& records, RunMetric metric,
                                    const GridSpec& grid, double ema_halflife_tokens,
                                    std::vector<std::string>* warnings = nullptr);

// ||a1 - a2|| / sqrt(0.5 (||a1||^2 + ||a2||^2)) over overlapping unmasked
// points. Undefined (error) when both curves are identically zero.
double rel_distance(const Curve& a, const Curve& b);

struct DistanceMatrix {
    std::vector<std::string> labels;
    Matrix values;
    std::vector<std::vector<bool>> below_threshold;
    double threshold = 0.005;
};

DistanceMatrix pairwise_matrix(const std::vector<Curve>& curves, double threshold = 0.005);

enum class GroupKey { Elr, Lr };

const char* group_key_name(GroupKey k);

struct CurveGroups {
    std::vector<double> key_values;               // ascending
    std::vector<std::vector<std::size_t>> members; // curve indices per group
};

CurveGroups group_curves(const std::vector<Curve>& curves, GroupKey key);

struct GroupMatrix {
    std::vector<double> group_keys;
    Matrix values;
    std::vector<std::vector<bool>> defined; // singleton groups leave the diagonal undefined
    std::vector<std::vector<bool>> below_threshold;
    double threshold = 0.005;
};

// Entry (i, j): mean rel_distance over all pairs with one curve in group i and
// one in group j; within-group entries average distinct pairs only.
GroupMatrix group_distance(const std::vector<Curve>& curves, GroupKey key,
                           double threshold = 0.005);

struct InvarianceVerdict {
    struct Group {
        double key = 0.0;
        std::size_t members = 0;
        double mean_within = 0.0;
        double mean_across = 0.0;
        bool invariant = false;
    };
    std::vector<Group> groups;
    bool overall = false;
    double threshold = 0.005;
    double margin = 3.0;
};

// A group is invariant iff its mean within-group distance is below the
// threshold AND below (mean across-group distance)/margin. Requires at least
// two groups with at least two members each.
InvarianceVerdict detect_invariance(const std::vector<Curve>& curves, GroupKey key,
                                    double threshold = 0.005, double margin = 3.0);

// ----------------------------- power-law fits -----------------------------

// y(x) = c0 + coeff * x^exponent, with R^2 of the inner log-linear fit.
struct PowerLawFit {
    double c0 = 0.0;
    double coeff = 0.0;
    double exponent = 0.0;
    double r2 = 0.0;
    bool degenerate = false;
};

// Per-run loss fit L(t) = L0 + A (eta t)^(-alpha) on a constant-LR segment:
// nested grid search over L0 (200 levels on [0, min)) with an inner log-linear
// regression, then golden-section refinement. Returned exponent is -alpha.
PowerLawFit fit_run_power_law(const std::vector<double>& iters,
                              const std::vector<double>& losses, double eta);

// L0(gamma) = L0_1 + L0_2 * gamma^L0_3 over at least 4 distinct gamma levels.
PowerLawFit fit_L0_elr(const std::vector<double>& gammas, const std::vector<double>& l0_values);

// G(gamma) = G_1 * gamma^G_2 by log-log regression; non-positive levels are
// excluded with a warning.
PowerLawFit fit_noise_elr(const std::vector<double>& gammas, const std::vector<double>& levels,
                          std::vector<std::string>* warnings = nullptr);

// ----------------------------- paraboloid fits -----------------------------

struct GridCell {
    double eta = 0.0;
    double lambda = 0.0;
    double loss = 0.0;
    bool valid = true; // diverged cells are excluded (and counted)
};

// Quadratic fit c + b.x + x'Hx/2 in x = (log2 eta, log2 lambda).
struct ParaboloidFit {
    double c = 0.0;
    double b[2] = {0.0, 0.0};
    Matrix hess; // 2x2 symmetric
    EigenSym2 eig;
    bool pd = false;
    double min_x[2] = {0.0, 0.0}; // (log2 eta*, log2 lambda*), valid when pd
    double min_value = 0.0;
    // False when the minimizer lies outside the sampled (log2 eta, log2 lambda)
    // box, i.e. the grid did not bracket the optimum and x* is extrapolated.
    bool min_inside_grid = false;
    double r2 = 0.0;
    double max_residual = 0.0;
    std::size_t cells_used = 0;
    std::size_t cells_excluded = 0;
};

ParaboloidFit fit_paraboloid(const std::vector<GridCell>& cells);

struct EigenDynamicsPoint {
    double tokens = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double angle_deg = 0.0; // top eigenvector angle from the (1,0) axis
    bool pd = false;
    bool ok = false;
    std::string error;
};

// One paraboloid fit per token horizon, using each run's metric interpolated
// at that horizon. Per-horizon failures are recorded and the series continues.
std::vector<EigenDynamicsPoint> eigen_dynamics(const std::vector<RunRecord>& runs,
                                               const std::vector<double>& horizons,
                                               RunMetric metric = RunMetric::ValLoss);

// ----------------------------- scaling laws -----------------------------

struct BudgetOptimum {
    double d_tokens = 0.0;
    double eta_star = 0.0;
    double lambda_star = 0.0;
    double gamma_star = 0.0;
    double loss_star = 0.0;
};

struct ScalingLaws {
    PowerLawFit eta;    // eta(D)    = coeff * D^exponent
    PowerLawFit lambda; // lambda(D) = coeff * D^exponent
    PowerLawFit gamma;  // gamma(D)  = coeff * D^exponent
    PowerLawFit loss;   // L(D)      = c0 + coeff * D^exponent
};

// Power laws over at least 4 token budgets; inputs must satisfy the
// bookkeeping identity gamma* = eta* * lambda*.
ScalingLaws fit_scaling_laws(const std::vector<BudgetOptimum>& optima);

// ----------------------------- decay prediction -----------------------------

// Gradient-flow time tau = sum of per-step learning rates, reconstructed
// exactly from the run's config, at each logged point (keyed by iter).
std::vector<double> tau_at_points(const RunRecord& run);

struct DecayPrediction {
    double tau_target = 0.0;
    std::uint64_t matched_iter = 0;
    double tau_matched = 0.0;
    double loss_const = 0.0;
    double scaled_noise = 0.0; // (lr/B) * tr_noise at the matched point
    double predicted = 0.0;    // loss_const - scaled_noise / 4
    bool has_actual = false;
    double actual = 0.0;
    double rel_error = 0.0;
};

// Predicted post-decay loss L'(tau) = L(tau) - (1/4)(eta/B) Tr(P^-1 Sigma)(tau)
// from a constant-LR run; when a paired WSD run is supplied, its loss at the
// same tau yields the relative error. Matching tolerance: nearest logged point
// within 1% of the target tau, else the prediction is refused.
DecayPrediction predict_decay_gain(const RunRecord& const_run, double tau_point,
                                   const RunRecord* wsd_run = nullptr,
                                   RunMetric metric = RunMetric::ValLoss);

} // namespace trajlab
