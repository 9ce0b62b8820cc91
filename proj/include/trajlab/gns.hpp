#pragma once

#include <cstddef>
#include <vector>

#include "trajlab/model.hpp"

namespace trajlab {

// Preconditioned squared gradient norms measured on a micro-batch and on the
// full batch at one optimizer step.
struct GnsSample {
    std::size_t b_small = 0;
    std::size_t b_big = 0;
    double sqnorm_small = 0.0;
    double sqnorm_big = 0.0;
};

struct RawGnsEstimate {
    double tr_noise = 0.0; // Tr(P^-1 Sigma) estimate
    double gnorm2 = 0.0;   // ||P^-1/2 g||^2 estimate
    bool valid = false;    // false when either raw estimate is negative
};

// Smoothed estimates plus the bookkeeping quantities derived from them.
struct GnsEstimate {
    double tr_noise = 0.0;
    double gnorm2 = 0.0;
    double b_precond = 0.0;     // tr_noise / gnorm2
    double scaled_noise = 0.0;  // (lr/B) * tr_noise
    double scaled_gnorm2 = 0.0; // lr * gnorm2
    bool valid = false;
};

// g^T P^-1 g with P = diag(v_hat) floored by eps^2.
double precond_sqnorm(const ParamSet& grads, const ParamSet& v_hat, double eps);

// Two-batch unbiased estimator: under E||G_b||^2 = ||g||^2 + TrSigma/b,
//   gnorm2  = (b_big*sq_big - b_small*sq_small) / (b_big - b_small)
//   tr_noise = (sq_small - sq_big) / (1/b_small - 1/b_big).
// Negative estimates are returned as-is with the validity flag cleared.
RawGnsEstimate estimate_step(const GnsSample& sample);

// Exponential moving averages of tr_noise and gnorm2 smoothed independently
// (bias-corrected); the ratio is formed only after smoothing.
class GnsSmoother {
public:
    explicit GnsSmoother(double halflife_steps);

    GnsEstimate update(const RawGnsEstimate& raw, double lr, double batch_size);

    struct State {
        double noise_acc = 0.0;
        double gnorm_acc = 0.0;
        double weight = 0.0;
    };
    State state() const { return {noise_acc_, gnorm_acc_, weight_}; }
    void restore(const State& st) {
        noise_acc_ = st.noise_acc;
        gnorm_acc_ = st.gnorm_acc;
        weight_ = st.weight;
    }

private:
    double decay_ = 0.0;
    double noise_acc_ = 0.0;
    double gnorm_acc_ = 0.0;
    double weight_ = 0.0;
};

// Series form used by tests and offline analysis (no lr/batch bookkeeping).
std::vector<GnsEstimate> smooth(const std::vector<RawGnsEstimate>& raw,
                                double halflife_steps);

enum class BatchRegime { Small, Large, Mixed };

struct GnsSeriesPoint {
    double b_precond = 0.0;
    bool valid = false;
    double batch_size = 0.0;
};

// Small if B_precond > B at every valid point, Large if below at every point,
// Mixed otherwise. No valid points is an error.
BatchRegime classify_batch_regime(const std::vector<GnsSeriesPoint>& series);

} // namespace trajlab
