#pragma once

#include <cstdint>

#include "trajlab/model.hpp"

namespace trajlab {

struct OptimConfig {
    double peak_lr = 1e-2;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;

    // Which tensors receive decoupled weight decay. "weights" exempts the
    // RMSNorm gains; "all" and "none" override the per-tensor flags.
    enum class DecayMask { Weights, All, None };
    DecayMask decay_mask = DecayMask::Weights;

    double elr() const { return peak_lr * weight_decay; } // gamma = eta * lambda
    void validate() const;
};

// First/second Adam moments plus the step counter. The second moment set is
// the source of the diagonal preconditioner used by the GNS estimator.
struct AdamState {
    ParamSet m;
    ParamSet v;
    std::uint64_t step = 0;

    static AdamState init(const ParamSet& params);
};

struct ClipResult {
    double scale = 1.0;    // factor actually applied
    double raw_norm = 0.0; // global l2 norm before clipping
};

// Scales all gradient tensors by clip_norm/norm when the global l2 norm
// exceeds clip_norm. Idempotent; the applied scale is reported for logging.
ClipResult clip_global_norm(ParamSet& grads, double clip_norm);

// One AdamW update: moment updates, bias correction, preconditioned step, and
// decoupled weight decay applied directly to the masked tensors.
void adamw_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr_t,
                const OptimConfig& cfg);

// Bias-corrected second moment of one tensor coordinate set, as used both by
// the update and by the GNS preconditioner snapshot.
ParamSet bias_corrected_v(const AdamState& state, const OptimConfig& cfg);

struct LrSchedule {
    enum class Kind { Constant, Wsd };
    Kind kind = Kind::Constant;
    double peak_lr = 1e-2;
    std::uint64_t warmup_tokens = 0;
    std::uint64_t total_tokens = 0;
    std::uint64_t decay_tokens = 0; // WSD only; the final decay_tokens inside total

    void validate() const;
};

// Piecewise-linear learning rate: 0 -> peak over warmup, flat, and (for WSD)
// peak -> 0 over the final decay window. tokens beyond total raise an error.
double lr_at(const LrSchedule& schedule, std::uint64_t tokens_consumed);

struct BsSchedule {
    enum class Kind { Fixed, Type2Switch };
    Kind kind = Kind::Fixed;
    std::size_t batch = 0;         // Fixed
    std::size_t b_small = 0;       // Type2Switch
    std::size_t b_large = 0;
    std::uint64_t switch_tokens = 0;

    void validate() const;
};

// Batch size in sequences at a given point of the token budget. The Type 2
// switch is inclusive: at exactly switch_tokens the large batch applies.
std::size_t batch_size_at(const BsSchedule& schedule, std::uint64_t tokens_consumed);

} // namespace trajlab
