#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajlab/corpus.hpp"
#include "trajlab/numkit.hpp"

namespace trajlab {

// k-gram MLP language model: the k previous tokens are embedded, concatenated,
// projected to the residual width, passed through num_blocks of
// [RMSNorm -> up -> GeLU -> down -> residual add], normalized once more and
// decoded through an untied head.
struct ModelConfig {
    int vocab_size = 2;
    int context_k = 4;
    int embed_dim = 64;
    int num_blocks = 2;
    int hidden_mult = 4;
    double rmsnorm_eps = 1e-6;
    double init_sigma = 0.02;

    int hidden_dim() const { return embed_dim * hidden_mult; }
    void validate() const;
};

struct NamedTensor {
    std::string name;
    Matrix value;
    bool decay = true; // weight decay applies to this tensor under the default mask
};

// All model parameters in declaration order. The same layout doubles as the
// container for gradients and Adam moments.
class ParamSet {
public:
    static ParamSet zeros(const ModelConfig& cfg);
    static ParamSet random_init(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    std::vector<NamedTensor>& tensors() { return tensors_; }
    const std::vector<NamedTensor>& tensors() const { return tensors_; }

    Matrix& embedding() { return tensors_[0].value; }
    const Matrix& embedding() const { return tensors_[0].value; }
    Matrix& input_proj() { return tensors_[1].value; }
    const Matrix& input_proj() const { return tensors_[1].value; }
    Matrix& block_gain(int b) { return tensors_[2 + 3 * b].value; }
    const Matrix& block_gain(int b) const { return tensors_[2 + 3 * b].value; }
    Matrix& block_up(int b) { return tensors_[3 + 3 * b].value; }
    const Matrix& block_up(int b) const { return tensors_[3 + 3 * b].value; }
    Matrix& block_down(int b) { return tensors_[4 + 3 * b].value; }
    const Matrix& block_down(int b) const { return tensors_[4 + 3 * b].value; }
    Matrix& final_gain() { return tensors_[2 + 3 * cfg_.num_blocks].value; }
    const Matrix& final_gain() const { return tensors_[2 + 3 * cfg_.num_blocks].value; }
    Matrix& head() { return tensors_[3 + 3 * cfg_.num_blocks].value; }
    const Matrix& head() const { return tensors_[3 + 3 * cfg_.num_blocks].value; }

    ParamSet zeros_like() const;
    std::size_t total_parameters() const;
    double global_norm() const;
    bool all_finite() const;

    // Cheap strided fingerprint used to detect stale backward caches.
    std::uint64_t fingerprint() const;

private:
    ModelConfig cfg_;
    std::vector<NamedTensor> tensors_;
};

// Activations recorded by forward() for the matching backward() call. Valid
// only for the exact (params, batch) pair that produced it.
struct BackwardCache {
    std::size_t batch = 0;
    std::vector<Token> inputs;
    std::vector<Token> targets;
    Matrix x;      // batch x (k*d) concatenated embeddings
    Matrix h0;     // batch x d after input projection
    std::vector<Matrix> block_in;   // per block: batch x d
    std::vector<std::vector<double>> block_rms; // per block: batch
    std::vector<Matrix> block_u;    // per block: batch x d (normalized * gain)
    std::vector<Matrix> block_a;    // per block: batch x 4d (up preactivation)
    std::vector<Matrix> block_g;    // per block: batch x 4d (gelu output)
    Matrix h_final; // batch x d entering the final norm
    std::vector<double> final_rms;  // batch
    Matrix f;       // batch x d after final norm
    Matrix probs;   // batch x V softmax
    double loss = 0.0;
    std::uint64_t params_fingerprint = 0;
};

struct ForwardResult {
    double loss = 0.0;
    BackwardCache cache;
};

// Mean cross-entropy in nats over the batch, plus the cache for backward().
ForwardResult forward(const ParamSet& params, const TokenBatch& batch);

// Loss only; no activations kept. Used for evaluation and finite differences.
double forward_loss(const ParamSet& params, const TokenBatch& batch);

// Gradient of the mean loss with respect to every parameter tensor.
ParamSet backward(const ParamSet& params, const BackwardCache& cache);

// Max relative discrepancy between analytic and central-difference gradients
// over a seeded subsample of at least sample_size coordinates (capped at the
// parameter count). fd_step must lie in [1e-7, 1e-3].
double grad_check(const ParamSet& params, const TokenBatch& batch, double fd_step,
                  std::size_t sample_size = 500, std::uint64_t seed = 0);

// Same comparison against caller-supplied gradients (lets tests run mutation
// controls against a deliberately corrupted gradient set).
double grad_check_against(const ParamSet& params, const TokenBatch& batch, double fd_step,
                          const ParamSet& analytic, std::size_t sample_size = 500,
                          std::uint64_t seed = 0);

// GeLU (tanh approximation), exposed so tests can pin the exact definition:
// 0.5*x*(1+tanh(0.7978845608028654*(x+0.044715*x^3))).
double gelu(double x);
double gelu_derivative(double x);

} // namespace trajlab
