#pragma once

#include <cstdint>
#include <vector>

#include "trajlab/numkit.hpp"

namespace trajlab {

using Token = std::int32_t;

// Seeded order-m Markov chain over a vocabulary of V tokens. One row of the
// transition table per context (V^m contexts); rows sum to one.
struct MarkovSource {
    int vocab = 0;
    int order = 0;
    std::uint64_t seed = 0;
    Matrix table; // (V^order) x V

    std::size_t num_contexts() const { return table.rows(); }

    // Wraps an explicit table, validating row normalization.
    static MarkovSource from_table(int vocab, int order, Matrix table);
};

// Rows drawn from a symmetric Dirichlet(concentration); deterministic in seed.
MarkovSource build_source(std::uint64_t seed, int vocab, int order, double concentration);

// Conditional entropy H = -sum_c pi(c) sum_t P(t|c) ln P(t|c) in nats, with pi
// the stationary distribution of the context chain (power iteration to 1e-12).
// Throws NumericError if the iteration has not converged after 1e5 sweeps.
double entropy_floor(const MarkovSource& source);

struct TokenBatch {
    std::size_t batch = 0;
    int k = 0;
    std::vector<Token> inputs;  // batch x k, row-major
    std::vector<Token> targets; // batch
    std::uint64_t token_count = 0; // stream tokens consumed so far, cumulative
};

// One-pass sequential sampler over a MarkovSource. Each example consumes k+1
// fresh tokens (k inputs, one target); windows never overlap or repeat.
class MarkovStream {
public:
    MarkovStream(const MarkovSource& source, std::uint64_t stream_seed);
    // The stream keeps a pointer to the source; temporaries are rejected.
    MarkovStream(const MarkovSource&& source, std::uint64_t stream_seed) = delete;

    Token next_token();
    TokenBatch next_batch(std::size_t batch, int k);

    std::uint64_t tokens_drawn() const { return drawn_; }

    struct State {
        RngStream::State rng;
        std::vector<Token> context;
        std::uint64_t tokens_drawn = 0;
    };
    State state() const;
    void restore(const State& st);

private:
    const MarkovSource* source_;
    RngStream rng_;
    std::vector<Token> context_; // most recent `order` tokens, oldest first
    std::size_t context_index_ = 0;
    std::uint64_t drawn_ = 0;
    bool warned_short_context_ = false;
};

} // namespace trajlab
