#include "trajlab/corpus.hpp"

#include <cmath>
#include <cstdio>

namespace trajlab {

namespace {

std::size_t pow_size(int base, int exp) {
    std::size_t r = 1;
    for (int i = 0; i < exp; ++i) {
        if (r > (std::size_t{1} << 40) / static_cast<std::size_t>(base))
            throw InputError("Markov source: V^order context table is too large");
        r *= static_cast<std::size_t>(base);
    }
    return r;
}

void validate_table(int vocab, int order, const Matrix& table) {
    if (vocab < 2) throw InputError("Markov source: vocab must be at least 2");
    if (order < 1) throw InputError("Markov source: order must be at least 1");
    const std::size_t contexts = pow_size(vocab, order);
    if (table.rows() != contexts || table.cols() != static_cast<std::size_t>(vocab))
        throw InputError("Markov source: table shape does not match V^order x V");
    for (std::size_t c = 0; c < contexts; ++c) {
        double sum = 0.0;
        for (int t = 0; t < vocab; ++t) {
            const double p = table.at(c, t);
            if (!(p >= 0.0)) throw InputError("Markov source: negative or NaN probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw InputError("Markov source: row " + std::to_string(c) + " does not sum to 1");
    }
}

} // namespace

MarkovSource MarkovSource::from_table(int vocab, int order, Matrix table) {
    validate_table(vocab, order, table);
    MarkovSource src;
    src.vocab = vocab;
    src.order = order;
    src.seed = 0;
    src.table = std::move(table);
    return src;
}

MarkovSource build_source(std::uint64_t seed, int vocab, int order, double concentration) {
    if (vocab < 2) throw InputError("build_source: vocab must be at least 2");
    if (order < 1) throw InputError("build_source: order must be at least 1");
    if (!(concentration > 0.0)) throw InputError("build_source: concentration must be positive");

    const std::size_t contexts = pow_size(vocab, order);
    Matrix table(contexts, static_cast<std::size_t>(vocab));
    RngStream rng(seed);
    for (std::size_t c = 0; c < contexts; ++c) {
        double sum = 0.0;
        for (int t = 0; t < vocab; ++t) {
            const double g = rng.next_gamma(concentration);
            table.at(c, t) = g;
            sum += g;
        }
        for (int t = 0; t < vocab; ++t) table.at(c, t) /= sum;
        // Exact renormalization so the row invariant holds to 1e-12.
        double s2 = 0.0;
        for (int t = 0; t < vocab; ++t) s2 += table.at(c, t);
        for (int t = 0; t < vocab; ++t) table.at(c, t) /= s2;
    }

    MarkovSource src;
    src.vocab = vocab;
    src.order = order;
    src.seed = seed;
    src.table = std::move(table);
    validate_table(vocab, order, src.table);
    return src;
}

double entropy_floor(const MarkovSource& source) {
    const std::size_t contexts = source.num_contexts();
    const int v = source.vocab;

    // Stationary distribution of the context chain: context (t1..tm) moves to
    // (t2..tm, t) with probability P(t | t1..tm).
    std::vector<double> pi(contexts, 1.0 / static_cast<double>(contexts));
    std::vector<double> next(contexts, 0.0);
    const std::size_t shift_mod = contexts / static_cast<std::size_t>(v) > 0
                                      ? contexts / static_cast<std::size_t>(v)
                                      : 1;
    bool converged = false;
    for (int iter = 0; iter < 100000; ++iter) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t c = 0; c < contexts; ++c) {
            if (pi[c] == 0.0) continue;
            const std::size_t base = (c % shift_mod) * static_cast<std::size_t>(v);
            for (int t = 0; t < v; ++t)
                next[base + static_cast<std::size_t>(t)] += pi[c] * source.table.at(c, t);
        }
        double diff = 0.0;
        for (std::size_t c = 0; c < contexts; ++c) diff += std::abs(next[c] - pi[c]);
        pi.swap(next);
        if (diff < 1e-12) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw NumericError("entropy_floor: stationary distribution did not converge "
                           "(non-ergodic chain?)");

    double h = 0.0;
    for (std::size_t c = 0; c < contexts; ++c) {
        if (pi[c] == 0.0) continue;
        double row = 0.0;
        for (int t = 0; t < v; ++t) {
            const double p = source.table.at(c, t);
            if (p > 0.0) row -= p * std::log(p);
        }
        h += pi[c] * row;
    }
    return h;
}

// ----------------------------- MarkovStream -----------------------------

MarkovStream::MarkovStream(const MarkovSource& source, std::uint64_t stream_seed)
    : source_(&source), rng_(stream_seed) {
    context_.resize(static_cast<std::size_t>(source.order));
    for (auto& t : context_) t = static_cast<Token>(rng_.next_below(source.vocab));
    context_index_ = 0;
    for (Token t : context_)
        context_index_ = context_index_ * static_cast<std::size_t>(source_->vocab) +
                         static_cast<std::size_t>(t);
}

Token MarkovStream::next_token() {
    const Token t = static_cast<Token>(
        rng_.next_categorical(source_->table.row(context_index_), source_->vocab));
    // Slide the context window.
    context_.erase(context_.begin());
    context_.push_back(t);
    const std::size_t contexts = source_->num_contexts();
    context_index_ = (context_index_ * static_cast<std::size_t>(source_->vocab) +
                      static_cast<std::size_t>(t)) %
                     contexts;
    ++drawn_;
    return t;
}

TokenBatch MarkovStream::next_batch(std::size_t batch, int k) {
    if (batch == 0 || k < 1) throw InputError("next_batch: batch and k must be positive");
    if (k < source_->order && !warned_short_context_) {
        std::fprintf(stderr,
                     "warning: context k=%d is shorter than the chain order %d; "
                     "the model cannot see the full generating context\n",
                     k, source_->order);
        warned_short_context_ = true;
    }
    TokenBatch out;
    out.batch = batch;
    out.k = k;
    out.inputs.resize(batch * static_cast<std::size_t>(k));
    out.targets.resize(batch);
    for (std::size_t e = 0; e < batch; ++e) {
        for (int i = 0; i < k; ++i)
            out.inputs[e * static_cast<std::size_t>(k) + static_cast<std::size_t>(i)] =
                next_token();
        out.targets[e] = next_token();
    }
    out.token_count = drawn_;
    return out;
}

MarkovStream::State MarkovStream::state() const {
    State st;
    st.rng = rng_.state();
    st.context = context_;
    st.tokens_drawn = drawn_;
    return st;
}

void MarkovStream::restore(const State& st) {
    rng_.restore(st.rng);
    context_ = st.context;
    drawn_ = st.tokens_drawn;
    context_index_ = 0;
    for (Token t : context_)
        context_index_ = context_index_ * static_cast<std::size_t>(source_->vocab) +
                         static_cast<std::size_t>(t);
}

} // namespace trajlab
