#pragma once

#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

#include "trajlab/errors.hpp"

namespace trajlab {

// ----------------------------- Matrix -----------------------------

// Dense row-major matrix of doubles. Vectors are represented as rows=n, cols=1
// or plain std::vector<double> depending on context.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    bool all_finite() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ----------------------------- RngStream -----------------------------

// Deterministic random stream: xoshiro256++ seeded through splitmix64.
// The algorithm is fixed so that a given seed yields the same sequence on
// every platform; all toolkit randomness flows through this type.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform in [0, 1) with 53 random bits.
    double next_double();

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n);

    // Standard normal via Box-Muller with a cached spare.
    double next_gaussian();

    // Gamma(shape, 1) via Marsaglia-Tsang; shape > 0.
    double next_gamma(double shape);

    // Index sampled from a probability vector (assumed to sum to ~1).
    std::size_t next_categorical(const double* probs, std::size_t n);

    std::uint64_t seed() const { return seed_; }

    // State capture for checkpointing.
    struct State {
        std::uint64_t s[4];
        bool has_spare;
        double spare;
    };
    State state() const;
    void restore(const State& st);

private:
    std::uint64_t seed_ = 0;
    std::uint64_t s_[4] = {0, 0, 0, 0};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ----------------------------- Linear algebra -----------------------------

struct LsqSolution {
    std::vector<double> x;
    double residual_norm = 0.0;
};

// Minimizes ||Ax - b|| via Householder QR with column pivoting. Requires
// m >= n; a pivot below 1e-10 times the largest marks the system rank
// deficient and raises DegenerateFitError naming the dependent column.
LsqSolution solve_least_squares(const Matrix& a, const std::vector<double>& b);

struct EigenSym2 {
    double lambda1 = 0.0; // larger eigenvalue
    double lambda2 = 0.0;
    double v1[2] = {0.0, 0.0}; // unit eigenvector of lambda1, first nonzero component positive
    double v2[2] = {0.0, 0.0};
};

// Closed-form eigen-decomposition of a symmetric 2x2 matrix. The input is
// symmetrized first; eigenvalues come back sorted descending.
EigenSym2 eigen_sym2(const Matrix& h);

// Bookkeeping hash used for config identity and checkpoint integrity
// (FNV-1a, 64-bit).
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);
std::string hash_hex(std::uint64_t h);

} // namespace trajlab
