#include "trajlab/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace trajlab {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
        throw ContractError("Matrix: data length does not match rows*cols");
}

bool Matrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

// ----------------------------- RngStream -----------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97f4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace

RngStream::RngStream(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
}

std::uint64_t RngStream::next_u64() {
    // xoshiro256++ step.
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double RngStream::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
    if (n == 0) throw ContractError("next_below: n must be positive");
    // Rejection sampling for an unbiased result.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

double RngStream::next_gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1, u2;
    do {
        u1 = next_double();
    } while (u1 <= 0.0);
    u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double RngStream::next_gamma(double shape) {
    if (!(shape > 0.0)) throw ContractError("next_gamma: shape must be positive");
    if (shape < 1.0) {
        // Boost to shape+1 and scale back.
        double u;
        do {
            u = next_double();
        } while (u <= 0.0);
        return next_gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = next_gaussian();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = next_double();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::size_t RngStream::next_categorical(const double* probs, std::size_t n) {
    const double u = next_double();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return n - 1;
}

RngStream::State RngStream::state() const {
    State st;
    for (int i = 0; i < 4; ++i) st.s[i] = s_[i];
    st.has_spare = has_spare_;
    st.spare = spare_;
    return st;
}

void RngStream::restore(const State& st) {
    for (int i = 0; i < 4; ++i) s_[i] = st.s[i];
    has_spare_ = st.has_spare;
    spare_ = st.spare;
}

// ----------------------------- Least squares -----------------------------

LsqSolution solve_least_squares(const Matrix& a, const std::vector<double>& b) {
    const std::size_t m = a.rows(), n = a.cols();
    if (m < n) throw ContractError("solve_least_squares: need at least as many rows as columns");
    if (b.size() != m) throw ContractError("solve_least_squares: b length does not match rows");
    if (!a.all_finite()) throw NumericError("solve_least_squares: non-finite entries in A");

    // Householder QR with column pivoting; small n, so working copies are cheap.
    Matrix r = a;
    std::vector<double> qtb = b;
    std::vector<std::size_t> perm(n);
    for (std::size_t j = 0; j < n; ++j) perm[j] = j;

    std::vector<double> colnorm2(n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < m; ++i) colnorm2[j] += r.at(i, j) * r.at(i, j);
    const double max_initial =
        std::sqrt(*std::max_element(colnorm2.begin(), colnorm2.end()));
    const double pivot_floor = 1e-10 * std::max(max_initial, 1e-300);

    std::vector<double> diag(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        // Pivot on the column with the largest remaining norm.
        std::size_t best = k;
        double best_norm2 = 0.0;
        for (std::size_t j = k; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = k; i < m; ++i) s += r.at(i, j) * r.at(i, j);
            if (j == k || s > best_norm2) {
                best = j;
                best_norm2 = s;
            }
        }
        if (best != k) {
            for (std::size_t i = 0; i < m; ++i) std::swap(r.at(i, k), r.at(i, best));
            std::swap(perm[k], perm[best]);
        }

        const double alpha = std::sqrt(best_norm2);
        if (alpha < pivot_floor)
            throw DegenerateFitError(
                "rank-deficient least-squares system: column " + std::to_string(perm[k]) +
                " is numerically dependent on the preceding columns");

        // Householder vector v living in rows k..m-1 of column k.
        std::vector<double> v(m - k);
        for (std::size_t i = k; i < m; ++i) v[i - k] = r.at(i, k);
        const double sign = v[0] >= 0.0 ? 1.0 : -1.0;
        v[0] += sign * alpha;
        double vnorm2 = 0.0;
        for (double vi : v) vnorm2 += vi * vi;

        auto apply = [&](auto&& get, auto&& set) {
            double dot = 0.0;
            for (std::size_t i = k; i < m; ++i) dot += v[i - k] * get(i);
            const double f = 2.0 * dot / vnorm2;
            for (std::size_t i = k; i < m; ++i) set(i, get(i) - f * v[i - k]);
        };
        for (std::size_t j = k; j < n; ++j)
            apply([&](std::size_t i) { return r.at(i, j); },
                  [&](std::size_t i, double val) { r.at(i, j) = val; });
        apply([&](std::size_t i) { return qtb[i]; },
              [&](std::size_t i, double val) { qtb[i] = val; });
        diag[k] = r.at(k, k);
    }

    // Back substitution on the permuted solution.
    std::vector<double> y(n, 0.0);
    for (std::size_t kk = n; kk-- > 0;) {
        double s = qtb[kk];
        for (std::size_t j = kk + 1; j < n; ++j) s -= r.at(kk, j) * y[j];
        y[kk] = s / diag[kk];
    }
    LsqSolution sol;
    sol.x.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) sol.x[perm[j]] = y[j];

    double res2 = 0.0;
    for (std::size_t i = n; i < m; ++i) res2 += qtb[i] * qtb[i];
    sol.residual_norm = std::sqrt(res2);
    return sol;
}

// ----------------------------- eigen_sym2 -----------------------------

EigenSym2 eigen_sym2(const Matrix& h) {
    if (h.rows() != 2 || h.cols() != 2) throw ContractError("eigen_sym2: matrix must be 2x2");
    if (std::abs(h.at(0, 1) - h.at(1, 0)) >
        1e-12 * std::max({1.0, std::abs(h.at(0, 1)), std::abs(h.at(1, 0))}))
        throw ContractError("eigen_sym2: matrix is not symmetric within tolerance");

    const double a = h.at(0, 0);
    const double b = 0.5 * (h.at(0, 1) + h.at(1, 0));
    const double c = h.at(1, 1);

    const double mean = 0.5 * (a + c);
    const double half_gap = 0.5 * (a - c);
    const double radius = std::hypot(half_gap, b);

    EigenSym2 e;
    e.lambda1 = mean + radius;
    e.lambda2 = mean - radius;

    auto fix_sign = [](double* v) {
        double first = v[0] != 0.0 ? v[0] : v[1];
        if (first < 0.0) {
            v[0] = -v[0];
            v[1] = -v[1];
        }
    };
    auto normalize = [](double* v) {
        const double n = std::hypot(v[0], v[1]);
        v[0] /= n;
        v[1] /= n;
    };

    if (radius == 0.0 || std::abs(b) < 1e-300 * radius) {
        // Already diagonal; pick axis vectors matching the sorted eigenvalues.
        if (a >= c) {
            e.v1[0] = 1.0; e.v1[1] = 0.0;
            e.v2[0] = 0.0; e.v2[1] = 1.0;
        } else {
            e.v1[0] = 0.0; e.v1[1] = 1.0;
            e.v2[0] = 1.0; e.v2[1] = 0.0;
        }
        return e;
    }

    // (H - lambda2 I) maps everything onto the lambda1 eigenspace; use its
    // better-conditioned column.
    double u[2] = {e.lambda1 - c, b};
    double w[2] = {b, e.lambda1 - a};
    if (u[0] * u[0] + u[1] * u[1] >= w[0] * w[0] + w[1] * w[1]) {
        e.v1[0] = u[0];
        e.v1[1] = u[1];
    } else {
        e.v1[0] = w[0];
        e.v1[1] = w[1];
    }
    normalize(e.v1);
    fix_sign(e.v1);
    e.v2[0] = -e.v1[1];
    e.v2[1] = e.v1[0];
    fix_sign(e.v2);
    return e;
}

// ----------------------------- hashing -----------------------------

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

} // namespace trajlab
