#include "verblab/tensor.hpp"
#include "verblab/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

namespace verblab {

void Mat::zero() { std::fill(data.begin(), data.end(), 0.0f); }

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

double standard_normal(Rng & rng) {
    // Box-Muller on our own uniforms; std::normal_distribution is implementation-defined.
    double u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

namespace kernels {

namespace {

inline void axpy(float a, const float * __restrict x, float * __restrict y, int n) {
    for (int j = 0; j < n; ++j) y[j] += a * x[j];
}

constexpr int kRows = 4;
constexpr int kLanes = 8;
constexpr int kVecs = 4;
constexpr int kCols = kLanes * kVecs;

typedef float v8 __attribute__((vector_size(32)));

inline v8 load8(const float * p) {
    v8 v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store8(float * p, v8 v) { std::memcpy(p, &v, sizeof v); }

// y[r] (+)= x[r] * w for kRows rows. Every row goes through the same instruction sequence, so a
// row's result never depends on which other rows share its tile.
inline void tile_rows(const float * __restrict x, int k, const float * __restrict w, int n, float * __restrict y,
                      int ldy) {
    int j0 = 0;
    for (; j0 + kCols <= n; j0 += kCols) {
        v8 acc[kRows][kVecs];
        for (int r = 0; r < kRows; ++r)
            for (int c = 0; c < kVecs; ++c) acc[r][c] = load8(y + static_cast<std::size_t>(r) * ldy + j0 + c * kLanes);
        for (int p = 0; p < k; ++p) {
            const float * wr = w + static_cast<std::size_t>(p) * n + j0;
            v8 wv[kVecs];
            for (int c = 0; c < kVecs; ++c) wv[c] = load8(wr + c * kLanes);
            for (int r = 0; r < kRows; ++r) {
                const float a = x[static_cast<std::size_t>(r) * k + p];
                for (int c = 0; c < kVecs; ++c) acc[r][c] += a * wv[c];
            }
        }
        for (int r = 0; r < kRows; ++r)
            for (int c = 0; c < kVecs; ++c) store8(y + static_cast<std::size_t>(r) * ldy + j0 + c * kLanes, acc[r][c]);
    }
    for (; j0 + kLanes <= n; j0 += kLanes) {
        v8 acc[kRows];
        for (int r = 0; r < kRows; ++r) acc[r] = load8(y + static_cast<std::size_t>(r) * ldy + j0);
        for (int p = 0; p < k; ++p) {
            const v8 wv = load8(w + static_cast<std::size_t>(p) * n + j0);
            for (int r = 0; r < kRows; ++r) acc[r] += x[static_cast<std::size_t>(r) * k + p] * wv;
        }
        for (int r = 0; r < kRows; ++r) store8(y + static_cast<std::size_t>(r) * ldy + j0, acc[r]);
    }
    for (int r = 0; r < kRows; ++r) {
        for (int j = j0; j < n; ++j) {
            float acc = y[static_cast<std::size_t>(r) * ldy + j];
            for (int p = 0; p < k; ++p) acc += x[static_cast<std::size_t>(r) * k + p] * w[static_cast<std::size_t>(p) * n + j];
            y[static_cast<std::size_t>(r) * ldy + j] = acc;
        }
    }
}

void rows_times_mat(const float * x, int m, int k, const float * w, int n, float * y) {
    int i = 0;
    for (; i + kRows <= m; i += kRows) {
        tile_rows(x + static_cast<std::size_t>(i) * k, k, w, n, y + static_cast<std::size_t>(i) * n, n);
    }
    if (i == m) return;
    // Remainder rows are padded into a full tile.
    std::vector<float> xp(static_cast<std::size_t>(kRows) * k, 0.0f), yp(static_cast<std::size_t>(kRows) * n, 0.0f);
    std::copy(x + static_cast<std::size_t>(i) * k, x + static_cast<std::size_t>(m) * k, xp.begin());
    std::copy(y + static_cast<std::size_t>(i) * n, y + static_cast<std::size_t>(m) * n, yp.begin());
    tile_rows(xp.data(), k, w, n, yp.data(), n);
    std::copy(yp.begin(), yp.begin() + static_cast<std::ptrdiff_t>(m - i) * n, y + static_cast<std::size_t>(i) * n);
}

} // namespace

void matmul(const float * x, int m, int k, const float * w, int n, const float * bias, float * y) {
    for (int i = 0; i < m; ++i) {
        float * yr = y + static_cast<std::size_t>(i) * n;
        if (bias) std::copy(bias, bias + n, yr);
        else std::fill(yr, yr + n, 0.0f);
    }
    rows_times_mat(x, m, k, w, n, y);
}

void matmul_acc(const float * x, int m, int k, const float * w, int n, float * y) { rows_times_mat(x, m, k, w, n, y); }

void matmul_tn_acc(const float * x, int m, int k, const float * dy, int n, float * dw) {
    // dw[p] += sum_i x[i][p] * dy[i], tiled over rows of dw.
    std::vector<float> xt(static_cast<std::size_t>(k) * m);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) xt[static_cast<std::size_t>(p) * m + i] = x[static_cast<std::size_t>(i) * k + p];
    rows_times_mat(xt.data(), k, m, dy, n, dw);
}

void transpose(const float * w, int k, int n, float * out) {
    for (int p = 0; p < k; ++p) {
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * k + p] = w[static_cast<std::size_t>(p) * n + j];
    }
}

void colsum_acc(const float * dy, int m, int n, float * db) {
    for (int i = 0; i < m; ++i) axpy(1.0f, dy + static_cast<std::size_t>(i) * n, db, n);
}

namespace {
constexpr float kGeluC = 0.7978845608028654f; // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
} // namespace

float gelu(float x) {
    const float inner = kGeluC * (x + kGeluA * x * x * x);
    return 0.5f * x * (1.0f + std::tanh(inner));
}

float gelu_grad(float x) {
    const float inner = kGeluC * (x + kGeluA * x * x * x);
    const float t = std::tanh(inner);
    const float dinner = kGeluC * (1.0f + 3.0f * kGeluA * x * x);
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * dinner;
}

} // namespace kernels
} // namespace verblab
