#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace verblab {

// Row-major float matrix. Kept deliberately plain: value semantics, contiguous storage.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Mat() = default;
    Mat(int r, int c, float fill = 0.0f) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    float * row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const float * row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
    std::span<float> row_span(int r) { return {row(r), static_cast<std::size_t>(cols)}; }
    std::span<const float> row_span(int r) const { return {row(r), static_cast<std::size_t>(cols)}; }
    float & at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    void zero();
};

namespace kernels {

// All kernels process each output row with the same instruction sequence, so a row's result never
// depends on how many other rows are in the batch. Causal prefix invariance relies on this.

// y[m x n] = x[m x k] * w[k x n] (+ bias[n] if non-null)
void matmul(const float * x, int m, int k, const float * w, int n, const float * bias, float * y);
// y[m x n] += x[m x k] * w[k x n]
void matmul_acc(const float * x, int m, int k, const float * w, int n, float * y);
// dw[k x n] += x[m x k]^T * dy[m x n]
void matmul_tn_acc(const float * x, int m, int k, const float * dy, int n, float * dw);
// out[n x k] = w[k x n]^T
void transpose(const float * w, int k, int n, float * out);
// db[n] += column sums of dy[m x n]
void colsum_acc(const float * dy, int m, int n, float * db);

float gelu(float x);
float gelu_grad(float x);

} // namespace kernels
} // namespace verblab
