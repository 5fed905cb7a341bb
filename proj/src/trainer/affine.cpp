#include "verblab/trainer.hpp"
#include "verblab/common.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace verblab {

std::vector<float> AffineMap::apply(std::span<const float> x) const {
    if (static_cast<int>(x.size()) != src_dim()) throw ValidationError("affine map input width mismatch");
    std::vector<float> y(bias);
    for (int r = 0; r < matrix.rows; ++r) {
        const float * w = matrix.row(r);
        float acc = 0.0f;
        for (int c = 0; c < matrix.cols; ++c) acc += w[c] * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] += acc;
    }
    return y;
}

AffineMap AffineMap::identity(int d) {
    AffineMap m;
    m.matrix = Mat(d, d);
    for (int i = 0; i < d; ++i) m.matrix.at(i, i) = 1.0f;
    m.bias.assign(static_cast<std::size_t>(d), 0.0f);
    return m;
}

AffineMap fit_affine(std::span<const std::pair<ActivationVector, ActivationVector>> pairs) {
    if (pairs.empty()) throw ValidationError("fit_affine: no pairs");
    const int ds = static_cast<int>(pairs.front().first.values.size());
    const int dd = static_cast<int>(pairs.front().second.values.size());
    if (ds == 0 || dd == 0) throw ValidationError("fit_affine: empty vectors");
    const int n = static_cast<int>(pairs.size());
    if (n < ds + 1) {
        throw ValidationError("fit_affine: need at least " + std::to_string(ds + 1) + " pairs, got " + std::to_string(n));
    }

    Eigen::MatrixXd X(n, ds + 1), Y(n, dd);
    for (int i = 0; i < n; ++i) {
        const auto & [s, d] = pairs[static_cast<std::size_t>(i)];
        if (static_cast<int>(s.values.size()) != ds || static_cast<int>(d.values.size()) != dd) {
            throw ValidationError("fit_affine: inconsistent vector widths");
        }
        for (int j = 0; j < ds; ++j) X(i, j) = s.values[static_cast<std::size_t>(j)];
        X(i, ds) = 1.0;
        for (int j = 0; j < dd; ++j) Y(i, j) = d.values[static_cast<std::size_t>(j)];
    }
    if (!X.allFinite() || !Y.allFinite()) throw ValidationError("fit_affine: non-finite activations");

    Eigen::MatrixXd G = X.transpose() * X;
    G.diagonal().array() += kAffineRidge;
    const Eigen::MatrixXd B = G.ldlt().solve(X.transpose() * Y);  // (ds+1) x dd
    const Eigen::MatrixXd R = X * B - Y;

    AffineMap m;
    m.matrix = Mat(dd, ds);
    m.bias.resize(static_cast<std::size_t>(dd));
    for (int r = 0; r < dd; ++r) {
        for (int c = 0; c < ds; ++c) m.matrix.at(r, c) = static_cast<float>(B(c, r));
        m.bias[static_cast<std::size_t>(r)] = static_cast<float>(B(ds, r));
    }
    m.residual_mse = R.squaredNorm() / static_cast<double>(R.size());
    for (float v : m.matrix.data) {
        if (!std::isfinite(v)) throw RuntimeFailure("fit_affine: solve produced non-finite weights");
    }
    return m;
}

} // namespace verblab
