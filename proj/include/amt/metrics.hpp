#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "amt/matrix.hpp"

namespace amt {

struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline Matrix pairwise_distances(const Matrix& x) {
    Matrix d(x.rows, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = i + 1; j < x.rows; ++j) {
            double s = 0.0;
            const double* ri = x.row(i);
            const double* rj = x.row(j);
            for (std::size_t k = 0; k < x.cols; ++k) {
                const double diff = ri[k] - rj[k];
                s += diff * diff;
            }
            const double dist = std::sqrt(s);
            d(i, j) = dist;
            d(j, i) = dist;
        }
    }
    return d;
}

/// Double-center in place: subtract row and column means, add the grand
/// mean. Compensated sums keep the result stable to reduction order.
inline void double_center(Matrix& d) {
    const std::size_t n = d.rows;
    std::vector<double> row_mean(n, 0.0), col_mean(n, 0.0);
    KahanSum grand;
    for (std::size_t i = 0; i < n; ++i) {
        KahanSum rs;
        for (std::size_t j = 0; j < n; ++j) rs.add(d(i, j));
        row_mean[i] = rs.value() / static_cast<double>(n);
        grand.add(rs.value());
    }
    for (std::size_t j = 0; j < n; ++j) {
        KahanSum cs;
        for (std::size_t i = 0; i < n; ++i) cs.add(d(i, j));
        col_mean[j] = cs.value() / static_cast<double>(n);
    }
    const double g = grand.value() / static_cast<double>(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            d(i, j) += g - row_mean[i] - col_mean[j];
}

inline double mean_elementwise_product(const Matrix& a, const Matrix& b) {
    KahanSum s;
    for (std::size_t i = 0; i < a.size(); ++i) s.add(a.data[i] * b.data[i]);
    return s.value() / static_cast<double>(a.size());
}

}  // namespace detail

/// Squared distance correlation (biased V-statistic form of Szekely's
/// estimator): double-centered distance matrices A, B; dCov2 = mean(A*B);
/// dcorr2 = dCov2 / sqrt(dVarX * dVarY), clamped to [0,1]. Constant inputs
/// have zero distance variance and return 0 by convention.
inline double dcorr2(const Matrix& x, const Matrix& y) {
    if (x.rows != y.rows)
        throw MetricError("dcorr2: sample counts disagree");
    if (x.rows < 2)
        throw MetricError("dcorr2: need at least 2 samples");
    if (!all_finite(x) || !all_finite(y))
        throw MetricError("dcorr2: non-finite input");

    Matrix a = detail::pairwise_distances(x);
    Matrix b = detail::pairwise_distances(y);
    detail::double_center(a);
    detail::double_center(b);

    const double dvar_x = detail::mean_elementwise_product(a, a);
    const double dvar_y = detail::mean_elementwise_product(b, b);
    if (dvar_x <= 0.0 || dvar_y <= 0.0) return 0.0;

    const double dcov = detail::mean_elementwise_product(a, b);
    const double r = dcov / std::sqrt(dvar_x * dvar_y);
    return std::clamp(r, 0.0, 1.0);
}

/// n x k one-hot matrix from integer class labels.
inline Matrix one_hot(const std::vector<int>& labels, std::size_t classes) {
    Matrix m(labels.size(), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw MetricError("one_hot: label out of range");
        m(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return m;
}

/// Fraction of rows whose argmax matches the label; argmax ties go to the
/// lowest index.
inline double top1_accuracy(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows != labels.size())
        throw MetricError("top1_accuracy: shape mismatch");
    if (logits.cols < 1)
        throw MetricError("top1_accuracy: need at least one class");
    if (logits.rows == 0)
        throw MetricError("top1_accuracy: empty batch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* r = logits.row(i);
        std::size_t arg = 0;
        for (std::size_t k = 1; k < logits.cols; ++k)
            if (r[k] > r[arg]) arg = k;
        if (static_cast<int>(arg) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows);
}

}  // namespace amt
