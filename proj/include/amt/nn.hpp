#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "amt/matrix.hpp"

namespace amt {

struct NnError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Mode { train, eval };

/// splitmix64; used to derive independent per-component RNG streams from
/// one user seed, so adding or removing a model component never shifts
/// another component's initialization.
inline std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0xbf58476d1ce4e5b9ULL;
        h ^= h >> 27;
    }
    h += 0x94d049bb133111ebULL;
    h ^= h >> 31;
    return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed, const std::string& tag) {
    return std::mt19937_64(mix_seed(seed, tag));
}

/// A trainable parameter and its gradient accumulator.
struct Param {
    std::vector<double> value;
    std::vector<double> grad;

    explicit Param(std::size_t n = 0) : value(n, 0.0), grad(n, 0.0) {}
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using ParamVisitor = std::function<void(Param&)>;

struct Linear {
    std::size_t in = 0, out = 0;
    Param W;  // in x out, row-major
    Param b;  // out
    Matrix x_cache;

    Linear() = default;
    Linear(std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng)
        : in(in_dim), out(out_dim), W(in_dim * out_dim), b(out_dim) {
        // He-style fan-in scaling.
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in_dim)));
        for (auto& w : W.value) w = dist(rng);
    }

    Matrix forward(const Matrix& x, Mode mode = Mode::train) {
        if (x.cols != in) throw NnError("Linear: input width mismatch");
        if (mode == Mode::train) x_cache = x;
        Matrix y(x.rows, out);
        for (std::size_t i = 0; i < x.rows; ++i) {
            const double* xr = x.row(i);
            double* yr = y.row(i);
            for (std::size_t j = 0; j < out; ++j) yr[j] = b.value[j];
            for (std::size_t k = 0; k < in; ++k) {
                const double xv = xr[k];
                if (xv == 0.0) continue;
                const double* wr = W.value.data() + k * out;
                for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wr[j];
            }
        }
        return y;
    }

    Matrix backward(const Matrix& dy) {
        if (dy.cols != out || dy.rows != x_cache.rows)
            throw NnError("Linear: gradient shape mismatch");
        // dW += x^T dy ; db += column sums ; dx = dy W^T
        for (std::size_t i = 0; i < x_cache.rows; ++i) {
            const double* xr = x_cache.row(i);
            const double* dyr = dy.row(i);
            for (std::size_t k = 0; k < in; ++k) {
                const double xv = xr[k];
                if (xv == 0.0) continue;
                double* wg = W.grad.data() + k * out;
                for (std::size_t j = 0; j < out; ++j) wg[j] += xv * dyr[j];
            }
            for (std::size_t j = 0; j < out; ++j) b.grad[j] += dyr[j];
        }
        Matrix dx(x_cache.rows, in);
        for (std::size_t i = 0; i < dx.rows; ++i) {
            const double* dyr = dy.row(i);
            double* dxr = dx.row(i);
            for (std::size_t k = 0; k < in; ++k) {
                const double* wr = W.value.data() + k * out;
                double s = 0.0;
                for (std::size_t j = 0; j < out; ++j) s += dyr[j] * wr[j];
                dxr[k] = s;
            }
        }
        return dx;
    }

    void visit_params(const ParamVisitor& fn) {
        fn(W);
        fn(b);
    }
};

struct BatchNorm {
    std::size_t dim = 0;
    Param gamma, beta;
    std::vector<double> running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    // train-mode caches
    Matrix xhat_cache;
    std::vector<double> invstd_cache;

    BatchNorm() = default;
    explicit BatchNorm(std::size_t d) : dim(d), gamma(d), beta(d),
                                        running_mean(d, 0.0), running_var(d, 1.0) {
        std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
    }

    Matrix forward(const Matrix& x, Mode mode) {
        if (x.cols != dim) throw NnError("BatchNorm: input width mismatch");
        const std::size_t n = x.rows;
        Matrix y(n, dim);
        if (mode == Mode::train) {
            if (n < 2) throw NnError("BatchNorm: train mode needs batch >= 2");
            xhat_cache = Matrix(n, dim);
            invstd_cache.assign(dim, 0.0);
            for (std::size_t j = 0; j < dim; ++j) {
                double mean = 0.0;
                for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
                mean /= static_cast<double>(n);
                double var = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = x(i, j) - mean;
                    var += d * d;
                }
                var /= static_cast<double>(n);  // biased, as in the forward pass
                const double invstd = 1.0 / std::sqrt(var + eps);
                invstd_cache[j] = invstd;
                for (std::size_t i = 0; i < n; ++i) {
                    const double xh = (x(i, j) - mean) * invstd;
                    xhat_cache(i, j) = xh;
                    y(i, j) = gamma.value[j] * xh + beta.value[j];
                }
                running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean;
                running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var;
            }
        } else {
            for (std::size_t j = 0; j < dim; ++j) {
                const double invstd = 1.0 / std::sqrt(running_var[j] + eps);
                for (std::size_t i = 0; i < n; ++i)
                    y(i, j) = gamma.value[j] * (x(i, j) - running_mean[j]) * invstd +
                              beta.value[j];
            }
        }
        return y;
    }

    Matrix backward(const Matrix& dy) {
        const std::size_t n = dy.rows;
        if (dy.cols != dim || xhat_cache.rows != n)
            throw NnError("BatchNorm: gradient shape mismatch");
        Matrix dx(n, dim);
        for (std::size_t j = 0; j < dim; ++j) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                sum_dy += dy(i, j);
                sum_dy_xhat += dy(i, j) * xhat_cache(i, j);
            }
            gamma.grad[j] += sum_dy_xhat;
            beta.grad[j] += sum_dy;
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                // dxhat = dy * gamma; dx folds in the mean/variance paths.
                dx(i, j) = gamma.value[j] * invstd_cache[j] *
                           (dy(i, j) - inv_n * sum_dy -
                            xhat_cache(i, j) * inv_n * sum_dy_xhat);
            }
        }
        return dx;
    }

    void visit_params(const ParamVisitor& fn) {
        fn(gamma);
        fn(beta);
    }
};

struct Relu {
    Matrix mask;

    Matrix forward(const Matrix& x, Mode mode = Mode::train) {
        Matrix y(x.rows, x.cols);
        if (mode == Mode::train) mask = Matrix(x.rows, x.cols);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const bool on = x.data[i] > 0.0;
            y.data[i] = on ? x.data[i] : 0.0;
            if (mode == Mode::train) mask.data[i] = on ? 1.0 : 0.0;
        }
        return y;
    }

    Matrix backward(const Matrix& dy) {
        if (!dy.same_shape(mask)) throw NnError("Relu: gradient shape mismatch");
        Matrix dx(dy.rows, dy.cols);
        for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] = dy.data[i] * mask.data[i];
        return dx;
    }
};

/// Identity forward; backward multiplies the incoming gradient by -scale.
struct GradReversal {
    double scale = 1.0;

    explicit GradReversal(double s = 1.0) : scale(s) {
        if (s < 0.0) throw NnError("GradReversal: scale must be >= 0");
    }

    Matrix forward(const Matrix& x, Mode = Mode::train) const { return x; }

    Matrix backward(const Matrix& dy) const {
        Matrix dx(dy.rows, dy.cols);
        for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] = -scale * dy.data[i];
        return dx;
    }
};

struct LossResult {
    double loss = 0.0;
    Matrix dlogits;
};

/// Mean over the batch of -log softmax(logits)[label], log-sum-exp
/// stabilized. Gradient is (softmax - onehot) / n.
inline LossResult softmax_xent(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows != labels.size())
        throw NnError("softmax_xent: batch size mismatch");
    if (logits.cols < 2)
        throw NnError("softmax_xent: need at least 2 classes");
    const std::size_t n = logits.rows, k = logits.cols;
    LossResult res;
    res.dlogits = Matrix(n, k);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw NnError("softmax_xent: label out of range");
        const double* r = logits.row(i);
        double mx = r[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, r[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(r[j] - mx);
        const double logz = std::log(z) + mx;
        loss += logz - r[static_cast<std::size_t>(labels[i])];
        double* g = res.dlogits.row(i);
        for (std::size_t j = 0; j < k; ++j)
            g[j] = std::exp(r[j] - logz) / static_cast<double>(n);
        g[static_cast<std::size_t>(labels[i])] -= 1.0 / static_cast<double>(n);
    }
    res.loss = loss / static_cast<double>(n);
    return res;
}

/// Multi-label BCE: sum over classes, mean over batch, computed from
/// logits without forming sigmoid explicitly near saturation.
inline LossResult sigmoid_bce(const Matrix& logits, const Matrix& targets) {
    if (!logits.same_shape(targets))
        throw NnError("sigmoid_bce: shape mismatch");
    const std::size_t n = logits.rows;
    if (n == 0) throw NnError("sigmoid_bce: empty batch");
    LossResult res;
    res.dlogits = Matrix(logits.rows, logits.cols);
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double y = targets.data[i];
        if (y != 0.0 && y != 1.0)
            throw NnError("sigmoid_bce: targets must be binary");
        const double z = logits.data[i];
        // -[y log p + (1-y) log(1-p)] = max(z,0) - y z + log(1 + e^{-|z|})
        loss += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
        const double p = 1.0 / (1.0 + std::exp(-z));
        res.dlogits.data[i] = (p - y) / static_cast<double>(n);
    }
    res.loss = loss / static_cast<double>(n);
    return res;
}

struct Sgd {
    double lr = 1e-2;

    void step(Param& p) {
        for (std::size_t i = 0; i < p.value.size(); ++i)
            p.value[i] -= lr * p.grad[i];
    }
};

struct Adam {
    double lr = 1e-2;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long t = 0;
    std::vector<std::vector<double>> m, v;  // one slot per registered param
    std::size_t cursor = 0;

    void begin_step() {
        ++t;
        cursor = 0;
    }

    void step(Param& p) {
        if (cursor >= m.size()) {
            m.emplace_back(p.value.size(), 0.0);
            v.emplace_back(p.value.size(), 0.0);
        }
        auto& mi = m[cursor];
        auto& vi = v[cursor];
        ++cursor;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            mi[i] = beta1 * mi[i] + (1.0 - beta1) * p.grad[i];
            vi[i] = beta2 * vi[i] + (1.0 - beta2) * p.grad[i] * p.grad[i];
            p.value[i] -= lr * (mi[i] / bc1) / (std::sqrt(vi[i] / bc2) + eps);
        }
    }
};

}  // namespace amt
