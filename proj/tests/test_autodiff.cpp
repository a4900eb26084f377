#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <random>

#include "amt/nn.hpp"

using namespace amt;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t n, std::size_t d, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Matrix m(n, d);
    for (auto& v : m.data) v = g(rng);
    return m;
}

/// Central finite differences of a scalar loss with respect to a flat
/// buffer, compared against the analytic gradient.
double max_rel_error(std::vector<double>& values, const std::vector<double>& analytic,
                     const std::function<double()>& loss, double h = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        const double up = loss();
        values[i] = saved - h;
        const double down = loss();
        values[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
        worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
    return worst;
}

/// Scalar projection of a matrix output so gradients through layers can be
/// finite-difference checked: loss = sum(w .* y).
double weighted_sum(const Matrix& y, const Matrix& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.data[i] * w.data[i];
    return s;
}

}  // namespace

TEST_CASE("linear: identity weights pass input through") {
    std::mt19937_64 rng(1);
    Linear lin(2, 2, rng);
    std::fill(lin.W.value.begin(), lin.W.value.end(), 0.0);
    lin.W.value[0] = 1.0;
    lin.W.value[3] = 1.0;
    std::fill(lin.b.value.begin(), lin.b.value.end(), 0.0);
    Matrix x = random_matrix(rng, 3, 2);
    Matrix y = lin.forward(x);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(y.data[i] == Catch::Approx(x.data[i]));
}

TEST_CASE("linear: 2x2 hand example") {
    std::mt19937_64 rng(1);
    Linear lin(2, 2, rng);
    lin.W.value = {1, 0, 0, 1};
    lin.b.value = {1, 1};
    Matrix x(2, 2);
    x.data = {1, 2, 3, 4};
    Matrix y = lin.forward(x);
    CHECK(y.data == std::vector<double>{2, 3, 4, 5});
}

TEST_CASE("linear: gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed * 7 + 1);
        Linear lin(4, 2, rng);
        Matrix x = random_matrix(rng, 3, 4);
        Matrix w = random_matrix(rng, 3, 2);

        auto loss = [&]() { return weighted_sum(lin.forward(x), w); };
        loss();  // populate cache
        lin.W.zero_grad();
        lin.b.zero_grad();
        Matrix dx = lin.backward(w);

        CHECK(max_rel_error(lin.W.value, lin.W.grad, loss) < 1e-6);
        CHECK(max_rel_error(lin.b.value, lin.b.grad, loss) < 1e-6);
        std::vector<double> dx_flat(dx.data);
        CHECK(max_rel_error(x.data, dx_flat, loss) < 1e-6);
    }
}

TEST_CASE("batchnorm: standardized batch passes through with unit gamma") {
    BatchNorm bn(1);
    Matrix x(4, 1);
    x.data = {-1.3416407864998738, -0.4472135954999579, 0.4472135954999579, 1.3416407864998738};
    Matrix y = bn.forward(x, Mode::train);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(y.data[i] == Catch::Approx(x.data[i]).margin(1e-4));
}

TEST_CASE("batchnorm: zero gamma broadcasts beta") {
    BatchNorm bn(2);
    std::fill(bn.gamma.value.begin(), bn.gamma.value.end(), 0.0);
    bn.beta.value = {0.5, -2.0};
    std::mt19937_64 rng(9);
    Matrix x = random_matrix(rng, 5, 2);
    Matrix y = bn.forward(x, Mode::train);
    for (std::size_t i = 0; i < y.rows; ++i) {
        CHECK(y(i, 0) == 0.5);
        CHECK(y(i, 1) == -2.0);
    }
}

TEST_CASE("batchnorm: train mode rejects batch of 1, eval mode accepts it") {
    BatchNorm bn(2);
    Matrix x(1, 2, 0.3);
    CHECK_THROWS_AS(bn.forward(x, Mode::train), NnError);
    CHECK_NOTHROW(bn.forward(x, Mode::eval));
}

TEST_CASE("batchnorm: gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed * 13 + 5);
        BatchNorm bn(3);
        bn.gamma.value = {1.2, 0.7, -0.4};
        bn.beta.value = {0.1, -0.2, 0.3};
        Matrix x = random_matrix(rng, 6, 3);
        Matrix w = random_matrix(rng, 6, 3);

        auto loss = [&]() {
            BatchNorm fresh = bn;  // keep running stats out of the picture
            return weighted_sum(fresh.forward(x, Mode::train), w);
        };
        BatchNorm work = bn;
        work.forward(x, Mode::train);
        Matrix dx = work.backward(w);

        CHECK(max_rel_error(bn.gamma.value, work.gamma.grad, loss) < 1e-5);
        CHECK(max_rel_error(bn.beta.value, work.beta.grad, loss) < 1e-5);
        std::vector<double> dx_flat(dx.data);
        CHECK(max_rel_error(x.data, dx_flat, loss) < 1e-5);
    }
}

TEST_CASE("softmax_xent: confident correct logit drives loss to zero") {
    Matrix logits(1, 3);
    logits.data = {40.0, 0.0, 0.0};
    CHECK(softmax_xent(logits, {0}).loss < 1e-15);
}

TEST_CASE("softmax_xent: uniform logits give ln K") {
    Matrix logits(5, 4, 0.0);
    CHECK(softmax_xent(logits, {0, 1, 2, 3, 0}).loss == Catch::Approx(std::log(4.0)).margin(1e-12));
}

TEST_CASE("softmax_xent: label out of range") {
    Matrix logits(1, 3, 0.0);
    CHECK_THROWS_AS(softmax_xent(logits, {3}), NnError);
}

TEST_CASE("softmax_xent: gradient matches finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed + 31);
        Matrix logits = random_matrix(rng, 4, 5);
        std::vector<int> labels{1, 0, 4, 2};
        auto res = softmax_xent(logits, labels);
        auto loss = [&]() { return softmax_xent(logits, labels).loss; };
        CHECK(max_rel_error(logits.data, res.dlogits.data, loss) < 1e-6);
    }
}

TEST_CASE("sigmoid_bce: zero logit costs ln 2 per class") {
    Matrix logits(1, 3, 0.0);
    Matrix t0(1, 3, 0.0);
    Matrix t1(1, 3, 1.0);
    CHECK(sigmoid_bce(logits, t0).loss == Catch::Approx(3.0 * std::log(2.0)).margin(1e-12));
    CHECK(sigmoid_bce(logits, t1).loss == Catch::Approx(3.0 * std::log(2.0)).margin(1e-12));
}

TEST_CASE("sigmoid_bce: saturated correct logit") {
    Matrix logits(1, 1, 40.0);
    Matrix target(1, 1, 1.0);
    CHECK(sigmoid_bce(logits, target).loss < 1e-15);
}

TEST_CASE("sigmoid_bce: non-binary targets rejected") {
    Matrix logits(1, 1, 0.0);
    Matrix target(1, 1, 0.5);
    CHECK_THROWS_AS(sigmoid_bce(logits, target), NnError);
}

TEST_CASE("sigmoid_bce: gradient matches finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed + 77);
        Matrix logits = random_matrix(rng, 3, 4);
        Matrix targets(3, 4);
        std::uniform_int_distribution<int> coin(0, 1);
        for (auto& v : targets.data) v = coin(rng);
        auto res = sigmoid_bce(logits, targets);
        auto loss = [&]() { return sigmoid_bce(logits, targets).loss; };
        CHECK(max_rel_error(logits.data, res.dlogits.data, loss) < 1e-6);
    }
}

TEST_CASE("grad_reverse: scale 0 blocks, scale 1 negates") {
    std::mt19937_64 rng(2);
    Matrix g = random_matrix(rng, 2, 3);

    GradReversal blocked(0.0);
    Matrix b = blocked.backward(g);
    for (double v : b.data) CHECK(v == 0.0);

    GradReversal full(1.0);
    Matrix n = full.backward(g);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(n.data[i] == -g.data[i]);

    CHECK_THROWS_AS(GradReversal(-0.5), NnError);
}

TEST_CASE("grad_reverse: forward is identity") {
    std::mt19937_64 rng(3);
    Matrix x = random_matrix(rng, 4, 2);
    GradReversal grl(0.7);
    Matrix y = grl.forward(x);
    CHECK(y.data == x.data);
}

TEST_CASE("grad_reverse composed with linear equals negated scaled gradient") {
    std::mt19937_64 rng(8);
    Linear lin(3, 2, rng);
    Matrix x = random_matrix(rng, 4, 3);
    Matrix w = random_matrix(rng, 4, 2);
    const double scale = 0.6;

    lin.forward(x);
    lin.W.zero_grad();
    lin.b.zero_grad();
    Matrix plain = lin.backward(w);

    GradReversal grl(scale);
    Matrix reversed = grl.backward(plain);
    for (std::size_t i = 0; i < plain.size(); ++i)
        CHECK(reversed.data[i] == Catch::Approx(-scale * plain.data[i]).margin(1e-15));
}

TEST_CASE("grad_reverse: double reversal scales by the product") {
    std::mt19937_64 rng(10);
    Matrix g = random_matrix(rng, 3, 3);
    GradReversal a(0.5), b(4.0);
    Matrix twice = b.backward(a.backward(g));
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(twice.data[i] == Catch::Approx(0.5 * 4.0 * g.data[i]).margin(1e-15));
}

TEST_CASE("forward determinism: same seed gives bit-identical outputs") {
    auto rng1 = make_rng(42, "layer");
    auto rng2 = make_rng(42, "layer");
    Linear a(8, 4, rng1), b(8, 4, rng2);
    REQUIRE(a.W.value == b.W.value);
    std::mt19937_64 xr(0);
    Matrix x = random_matrix(xr, 5, 8);
    CHECK(a.forward(x).data == b.forward(x).data);
}
