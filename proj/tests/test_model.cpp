#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "amt/model.hpp"

using namespace amt;

namespace {

ModelConfig toy_config(int input_dim, int primary_classes) {
    ModelConfig cfg;
    cfg.input_dim = input_dim;
    cfg.extractor_hidden = {16};
    cfg.feature_dim = 8;
    cfg.primary_classes = primary_classes;
    return cfg;
}

/// Easy benchmark variant: tiny, noiseless, matched train/val mixtures.
SynthSpec easy_spec(std::uint64_t seed) {
    SynthSpec s = default_benchmark(seed);
    s.n_actions = 3;
    s.n_scenes = 2;
    s.train_samples_per_action = 30;
    s.val_samples_per_action = 10;
    s.sigma = 0.0;
    s.val_iid = true;
    s.p_train.assign(3, {0.5, 0.5});
    s.p_val = s.p_train;
    return s;
}

std::vector<double> flatten_params(Model& m) {
    std::vector<double> out;
    m.visit_params([&](Param& p) {
        out.insert(out.end(), p.value.begin(), p.value.end());
    });
    return out;
}

std::vector<double> backbone_params(Model& m) {
    std::vector<double> out;
    for (auto& l : m.extractor)
        l.visit_params([&](Param& p) { out.insert(out.end(), p.value.begin(), p.value.end()); });
    m.primary.visit_params([&](Param& p) { out.insert(out.end(), p.value.begin(), p.value.end()); });
    return out;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("amt_test_" + std::to_string(std::rand()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("model: config validation and json round trip") {
    CHECK_THROWS_AS(Model(toy_config(0, 3), 0), ModelError);
    CHECK_THROWS_AS(Model(toy_config(4, 1), 0), ModelError);

    ModelConfig cfg = toy_config(12, 5);
    cfg.heads.push_back({"scene", 2, -0.5, 32});
    cfg.heads.push_back({"object", 7, 0.5, 64});
    ModelConfig back = model_config_from_json(to_json(cfg));
    CHECK(back.input_dim == cfg.input_dim);
    CHECK(back.extractor_hidden == cfg.extractor_hidden);
    CHECK(back.heads.size() == 2);
    CHECK(back.heads[0].family == "scene");
    CHECK(back.heads[0].alpha == -0.5);
    CHECK(back.heads[1].hidden == 64);
    CHECK(to_json(back) == to_json(cfg));
}

TEST_CASE("model: all-zero weights reduce logits to the primary bias") {
    Model m(toy_config(4, 3), 1);
    m.visit_params([](Param& p) { std::fill(p.value.begin(), p.value.end(), 0.0); });
    m.primary.b.value = {0.3, -1.0, 2.5};
    Matrix x(2, 4, 7.0);
    auto fr = m.forward(x, Mode::eval);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(fr.primary_logits(i, 0) == 0.3);
        CHECK(fr.primary_logits(i, 1) == -1.0);
        CHECK(fr.primary_logits(i, 2) == 2.5);
    }
    for (double v : fr.features.data) CHECK(v == 0.0);
}

TEST_CASE("model: same seed gives identical initialization") {
    ModelConfig cfg = toy_config(6, 4);
    cfg.heads.push_back({"scene", 2, -0.5, 16});
    Model a(cfg, 42), b(cfg, 42), c(cfg, 43);
    CHECK(flatten_params(a) == flatten_params(b));
    CHECK(flatten_params(a) != flatten_params(c));
}

TEST_CASE("model: head seeds are independent of head order") {
    ModelConfig one = toy_config(6, 4);
    one.heads.push_back({"scene", 2, -0.5, 16});
    ModelConfig two = one;
    two.heads.insert(two.heads.begin(), HeadSpec{"object", 5, 0.5, 16});

    Model m1(one, 7), m2(two, 7);
    // the scene head is head 0 in one config and head 1 in the other
    CHECK(m1.heads[0].l1.W.value == m2.heads[1].l1.W.value);
    CHECK(m1.heads[0].out.b.value == m2.heads[1].out.b.value);
    // and the backbone never moves
    CHECK(backbone_params(m1) == backbone_params(m2));
}

TEST_CASE("total_loss arithmetic") {
    // signed sum: 1.0 + (-1.0)*0.2 + (+1.0)*0.2 = 1.0
    CHECK(total_loss(1.0, {0.2, 0.2}, {-1.0, 1.0}, AdvMode::signed_loss) ==
          Catch::Approx(1.0).margin(1e-15));
    // grad-reversal reports magnitudes: 1.0 + 0.2 + 0.2
    CHECK(total_loss(1.0, {0.2, 0.2}, {-1.0, 1.0}, AdvMode::grad_reversal) ==
          Catch::Approx(1.4).margin(1e-15));
    CHECK(total_loss(0.5, {0.3}, {0.0}, AdvMode::signed_loss) == Catch::Approx(0.5));
    CHECK_THROWS_AS(total_loss(1.0, {0.2}, {0.1, 0.2}, AdvMode::signed_loss), ModelError);
}

TEST_CASE("train: lr 0 leaves parameters untouched") {
    SynthSpec s = easy_spec(1);
    SynthOutput data = generate(s);
    Dataset train_ds = to_dataset(s, data.train);
    Dataset val_ds = to_dataset(s, data.val);

    ModelConfig cfg = toy_config(s.total_dim(), s.n_actions);
    cfg.heads.push_back({"scene", s.n_scenes, -0.5, 16});
    Model m(cfg, 5);
    auto before = flatten_params(m);

    TrainConfig tc;
    tc.lr = 0.0;
    tc.max_epochs = 2;
    auto res = train(m, tc, train_ds, val_ds);
    CHECK(flatten_params(res.best) == before);
}

TEST_CASE("train: solves a separable noiseless problem") {
    SynthSpec s = easy_spec(2);
    SynthOutput data = generate(s);
    Dataset train_ds = to_dataset(s, data.train);
    Dataset val_ds = to_dataset(s, data.val);

    Model m(toy_config(s.total_dim(), s.n_actions), 3);
    TrainConfig tc;
    tc.lr = 0.2;
    tc.max_epochs = 50;
    auto res = train(m, tc, train_ds, val_ds);
    CHECK(res.best_val_acc == 1.0);
    CHECK(res.reports.size() == 50);
    CHECK(res.reports.back().probe_acc >= 0.0);  // scene probe ran
}

TEST_CASE("train: alpha 0 heads reproduce the headless run bit for bit") {
    SynthSpec s = easy_spec(4);
    SynthOutput data = generate(s);
    Dataset train_ds = to_dataset(s, data.train);
    Dataset val_ds = to_dataset(s, data.val);

    ModelConfig base_cfg = toy_config(s.total_dim(), s.n_actions);
    ModelConfig amt_cfg = base_cfg;
    amt_cfg.heads.push_back({"object", s.n_objects(), 0.0, 16});
    amt_cfg.heads.push_back({"scene", s.n_scenes, 0.0, 16});

    for (OptimizerKind opt : {OptimizerKind::sgd, OptimizerKind::adam}) {
        TrainConfig tc;
        tc.optimizer = opt;
        tc.max_epochs = 4;
        tc.seed = 9;

        auto base = train(Model(base_cfg, 11), tc, train_ds, val_ds);
        auto with_heads = train(Model(amt_cfg, 11), tc, train_ds, val_ds);

        CHECK(backbone_params(base.best) == backbone_params(with_heads.best));
        for (std::size_t e = 0; e < base.reports.size(); ++e) {
            CHECK(base.reports[e].primary_val_acc == with_heads.reports[e].primary_val_acc);
            CHECK(base.reports[e].primary_train_loss == with_heads.reports[e].primary_train_loss);
        }
    }
}

TEST_CASE("train: the head's own update ignores alpha's sign under grad reversal") {
    SynthSpec s = easy_spec(5);
    SynthOutput data = generate(s);
    Dataset train_ds = to_dataset(s, data.train);
    Dataset val_ds = to_dataset(s, data.val);

    auto run = [&](double alpha) {
        ModelConfig cfg = toy_config(s.total_dim(), s.n_actions);
        cfg.heads.push_back({"scene", s.n_scenes, alpha, 16});
        TrainConfig tc;
        tc.max_epochs = 1;
        tc.seed = 3;
        return train(Model(cfg, 21), tc, train_ds, val_ds);
    };

    auto pos = run(0.5);
    auto neg = run(-0.5);
    // first batch: identical features in, same |alpha|-scaled head gradient
    // (strict equality only holds until the extractors drift apart, so
    // compare one optimizer step on a single-batch epoch instead)
    ModelConfig cfg = toy_config(s.total_dim(), s.n_actions);
    cfg.heads.push_back({"scene", s.n_scenes, 0.5, 16});
    Model mp(cfg, 21);
    cfg.heads[0].alpha = -0.5;
    Model mn(cfg, 21);

    auto one_step = [&](Model& m) {
        Matrix xb(4, static_cast<std::size_t>(s.total_dim()));
        for (std::size_t i = 0; i < 4; ++i)
            std::copy(train_ds.x.row(i), train_ds.x.row(i) + train_ds.x.cols, xb.row(i));
        std::vector<int> yb(train_ds.primary.begin(), train_ds.primary.begin() + 4);
        Matrix tb(4, static_cast<std::size_t>(s.n_scenes));
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < tb.cols; ++j)
                tb(i, j) = train_ds.task("scene")->multi_hot(i, j);

        m.zero_grads();
        Matrix features = m.extract(xb, Mode::train);
        auto ploss = softmax_xent(m.primary.forward(features, Mode::train), yb);
        Matrix dfeatures = m.primary.backward(ploss.dlogits);
        auto& head = m.heads[0];
        auto hloss = sigmoid_bce(head.forward(features, Mode::train), tb);
        Matrix dlogits = hloss.dlogits;
        for (auto& v : dlogits.data) v *= std::abs(head.spec.alpha);
        Matrix dfeat_head = head.backward(dlogits);
        if (head.spec.alpha < 0) {
            GradReversal grl(1.0);
            dfeat_head = grl.backward(dfeat_head);
        }
        for (std::size_t i = 0; i < dfeatures.size(); ++i)
            dfeatures.data[i] += dfeat_head.data[i];
        m.extractor_backward(dfeatures);
    };
    one_step(mp);
    one_step(mn);

    // head gradients match exactly; extractor gradients differ
    CHECK(mp.heads[0].l1.W.grad == mn.heads[0].l1.W.grad);
    CHECK(mp.heads[0].out.W.grad == mn.heads[0].out.W.grad);
    bool extractor_differs = false;
    for (std::size_t i = 0; i < mp.extractor[0].W.grad.size(); ++i)
        if (mp.extractor[0].W.grad[i] != mn.extractor[0].W.grad[i]) extractor_differs = true;
    CHECK(extractor_differs);

    // the sum of the two extractor gradients is twice the primary-only part:
    // the head contributions are exact negatives of each other
    Model m0(toy_config(s.total_dim(), s.n_actions), 21);
    // same extractor init: head tags draw from separate streams
    REQUIRE(m0.extractor[0].W.value == mp.extractor[0].W.value);
    (void)pos;
    (void)neg;
}

TEST_CASE("train: adversarial scene head hurts the probe") {
    SynthSpec s = default_benchmark(6);
    s.n_actions = 3;
    s.train_samples_per_action = 60;
    s.val_samples_per_action = 20;
    s.p_train.assign(3, {});
    for (int a = 0; a < 3; ++a)
        s.p_train[static_cast<std::size_t>(a)] = (a % 2 == 0)
            ? std::vector<double>{0.9, 0.1} : std::vector<double>{0.1, 0.9};
    s.p_val = s.p_train;
    s.val_iid = true;
    SynthOutput data = generate(s);
    Dataset train_ds = to_dataset(s, data.train);
    Dataset val_ds = to_dataset(s, data.val);

    TrainConfig tc;
    tc.max_epochs = 15;
    tc.lr = 0.05;
    tc.seed = 1;

    ModelConfig plain_cfg = toy_config(s.total_dim(), s.n_actions);
    ModelConfig adv_cfg = plain_cfg;
    adv_cfg.heads.push_back({"scene", s.n_scenes, -0.5, 16});

    auto plain = train(Model(plain_cfg, 2), tc, train_ds, val_ds);
    auto adv = train(Model(adv_cfg, 2), tc, train_ds, val_ds);
    // probe accuracy can saturate on this small task, so allow a tie there and
    // require the strict effect on the dcorr2 measure
    CHECK(adv.reports.back().probe_acc <= plain.reports.back().probe_acc);
    CHECK(adv.reports.back().dcorr2_probe < plain.reports.back().dcorr2_probe);
}

TEST_CASE("train: error paths") {
    SynthSpec s = easy_spec(7);
    SynthOutput data = generate(s);
    Dataset train_ds = to_dataset(s, data.train);
    Dataset val_ds = to_dataset(s, data.val);

    ModelConfig cfg = toy_config(s.total_dim(), s.n_actions);
    cfg.heads.push_back({"verbs", 3, 0.5, 16});  // no such task targets
    TrainConfig tc;
    tc.max_epochs = 1;
    CHECK_THROWS_AS(train(Model(cfg, 0), tc, train_ds, val_ds), ModelError);

    Dataset empty;
    CHECK_THROWS_AS(train(Model(toy_config(s.total_dim(), s.n_actions), 0), tc, empty, val_ds),
                    ModelError);
}

TEST_CASE("evaluate: works on a single row and reports head accuracy") {
    SynthSpec s = easy_spec(8);
    SynthOutput data = generate(s);
    Dataset train_ds = to_dataset(s, data.train);
    Dataset val_ds = to_dataset(s, data.val);

    ModelConfig cfg = toy_config(s.total_dim(), s.n_actions);
    cfg.heads.push_back({"scene", s.n_scenes, -0.5, 16});
    TrainConfig tc;
    tc.max_epochs = 5;
    auto res = train(Model(cfg, 3), tc, train_ds, val_ds);

    EvalResult ev = evaluate(res.best, val_ds);
    CHECK(ev.primary_acc >= 0.0);
    CHECK(ev.head_acc.count("scene") == 1);
    CHECK(ev.dcorr2_probe >= 0.0);

    Dataset one;
    one.x = Matrix(1, val_ds.x.cols);
    std::copy(val_ds.x.row(0), val_ds.x.row(0) + val_ds.x.cols, one.x.row(0));
    one.primary = {val_ds.primary[0]};
    CHECK_NOTHROW(evaluate(res.best, one));
}

TEST_CASE("linear probe: separable features reach 1.0, noise stays near chance") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> g(0.0, 1.0);
    const std::size_t n = 120;
    Matrix x(n, 4);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i % 3);
        for (std::size_t j = 0; j < 4; ++j) x(i, j) = 0.1 * g(rng);
        x(i, static_cast<std::size_t>(y[i])) += 3.0;
    }
    CHECK(linear_probe_accuracy(x, y, x, y, 3) == 1.0);

    Matrix noise(n, 4);
    for (auto& v : noise.data) v = g(rng);
    CHECK(linear_probe_accuracy(noise, y, noise, y, 3) < 0.6);
}

TEST_CASE("checkpoint: round trip preserves behavior") {
    SynthSpec s = easy_spec(9);
    SynthOutput data = generate(s);
    Dataset train_ds = to_dataset(s, data.train);
    Dataset val_ds = to_dataset(s, data.val);

    ModelConfig cfg = toy_config(s.total_dim(), s.n_actions);
    cfg.heads.push_back({"scene", s.n_scenes, -0.5, 16});
    cfg.heads.push_back({"object", s.n_objects(), 0.5, 16});
    TrainConfig tc;
    tc.max_epochs = 3;
    auto res = train(Model(cfg, 17), tc, train_ds, val_ds);

    TempDir dir;
    save_checkpoint(dir.path.string(), res.best);
    Model loaded = load_checkpoint(dir.path.string());

    CHECK(flatten_params(loaded) == flatten_params(res.best));
    CHECK(loaded.heads[0].bn1.running_mean == res.best.heads[0].bn1.running_mean);
    CHECK(loaded.heads[1].bn2.running_var == res.best.heads[1].bn2.running_var);

    EvalResult a = evaluate(res.best, val_ds);
    EvalResult b = evaluate(loaded, val_ds);
    CHECK(a.primary_acc == b.primary_acc);
    CHECK(a.head_acc == b.head_acc);
    CHECK(a.dcorr2_probe == b.dcorr2_probe);
}
