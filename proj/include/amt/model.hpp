#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "amt/io.hpp"
#include "amt/matrix.hpp"
#include "amt/metrics.hpp"
#include "amt/nn.hpp"
#include "amt/synth.hpp"

namespace amt {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class AdvMode { grad_reversal, signed_loss };

inline const char* to_string(AdvMode m) {
    return m == AdvMode::grad_reversal ? "grad-reversal" : "signed-loss";
}

inline AdvMode adv_mode_from_string(const std::string& s) {
    if (s == "grad-reversal") return AdvMode::grad_reversal;
    if (s == "signed-loss") return AdvMode::signed_loss;
    throw ModelError("unknown adversarial mode: " + s);
}

struct HeadSpec {
    std::string family;
    int classes = 0;
    double alpha = 0.0;  // negative = adversarial
    int hidden = 64;
};

struct ModelConfig {
    int input_dim = 0;
    std::vector<int> extractor_hidden{128, 128};
    int feature_dim = 64;
    int primary_classes = 0;
    std::vector<HeadSpec> heads;
};

inline nlohmann::json to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["input_dim"] = c.input_dim;
    j["extractor_hidden"] = c.extractor_hidden;
    j["feature_dim"] = c.feature_dim;
    j["primary_classes"] = c.primary_classes;
    j["heads"] = nlohmann::json::array();
    for (const auto& h : c.heads) {
        nlohmann::json hj;
        hj["family"] = h.family;
        hj["classes"] = h.classes;
        hj["alpha"] = h.alpha;
        hj["hidden"] = h.hidden;
        j["heads"].push_back(hj);
    }
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<int>();
    if (j.contains("extractor_hidden"))
        c.extractor_hidden = j.at("extractor_hidden").get<std::vector<int>>();
    if (j.contains("feature_dim")) c.feature_dim = j.at("feature_dim").get<int>();
    c.primary_classes = j.at("primary_classes").get<int>();
    if (j.contains("heads"))
        for (const auto& hj : j.at("heads")) {
            HeadSpec h;
            h.family = hj.at("family").get<std::string>();
            h.classes = hj.at("classes").get<int>();
            h.alpha = hj.at("alpha").get<double>();
            if (hj.contains("hidden")) h.hidden = hj.at("hidden").get<int>();
            c.heads.push_back(h);
        }
    return c;
}

/// Two blocks of linear+batchnorm+ReLU, then a final linear.
struct TaskHead {
    HeadSpec spec;
    Linear l1, l2, out;
    BatchNorm bn1, bn2;
    Relu r1, r2;

    TaskHead() = default;
    TaskHead(const HeadSpec& hs, int feature_dim, std::uint64_t seed) : spec(hs) {
        const auto tag = "head." + hs.family;
        auto rng1 = make_rng(seed, tag + ".l1");
        l1 = Linear(static_cast<std::size_t>(feature_dim), static_cast<std::size_t>(hs.hidden), rng1);
        bn1 = BatchNorm(static_cast<std::size_t>(hs.hidden));
        auto rng2 = make_rng(seed, tag + ".l2");
        l2 = Linear(static_cast<std::size_t>(hs.hidden), static_cast<std::size_t>(hs.hidden), rng2);
        bn2 = BatchNorm(static_cast<std::size_t>(hs.hidden));
        auto rng3 = make_rng(seed, tag + ".out");
        out = Linear(static_cast<std::size_t>(hs.hidden), static_cast<std::size_t>(hs.classes), rng3);
    }

    Matrix forward(const Matrix& features, Mode mode) {
        Matrix h = l1.forward(features, mode);
        h = bn1.forward(h, mode);
        h = r1.forward(h, mode);
        h = l2.forward(h, mode);
        h = bn2.forward(h, mode);
        h = r2.forward(h, mode);
        return out.forward(h, mode);
    }

    Matrix backward(const Matrix& dlogits) {
        Matrix d = out.backward(dlogits);
        d = r2.backward(d);
        d = bn2.backward(d);
        d = l2.backward(d);
        d = r1.backward(d);
        d = bn1.backward(d);
        return l1.backward(d);
    }

    void visit_params(const ParamVisitor& fn) {
        l1.visit_params(fn);
        bn1.visit_params(fn);
        l2.visit_params(fn);
        bn2.visit_params(fn);
        out.visit_params(fn);
    }
};

struct ForwardResult {
    Matrix features;
    Matrix primary_logits;
    std::vector<Matrix> head_logits;  // aligned with Model::heads
};

struct Model {
    ModelConfig cfg;
    std::vector<Linear> extractor;  // hidden layers + projection to feature_dim
    std::vector<Relu> ext_relu;     // one per hidden layer
    Linear primary;
    std::vector<TaskHead> heads;

    Model() = default;
    Model(const ModelConfig& config, std::uint64_t seed) : cfg(config) {
        if (cfg.input_dim < 1 || cfg.feature_dim < 1 || cfg.primary_classes < 2)
            throw ModelError("model config: dimensions out of range");
        int in = cfg.input_dim;
        for (std::size_t i = 0; i < cfg.extractor_hidden.size(); ++i) {
            auto rng = make_rng(seed, "extractor." + std::to_string(i));
            extractor.emplace_back(static_cast<std::size_t>(in),
                                   static_cast<std::size_t>(cfg.extractor_hidden[i]), rng);
            ext_relu.emplace_back();
            in = cfg.extractor_hidden[i];
        }
        auto rngp = make_rng(seed, "extractor.proj");
        extractor.emplace_back(static_cast<std::size_t>(in),
                               static_cast<std::size_t>(cfg.feature_dim), rngp);
        auto rngh = make_rng(seed, "primary");
        primary = Linear(static_cast<std::size_t>(cfg.feature_dim),
                         static_cast<std::size_t>(cfg.primary_classes), rngh);
        for (const auto& hs : cfg.heads)
            heads.emplace_back(hs, cfg.feature_dim, seed);
    }

    Matrix extract(const Matrix& x, Mode mode) {
        if (x.rows == 0) throw ModelError("forward: empty batch");
        Matrix h = x;
        for (std::size_t i = 0; i < extractor.size(); ++i) {
            h = extractor[i].forward(h, mode);
            if (i < ext_relu.size()) h = ext_relu[i].forward(h, mode);
        }
        return h;
    }

    ForwardResult forward(const Matrix& x, Mode mode) {
        ForwardResult fr;
        fr.features = extract(x, mode);
        fr.primary_logits = primary.forward(fr.features, mode);
        for (auto& head : heads)
            fr.head_logits.push_back(head.forward(fr.features, mode));
        return fr;
    }

    Matrix extractor_backward(const Matrix& dfeatures) {
        Matrix d = dfeatures;
        for (std::size_t i = extractor.size(); i-- > 0;) {
            if (i < ext_relu.size()) d = ext_relu[i].backward(d);
            else d = extractor[i].backward(d);
            if (i < ext_relu.size()) d = extractor[i].backward(d);
        }
        return d;
    }

    /// Backbone (extractor + primary head) first, task heads after: Adam
    /// slot indices for backbone params are then independent of how many
    /// heads exist.
    void visit_params(const ParamVisitor& fn) {
        for (auto& l : extractor) l.visit_params(fn);
        primary.visit_params(fn);
        for (auto& h : heads) h.visit_params(fn);
    }

    void zero_grads() {
        visit_params([](Param& p) { p.zero_grad(); });
    }
};

/// Per-task training targets, aligned to a model head by family name.
struct TaskTargets {
    std::string family;
    Matrix multi_hot;                 // n x K_t binary
    std::vector<int> representative;  // single label per sample (probe, dcorr2)
};

struct Dataset {
    Matrix x;
    std::vector<int> primary;
    std::vector<TaskTargets> tasks;

    std::size_t size() const { return x.rows; }

    const TaskTargets* task(const std::string& family) const {
        for (const auto& t : tasks)
            if (t.family == family) return &t;
        return nullptr;
    }
};

/// Adapter from the synthetic generator. Multi-label object targets; the
/// representative object is each action's dedicated one (always present),
/// the representative scene is the single scene label.
inline Dataset to_dataset(const SynthSpec& spec, const SynthDataset& ds) {
    Dataset out;
    out.x = ds.features;
    out.primary = ds.action;

    TaskTargets obj;
    obj.family = "object";
    obj.multi_hot = Matrix(ds.ids.size(), static_cast<std::size_t>(spec.n_objects()));
    for (std::size_t i = 0; i < ds.ids.size(); ++i) {
        for (int o : ds.objects[i])
            obj.multi_hot(i, static_cast<std::size_t>(o)) = 1.0;
        obj.representative.push_back(ds.action[i]);
    }

    TaskTargets scene;
    scene.family = "scene";
    scene.multi_hot = Matrix(ds.ids.size(), static_cast<std::size_t>(spec.n_scenes));
    for (std::size_t i = 0; i < ds.ids.size(); ++i) {
        scene.multi_hot(i, static_cast<std::size_t>(ds.scene[i])) = 1.0;
        scene.representative.push_back(ds.scene[i]);
    }

    out.tasks.push_back(std::move(obj));
    out.tasks.push_back(std::move(scene));
    return out;
}

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::sgd;
    double lr = 1e-2;
    int lr_decay_every = 10;         // adam schedule
    int patience = 5;                // sgd plateau schedule
    double plateau_min_delta = 1e-3; // 0.1 percentage points of accuracy
    int batch_size = 32;
    int max_epochs = 40;
    std::uint64_t seed = 0;
    AdvMode adv_mode = AdvMode::grad_reversal;
    std::string probe_family = "scene";
    int probe_epochs = 100;
    double probe_lr = 0.1;
    std::size_t probe_batch = 256;   // val rows entering the dcorr2 probe
};

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["optimizer"] = c.optimizer == OptimizerKind::sgd ? "sgd" : "adam";
    j["lr"] = c.lr;
    j["lr_decay_every"] = c.lr_decay_every;
    j["patience"] = c.patience;
    j["plateau_min_delta"] = c.plateau_min_delta;
    j["batch_size"] = c.batch_size;
    j["max_epochs"] = c.max_epochs;
    j["seed"] = c.seed;
    j["adv_mode"] = to_string(c.adv_mode);
    j["probe_family"] = c.probe_family;
    j["probe_epochs"] = c.probe_epochs;
    j["probe_lr"] = c.probe_lr;
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    auto opt = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("optimizer")) {
        const auto s = j.at("optimizer").get<std::string>();
        if (s == "sgd") c.optimizer = OptimizerKind::sgd;
        else if (s == "adam") c.optimizer = OptimizerKind::adam;
        else throw ModelError("unknown optimizer: " + s);
    }
    opt("lr", c.lr);
    opt("lr_decay_every", c.lr_decay_every);
    opt("patience", c.patience);
    opt("plateau_min_delta", c.plateau_min_delta);
    opt("batch_size", c.batch_size);
    opt("max_epochs", c.max_epochs);
    opt("seed", c.seed);
    if (j.contains("adv_mode")) c.adv_mode = adv_mode_from_string(j.at("adv_mode").get<std::string>());
    opt("probe_family", c.probe_family);
    opt("probe_epochs", c.probe_epochs);
    opt("probe_lr", c.probe_lr);
    return c;
}

struct EpochReport {
    int epoch = 0;
    double lr = 0.0;
    double total_train_loss = 0.0;
    double primary_train_loss = 0.0;
    std::map<std::string, double> task_train_loss;
    double primary_train_acc = 0.0;
    double primary_val_acc = 0.0;
    double primary_val_loss = 0.0;
    double probe_acc = -1.0;    // linear-probe accuracy on the probe family
    double dcorr2_probe = -1.0; // features vs probe-family one-hot, val batch
};

/// Multinomial logistic regression on frozen features: fit on train rows,
/// report accuracy on val rows. Zero init, full-batch gradient descent, so
/// there is no randomness to seed.
inline double linear_probe_accuracy(const Matrix& train_x, const std::vector<int>& train_y,
                                    const Matrix& val_x, const std::vector<int>& val_y,
                                    int classes, int epochs = 100, double lr = 0.1) {
    if (classes < 2) throw ModelError("linear probe: need >= 2 classes");
    Matrix w(train_x.cols, static_cast<std::size_t>(classes));
    std::vector<double> b(static_cast<std::size_t>(classes), 0.0);

    auto logits_of = [&](const Matrix& x) {
        Matrix l = matmul(x, w);
        for (std::size_t i = 0; i < l.rows; ++i)
            for (std::size_t j = 0; j < l.cols; ++j) l(i, j) += b[j];
        return l;
    };

    for (int e = 0; e < epochs; ++e) {
        auto res = softmax_xent(logits_of(train_x), train_y);
        Matrix dw = matmul_at_b(train_x, res.dlogits);
        for (std::size_t i = 0; i < w.size(); ++i) w.data[i] -= lr * dw.data[i];
        for (std::size_t j = 0; j < b.size(); ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < res.dlogits.rows; ++i) s += res.dlogits(i, j);
            b[j] -= lr * s;
        }
    }
    return top1_accuracy(logits_of(val_x), val_y);
}

/// Reported total loss for one batch: literal signed sum in signed-loss
/// mode; all-positive sum in grad-reversal mode (the sign lives in the
/// backward path there).
inline double total_loss(double primary_loss, const std::vector<double>& task_losses,
                         const std::vector<double>& alphas, AdvMode mode) {
    if (task_losses.size() != alphas.size())
        throw ModelError("total_loss: task/alpha count mismatch");
    double total = primary_loss;
    for (std::size_t t = 0; t < task_losses.size(); ++t) {
        const double w = mode == AdvMode::signed_loss ? alphas[t] : std::abs(alphas[t]);
        total += w * task_losses[t];
    }
    return total;
}

struct TrainResult {
    Model best;   // highest-val-accuracy checkpoint
    Model final;  // state after the last epoch
    int best_epoch = -1;
    double best_val_acc = 0.0;
    std::vector<EpochReport> reports;
};

/// dcorr2 between extracted features and one-hot labels, eval mode.
inline double feature_dcorr2(Model& model, const Matrix& x, const std::vector<int>& labels) {
    int classes = 0;
    for (int y : labels) {
        if (y < 0) throw ModelError("feature_dcorr2: negative label");
        classes = std::max(classes, y + 1);
    }
    Matrix f = model.extract(x, Mode::eval);
    return dcorr2(f, one_hot(labels, static_cast<std::size_t>(classes)));
}

namespace detail {

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), m.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(m.row(idx[i]), m.row(idx[i]) + m.cols, out.row(i));
    return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
}

}  // namespace detail

inline TrainResult train(Model model, const TrainConfig& cfg, const Dataset& train_ds,
                         const Dataset& val_ds) {
    if (train_ds.size() == 0 || val_ds.size() == 0)
        throw ModelError("train: empty dataset");
    for (const auto& head : model.heads)
        if (!train_ds.task(head.spec.family))
            throw ModelError("train: no targets for head family '" + head.spec.family + "'");

    Sgd sgd{cfg.lr};
    Adam adam;
    adam.lr = cfg.lr;
    double lr = cfg.lr;

    TrainResult result;
    auto shuffle_rng = make_rng(cfg.seed, "shuffle");

    const TaskTargets* probe_train = train_ds.task(cfg.probe_family);
    const TaskTargets* probe_val = val_ds.task(cfg.probe_family);
    int probe_classes = 0;
    if (probe_train && probe_val) {
        auto scan = [&](const std::vector<int>& ys) {
            for (int y : ys) {
                if (y < 0) probe_classes = -1;  // unlabeled row: disable the probe
                if (probe_classes < 0) return;
                probe_classes = std::max(probe_classes, y + 1);
            }
        };
        scan(probe_train->representative);
        if (probe_classes >= 0) scan(probe_val->representative);
    }

    double best_seen_acc = -1.0;
    int epochs_since_improvement = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        if (cfg.optimizer == OptimizerKind::adam && epoch > 0 &&
            epoch % cfg.lr_decay_every == 0)
            lr /= 10.0;
        sgd.lr = lr;
        adam.lr = lr;

        std::vector<std::size_t> order(train_ds.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochReport rep;
        rep.epoch = epoch;
        rep.lr = lr;
        double loss_weight_sum = 0.0;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            if (idx.size() < 2) continue;  // batchnorm needs >= 2 rows in train mode

            Matrix xb = detail::gather_rows(train_ds.x, idx);
            auto yb = detail::gather(train_ds.primary, idx);

            model.zero_grads();
            Matrix features = model.extract(xb, Mode::train);
            Matrix plogits = model.primary.forward(features, Mode::train);
            auto ploss = softmax_xent(plogits, yb);

            Matrix dfeatures = model.primary.backward(ploss.dlogits);

            std::vector<double> task_losses, alphas;
            for (auto& head : model.heads) {
                const TaskTargets* tt = train_ds.task(head.spec.family);
                Matrix targets = detail::gather_rows(tt->multi_hot, idx);
                Matrix hlogits = head.forward(features, Mode::train);
                auto hloss = sigmoid_bce(hlogits, targets);
                task_losses.push_back(hloss.loss);
                alphas.push_back(head.spec.alpha);
                rep.task_train_loss[head.spec.family] += hloss.loss * static_cast<double>(idx.size());

                const double a = head.spec.alpha;
                if (a == 0.0) continue;  // exact single-task reduction
                double head_weight, feature_sign;
                if (cfg.adv_mode == AdvMode::grad_reversal) {
                    head_weight = std::abs(a);
                    feature_sign = a < 0.0 ? -1.0 : 1.0;  // reversal for adversarial heads
                } else {
                    head_weight = a;
                    feature_sign = 1.0;
                }
                Matrix dlogits = hloss.dlogits;
                for (auto& v : dlogits.data) v *= head_weight;
                Matrix dfeat_head = head.backward(dlogits);
                if (feature_sign < 0.0) {
                    GradReversal grl(1.0);
                    dfeat_head = grl.backward(dfeat_head);
                }
                for (std::size_t i = 0; i < dfeatures.size(); ++i)
                    dfeatures.data[i] += dfeat_head.data[i];
            }

            const double batch_total = total_loss(ploss.loss, task_losses, alphas, cfg.adv_mode);
            if (!std::isfinite(batch_total))
                throw ModelError("training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch));
            rep.total_train_loss += batch_total * static_cast<double>(idx.size());
            rep.primary_train_loss += ploss.loss * static_cast<double>(idx.size());
            loss_weight_sum += static_cast<double>(idx.size());

            model.extractor_backward(dfeatures);
            if (cfg.optimizer == OptimizerKind::sgd) {
                model.visit_params([&](Param& p) { sgd.step(p); });
            } else {
                adam.begin_step();
                model.visit_params([&](Param& p) { adam.step(p); });
            }
        }

        rep.total_train_loss /= loss_weight_sum;
        rep.primary_train_loss /= loss_weight_sum;
        for (auto& [fam, v] : rep.task_train_loss) v /= loss_weight_sum;

        // Epoch-end evaluation in eval mode.
        Matrix train_feat = model.extract(train_ds.x, Mode::eval);
        Matrix val_feat = model.extract(val_ds.x, Mode::eval);
        rep.primary_train_acc =
            top1_accuracy(model.primary.forward(train_feat, Mode::eval), train_ds.primary);
        Matrix val_logits = model.primary.forward(val_feat, Mode::eval);
        rep.primary_val_acc = top1_accuracy(val_logits, val_ds.primary);
        rep.primary_val_loss = softmax_xent(val_logits, val_ds.primary).loss;

        if (probe_train && probe_val && probe_classes >= 2) {
            rep.probe_acc = linear_probe_accuracy(train_feat, probe_train->representative,
                                                  val_feat, probe_val->representative,
                                                  probe_classes, cfg.probe_epochs, cfg.probe_lr);
            const std::size_t nb = std::min(cfg.probe_batch, val_feat.rows);
            std::vector<std::size_t> head_rows(nb);
            std::iota(head_rows.begin(), head_rows.end(), std::size_t{0});
            Matrix fb = detail::gather_rows(val_feat, head_rows);
            auto yb = detail::gather(probe_val->representative, head_rows);
            rep.dcorr2_probe = dcorr2(fb, one_hot(yb, static_cast<std::size_t>(probe_classes)));
        }

        if (rep.primary_val_acc > result.best_val_acc || result.best_epoch < 0) {
            result.best_val_acc = rep.primary_val_acc;
            result.best_epoch = epoch;
            result.best = model;
        }

        // SGD plateau schedule on validation accuracy.
        if (cfg.optimizer == OptimizerKind::sgd) {
            if (rep.primary_val_acc > best_seen_acc + cfg.plateau_min_delta) {
                best_seen_acc = rep.primary_val_acc;
                epochs_since_improvement = 0;
            } else if (++epochs_since_improvement >= cfg.patience) {
                lr /= 10.0;
                epochs_since_improvement = 0;
            }
        }

        result.reports.push_back(std::move(rep));
    }
    result.final = std::move(model);
    return result;
}

struct EvalResult {
    double primary_acc = 0.0;
    std::map<std::string, double> head_acc;  // any-hit top-1 per task head
    double dcorr2_probe = -1.0;
    std::string probe_family;
};

inline EvalResult evaluate(Model& model, const Dataset& ds,
                           const std::string& probe_family = "scene") {
    if (ds.size() == 0) throw ModelError("evaluate: empty dataset");
    EvalResult res;
    res.probe_family = probe_family;
    auto fr = model.forward(ds.x, Mode::eval);
    res.primary_acc = top1_accuracy(fr.primary_logits, ds.primary);
    for (std::size_t h = 0; h < model.heads.size(); ++h) {
        const TaskTargets* tt = ds.task(model.heads[h].spec.family);
        if (!tt) continue;
        const Matrix& logits = fr.head_logits[h];
        std::size_t hits = 0;
        for (std::size_t i = 0; i < logits.rows; ++i) {
            const double* r = logits.row(i);
            std::size_t arg = 0;
            for (std::size_t k = 1; k < logits.cols; ++k)
                if (r[k] > r[arg]) arg = k;
            if (tt->multi_hot(i, arg) == 1.0) ++hits;
        }
        res.head_acc[model.heads[h].spec.family] =
            static_cast<double>(hits) / static_cast<double>(logits.rows);
    }
    if (const TaskTargets* tt = ds.task(probe_family)) {
        int classes = 0;
        for (int y : tt->representative) {
            if (y < 0) { classes = -1; break; }
            classes = std::max(classes, y + 1);
        }
        if (classes >= 2 && ds.size() >= 2)
            res.dcorr2_probe =
                dcorr2(fr.features, one_hot(tt->representative, static_cast<std::size_t>(classes)));
    }
    return res;
}

// Checkpoint plumbing: parameters are serialized in visit order with
// stable names so a rebuilt model with the same config can re-absorb them.

inline void save_checkpoint(const std::string& dir, Model& model) {
    CheckpointWriter w;
    std::size_t i = 0;
    model.visit_params([&](Param& p) {
        w.add("param." + std::to_string(i++), p.value, {p.value.size()});
    });
    // Batchnorm running statistics travel with the checkpoint too.
    std::size_t b = 0;
    auto add_bn = [&](BatchNorm& bn) {
        w.add("bn." + std::to_string(b) + ".mean", bn.running_mean, {bn.running_mean.size()});
        w.add("bn." + std::to_string(b) + ".var", bn.running_var, {bn.running_var.size()});
        ++b;
    };
    for (auto& h : model.heads) {
        add_bn(h.bn1);
        add_bn(h.bn2);
    }
    w.manifest["model_config"] = to_json(model.cfg);
    w.save(dir);
}

inline Model load_checkpoint(const std::string& dir) {
    CheckpointReader r(dir);
    ModelConfig cfg = model_config_from_json(r.manifest.at("model_config"));
    Model model(cfg, /*seed=*/0);
    std::size_t i = 0;
    model.visit_params([&](Param& p) {
        auto v = r.get("param." + std::to_string(i++));
        if (v.size() != p.value.size())
            throw IoError("checkpoint parameter size mismatch");
        p.value = std::move(v);
    });
    std::size_t b = 0;
    auto load_bn = [&](BatchNorm& bn) {
        bn.running_mean = r.get("bn." + std::to_string(b) + ".mean");
        bn.running_var = r.get("bn." + std::to_string(b) + ".var");
        ++b;
    };
    for (auto& h : model.heads) {
        load_bn(h.bn1);
        load_bn(h.bn2);
    }
    return model;
}

}  // namespace amt
