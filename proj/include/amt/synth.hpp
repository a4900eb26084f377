#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "amt/manifest.hpp"
#include "amt/matrix.hpp"
#include "amt/nn.hpp"

namespace amt {

struct SynthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Controllable spurious-correlation generator. Each sample is a feature
/// vector with four blocks: an action signal, a scene signal, an object
/// signal, and pure noise. Scene labels follow P(scene|action), which can
/// differ between train and val to create an anti-correlated regime; each
/// action has a dedicated object that is always present.
struct SynthSpec {
    int n_actions = 5;
    int n_scenes = 2;
    int n_distractor_objects = 2;  // total objects = n_actions + this
    int train_samples_per_action = 200;
    int val_samples_per_action = 60;

    int action_dim = 6;
    int scene_dim = 4;
    int object_dim = 6;
    int noise_dim = 8;

    double action_scale = 1.2;
    double scene_scale = 2.0;
    double object_scale = 1.0;
    double sigma = 0.6;
    double distractor_rate = 0.2;

    std::vector<std::vector<double>> p_train;  // n_actions x n_scenes, rows sum to 1
    std::vector<std::vector<double>> p_val;    // ignored when val_iid
    bool val_iid = false;
    std::uint64_t seed = 0;

    int n_objects() const { return n_actions + n_distractor_objects; }
    int total_dim() const { return action_dim + scene_dim + object_dim + noise_dim; }
};

inline void validate(const SynthSpec& s) {
    if (s.n_actions < 1 || s.n_scenes < 1 || s.n_distractor_objects < 0)
        throw SynthError("spec: class counts out of range");
    if (s.train_samples_per_action < 1 || s.val_samples_per_action < 1)
        throw SynthError("spec: sample counts must be positive");
    if (s.action_dim < 1)
        throw SynthError("spec: action_dim must be >= 1");
    if (s.scene_dim < 0 || s.object_dim < 0 || s.noise_dim < 0)
        throw SynthError("spec: dims must be >= 0");
    auto embeddable = [](int dim, int classes) {
        return dim == 0 || classes <= (dim >= 31 ? INT32_MAX : (1 << dim));
    };
    if (!embeddable(s.action_dim, s.n_actions) || !embeddable(s.scene_dim, s.n_scenes) ||
        !embeddable(s.object_dim, s.n_objects()))
        throw SynthError("spec: dims too small to embed the requested class counts");
    auto check_p = [&](const std::vector<std::vector<double>>& p, const char* which) {
        if (p.size() != static_cast<std::size_t>(s.n_actions))
            throw SynthError(std::string("spec: ") + which + " must have n_actions rows");
        for (const auto& row : p) {
            if (row.size() != static_cast<std::size_t>(s.n_scenes))
                throw SynthError(std::string("spec: ") + which + " row width mismatch");
            double sum = 0.0;
            for (double v : row) {
                if (v < 0.0) throw SynthError(std::string("spec: ") + which + " has negative entry");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-9)
                throw SynthError(std::string("spec: ") + which + " rows must sum to 1");
        }
    };
    check_p(s.p_train, "p_train");
    if (!s.val_iid) check_p(s.p_val, "p_val");
}

inline nlohmann::json to_json(const SynthSpec& s) {
    nlohmann::json j;
    j["n_actions"] = s.n_actions;
    j["n_scenes"] = s.n_scenes;
    j["n_distractor_objects"] = s.n_distractor_objects;
    j["train_samples_per_action"] = s.train_samples_per_action;
    j["val_samples_per_action"] = s.val_samples_per_action;
    j["action_dim"] = s.action_dim;
    j["scene_dim"] = s.scene_dim;
    j["object_dim"] = s.object_dim;
    j["noise_dim"] = s.noise_dim;
    j["action_scale"] = s.action_scale;
    j["scene_scale"] = s.scene_scale;
    j["object_scale"] = s.object_scale;
    j["sigma"] = s.sigma;
    j["distractor_rate"] = s.distractor_rate;
    j["p_train"] = s.p_train;
    j["p_val"] = s.p_val;
    j["val_iid"] = s.val_iid;
    j["seed"] = s.seed;
    return j;
}

inline SynthSpec spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    auto opt = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt("n_actions", s.n_actions);
    opt("n_scenes", s.n_scenes);
    opt("n_distractor_objects", s.n_distractor_objects);
    opt("train_samples_per_action", s.train_samples_per_action);
    opt("val_samples_per_action", s.val_samples_per_action);
    opt("action_dim", s.action_dim);
    opt("scene_dim", s.scene_dim);
    opt("object_dim", s.object_dim);
    opt("noise_dim", s.noise_dim);
    opt("action_scale", s.action_scale);
    opt("scene_scale", s.scene_scale);
    opt("object_scale", s.object_scale);
    opt("sigma", s.sigma);
    opt("distractor_rate", s.distractor_rate);
    opt("p_train", s.p_train);
    opt("p_val", s.p_val);
    opt("val_iid", s.val_iid);
    opt("seed", s.seed);
    return s;
}

/// The canonical benchmark: each action has a "home" scene it co-occurs
/// with 90% of the time in train; val swaps home scenes so the scene cue
/// actively misleads any classifier that learned it.
inline SynthSpec default_benchmark(std::uint64_t seed = 0) {
    SynthSpec s;
    s.seed = seed;
    s.p_train.assign(static_cast<std::size_t>(s.n_actions),
                     std::vector<double>(static_cast<std::size_t>(s.n_scenes), 0.0));
    s.p_val = s.p_train;
    for (int a = 0; a < s.n_actions; ++a) {
        const int home = a % s.n_scenes;
        const double off = 0.1 / static_cast<double>(s.n_scenes - 1);
        for (int sc = 0; sc < s.n_scenes; ++sc) {
            s.p_train[a][sc] = (sc == home) ? 0.9 : off;
            s.p_val[a][sc] = (sc == home) ? 0.1 : (0.9 / static_cast<double>(s.n_scenes - 1));
        }
    }
    return s;
}

/// Companion spec for probe batches: identical embeddings and signal
/// structure (same seed), but scenes drawn uniformly, independent of the
/// action. Feature-scene dependence measured on such a batch reflects the
/// scene cue itself rather than the action-scene label coupling.
inline SynthSpec probe_spec(const SynthSpec& s, int samples_per_action = 60) {
    SynthSpec p = s;
    p.p_train.assign(static_cast<std::size_t>(p.n_actions),
                     std::vector<double>(static_cast<std::size_t>(p.n_scenes),
                                         1.0 / static_cast<double>(p.n_scenes)));
    p.p_val = p.p_train;
    p.val_iid = true;
    p.val_samples_per_action = samples_per_action;
    return p;
}

struct SynthDataset {
    Matrix features;
    std::vector<std::string> ids;
    std::vector<int> action;
    std::vector<int> scene;
    std::vector<std::vector<int>> objects;
    std::string regime;  // "iid" or "anti_correlated"
};

struct SynthOutput {
    SynthDataset train;
    SynthDataset val;
    // Embedding matrices, exposed so tests can decode signals back out.
    Matrix u_action;  // action_dim x n_actions
    Matrix u_scene;   // scene_dim x n_scenes
    Matrix u_object;  // object_dim x n_objects
};

namespace detail {

inline Matrix draw_embedding(int dim, int classes, std::mt19937_64& rng) {
    Matrix u(static_cast<std::size_t>(dim), static_cast<std::size_t>(classes));
    if (dim == 0) return u;
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : u.data) v = dist(rng);
    for (int c = 0; c < classes; ++c) {
        double norm = 0.0;
        for (int d = 0; d < dim; ++d) norm += u(d, c) * u(d, c);
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (int d = 0; d < dim; ++d) u(d, c) /= norm;
    }
    return u;
}

inline int sample_categorical(const std::vector<double>& probs, double u01) {
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u01 < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

inline SynthDataset generate_side(const SynthSpec& s, const SynthOutput& emb,
                                  const std::vector<std::vector<double>>& p,
                                  int samples_per_action, const std::string& tag,
                                  const std::string& regime) {
    SynthDataset ds;
    ds.regime = regime;
    const int n = s.n_actions * samples_per_action;
    ds.features = Matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(s.total_dim()));
    ds.ids.reserve(static_cast<std::size_t>(n));
    ds.action.reserve(static_cast<std::size_t>(n));

    for (int i = 0; i < n; ++i) {
        // Per-sample stream keyed by (seed, side, index): sample i is the
        // same no matter how generation is batched or ordered.
        auto rng = make_rng(s.seed, tag + ":" + std::to_string(i));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::normal_distribution<double> gauss(0.0, 1.0);

        const int a = i / samples_per_action;
        const int sc = sample_categorical(p[static_cast<std::size_t>(a)], unif(rng));
        std::vector<int> objs{a};  // dedicated necessary object
        for (int d = 0; d < s.n_distractor_objects; ++d)
            if (unif(rng) < s.distractor_rate) objs.push_back(s.n_actions + d);

        double* x = ds.features.row(static_cast<std::size_t>(i));
        std::size_t off = 0;
        for (int d = 0; d < s.action_dim; ++d)
            x[off++] = s.action_scale * emb.u_action(d, a);
        for (int d = 0; d < s.scene_dim; ++d)
            x[off++] = s.scene_scale * emb.u_scene(d, sc);
        for (int d = 0; d < s.object_dim; ++d) {
            double v = 0.0;
            for (int o : objs) v += emb.u_object(d, o);
            x[off++] = s.object_scale * v;
        }
        off += static_cast<std::size_t>(s.noise_dim);
        if (s.sigma > 0.0)
            for (std::size_t k = 0; k < static_cast<std::size_t>(s.total_dim()); ++k)
                x[k] += s.sigma * gauss(rng);

        std::ostringstream id;
        id << tag << "-" << i;
        ds.ids.push_back(id.str());
        ds.action.push_back(a);
        ds.scene.push_back(sc);
        ds.objects.push_back(std::move(objs));
    }
    return ds;
}

inline std::string padded_label(const std::string& prefix, int id) {
    std::ostringstream ss;
    ss << prefix << "_";
    // zero-padded so lexicographic label order matches numeric ids
    if (id < 100) ss << (id < 10 ? "00" : "0");
    ss << id;
    return ss.str();
}

}  // namespace detail

inline SynthOutput generate(const SynthSpec& s) {
    validate(s);
    SynthOutput out;
    {
        auto rng = make_rng(s.seed, "embed_action");
        out.u_action = detail::draw_embedding(s.action_dim, s.n_actions, rng);
    }
    {
        auto rng = make_rng(s.seed, "embed_scene");
        out.u_scene = detail::draw_embedding(s.scene_dim, s.n_scenes, rng);
    }
    {
        auto rng = make_rng(s.seed, "embed_object");
        out.u_object = detail::draw_embedding(s.object_dim, s.n_objects(), rng);
    }
    out.train = detail::generate_side(s, out, s.p_train, s.train_samples_per_action,
                                      "train", "iid");
    const auto& pv = s.val_iid ? s.p_train : s.p_val;
    out.val = detail::generate_side(s, out, pv, s.val_samples_per_action, "val",
                                    s.val_iid ? "iid" : "anti_correlated");
    return out;
}

/// Nearest-column decode of one signal block; exact for sigma = 0.
inline int decode_block(const Matrix& u, const double* block, double scale) {
    int best = 0;
    double best_d = 0.0;
    for (std::size_t c = 0; c < u.cols; ++c) {
        double d = 0.0;
        for (std::size_t k = 0; k < u.rows; ++k) {
            const double diff = block[k] - scale * u(k, c);
            d += diff * diff;
        }
        if (c == 0 || d < best_d) { best_d = d; best = static_cast<int>(c); }
    }
    return best;
}

/// Module-1 manifest view of a generated dataset. Labels are zero-padded
/// ("action_003") so the manifest's sorted dense ids coincide with the
/// generator's integer labels.
inline Manifest to_manifest(const SynthSpec& spec, const SynthDataset& ds) {
    Manifest m;
    m.universe.families = {"action", "object", "scene"};
    m.universe.primary_family = 0;
    m.universe.labels.assign(3, {});
    for (int a = 0; a < spec.n_actions; ++a)
        m.universe.labels[0].push_back(detail::padded_label("action", a));
    for (int o = 0; o < spec.n_objects(); ++o)
        m.universe.labels[1].push_back(detail::padded_label("object", o));
    for (int sc = 0; sc < spec.n_scenes; ++sc)
        m.universe.labels[2].push_back(detail::padded_label("scene", sc));

    for (std::size_t i = 0; i < ds.ids.size(); ++i) {
        Record r;
        r.id = ds.ids[i];
        r.primary_label = ds.action[i];
        r.aux.assign(3, {});
        r.aux[1] = ds.objects[i];
        std::sort(r.aux[1].begin(), r.aux[1].end());
        r.aux[2] = {ds.scene[i]};
        m.records.push_back(std::move(r));
    }
    return m;
}

}  // namespace amt
