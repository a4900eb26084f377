// nca-amt: manifest ingest, necessity analysis, invariant splits, synthetic
// benchmark generation, training, and the end-to-end pipeline.

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "amt/io.hpp"
#include "amt/manifest.hpp"
#include "amt/metrics.hpp"
#include "amt/model.hpp"
#include "amt/nca.hpp"
#include "amt/splits.hpp"
#include "amt/synth.hpp"

using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

int max_threads() {
    if (const char* env = std::getenv("NCA_AMT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 2;
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string iso_now() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

/// Every output directory gets exactly one of these. Timestamps live only
/// here, never in data reports, so reports stay byte-reproducible.
struct RunManifest {
    std::string command;
    json parameters = json::object();
    std::vector<std::string> inputs;
    std::uint64_t seed = 0;
    std::string started = iso_now();

    void write(const std::string& dir) const {
        json j;
        j["command"] = command;
        j["parameters"] = parameters;
        j["tool_version"] = kVersion;
        j["seed"] = seed;
        json h = json::object();
        for (const auto& p : inputs) h[p] = hex64(amt::hash_file(p));
        j["input_hashes"] = h;
        j["timestamps"] = {{"started", started}, {"finished", iso_now()}};
        amt::write_text(dir + "/run_manifest.json", j.dump(2) + "\n");
    }
};

amt::ManifestFormat infer_format(const std::string& path, const std::string& explicit_fmt) {
    if (!explicit_fmt.empty() && explicit_fmt != "auto")
        return amt::parse_format(explicit_fmt);
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv")
        return amt::ManifestFormat::csv;
    return amt::ManifestFormat::jsonl;
}

std::vector<std::string> split_csv_arg(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) out.push_back(part);
    return out;
}

/// "lo:hi:n" -> uniform grid.
std::vector<double> parse_threshold_arg(const std::string& s) {
    double lo = 0.0, hi = 1.0;
    unsigned long n = 21;
    if (!s.empty() && std::sscanf(s.c_str(), "%lf:%lf:%lu", &lo, &hi, &n) != 3)
        throw amt::NcaError("bad --thresholds, expected lo:hi:n, got: " + s);
    return amt::threshold_grid(lo, hi, n);
}

json contingency_json(const amt::ContingencyMatrix& c) {
    return {{"y1_x0", c.y1_x0}, {"y1_x1", c.y1_x1}, {"y0_x1", c.y0_x1}, {"y0_x0", c.y0_x0}};
}

json normalized_json(const amt::NormalizedContingency& c) {
    if (!c.valid) return nullptr;
    return {{"y1_x0", c.y1_x0}, {"y1_x1", c.y1_x1}, {"y0_x1", c.y0_x1}, {"y0_x0", c.y0_x0}};
}

json report_json(const amt::Manifest& m, const amt::FamilyReport& r) {
    json j;
    j["family"] = r.family;
    j["mode"] = r.mode == amt::NecessityMode::any_label ? "any" : "most-frequent";
    j["thresholds"] = r.thresholds;
    j["sweep_counts"] = r.sweep_counts;
    j["auc"] = r.auc;
    j["average_normalized"] = normalized_json(r.average);
    json per = json::array();
    const auto& u = m.universe;
    const auto fam = *u.family_index(r.family);
    for (const auto& pn : r.per_primary) {
        json pj;
        pj["primary"] = u.label_name(u.primary_family, pn.primary_label);
        if (pn.most_frequent_aux) {
            pj["most_frequent_aux"] = u.label_name(fam, *pn.most_frequent_aux);
            pj["contingency"] = contingency_json(pn.matrix);
            pj["normalized"] = normalized_json(pn.normalized);
        } else {
            pj["most_frequent_aux"] = nullptr;
        }
        per.push_back(pj);
    }
    j["per_primary"] = per;
    return j;
}

json split_json(const amt::Manifest& m, const amt::SplitAssignment& s,
                const amt::VerifyReport& v, const amt::SplitParams& p) {
    const auto& u = m.universe;
    json j;
    j["split_name"] = s.split_name;
    j["family"] = u.families[s.family];
    j["parameters"] = {{"variant", p.variant},
                       {"min_class_size", p.min_class_size},
                       {"val_fraction", p.val_fraction},
                       {"seed", p.seed},
                       {"repair_class_coverage", p.repair_class_coverage}};
    j["train_size"] = s.train_ids.size();
    j["val_size"] = s.val_ids.size();
    j["achieved_val_fraction"] = s.achieved_val_fraction;
    j["warnings"] = s.warnings;

    json choices = json::array();
    for (const auto& c : s.choices)
        choices.push_back({{"id", c.record_id},
                           {"label", u.label_name(s.family, c.aux_label)},
                           {"rule", amt::to_string(c.rule)}});
    j["choices"] = choices;

    json groups = json::array();
    for (const auto& g : s.groups)
        groups.push_back({{"primary", u.label_name(u.primary_family, g.primary_label)},
                          {"aux", u.label_name(s.family, g.aux_label)},
                          {"size", g.rarity()}});
    j["groups"] = groups;

    json reassigned = json::array();
    for (const auto& [pl, al] : s.reassigned_pairs)
        reassigned.push_back({{"primary", u.label_name(u.primary_family, pl)},
                              {"aux", u.label_name(s.family, al)}});
    j["reassigned_pairs"] = reassigned;

    j["verify"] = {{"pass", v.pass},
                   {"empty_val_warning", v.empty_val_warning},
                   {"failures", v.failures},
                   {"warnings", v.warnings}};
    return j;
}

/// Row-aligned dataset from a manifest plus a feature matrix: row i of the
/// features belongs to record i. Representatives follow the SI1 rule; rows
/// with no label in a family get an all-zero target row and rep -1.
amt::Dataset build_dataset(const amt::Manifest& m, amt::Matrix features) {
    if (features.rows != m.records.size())
        throw amt::ModelError("feature rows (" + std::to_string(features.rows) +
                              ") != manifest records (" + std::to_string(m.records.size()) + ")");
    amt::Dataset ds;
    ds.x = std::move(features);
    for (const auto& r : m.records) ds.primary.push_back(r.primary_label);

    const auto& u = m.universe;
    for (std::size_t f = 0; f < u.n_families(); ++f) {
        if (f == u.primary_family) continue;
        auto ctx = amt::detail::RepContext::build(m, f);
        amt::TaskTargets t;
        t.family = u.families[f];
        t.multi_hot = amt::Matrix(m.records.size(), u.n_labels(f));
        for (std::size_t i = 0; i < m.records.size(); ++i) {
            const auto& r = m.records[i];
            for (int x : r.aux[f]) t.multi_hot(i, static_cast<std::size_t>(x)) = 1.0;
            t.representative.push_back(
                r.aux[f].empty()
                    ? -1
                    : amt::detail::choose_representative_impl(
                          r, f, amt::RepresentativeRule::most_frequent_in_class, ctx));
        }
        ds.tasks.push_back(std::move(t));
    }
    return ds;
}

amt::Dataset subset(const amt::Dataset& ds, const std::vector<std::size_t>& rows) {
    amt::Dataset out;
    out.x = amt::detail::gather_rows(ds.x, rows);
    out.primary = amt::detail::gather(ds.primary, rows);
    for (const auto& t : ds.tasks) {
        amt::TaskTargets nt;
        nt.family = t.family;
        nt.multi_hot = amt::detail::gather_rows(t.multi_hot, rows);
        nt.representative = amt::detail::gather(t.representative, rows);
        out.tasks.push_back(std::move(nt));
    }
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string epochs_csv(const std::vector<amt::EpochReport>& reports) {
    std::vector<std::string> families;
    if (!reports.empty())
        for (const auto& [fam, v] : reports.front().task_train_loss) families.push_back(fam);
    std::ostringstream out;
    out << "epoch,lr,total_train_loss,primary_train_loss";
    for (const auto& f : families) out << ",task_" << f << "_loss";
    out << ",primary_train_acc,primary_val_acc,primary_val_loss,probe_acc,dcorr2_probe\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        return std::string(buf);
    };
    for (const auto& r : reports) {
        out << r.epoch << "," << num(r.lr) << "," << num(r.total_train_loss) << ","
            << num(r.primary_train_loss);
        for (const auto& f : families) out << "," << num(r.task_train_loss.at(f));
        out << "," << num(r.primary_train_acc) << "," << num(r.primary_val_acc) << ","
            << num(r.primary_val_loss) << "," << num(r.probe_acc) << ","
            << num(r.dcorr2_probe) << "\n";
    }
    return out.str();
}

void write_synth_side(const std::string& dir, const std::string& side,
                      const amt::SynthSpec& spec, const amt::SynthDataset& ds) {
    amt::write_features(dir + "/" + side + "_features.bin", ds.features);
    amt::emit(amt::to_manifest(spec, ds), dir + "/" + side + "_manifest.jsonl",
              amt::ManifestFormat::jsonl);
}

struct TrainArtifacts {
    amt::TrainResult result;
    amt::EvalResult eval;
};

TrainArtifacts run_training(const amt::ModelConfig& mc, const amt::TrainConfig& tc,
                            const amt::Dataset& train_ds, const amt::Dataset& val_ds,
                            std::uint64_t model_seed) {
    TrainArtifacts a;
    a.result = amt::train(amt::Model(mc, model_seed), tc, train_ds, val_ds);
    a.eval = amt::evaluate(a.result.best, val_ds, tc.probe_family);
    return a;
}

json training_summary(const TrainArtifacts& a) {
    const auto& last = a.result.reports.back();
    json j;
    j["best_epoch"] = a.result.best_epoch;
    j["best_val_acc"] = a.result.best_val_acc;
    j["final_train_acc"] = last.primary_train_acc;
    j["final_val_acc"] = last.primary_val_acc;
    j["final_probe_acc"] = last.probe_acc;
    j["final_dcorr2_probe"] = last.dcorr2_probe;
    j["eval_val_acc"] = a.eval.primary_acc;
    j["eval_dcorr2_probe"] = a.eval.dcorr2_probe;
    return j;
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
    std::string input, format = "auto", output, output_format = "auto";
    std::size_t min_class_size = 1;
    bool as_json = false;
};

int run_ingest(const IngestArgs& a) {
    amt::Manifest m = amt::ingest(a.input, infer_format(a.input, a.format));
    const std::size_t before = m.records.size();
    std::ostringstream warnings;
    if (a.min_class_size > 1) m = amt::filter_min_class_size(m, a.min_class_size, &warnings);
    if (!warnings.str().empty()) std::cerr << warnings.str();

    if (!a.output.empty())
        amt::emit(m, a.output, infer_format(a.output, a.output_format));

    if (a.as_json) {
        json j;
        j["records_in"] = before;
        j["records_out"] = m.records.size();
        j["primary_family"] = m.universe.families[m.universe.primary_family];
        json fams = json::object();
        for (std::size_t f = 0; f < m.universe.n_families(); ++f)
            fams[m.universe.families[f]] = m.universe.n_labels(f);
        j["label_counts"] = fams;
        std::cout << j.dump(2) << "\n";
    } else if (a.output.empty()) {
        amt::emit(m, std::cout, infer_format("-", a.output_format));
    }
    return 0;
}

// ------------------------------------------------------------------- nca

struct NcaArgs {
    std::string manifest, families, thresholds = "0:1:21", mode = "any", out;
    double cutoff = 0.5;
    bool as_json = false;
};

int run_nca(const NcaArgs& a) {
    amt::Manifest m = amt::ingest(a.manifest, infer_format(a.manifest, ""));
    const auto& u = m.universe;
    std::vector<std::size_t> fams;
    if (a.families.empty()) {
        for (std::size_t f = 0; f < u.n_families(); ++f)
            if (f != u.primary_family) fams.push_back(f);
    } else {
        for (const auto& name : split_csv_arg(a.families)) {
            auto f = u.family_index(name);
            if (!f) throw amt::NcaError("unknown family: " + name);
            fams.push_back(*f);
        }
    }
    const auto grid = parse_threshold_arg(a.thresholds);
    const auto mode = a.mode == "most-frequent" ? amt::NecessityMode::most_frequent
                                                : amt::NecessityMode::any_label;

    std::vector<amt::FamilyReport> reports;
    for (auto f : fams) reports.push_back(amt::analyze(m, f, grid, mode));
    auto signs = amt::recommend_signs(reports, a.cutoff);

    json j;
    j["manifest"] = a.manifest;
    j["cutoff"] = a.cutoff;
    json rj = json::array();
    for (const auto& r : reports) rj.push_back(report_json(m, r));
    j["reports"] = rj;
    json sj = json::object();
    for (const auto& [fam, rec] : signs)
        sj[fam] = {{"sign", rec.sign}, {"score", rec.score}};
    j["signs"] = sj;

    if (!a.out.empty()) amt::write_text(a.out, j.dump(2) + "\n");
    if (a.as_json || a.out.empty()) {
        std::cout << j.dump(2) << "\n";
    } else {
        for (const auto& r : reports) {
            const auto& rec = signs.at(r.family);
            std::cout << r.family << ": sign " << (rec.sign > 0 ? "+1" : "-1")
                      << " score " << fmt(rec.score) << "\n";
        }
    }
    return 0;
}

// ----------------------------------------------------------------- split

struct SplitArgs {
    std::string manifest, family = "scene", out;
    int variant = 1;
    std::size_t min_class_size = 124;
    double val_fraction = 0.06;
    std::uint64_t seed = 0;
    bool no_repair = false;
    bool as_json = false;
};

int run_split(const SplitArgs& a) {
    amt::Manifest m = amt::ingest(a.manifest, infer_format(a.manifest, ""));
    auto fam = m.universe.family_index(a.family);
    if (!fam) throw amt::SplitError("unknown family: " + a.family);

    amt::SplitParams p;
    p.variant = a.variant;
    p.min_class_size = a.min_class_size;
    p.val_fraction = a.val_fraction;
    p.seed = a.seed;
    p.repair_class_coverage = !a.no_repair;

    auto s = amt::build_split(m, *fam, p);
    auto v = amt::verify_split(m, s);
    for (const auto& w : s.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& w : v.warnings) std::cerr << "warning: " << w << "\n";

    json j = split_json(m, s, v, p);
    std::filesystem::create_directories(a.out);
    amt::write_id_list(a.out + "/train.txt", s.train_ids);
    amt::write_id_list(a.out + "/val.txt", s.val_ids);
    amt::write_text(a.out + "/split.json", j.dump(2) + "\n");

    RunManifest rm;
    rm.command = "split";
    rm.parameters = j["parameters"];
    rm.parameters["manifest"] = a.manifest;
    rm.inputs = {a.manifest};
    rm.seed = a.seed;
    rm.write(a.out);

    if (a.as_json)
        std::cout << j.dump(2) << "\n";
    else
        std::cout << s.split_name << ": train " << s.train_ids.size() << ", val "
                  << s.val_ids.size() << ", achieved fraction "
                  << fmt(s.achieved_val_fraction) << (v.pass ? ", verify pass" : ", VERIFY FAIL")
                  << "\n";
    return v.pass ? 0 : 1;
}

// ----------------------------------------------------------------- synth

struct SynthArgs {
    std::string spec = "default", out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool as_json = false;
};

amt::SynthSpec load_spec(const std::string& arg, std::uint64_t seed, bool seed_set) {
    amt::SynthSpec s = arg == "default"
                           ? amt::default_benchmark(seed)
                           : amt::spec_from_json(json::parse(amt::read_text(arg)));
    if (seed_set) s.seed = seed;
    amt::validate(s);
    return s;
}

int run_synth(const SynthArgs& a) {
    amt::SynthSpec spec = load_spec(a.spec, a.seed, a.seed_set);
    amt::SynthOutput out = amt::generate(spec);

    std::filesystem::create_directories(a.out);
    write_synth_side(a.out, "train", spec, out.train);
    write_synth_side(a.out, "val", spec, out.val);
    amt::write_text(a.out + "/spec.json", amt::to_json(spec).dump(2) + "\n");

    RunManifest rm;
    rm.command = "synth";
    rm.parameters = amt::to_json(spec);
    if (a.spec != "default") rm.inputs = {a.spec};
    rm.seed = spec.seed;
    rm.write(a.out);

    json j;
    j["train_rows"] = out.train.features.rows;
    j["val_rows"] = out.val.features.rows;
    j["dim"] = spec.total_dim();
    j["out"] = a.out;
    if (a.as_json)
        std::cout << j.dump(2) << "\n";
    else
        std::cout << "synth: " << out.train.features.rows << " train + "
                  << out.val.features.rows << " val rows, dim " << spec.total_dim()
                  << " -> " << a.out << "\n";
    return 0;
}

// ----------------------------------------------------------------- dcorr

struct DcorrArgs {
    std::string features, labels;
    bool as_json = false;
};

int run_dcorr(const DcorrArgs& a) {
    const bool csv = a.features.size() >= 4 &&
                     a.features.substr(a.features.size() - 4) == ".csv";
    amt::Matrix x = csv ? amt::read_features_csv(a.features) : amt::read_features(a.features);
    auto labels = amt::read_labels_csv(a.labels);
    int classes = 0;
    for (int y : labels) {
        if (y < 0) throw amt::MetricError("negative label in " + a.labels);
        classes = std::max(classes, y + 1);
    }
    const double v = amt::dcorr2(x, amt::one_hot(labels, static_cast<std::size_t>(classes)));
    if (a.as_json)
        std::cout << json{{"dcorr2", v}}.dump() << "\n";
    else
        std::cout << v << "\n";
    return 0;
}

// ----------------------------------------------------------------- train

struct TrainArgs {
    std::string config;
    std::string train_features, train_manifest, val_features, val_manifest;
    std::string features, manifest, train_ids, val_ids;
    std::string out;
    bool as_json = false;
};

std::vector<std::size_t> rows_for_ids(const amt::Manifest& m,
                                      const std::vector<std::string>& ids) {
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < m.records.size(); ++i) row_of[m.records[i].id] = i;
    std::vector<std::size_t> rows;
    for (const auto& id : ids) {
        auto it = row_of.find(id);
        if (it == row_of.end()) throw amt::ModelError("id not in manifest: " + id);
        rows.push_back(it->second);
    }
    return rows;
}

struct LoadedData {
    amt::Dataset train, val;
    amt::Manifest manifest;  // the train-side manifest, for head class counts
    std::vector<std::string> inputs;
};

LoadedData load_training_data(const TrainArgs& a) {
    LoadedData d;
    if (!a.train_features.empty()) {
        d.manifest = amt::ingest(a.train_manifest, infer_format(a.train_manifest, ""));
        amt::Manifest vm = amt::ingest(a.val_manifest, infer_format(a.val_manifest, ""));
        if (vm.universe != d.manifest.universe)
            throw amt::ModelError("train/val manifests disagree on the label universe");
        d.train = build_dataset(d.manifest, amt::read_features(a.train_features));
        d.val = build_dataset(vm, amt::read_features(a.val_features));
        d.inputs = {a.train_features, a.train_manifest, a.val_features, a.val_manifest};
    } else {
        d.manifest = amt::ingest(a.manifest, infer_format(a.manifest, ""));
        amt::Dataset all = build_dataset(d.manifest, amt::read_features(a.features));
        auto train_rows = rows_for_ids(d.manifest, amt::read_id_list(a.train_ids));
        auto val_rows = rows_for_ids(d.manifest, amt::read_id_list(a.val_ids));
        d.train = subset(all, train_rows);
        d.val = subset(all, val_rows);
        d.inputs = {a.features, a.manifest, a.train_ids, a.val_ids};
    }
    return d;
}

/// Config file: {"model": ModelConfig fields, "train": TrainConfig fields,
/// "model_seed": int}. input_dim / primary_classes / head class counts are
/// filled in from the data when omitted or zero.
void complete_model_config(amt::ModelConfig& mc, const amt::Manifest& m,
                           std::size_t input_dim) {
    const auto& u = m.universe;
    if (mc.input_dim == 0) mc.input_dim = static_cast<int>(input_dim);
    if (mc.primary_classes == 0)
        mc.primary_classes = static_cast<int>(u.n_labels(u.primary_family));
    for (auto& h : mc.heads) {
        if (h.classes != 0) continue;
        auto f = u.family_index(h.family);
        if (!f) throw amt::ModelError("head family not in manifest: " + h.family);
        h.classes = static_cast<int>(u.n_labels(*f));
    }
}

int run_train(const TrainArgs& a) {
    LoadedData d = load_training_data(a);

    json cfg = a.config.empty() ? json::object() : json::parse(amt::read_text(a.config));
    amt::ModelConfig mc;
    if (cfg.contains("model")) {
        json mj = cfg.at("model");
        if (!mj.contains("input_dim")) mj["input_dim"] = 0;
        if (!mj.contains("primary_classes")) mj["primary_classes"] = 0;
        mc = amt::model_config_from_json(mj);
    }
    complete_model_config(mc, d.manifest, d.train.x.cols);
    amt::TrainConfig tc = cfg.contains("train")
                              ? amt::train_config_from_json(cfg.at("train"))
                              : amt::TrainConfig{};
    const std::uint64_t model_seed =
        cfg.contains("model_seed") ? cfg.at("model_seed").get<std::uint64_t>() : tc.seed;

    TrainArtifacts art = run_training(mc, tc, d.train, d.val, model_seed);
    for (const auto& r : art.result.reports)
        std::cerr << "epoch " << r.epoch << " val_acc " << fmt(r.primary_val_acc)
                  << " train_loss " << fmt(r.total_train_loss) << "\n";

    std::filesystem::create_directories(a.out);
    amt::write_text(a.out + "/epochs.csv", epochs_csv(art.result.reports));
    amt::save_checkpoint(a.out + "/checkpoint", art.result.best);
    json summary = training_summary(art);
    summary["model_config"] = amt::to_json(mc);
    summary["train_config"] = amt::to_json(tc);
    amt::write_text(a.out + "/result.json", summary.dump(2) + "\n");

    RunManifest rm;
    rm.command = "train";
    rm.parameters = {{"config", a.config}, {"out", a.out}};
    rm.inputs = d.inputs;
    if (!a.config.empty()) rm.inputs.push_back(a.config);
    rm.seed = tc.seed;
    rm.write(a.out);

    if (a.as_json)
        std::cout << summary.dump(2) << "\n";
    else
        std::cout << "best epoch " << art.result.best_epoch << ", best val acc "
                  << fmt(art.result.best_val_acc) << "\n";
    return 0;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
    std::string checkpoint, features, manifest, probe_family = "scene";
    bool as_json = false;
};

int run_eval(const EvalArgs& a) {
    amt::Model model = amt::load_checkpoint(a.checkpoint);
    amt::Manifest m = amt::ingest(a.manifest, infer_format(a.manifest, ""));
    amt::Dataset ds = build_dataset(m, amt::read_features(a.features));
    amt::EvalResult res = amt::evaluate(model, ds, a.probe_family);

    json j;
    j["primary_acc"] = res.primary_acc;
    j["head_acc"] = res.head_acc;
    j["probe_family"] = res.probe_family;
    j["dcorr2_probe"] = res.dcorr2_probe;
    if (a.as_json) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "primary_acc " << fmt(res.primary_acc) << "\n";
        for (const auto& [fam, acc] : res.head_acc)
            std::cout << "head_acc[" << fam << "] " << fmt(acc) << "\n";
        std::cout << "dcorr2[" << res.probe_family << "] " << fmt(res.dcorr2_probe) << "\n";
    }
    return 0;
}

// -------------------------------------------------------------- pipeline

struct PipelineArgs {
    std::string spec = "default", out, adv_mode = "grad-reversal";
    std::uint64_t seed = 0;
    bool seed_set = false;
    double lambda_mag = 0.5, gamma_mag = 0.5;
    int epochs = 40;
    bool as_json = false;
};

amt::TrainConfig pipeline_train_config(const PipelineArgs& a, std::uint64_t seed) {
    amt::TrainConfig tc;
    tc.optimizer = amt::OptimizerKind::sgd;
    tc.lr = 5e-2;
    tc.batch_size = 32;
    tc.max_epochs = a.epochs;
    tc.patience = 2;
    tc.seed = seed;
    tc.adv_mode = amt::adv_mode_from_string(a.adv_mode);
    tc.probe_family = "scene";
    return tc;
}

int run_pipeline(const PipelineArgs& a) {
    std::filesystem::create_directories(a.out);
    amt::SynthSpec spec = load_spec(a.spec, a.seed, a.seed_set || a.spec == "default");
    const std::uint64_t seed = spec.seed;

    std::cerr << "[1/5] synth\n";
    amt::SynthOutput data = amt::generate(spec);
    write_synth_side(a.out, "train", spec, data.train);
    write_synth_side(a.out, "val", spec, data.val);
    amt::write_text(a.out + "/spec.json", amt::to_json(spec).dump(2) + "\n");
    amt::Manifest train_m = amt::to_manifest(spec, data.train);

    // The benchmark's planted necessity lives below normalized ratio ~0.11
    // (0.9 co-occurrence); sweeping [0, 0.1] puts truly necessary families
    // at area 1 and merely-correlated ones at 0, so the 0.5 cutoff splits
    // them cleanly.
    std::cerr << "[2/5] nca\n";
    const auto grid = amt::threshold_grid(0.0, 0.1, 21);
    std::vector<amt::FamilyReport> reports;
    for (const auto& name : {"object", "scene"})
        reports.push_back(amt::analyze(train_m, *train_m.universe.family_index(name), grid,
                                       amt::NecessityMode::any_label));
    auto signs = amt::recommend_signs(reports, 0.5);
    json nca_j;
    {
        json rj = json::array();
        for (const auto& r : reports) rj.push_back(report_json(train_m, r));
        nca_j["reports"] = rj;
        json sj = json::object();
        for (const auto& [fam, rec] : signs)
            sj[fam] = {{"sign", rec.sign}, {"score", rec.score}};
        nca_j["signs"] = sj;
        amt::write_text(a.out + "/nca.json", nca_j.dump(2) + "\n");
    }
    std::cerr << "  object: " << signs.at("object").sign
              << "  scene: " << signs.at("scene").sign << "\n";

    std::cerr << "[3/5] split\n";
    amt::SplitParams sp;
    sp.variant = 1;
    sp.min_class_size = std::min<std::size_t>(
        124, static_cast<std::size_t>(spec.train_samples_per_action));
    sp.seed = seed;
    auto split = amt::build_split(train_m, *train_m.universe.family_index("scene"), sp);
    auto verify = amt::verify_split(train_m, split);
    amt::write_id_list(a.out + "/split_train.txt", split.train_ids);
    amt::write_id_list(a.out + "/split_val.txt", split.val_ids);
    amt::write_text(a.out + "/split.json", split_json(train_m, split, verify, sp).dump(2) + "\n");
    if (!verify.pass) {
        std::cerr << "split verification failed\n";
        return 1;
    }

    std::cerr << "[4/5] train baseline + amt\n";
    amt::Dataset train_ds = amt::to_dataset(spec, data.train);
    amt::Dataset val_ds = amt::to_dataset(spec, data.val);
    amt::TrainConfig tc = pipeline_train_config(a, seed);

    amt::ModelConfig base_cfg;
    base_cfg.input_dim = spec.total_dim();
    base_cfg.primary_classes = spec.n_actions;
    amt::ModelConfig amt_cfg = base_cfg;
    amt_cfg.heads.push_back(
        {"object", spec.n_objects(), a.gamma_mag * signs.at("object").sign, 64});
    amt_cfg.heads.push_back(
        {"scene", spec.n_scenes, a.lambda_mag * signs.at("scene").sign, 64});

    TrainArtifacts base, adv;
    if (max_threads() >= 2) {
        std::thread tb([&] { base = run_training(base_cfg, tc, train_ds, val_ds, seed); });
        adv = run_training(amt_cfg, tc, train_ds, val_ds, seed);
        tb.join();
    } else {
        base = run_training(base_cfg, tc, train_ds, val_ds, seed);
        adv = run_training(amt_cfg, tc, train_ds, val_ds, seed);
    }
    amt::write_text(a.out + "/baseline_epochs.csv", epochs_csv(base.result.reports));
    amt::write_text(a.out + "/amt_epochs.csv", epochs_csv(adv.result.reports));
    amt::save_checkpoint(a.out + "/baseline_checkpoint", base.result.best);
    amt::save_checkpoint(a.out + "/amt_checkpoint", adv.result.best);

    std::cerr << "[5/5] report\n";
    json report;
    report["seed"] = seed;
    report["spec"] = amt::to_json(spec);
    report["nca"] = nca_j;
    report["split"] = {{"train_size", split.train_ids.size()},
                       {"val_size", split.val_ids.size()},
                       {"verify_pass", verify.pass}};
    report["alphas"] = {{"object", amt_cfg.heads[0].alpha}, {"scene", amt_cfg.heads[1].alpha}};
    report["adv_mode"] = a.adv_mode;
    report["baseline"] = training_summary(base);
    report["amt"] = training_summary(adv);

    // Scene dependence of the learned features, measured on a probe set with
    // uniform P(scene | action) so that scene information is not conflated with
    // action information from the shifted val split.
    amt::SynthDataset probe = amt::generate(amt::probe_spec(spec)).val;
    const double base_probe_dcorr =
        amt::feature_dcorr2(base.result.best, probe.features, probe.scene);
    const double adv_probe_dcorr =
        amt::feature_dcorr2(adv.result.best, probe.features, probe.scene);
    report["baseline"]["probe_dcorr2_scene"] = base_probe_dcorr;
    report["amt"]["probe_dcorr2_scene"] = adv_probe_dcorr;
    report["delta_val_acc"] = adv.eval.primary_acc - base.eval.primary_acc;
    amt::write_text(a.out + "/report.json", report.dump(2) + "\n");

    std::ostringstream table;
    table << "run       val_acc  best_val  probe_acc  dcorr2_scene\n";
    auto row = [&](const char* name, const TrainArtifacts& t, double probe_dcorr) {
        table << name << "  " << fmt(t.eval.primary_acc) << "   " << fmt(t.result.best_val_acc)
              << "    " << fmt(t.result.reports.back().probe_acc) << "     "
              << fmt(probe_dcorr) << "\n";
    };
    row("baseline", base, base_probe_dcorr);
    row("amt     ", adv, adv_probe_dcorr);
    table << "delta val_acc: " << fmt(adv.eval.primary_acc - base.eval.primary_acc) << "\n";
    amt::write_text(a.out + "/comparison.txt", table.str());

    RunManifest rm;
    rm.command = "pipeline";
    rm.parameters = {{"spec", a.spec},
                     {"adv_mode", a.adv_mode},
                     {"lambda_mag", a.lambda_mag},
                     {"gamma_mag", a.gamma_mag},
                     {"epochs", a.epochs}};
    if (a.spec != "default") rm.inputs = {a.spec};
    rm.seed = seed;
    rm.write(a.out);

    if (a.as_json)
        std::cout << report.dump(2) << "\n";
    else
        std::cout << table.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NCA-driven auxiliary/adversarial multi-task toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    IngestArgs ingest_args;
    auto* c_ingest = app.add_subcommand("ingest", "Read, filter, and re-emit a manifest");
    c_ingest->add_option("--input", ingest_args.input, "manifest path")->required();
    c_ingest->add_option("--format", ingest_args.format, "jsonl|csv|auto");
    c_ingest->add_option("--min-class-size", ingest_args.min_class_size,
                         "drop primary classes smaller than this");
    c_ingest->add_option("--output", ingest_args.output, "write manifest here (default stdout)");
    c_ingest->add_option("--output-format", ingest_args.output_format, "jsonl|csv");
    c_ingest->add_flag("--json", ingest_args.as_json, "print a JSON summary");

    NcaArgs nca_args;
    auto* c_nca = app.add_subcommand("nca", "Necessity analysis with threshold sweep");
    c_nca->add_option("--manifest", nca_args.manifest)->required();
    c_nca->add_option("--families", nca_args.families, "comma list (default: all auxiliary)");
    c_nca->add_option("--thresholds", nca_args.thresholds, "lo:hi:n grid (default 0:1:21)");
    c_nca->add_option("--mode", nca_args.mode, "any|most-frequent");
    c_nca->add_option("--cutoff", nca_args.cutoff, "sign cutoff on sweep area");
    c_nca->add_option("--out", nca_args.out, "write the JSON report here");
    c_nca->add_flag("--json", nca_args.as_json, "JSON to stdout");

    SplitArgs split_args;
    auto* c_split = app.add_subcommand("split", "Build a scene-invariant split");
    c_split->add_option("--manifest", split_args.manifest)->required();
    c_split->add_option("--family", split_args.family, "auxiliary family (default scene)");
    c_split->add_option("--variant", split_args.variant, "1|2")->check(CLI::Range(1, 2));
    c_split->add_option("--min-class-size", split_args.min_class_size);
    c_split->add_option("--val-fraction", split_args.val_fraction);
    c_split->add_option("--seed", split_args.seed);
    c_split->add_flag("--no-coverage-repair", split_args.no_repair);
    c_split->add_option("--out", split_args.out, "output directory")->required();
    c_split->add_flag("--json", split_args.as_json);

    SynthArgs synth_args;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic benchmark");
    c_synth->add_option("--spec", synth_args.spec, "spec JSON path or 'default'");
    auto* synth_seed = c_synth->add_option("--seed", synth_args.seed);
    c_synth->add_option("--out", synth_args.out, "output directory")->required();
    c_synth->add_flag("--json", synth_args.as_json);

    DcorrArgs dcorr_args;
    auto* c_dcorr = app.add_subcommand("dcorr", "Squared distance correlation");
    c_dcorr->add_option("--features", dcorr_args.features, "binary (.bin) or .csv")->required();
    c_dcorr->add_option("--labels", dcorr_args.labels, "one integer label per line")->required();
    c_dcorr->add_flag("--json", dcorr_args.as_json);

    TrainArgs train_args;
    auto* c_train = app.add_subcommand("train", "Train baseline or AMT models");
    c_train->add_option("--config", train_args.config, "JSON with model/train sections");
    c_train->add_option("--train-features", train_args.train_features);
    c_train->add_option("--train-manifest", train_args.train_manifest);
    c_train->add_option("--val-features", train_args.val_features);
    c_train->add_option("--val-manifest", train_args.val_manifest);
    c_train->add_option("--features", train_args.features, "single feature file + id lists");
    c_train->add_option("--manifest", train_args.manifest);
    c_train->add_option("--train", train_args.train_ids, "train id list");
    c_train->add_option("--val", train_args.val_ids, "val id list");
    c_train->add_option("--out", train_args.out, "output directory")->required();
    c_train->add_flag("--json", train_args.as_json);

    EvalArgs eval_args;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    c_eval->add_option("--checkpoint", eval_args.checkpoint)->required();
    c_eval->add_option("--features", eval_args.features)->required();
    c_eval->add_option("--manifest", eval_args.manifest)->required();
    c_eval->add_option("--probe-family", eval_args.probe_family);
    c_eval->add_flag("--json", eval_args.as_json);

    PipelineArgs pipe_args;
    auto* c_pipe = app.add_subcommand("pipeline", "synth -> nca -> split -> train x2 -> eval");
    c_pipe->add_option("--spec", pipe_args.spec, "spec JSON path or 'default'");
    auto* pipe_seed = c_pipe->add_option("--seed", pipe_args.seed);
    c_pipe->add_option("--out", pipe_args.out, "output directory")->required();
    c_pipe->add_option("--adv-mode", pipe_args.adv_mode, "grad-reversal|signed-loss");
    c_pipe->add_option("--lambda-mag", pipe_args.lambda_mag, "scene weight magnitude");
    c_pipe->add_option("--gamma-mag", pipe_args.gamma_mag, "object weight magnitude");
    c_pipe->add_option("--epochs", pipe_args.epochs);
    c_pipe->add_flag("--json", pipe_args.as_json);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    synth_args.seed_set = synth_seed->count() > 0;
    pipe_args.seed_set = pipe_seed->count() > 0;

    try {
        if (c_ingest->parsed()) return run_ingest(ingest_args);
        if (c_nca->parsed()) return run_nca(nca_args);
        if (c_split->parsed()) return run_split(split_args);
        if (c_synth->parsed()) return run_synth(synth_args);
        if (c_dcorr->parsed()) return run_dcorr(dcorr_args);
        if (c_train->parsed()) return run_train(train_args);
        if (c_eval->parsed()) return run_eval(eval_args);
        if (c_pipe->parsed()) return run_pipeline(pipe_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
