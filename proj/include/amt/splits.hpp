#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "amt/manifest.hpp"

namespace amt {

struct SplitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class RepresentativeRule { most_frequent_in_class, most_rare_in_class };

inline const char* to_string(RepresentativeRule r) {
    return r == RepresentativeRule::most_frequent_in_class ? "most_frequent_in_class"
                                                           : "most_rare_in_class";
}

struct RepresentativeChoice {
    std::string record_id;
    int aux_label = -1;
    RepresentativeRule rule = RepresentativeRule::most_frequent_in_class;
};

struct PairGroup {
    int primary_label = -1;
    int aux_label = -1;
    std::vector<std::size_t> member_rows;  // indices into the eligible-record list
    std::size_t rarity() const { return member_rows.size(); }
};

struct SplitAssignment {
    std::string split_name;  // scene_invariant_1 | scene_invariant_2
    std::size_t family = 0;  // auxiliary family the split is invariant to
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<RepresentativeChoice> choices;  // one per eligible record
    double achieved_val_fraction = 0.0;
    std::vector<std::string> warnings;
    std::vector<std::pair<int, int>> reassigned_pairs;  // coverage-repair moves
    std::vector<PairGroup> groups;                      // final grouping table
    std::vector<std::string> eligible_ids;              // row index -> record id
};

namespace detail {

/// Label counts within each primary class and globally, for one family.
struct RepContext {
    // class_count[p][x] = eligible records of class p carrying label x
    std::vector<std::vector<long long>> class_count;
    std::vector<long long> global_count;

    static RepContext build(const Manifest& m, std::size_t family) {
        const auto& u = m.universe;
        RepContext ctx;
        ctx.class_count.assign(u.n_labels(u.primary_family),
                               std::vector<long long>(u.n_labels(family), 0));
        ctx.global_count.assign(u.n_labels(family), 0);
        for (const auto& r : m.records) {
            for (int x : r.aux[family]) {
                ++ctx.class_count[static_cast<std::size_t>(r.primary_label)]
                                 [static_cast<std::size_t>(x)];
                ++ctx.global_count[static_cast<std::size_t>(x)];
            }
        }
        return ctx;
    }
};

inline int choose_representative_impl(const Record& rec, std::size_t family,
                                      RepresentativeRule rule, const RepContext& ctx) {
    const auto& cands = rec.aux[family];
    if (cands.empty())
        throw SplitError("choose_representative: record '" + rec.id + "' has no label in family");
    const auto& cls = ctx.class_count[static_cast<std::size_t>(rec.primary_label)];

    int best = cands[0];
    for (std::size_t i = 1; i < cands.size(); ++i) {
        const int x = cands[i];
        const long long cx = cls[static_cast<std::size_t>(x)];
        const long long cb = cls[static_cast<std::size_t>(best)];
        const long long gx = ctx.global_count[static_cast<std::size_t>(x)];
        const long long gb = ctx.global_count[static_cast<std::size_t>(best)];
        bool better;
        if (rule == RepresentativeRule::most_frequent_in_class)
            better = cx > cb || (cx == cb && gx > gb);
        else
            better = cx < cb || (cx == cb && gx < gb);
        // Remaining ties keep the lower label id; cands is sorted ascending,
        // so "not better" already does that.
        if (better) best = x;
    }
    return best;
}

}  // namespace detail

inline int choose_representative(const Manifest& m, const Record& rec, std::size_t family,
                                 RepresentativeRule rule) {
    auto ctx = detail::RepContext::build(m, family);
    return detail::choose_representative_impl(rec, family, rule, ctx);
}

struct SplitParams {
    int variant = 1;                // 1: rarest pairs to val; 2: most common pairs to train
    std::size_t min_class_size = 124;
    double val_fraction = 0.06;
    std::uint64_t seed = 0;         // accepted for interface parity; tie-breaks are fixed
    bool repair_class_coverage = true;
};

inline SplitAssignment build_split(const Manifest& m, std::size_t family,
                                   const SplitParams& params) {
    const auto& u = m.universe;
    if (family >= u.n_families() || family == u.primary_family)
        throw SplitError("build_split: bad auxiliary family");
    if (!(params.val_fraction > 0.0 && params.val_fraction < 1.0))
        throw SplitError("build_split: val_fraction must lie in (0,1)");
    if (params.variant != 1 && params.variant != 2)
        throw SplitError("build_split: variant must be 1 or 2");

    // Eligibility: a label in the split family, and a primary class that
    // keeps min_class_size members after the label filter.
    std::vector<long long> class_size(u.n_labels(u.primary_family), 0);
    for (const auto& r : m.records)
        if (!r.aux[family].empty())
            ++class_size[static_cast<std::size_t>(r.primary_label)];

    Manifest eligible;
    eligible.universe = u;
    for (const auto& r : m.records)
        if (!r.aux[family].empty() &&
            class_size[static_cast<std::size_t>(r.primary_label)] >=
                static_cast<long long>(params.min_class_size))
            eligible.records.push_back(r);
    if (eligible.records.empty())
        throw SplitError("build_split: no eligible records after filtering");

    SplitAssignment out;
    out.family = family;
    out.split_name = params.variant == 1 ? "scene_invariant_1" : "scene_invariant_2";
    const auto rule = params.variant == 1 ? RepresentativeRule::most_frequent_in_class
                                          : RepresentativeRule::most_rare_in_class;

    auto ctx = detail::RepContext::build(eligible, family);
    const std::size_t n = eligible.records.size();
    std::vector<int> rep(n);
    std::map<std::pair<int, int>, std::vector<std::size_t>> grouping;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = eligible.records[i];
        rep[i] = detail::choose_representative_impl(r, family, rule, ctx);
        out.choices.push_back({r.id, rep[i], rule});
        out.eligible_ids.push_back(r.id);
        grouping[{r.primary_label, rep[i]}].push_back(i);
    }

    std::vector<PairGroup> groups;
    for (auto& [key, members] : grouping)
        groups.push_back({key.first, key.second, std::move(members)});

    // Size order with (primary id, aux id) tie-break; grouping map order
    // already provides the tie-break, stable_sort preserves it.
    if (params.variant == 1)
        std::stable_sort(groups.begin(), groups.end(),
                         [](const PairGroup& a, const PairGroup& b) { return a.rarity() < b.rarity(); });
    else
        std::stable_sort(groups.begin(), groups.end(),
                         [](const PairGroup& a, const PairGroup& b) { return a.rarity() > b.rarity(); });

    std::vector<bool> in_val(groups.size(), false);
    const double total = static_cast<double>(n);
    if (params.variant == 1) {
        // Rarest-first into val, stopping before the target would be exceeded.
        const double target = params.val_fraction * total;
        std::size_t val_size = 0;
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (static_cast<double>(val_size + groups[g].rarity()) > target) break;
            in_val[g] = true;
            val_size += groups[g].rarity();
        }
    } else {
        // Most-common-first into train until it reaches its share.
        const double target = (1.0 - params.val_fraction) * total;
        std::size_t train_size = 0;
        std::size_t g = 0;
        for (; g < groups.size() && static_cast<double>(train_size) < target; ++g)
            train_size += groups[g].rarity();
        for (; g < groups.size(); ++g) in_val[g] = true;
    }

    // Coverage repair: a val-only class would be untrainable.
    if (params.repair_class_coverage) {
        std::set<int> train_classes;
        for (std::size_t g = 0; g < groups.size(); ++g)
            if (!in_val[g]) train_classes.insert(groups[g].primary_label);
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (in_val[g] && !train_classes.count(groups[g].primary_label)) {
                in_val[g] = false;
                train_classes.insert(groups[g].primary_label);
                out.reassigned_pairs.push_back({groups[g].primary_label, groups[g].aux_label});
                out.warnings.push_back("class-coverage repair moved pair (" +
                                       u.label_name(u.primary_family, groups[g].primary_label) +
                                       ":" + u.label_name(family, groups[g].aux_label) +
                                       ") from val to train");
            }
        }
    }

    std::vector<bool> row_in_val(n, false);
    std::size_t val_size = 0;
    for (std::size_t g = 0; g < groups.size(); ++g)
        if (in_val[g])
            for (std::size_t row : groups[g].member_rows) {
                row_in_val[row] = true;
                ++val_size;
            }
    for (std::size_t i = 0; i < n; ++i)
        (row_in_val[i] ? out.val_ids : out.train_ids).push_back(eligible.records[i].id);

    out.achieved_val_fraction = static_cast<double>(val_size) / total;
    out.groups = std::move(groups);

    if (out.val_ids.empty())
        out.warnings.push_back("validation set is empty at the requested fraction");
    else if (std::abs(out.achieved_val_fraction - params.val_fraction) >
             0.5 * params.val_fraction)
        out.warnings.push_back("achieved val fraction " +
                               std::to_string(out.achieved_val_fraction) +
                               " deviates more than 50% from target " +
                               std::to_string(params.val_fraction));
    if (out.train_ids.empty())
        throw SplitError("build_split: training set came out empty");
    return out;
}

struct VerifyReport {
    bool pass = false;
    bool empty_val_warning = false;
    std::vector<std::string> failures;
    std::vector<std::string> warnings;
};

/// Re-derives every invariant from the manifest instead of trusting the
/// structures build_split filled in.
inline VerifyReport verify_split(const Manifest& m, const SplitAssignment& s) {
    VerifyReport rep;
    const auto& u = m.universe;

    std::unordered_map<std::string, const Record*> by_id;
    for (const auto& r : m.records) by_id[r.id] = &r;

    std::unordered_map<std::string, int> rep_of;
    for (const auto& c : s.choices) rep_of[c.record_id] = c.aux_label;

    auto lookup = [&](const std::string& id) -> const Record* {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            rep.failures.push_back("id not in manifest: " + id);
            return nullptr;
        }
        return it->second;
    };

    // Disjointness and coverage of the eligible set.
    std::unordered_set<std::string> train(s.train_ids.begin(), s.train_ids.end());
    for (const auto& id : s.val_ids)
        if (train.count(id))
            rep.failures.push_back("record in both train and val: " + id);
    std::unordered_set<std::string> assigned(s.train_ids.begin(), s.train_ids.end());
    assigned.insert(s.val_ids.begin(), s.val_ids.end());
    for (const auto& id : s.eligible_ids)
        if (!assigned.count(id))
            rep.failures.push_back("eligible record unassigned: " + id);

    // Pair leakage and class coverage.
    std::set<std::pair<int, int>> train_pairs, val_pairs;
    std::set<int> train_classes, val_classes;
    for (const auto& id : s.train_ids) {
        const Record* r = lookup(id);
        if (!r) continue;
        auto it = rep_of.find(id);
        if (it == rep_of.end()) { rep.failures.push_back("no representative for " + id); continue; }
        if (!std::binary_search(r->aux[s.family].begin(), r->aux[s.family].end(), it->second))
            rep.failures.push_back("representative label not in record's set: " + id);
        train_pairs.insert({r->primary_label, it->second});
        train_classes.insert(r->primary_label);
    }
    for (const auto& id : s.val_ids) {
        const Record* r = lookup(id);
        if (!r) continue;
        auto it = rep_of.find(id);
        if (it == rep_of.end()) { rep.failures.push_back("no representative for " + id); continue; }
        val_pairs.insert({r->primary_label, it->second});
        val_classes.insert(r->primary_label);
    }
    for (const auto& p : val_pairs)
        if (train_pairs.count(p))
            rep.failures.push_back(
                "pair leak: (" + u.label_name(u.primary_family, p.first) + ":" +
                u.label_name(s.family, p.second) + ") appears in both train and val");
    for (int c : val_classes)
        if (!train_classes.count(c))
            rep.warnings.push_back("val class with no train examples: " +
                                   u.label_name(u.primary_family, c));

    // Whole-group atomicity: all members of a (primary, representative)
    // pair must land on the same side.
    std::map<std::pair<int, int>, std::pair<bool, bool>> sides;
    for (const auto& id : s.train_ids)
        if (const Record* r = lookup(id)) sides[{r->primary_label, rep_of[id]}].first = true;
    for (const auto& id : s.val_ids)
        if (const Record* r = lookup(id)) sides[{r->primary_label, rep_of[id]}].second = true;
    for (const auto& [key, side] : sides)
        if (side.first && side.second)
            rep.failures.push_back("group split across train and val: (" +
                                   u.label_name(u.primary_family, key.first) + ":" +
                                   u.label_name(s.family, key.second) + ")");

    rep.empty_val_warning = s.val_ids.empty();
    if (rep.empty_val_warning)
        rep.warnings.push_back("validation set is empty");
    rep.pass = rep.failures.empty();
    return rep;
}

}  // namespace amt
