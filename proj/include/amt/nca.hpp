#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "amt/manifest.hpp"

namespace amt {

struct NcaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// 2x2 co-occurrence counts for one (primary label Y, auxiliary label X)
/// pair. y0_x0 is stored for completeness but never scored: its count can
/// be inflated arbitrarily by adding unrelated records.
struct ContingencyMatrix {
    long long y1_x0 = 0;  // Y present, X absent (the above-the-ceiling cell)
    long long y1_x1 = 0;  // co-occurrence
    long long y0_x1 = 0;  // X present without Y
    long long y0_x0 = 0;  // both absent

    bool operator==(const ContingencyMatrix&) const = default;
};

/// Cells divided by the co-occurrence count, so y1_x1 is exactly 1 when
/// any co-occurrence exists.
struct NormalizedContingency {
    double y1_x0 = 0.0;
    double y1_x1 = 0.0;
    double y0_x1 = 0.0;
    double y0_x0 = 0.0;
    bool valid = false;
};

inline NormalizedContingency normalize(const ContingencyMatrix& c) {
    NormalizedContingency n;
    if (c.y1_x1 <= 0) return n;
    const double d = static_cast<double>(c.y1_x1);
    n.y1_x0 = static_cast<double>(c.y1_x0) / d;
    n.y1_x1 = 1.0;
    n.y0_x1 = static_cast<double>(c.y0_x1) / d;
    n.y0_x0 = static_cast<double>(c.y0_x0) / d;
    n.valid = true;
    return n;
}

inline ContingencyMatrix contingency(const Manifest& m, int primary_label,
                                     std::size_t family, int aux_label) {
    const auto& u = m.universe;
    if (family >= u.n_families() || family == u.primary_family)
        throw NcaError("contingency: bad family index");
    if (primary_label < 0 ||
        static_cast<std::size_t>(primary_label) >= u.n_labels(u.primary_family))
        throw NcaError("contingency: unknown primary label");
    if (aux_label < 0 || static_cast<std::size_t>(aux_label) >= u.n_labels(family))
        throw NcaError("contingency: unknown aux label");

    ContingencyMatrix c;
    for (const auto& r : m.records) {
        const bool y = r.primary_label == primary_label;
        const bool x = std::binary_search(r.aux[family].begin(), r.aux[family].end(), aux_label);
        if (y && x) ++c.y1_x1;
        else if (y) ++c.y1_x0;
        else if (x) ++c.y0_x1;
        else ++c.y0_x0;
    }
    return c;
}

/// Per-primary-label co-occurrence counts for one family, plus global
/// label frequencies; everything NCA scores can be read off this table.
namespace detail {
struct CooccurTable {
    // cooccur[p][x] = records with primary p carrying aux label x
    std::vector<std::vector<long long>> cooccur;
    std::vector<long long> primary_count;  // records per primary label
    std::vector<long long> global_count;   // records carrying aux label x

    static CooccurTable build(const Manifest& m, std::size_t family) {
        const auto& u = m.universe;
        CooccurTable t;
        t.cooccur.assign(u.n_labels(u.primary_family),
                         std::vector<long long>(u.n_labels(family), 0));
        t.primary_count.assign(u.n_labels(u.primary_family), 0);
        t.global_count.assign(u.n_labels(family), 0);
        for (const auto& r : m.records) {
            ++t.primary_count[static_cast<std::size_t>(r.primary_label)];
            for (int x : r.aux[family]) {
                ++t.cooccur[static_cast<std::size_t>(r.primary_label)][static_cast<std::size_t>(x)];
                ++t.global_count[static_cast<std::size_t>(x)];
            }
        }
        return t;
    }
};
}  // namespace detail

/// The family label co-occurring most often with primary_label. Ties go to
/// the globally more frequent label, then to the lower label id.
inline std::optional<int> most_frequent_cooccurring(const Manifest& m, int primary_label,
                                                    std::size_t family) {
    const auto& u = m.universe;
    if (family >= u.n_families() || family == u.primary_family)
        throw NcaError("most_frequent_cooccurring: bad family index");
    auto table = detail::CooccurTable::build(m, family);
    const auto& row = table.cooccur.at(static_cast<std::size_t>(primary_label));

    int best = -1;
    for (std::size_t x = 0; x < row.size(); ++x) {
        if (row[x] == 0) continue;
        if (best < 0) { best = static_cast<int>(x); continue; }
        const auto bx = static_cast<std::size_t>(best);
        if (row[x] > row[bx] ||
            (row[x] == row[bx] && table.global_count[x] > table.global_count[bx]))
            best = static_cast<int>(x);
    }
    if (best < 0) return std::nullopt;
    return best;
}

/// Relaxed ceiling test: the normalized above-ceiling cell must fall
/// strictly below the threshold. threshold == 0 is the strict case and
/// does not require normalizability.
inline bool necessity_holds(const ContingencyMatrix& c, double threshold) {
    if (threshold < 0.0)
        throw NcaError("necessity_holds: threshold must be >= 0");
    if (threshold == 0.0)
        return c.y1_x0 == 0 && c.y1_x1 > 0;
    if (c.y1_x1 <= 0)
        throw NcaError("necessity_holds: matrix not normalizable (no co-occurrence)");
    return static_cast<double>(c.y1_x0) / static_cast<double>(c.y1_x1) < threshold;
}

enum class NecessityMode {
    any_label,      // a primary label is "necessary at t" if ANY aux label passes
    most_frequent,  // only its most-frequent co-occurring label is examined
};

struct PrimaryNecessity {
    int primary_label = -1;
    std::optional<int> most_frequent_aux;  // empty when nothing co-occurs
    ContingencyMatrix matrix;              // of the most-frequent pair
    NormalizedContingency normalized;
};

struct FamilyReport {
    std::string family;
    NecessityMode mode = NecessityMode::any_label;
    std::vector<double> thresholds;
    std::vector<long long> sweep_counts;  // primary labels necessary at each threshold
    NormalizedContingency average;        // mean over valid most-frequent matrices
    std::vector<PrimaryNecessity> per_primary;
    double auc = 0.0;  // sweep area, normalized by primary count and threshold span
};

inline FamilyReport analyze(const Manifest& m, std::size_t family,
                            const std::vector<double>& thresholds,
                            NecessityMode mode = NecessityMode::any_label) {
    const auto& u = m.universe;
    if (family == u.primary_family)
        throw NcaError("analyze: family equals the primary family");
    if (family >= u.n_families())
        throw NcaError("analyze: bad family index");
    if (thresholds.empty())
        throw NcaError("analyze: empty threshold grid");
    if (!std::is_sorted(thresholds.begin(), thresholds.end()))
        throw NcaError("analyze: thresholds must be sorted ascending");

    auto table = detail::CooccurTable::build(m, family);
    const std::size_t n_primary = u.n_labels(u.primary_family);

    FamilyReport rep;
    rep.family = u.families[family];
    rep.mode = mode;
    rep.thresholds = thresholds;
    rep.sweep_counts.assign(thresholds.size(), 0);

    // For each primary label: the smallest normalized above-ceiling ratio
    // over candidate aux labels decides necessity at every threshold.
    std::vector<std::optional<double>> min_ratio(n_primary);
    double avg_y1_x0 = 0.0, avg_y0_x1 = 0.0, avg_y0_x0 = 0.0;
    long long n_valid = 0;

    for (std::size_t p = 0; p < n_primary; ++p) {
        PrimaryNecessity pn;
        pn.primary_label = static_cast<int>(p);
        pn.most_frequent_aux = most_frequent_cooccurring(m, static_cast<int>(p), family);
        if (pn.most_frequent_aux) {
            pn.matrix = contingency(m, static_cast<int>(p), family, *pn.most_frequent_aux);
            pn.normalized = normalize(pn.matrix);
            if (pn.normalized.valid) {
                avg_y1_x0 += pn.normalized.y1_x0;
                avg_y0_x1 += pn.normalized.y0_x1;
                avg_y0_x0 += pn.normalized.y0_x0;
                ++n_valid;
            }
        }

        const auto& row = table.cooccur[p];
        const long long ny = table.primary_count[p];
        if (mode == NecessityMode::any_label) {
            for (std::size_t x = 0; x < row.size(); ++x) {
                if (row[x] == 0) continue;
                const double ratio =
                    static_cast<double>(ny - row[x]) / static_cast<double>(row[x]);
                if (!min_ratio[p] || ratio < *min_ratio[p]) min_ratio[p] = ratio;
            }
        } else if (pn.most_frequent_aux) {
            const auto x = static_cast<std::size_t>(*pn.most_frequent_aux);
            min_ratio[p] = static_cast<double>(ny - row[x]) / static_cast<double>(row[x]);
        }
        rep.per_primary.push_back(std::move(pn));
    }

    for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
        const double t = thresholds[ti];
        long long count = 0;
        for (std::size_t p = 0; p < n_primary; ++p) {
            if (!min_ratio[p]) continue;
            const bool holds = (t == 0.0) ? (*min_ratio[p] == 0.0) : (*min_ratio[p] < t);
            if (holds) ++count;
        }
        rep.sweep_counts[ti] = count;
    }

    if (n_valid > 0) {
        rep.average.valid = true;
        rep.average.y1_x1 = 1.0;
        rep.average.y1_x0 = avg_y1_x0 / static_cast<double>(n_valid);
        rep.average.y0_x1 = avg_y0_x1 / static_cast<double>(n_valid);
        rep.average.y0_x0 = avg_y0_x0 / static_cast<double>(n_valid);
    }

    // Trapezoidal area of the normalized sweep curve over the grid span.
    if (n_primary > 0) {
        if (thresholds.size() == 1) {
            rep.auc = static_cast<double>(rep.sweep_counts[0]) / static_cast<double>(n_primary);
        } else {
            const double span = thresholds.back() - thresholds.front();
            double area = 0.0;
            for (std::size_t i = 1; i < thresholds.size(); ++i) {
                const double h = thresholds[i] - thresholds[i - 1];
                const double a = static_cast<double>(rep.sweep_counts[i - 1]);
                const double b = static_cast<double>(rep.sweep_counts[i]);
                area += 0.5 * (a + b) * h;
            }
            rep.auc = span > 0.0
                          ? area / (span * static_cast<double>(n_primary))
                          : static_cast<double>(rep.sweep_counts[0]) / static_cast<double>(n_primary);
        }
    }
    return rep;
}

struct SignRecommendation {
    int sign = -1;     // +1 auxiliary, -1 adversarial
    double score = 0;  // normalized sweep area the decision was made on
};

/// Families whose normalized sweep area reaches the cutoff are treated as
/// necessary (auxiliary, +1); the rest as bias-inducing (adversarial, -1).
inline std::map<std::string, SignRecommendation> recommend_signs(
    const std::vector<FamilyReport>& reports, double cutoff = 0.5) {
    std::map<std::string, SignRecommendation> out;
    for (const auto& r : reports) {
        SignRecommendation rec;
        rec.score = r.auc;
        rec.sign = (r.auc >= cutoff) ? +1 : -1;
        out[r.family] = rec;
    }
    return out;
}

/// Uniform grid of n points on [lo, hi].
inline std::vector<double> threshold_grid(double lo, double hi, std::size_t n) {
    if (n == 0 || hi < lo)
        throw NcaError("threshold_grid: bad parameters");
    std::vector<double> g(n);
    if (n == 1) { g[0] = lo; return g; }
    for (std::size_t i = 0; i < n; ++i)
        g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return g;
}

}  // namespace amt
